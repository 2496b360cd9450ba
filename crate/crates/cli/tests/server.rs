use std::path::Path;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use metamer_cli::plan::{build_trials, CellStimuli, Design, SessionPlan, Timing};
use metamer_cli::server::{router, AppState};
use metamer_core::features::image_io::write_image;
use metamer_core::features::ImageBuffer;
use metamer_core::psychometrics::{fit_psychometric, read_trials, Choice, Condition, TrialRecord};
use serde_json::{json, Value};
use tower::ServiceExt;

fn make_plan(dir: &Path, session: &str, scales: &[f64], reps: usize) -> SessionPlan {
    let stim = dir.join("stimuli");
    std::fs::create_dir_all(&stim).unwrap();
    let mut files = std::collections::BTreeMap::new();
    let mut cells = Vec::new();
    let mut shade = 0.0f32;
    let mut add = |name: String, files: &mut std::collections::BTreeMap<String, String>| {
        shade += 0.05;
        let img = ImageBuffer {
            channels: 3,
            height: 4,
            width: 4,
            data: vec![shade; 48],
        };
        write_image(&stim.join(format!("{name}.png")), &img).unwrap();
        files.insert(name.clone(), format!("{name}.png"));
        name
    };
    let reference = add("img_ref".into(), &mut files);
    for &scale in scales {
        let synth = (0..2).map(|k| add(format!("img_s{scale}_k{k}"), &mut files)).collect();
        cells.push(CellStimuli {
            image: "img".into(),
            scale,
            synth,
            reference: reference.clone(),
        });
    }
    let design = Design {
        conditions: vec![Condition::SynthVsSynth],
        scales: scales.to_vec(),
        images: vec!["img".into()],
        reps,
    };
    let trials = build_trials(session, &design, &cells, 9).unwrap();
    let plan = SessionPlan {
        session: session.into(),
        seed: 9,
        timing: Timing {
            stimulus_ms: 500,
            blank_ms: 500,
        },
        fixation_radius_px: 3.0,
        image_size: 4,
        design,
        metadata: json!({}),
        stimulus_dir: "stimuli".into(),
        files,
        trials,
    };
    let path = dir.join(format!("{session}.json"));
    plan.save(&path).unwrap();
    SessionPlan::load(&path).unwrap()
}

struct Harness {
    rt: tokio::runtime::Runtime,
    app: Router,
}

impl Harness {
    fn new(plans: Vec<SessionPlan>, logs: &Path) -> Self {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let app = router(AppState::open(plans, logs).unwrap());
        Harness { rt, app }
    }

    fn raw(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let req = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        self.rt.block_on(async {
            let resp = self.app.clone().oneshot(req).await.unwrap();
            let status = resp.status();
            (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
        })
    }

    fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.raw(method, uri, body);
        (status, serde_json::from_slice(&bytes).unwrap())
    }

    fn next(&self, session: &str) -> Value {
        let (status, v) = self.call(Method::GET, &format!("/api/sessions/{session}/next"), None);
        assert_eq!(status, StatusCode::OK);
        v
    }

    fn submit(&self, session: &str, trial: usize, choice: &str) -> (StatusCode, Value) {
        self.call(
            Method::POST,
            &format!("/api/sessions/{session}/responses"),
            Some(json!({ "trial": trial, "choice": choice, "response_ms": 640.0 })),
        )
    }
}

fn log_lines(path: &Path) -> Vec<TrialRecord> {
    read_trials(std::io::BufReader::new(std::fs::File::open(path).unwrap())).unwrap()
}

#[test]
fn four_trial_session_logs_four_ordered_records() {
    let dir = tempfile::tempdir().unwrap();
    let plan = make_plan(dir.path(), "s1", &[0.4, 0.6], 2);
    assert_eq!(plan.trials.len(), 4);
    let h = Harness::new(vec![plan.clone()], &dir.path().join("logs"));
    for i in 0..4 {
        let next = h.next("s1");
        assert_eq!(next["status"], "open");
        assert_eq!(next["trial"], i);
        let (status, reply) = h.submit("s1", i, "A");
        assert_eq!(status, StatusCode::OK, "{reply}");
        assert_eq!(reply["status"], "recorded");
        assert_eq!(reply["completed"], i + 1);
    }
    assert_eq!(h.next("s1")["status"], "done");
    let records = log_lines(&dir.path().join("logs/s1.log"));
    assert_eq!(records.len(), 4);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.trial, Some(i));
        assert_eq!(r.stimuli, plan.trials[i].stimuli);
        assert_eq!(r.correct, plan.trials[i].answer == Choice::A);
    }
}

#[test]
fn duplicate_submission_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let plan = make_plan(dir.path(), "dup", &[0.5], 2);
    let h = Harness::new(vec![plan], &dir.path().join("logs"));
    let (_, first) = h.submit("dup", 0, "A");
    let log = dir.path().join("logs/dup.log");
    let before = std::fs::read(&log).unwrap();
    let (status, again) = h.submit("dup", 0, "B");
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again["status"], "duplicate");
    assert_eq!(again["record"], first["record"]);
    assert_eq!(std::fs::read(&log).unwrap(), before);
    assert_eq!(h.next("dup")["trial"], 1);
}

#[test]
fn out_of_order_submission_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let plan = make_plan(dir.path(), "ooo", &[0.5], 3);
    let h = Harness::new(vec![plan], &dir.path().join("logs"));
    let (status, v) = h.submit("ooo", 2, "A");
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "out_of_order");
    assert_eq!(v["expected"], 0);
    assert!(!dir.path().join("logs/ooo.log").exists() || log_lines(&dir.path().join("logs/ooo.log")).is_empty());
}

#[test]
fn restart_resumes_at_first_unanswered_trial() {
    let dir = tempfile::tempdir().unwrap();
    let plan = make_plan(dir.path(), "rs", &[0.4, 0.6], 2);
    let logs = dir.path().join("logs");
    {
        let h = Harness::new(vec![plan.clone()], &logs);
        h.submit("rs", 0, "A");
        h.submit("rs", 1, "B");
    }
    let h = Harness::new(vec![plan], &logs);
    let next = h.next("rs");
    assert_eq!(next["trial"], 2);
    let (status, v) = h.call(Method::GET, "/api/sessions", None);
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v[0]["completed"], 2);
    assert_eq!(h.submit("rs", 1, "A").1["status"], "duplicate");
    assert_eq!(h.submit("rs", 2, "A").1["status"], "recorded");
}

#[test]
fn torn_final_line_is_repaired_on_start() {
    let dir = tempfile::tempdir().unwrap();
    let plan = make_plan(dir.path(), "torn", &[0.4, 0.6], 2);
    let logs = dir.path().join("logs");
    {
        let h = Harness::new(vec![plan.clone()], &logs);
        h.submit("torn", 0, "A");
    }
    let log = logs.join("torn.log");
    let mut bytes = std::fs::read(&log).unwrap();
    let intact = bytes.len();
    bytes.extend_from_slice(br#"{"session":"torn","tri"#);
    std::fs::write(&log, &bytes).unwrap();
    let h = Harness::new(vec![plan], &logs);
    assert_eq!(std::fs::read(&log).unwrap().len(), intact);
    assert_eq!(h.next("torn")["trial"], 1);
    h.submit("torn", 1, "A");
    assert_eq!(log_lines(&log).len(), 2);
}

#[test]
fn payloads_before_a_response_hide_the_answer() {
    let dir = tempfile::tempdir().unwrap();
    let plan = make_plan(dir.path(), "blind", &[0.4, 0.6], 2);
    let h = Harness::new(vec![plan.clone()], &dir.path().join("logs"));
    let mut bodies = Vec::new();
    for uri in ["/api/sessions", "/api/sessions/blind", "/api/sessions/blind/next"] {
        let (status, bytes) = h.raw(Method::GET, uri, None);
        assert_eq!(status, StatusCode::OK);
        bodies.push(String::from_utf8(bytes).unwrap());
    }
    let next: Value = serde_json::from_str(&bodies[2]).unwrap();
    let views: Vec<String> = serde_json::from_value(next["stimuli"].clone()).unwrap();
    assert_eq!(views.len(), 3);
    for view in &views {
        let (status, png) = h.raw(Method::GET, &format!("/api/stimuli/{view}"), None);
        assert_eq!(status, StatusCode::OK);
        assert_eq!(&png[1..4], b"PNG");
    }
    for body in &bodies {
        assert!(!body.contains("answer"), "{body}");
        assert!(!body.contains("correct"), "{body}");
        for name in plan.files.keys().chain(plan.files.values()) {
            assert!(!body.contains(name.as_str()), "{name} leaked in {body}");
        }
    }
    // X's view id differs from both A and B
    assert!(views[2] != views[0] && views[2] != views[1]);
}

#[test]
fn replayed_log_gives_identical_fit() {
    let dir = tempfile::tempdir().unwrap();
    let scales = [0.3, 0.5, 0.7, 0.9];
    let plan = make_plan(dir.path(), "fit", &scales, 20);
    let h = Harness::new(vec![plan.clone()], &dir.path().join("logs"));
    let mut returned = Vec::new();
    for (i, t) in plan.trials.iter().enumerate() {
        let right = if t.answer == Choice::A { "A" } else { "B" };
        let wrong = if right == "A" { "B" } else { "A" };
        let choice = if t.scale >= 0.7 || i % 2 == 0 { right } else { wrong };
        let (status, v) = h.submit("fit", i, choice);
        assert_eq!(status, StatusCode::OK);
        returned.push(serde_json::from_value::<TrialRecord>(v["record"].clone()).unwrap());
    }
    let logged = log_lines(&dir.path().join("logs/fit.log"));
    assert_eq!(logged, returned);
    let a = fit_psychometric(&returned, Condition::SynthVsSynth).unwrap();
    let b = fit_psychometric(&logged, Condition::SynthVsSynth).unwrap();
    assert_eq!(a.params, b.params);
}

#[test]
fn skips_advance_the_session_and_are_logged_apart() {
    let dir = tempfile::tempdir().unwrap();
    let plan = make_plan(dir.path(), "sk", &[0.4, 0.6], 2);
    let h = Harness::new(vec![plan.clone()], &dir.path().join("logs"));
    let body = json!({ "trial": 0, "reason": "blink" });
    let (status, v) = h.call(Method::POST, "/api/sessions/sk/skips", Some(body.clone()));
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "recorded");
    assert_eq!(h.call(Method::POST, "/api/sessions/sk/skips", Some(body)).1["status"], "duplicate");
    let (status, v) = h.submit("sk", 0, "A");
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "already_skipped");
    assert_eq!(h.next("sk")["trial"], 1);
    h.submit("sk", 1, "A");
    drop(h);
    assert_eq!(log_lines(&dir.path().join("logs/sk.log")).len(), 1);
    let h = Harness::new(vec![plan], &dir.path().join("logs"));
    assert_eq!(h.next("sk")["trial"], 2);
}

#[test]
fn echoed_stimuli_must_match_the_trial() {
    let dir = tempfile::tempdir().unwrap();
    let plan = make_plan(dir.path(), "echo", &[0.5], 2);
    let h = Harness::new(vec![plan.clone()], &dir.path().join("logs"));
    let mut wrong = plan.trials[0].views.clone();
    wrong.swap(0, 1);
    let (status, v) = h.call(
        Method::POST,
        "/api/sessions/echo/responses",
        Some(json!({ "trial": 0, "choice": "A", "response_ms": 500.0, "stimuli": wrong })),
    );
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "stimulus_mismatch");
    let (status, _) = h.call(
        Method::POST,
        "/api/sessions/echo/responses",
        Some(json!({ "trial": 0, "choice": "A", "response_ms": 500.0, "stimuli": plan.trials[0].views })),
    );
    assert_eq!(status, StatusCode::OK);
}

#[test]
fn unknown_session_and_stimulus_are_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let plan = make_plan(dir.path(), "nf", &[0.5], 2);
    let h = Harness::new(vec![plan], &dir.path().join("logs"));
    assert_eq!(h.call(Method::GET, "/api/sessions/nope/next", None).0, StatusCode::NOT_FOUND);
    assert_eq!(h.raw(Method::GET, "/api/stimuli/deadbeef", None).0, StatusCode::NOT_FOUND);
    let (status, v) = h.call(
        Method::POST,
        "/api/sessions/nf/responses",
        Some(json!({ "trial": 0, "choice": "A", "response_ms": -1.0 })),
    );
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "invalid_response");
}
