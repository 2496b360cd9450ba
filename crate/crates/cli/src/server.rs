//! HTTP service hosting ABX sessions and persisting responses.
//!
//! Each session appends one JSON line per response to `<session>.log` and
//! one per skipped trial to `<session>.skips`, syncing after every write. On
//! start the logs are replayed, so a restarted server resumes at the first
//! unresolved trial.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use metamer_core::psychometrics::{Choice, TrialRecord};
use metamer_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, Result};
use crate::plan::{Design, SessionPlan, Timing};

/// Responses slower than this are flagged.
const SLOW_RESPONSE_MS: f64 = 30_000.0;
/// Client clocks further off than this are flagged.
const CLOCK_SKEW_MS: u64 = 60_000;

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub session: String,
    pub trial: usize,
    pub reason: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq)]
enum Outcome {
    Answered(TrialRecord),
    Skipped(SkipRecord),
}

struct Session {
    plan: SessionPlan,
    log: File,
    skips: File,
    outcomes: Vec<Outcome>,
    last_submit_ms: Option<u64>,
}

/// Read JSON lines, dropping (and truncating away) a torn final line left by a crash.
fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        let f = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
        f.set_len(complete as u64).map_err(|e| Error::io(path, e))?;
        f.sync_all().map_err(|e| Error::io(path, e))?;
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(&bytes[..complete]).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

fn append_line(file: &mut File, path: &Path, value: &impl Serialize) -> Result<()> {
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    file.write_all(&line).map_err(|e| Error::io(path, e))?;
    file.sync_data().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn open_append(path: &Path) -> Result<File> {
    Ok(OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?)
}

impl Session {
    fn open(plan: SessionPlan, log_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(log_dir).map_err(|e| Error::io(log_dir, e))?;
        let log_path = log_dir.join(format!("{}.log", plan.session));
        let skip_path = log_dir.join(format!("{}.skips", plan.session));
        let records: Vec<TrialRecord> = read_lines(&log_path)?;
        let skipped: Vec<SkipRecord> = read_lines(&skip_path)?;

        let mut by_trial: BTreeMap<usize, Outcome> = BTreeMap::new();
        let corrupt = |m: String| CliError::Input(format!("log for session {}: {m}", plan.session));
        for r in records {
            let i = r.trial.ok_or_else(|| corrupt("record without a trial index".into()))?;
            let spec = plan.trials.get(i).ok_or_else(|| corrupt(format!("trial {i} is not in the plan")))?;
            if r.session != plan.session || r.stimuli != spec.stimuli || r.condition != spec.condition {
                return Err(corrupt(format!("record for trial {i} does not match the plan")));
            }
            r.validate()?;
            if by_trial.insert(i, Outcome::Answered(r)).is_some() {
                return Err(corrupt(format!("trial {i} recorded twice")));
            }
        }
        for s in skipped {
            let i = s.trial;
            if by_trial.insert(i, Outcome::Skipped(s)).is_some() {
                return Err(corrupt(format!("trial {i} both answered and skipped")));
            }
        }
        if by_trial.keys().enumerate().any(|(k, &i)| k != i) {
            return Err(corrupt("resolved trials are not a prefix of the plan".into()));
        }
        Ok(Session {
            log: open_append(&log_path)?,
            skips: open_append(&skip_path)?,
            outcomes: by_trial.into_values().collect(),
            plan,
            last_submit_ms: None,
        })
    }

    fn next(&self) -> usize {
        self.outcomes.len()
    }

    fn total(&self) -> usize {
        self.plan.trials.len()
    }

    fn log_path(&self, log_dir: &Path) -> PathBuf {
        log_dir.join(format!("{}.log", self.plan.session))
    }
}

struct Registry {
    sessions: BTreeMap<String, Mutex<Session>>,
    /// Opaque view id → stimulus file.
    views: HashMap<String, PathBuf>,
    log_dir: PathBuf,
}

/// Shared server state: every hosted session and its stimulus lookup.
#[derive(Clone)]
pub struct AppState(Arc<Registry>);

impl AppState {
    /// Load plans, check their stimuli and replay any existing logs.
    pub fn open(plans: Vec<SessionPlan>, log_dir: &Path) -> Result<Self> {
        let mut sessions = BTreeMap::new();
        let mut views = HashMap::new();
        for plan in plans {
            plan.validate()?;
            plan.check_files()?;
            for t in &plan.trials {
                let names = [&t.stimuli.a, &t.stimuli.b, &t.stimuli.x];
                for (view, name) in t.views.iter().zip(names) {
                    let path = plan.stimulus_path(name).expect("validated plan");
                    if views.insert(view.clone(), path).is_some() {
                        return Err(CliError::Input(format!("view id {view} is not unique")));
                    }
                }
            }
            let id = plan.session.clone();
            let session = Session::open(plan, log_dir)?;
            if sessions.insert(id.clone(), Mutex::new(session)).is_some() {
                return Err(CliError::Input(format!("session {id} is hosted twice")));
            }
        }
        Ok(AppState(Arc::new(Registry {
            sessions,
            views,
            log_dir: log_dir.to_path_buf(),
        })))
    }

    /// Path of a session's response log.
    pub fn log_path(&self, session: &str) -> Option<PathBuf> {
        let s = self.0.sessions.get(session)?;
        Some(s.lock().unwrap_or_else(|e| e.into_inner()).log_path(&self.0.log_dir))
    }

    fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let s = self.0.sessions.get(id).ok_or_else(|| ApiError::not_found(format!("no session {id}")))?;
        let mut guard = s.lock().unwrap_or_else(|e| e.into_inner());
        f(&mut guard)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    expected: Option<usize>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            expected: None,
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn out_of_order(trial: usize, expected: usize) -> Self {
        ApiError {
            expected: Some(expected),
            ..Self::new(
                StatusCode::CONFLICT,
                "out_of_order",
                format!("trial {trial} submitted while trial {expected} is open"),
            )
        }
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let Some(e) = self.expected {
            body["expected"] = json!(e);
        }
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session: String,
    pub total: usize,
    pub completed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub session: String,
    pub total: usize,
    pub completed: usize,
    pub timing: Timing,
    pub fixation_radius_px: f64,
    pub image_size: usize,
    pub design: Design,
    pub metadata: serde_json::Value,
}

/// What the client sees of a trial: ids and timing, nothing that identifies X.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    pub session: String,
    pub trial: usize,
    pub total: usize,
    pub stimuli: [String; 3],
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextTrial {
    Open(TrialView),
    Done { completed: usize, total: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub trial: usize,
    pub choice: Choice,
    pub response_ms: f64,
    /// Client clock, milliseconds since the Unix epoch.
    #[serde(default)]
    pub client_timestamp: Option<u64>,
    /// Echo of the view ids that were displayed.
    #[serde(default)]
    pub stimuli: Option<[String; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRequest {
    pub trial: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitStatus {
    Recorded,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitReply {
    pub status: SubmitStatus,
    pub record: TrialRecord,
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipReply {
    pub status: SubmitStatus,
    pub record: SkipRecord,
    pub completed: usize,
    pub total: usize,
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionSummary>> {
    Json(
        state
            .0
            .sessions
            .values()
            .map(|s| {
                let s = s.lock().unwrap_or_else(|e| e.into_inner());
                SessionSummary {
                    session: s.plan.session.clone(),
                    total: s.total(),
                    completed: s.next(),
                }
            })
            .collect(),
    )
}

async fn manifest(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<Manifest>, ApiError> {
    state.with_session(&id, |s| {
        Ok(Json(Manifest {
            session: s.plan.session.clone(),
            total: s.total(),
            completed: s.next(),
            timing: s.plan.timing,
            fixation_radius_px: s.plan.fixation_radius_px,
            image_size: s.plan.image_size,
            design: s.plan.design.clone(),
            metadata: s.plan.metadata.clone(),
        }))
    })
}

async fn next_trial(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<NextTrial>, ApiError> {
    state.with_session(&id, |s| {
        let i = s.next();
        Ok(Json(match s.plan.trials.get(i) {
            Some(t) => NextTrial::Open(TrialView {
                session: s.plan.session.clone(),
                trial: i,
                total: s.total(),
                stimuli: t.views.clone(),
                timing: s.plan.timing,
            }),
            None => NextTrial::Done {
                completed: i,
                total: s.total(),
            },
        }))
    })
}

async fn stimulus(State(state): State<AppState>, UrlPath(view): UrlPath<String>) -> Result<Response, ApiError> {
    let path = state
        .0
        .views
        .get(&view)
        .ok_or_else(|| ApiError::not_found(format!("no stimulus {view}")))?;
    let bytes = std::fs::read(path)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", format!("stimulus {view}: {e}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "private, max-age=3600")], bytes).into_response())
}

async fn submit(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(sub): Json<Submission>,
) -> Result<Json<SubmitReply>, ApiError> {
    state.with_session(&id, |s| {
        let (next, total) = (s.next(), s.total());
        if let Some(done) = s.outcomes.get(sub.trial) {
            // first write wins
            return match done {
                Outcome::Answered(record) => Ok(Json(SubmitReply {
                    status: SubmitStatus::Duplicate,
                    record: record.clone(),
                    completed: next,
                    total,
                })),
                Outcome::Skipped(_) => Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "already_skipped",
                    format!("trial {} was skipped", sub.trial),
                )),
            };
        }
        if sub.trial != next {
            return Err(ApiError::out_of_order(sub.trial, next));
        }
        if !(sub.response_ms.is_finite() && sub.response_ms >= 0.0) {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "invalid_response",
                format!("response_ms {} must be a finite non-negative number", sub.response_ms),
            ));
        }
        let spec = &s.plan.trials[next];
        if sub.stimuli.as_ref().is_some_and(|echo| echo != &spec.views) {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "stimulus_mismatch",
                format!("displayed stimuli do not match trial {next}"),
            ));
        }
        let now = now_ms();
        let mut flags = Vec::new();
        if s.last_submit_ms.is_some_and(|t| now.saturating_sub(t) < s.plan.timing.min_trial_ms()) {
            flags.push("short_gap".to_string());
        }
        if sub.response_ms > SLOW_RESPONSE_MS {
            flags.push("slow_response".to_string());
        }
        if sub.client_timestamp.is_some_and(|c| c.abs_diff(now) > CLOCK_SKEW_MS) {
            flags.push("clock_skew".to_string());
        }
        let record = TrialRecord {
            session: s.plan.session.clone(),
            trial: Some(next),
            condition: spec.condition,
            scale: spec.scale,
            image: spec.image.clone(),
            stimuli: spec.stimuli.clone(),
            response: sub.choice,
            correct: sub.choice == spec.answer,
            response_ms: sub.response_ms,
            timestamp: now,
            flags,
        };
        let path = s.log_path(&state.0.log_dir);
        append_line(&mut s.log, &path, &record)?;
        s.outcomes.push(Outcome::Answered(record.clone()));
        s.last_submit_ms = Some(now);
        Ok(Json(SubmitReply {
            status: SubmitStatus::Recorded,
            record,
            completed: next + 1,
            total,
        }))
    })
}

async fn skip(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<SkipRequest>,
) -> Result<Json<SkipReply>, ApiError> {
    state.with_session(&id, |s| {
        let (next, total) = (s.next(), s.total());
        if let Some(done) = s.outcomes.get(req.trial) {
            return match done {
                Outcome::Skipped(record) => Ok(Json(SkipReply {
                    status: SubmitStatus::Duplicate,
                    record: record.clone(),
                    completed: next,
                    total,
                })),
                Outcome::Answered(_) => Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "already_answered",
                    format!("trial {} already has a response", req.trial),
                )),
            };
        }
        if req.trial != next {
            return Err(ApiError::out_of_order(req.trial, next));
        }
        let record = SkipRecord {
            session: s.plan.session.clone(),
            trial: next,
            reason: req.reason.clone(),
            timestamp: now_ms(),
        };
        let path = state.0.log_dir.join(format!("{}.skips", s.plan.session));
        append_line(&mut s.skips, &path, &record)?;
        s.outcomes.push(Outcome::Skipped(record.clone()));
        Ok(Json(SkipReply {
            status: SubmitStatus::Recorded,
            record,
            completed: next + 1,
            total,
        }))
    })
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/sessions", get(list_sessions))
        .route("/api/sessions/{id}", get(manifest))
        .route("/api/sessions/{id}/next", get(next_trial))
        .route("/api/sessions/{id}/responses", post(submit))
        .route("/api/sessions/{id}/skips", post(skip))
        .route("/api/stimuli/{view}", get(stimulus))
        .with_state(state)
}

/// Bind and serve until interrupted.
pub fn serve(state: AppState, bind: &str) -> Result<()> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Server(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| CliError::Server(format!("bind {bind}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::Server(e.to_string()))?;
        println!("{}", json!({ "listening": addr.to_string() }));
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Server(e.to_string()))
    })
}
