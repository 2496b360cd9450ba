//! Subcommand implementations. Each returns the JSON value printed on success.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use metamer_core::assets::read_png_dir;
use metamer_core::exec::derive_seed;
use metamer_core::features::image_io::{read_image, write_image};
use metamer_core::features::toy::orthonormal_codec;
use metamer_core::features::{load_weights, ImageBuffer, WeightManifest};
use metamer_core::geometry::{build_pooling_masks, MaskCache, PoolingConfig, PoolingMasks};
use metamer_core::iqa::Metric;
use metamer_core::optimization::{
    alpha_grid, build_profile, run_gamma_search, score_nf_table, DistortionProfile, GammaFunction, GammaModel,
    GammaSearchConfig, GammaSearchReport, ReferencePair, ScaleData,
};
use metamer_core::psychometrics::{
    bootstrap_ci, fit_psychometric, fit_shared_lapse, read_trials, simulate_observer, write_trials, BootstrapConfig,
    Condition, Design as ObserverDesign, PsychometricParams,
};
use metamer_core::styletransfer::{synthesize_metamer, AlphaField, AlphaSource, Codec};
use metamer_core::Error;
use serde_json::{json, Value};

use crate::config::{CodecKind, Config};
use crate::error::{CliError, Result};
use crate::plan::{build_trials, CellStimuli, Design, SessionPlan, Timing};
use crate::server::{serve, AppState};

#[derive(Debug, Parser)]
#[command(name = "metamer", version, about = "Foveated metamer pipeline and ABX session server")]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Data directory (weights, images, baselines); overrides the config and METAMER_DATA_DIR.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build (or load cached) pooling masks and report their layout.
    Masks(MasksArgs),
    /// Turn one image into a metamer.
    Synthesize(SynthesizeArgs),
    /// Fit γ against reference distortion profiles.
    OptimizeGamma(OptimizeArgs),
    /// Fit psychometric functions to a trial log.
    Fit(FitArgs),
    /// Write a trial log from a synthetic observer.
    Simulate(SimulateArgs),
    /// Synthesize stimuli and write an ABX session plan.
    Plan(PlanArgs),
    /// Host ABX sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct MasksArgs {
    #[arg(long)]
    pub scale: Option<f64>,
    /// Image side in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Write the masks to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Load from / store into the mask cache under the data directory.
    #[arg(long)]
    pub cache: bool,
}

#[derive(Debug, Args)]
pub struct CodecArgs {
    #[arg(long, value_enum)]
    pub codec: Option<CodecKind>,
    /// Encoder weight directory.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Decoder weight directory.
    #[arg(long)]
    pub decoder: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GammaArgs {
    /// Slope of γ.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// γ model or search report from `optimize-gamma`.
    #[arg(long)]
    pub gamma_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Same α in every peripheral region instead of γ(z).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    pub gamma: GammaArgs,
    #[command(flatten)]
    pub codec: CodecArgs,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Directory of original images (default: data directory).
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Directory of distortion-profile JSON files, one per scale.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub permutations: Option<usize>,
    #[arg(long)]
    pub grid_step: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Full search report.
    #[arg(long, default_value = "gamma_report.json")]
    pub out: PathBuf,
    #[command(flatten)]
    pub codec: CodecArgs,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Line-delimited JSON trial log.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub condition: Option<Condition>,
    /// Bootstrap resamples; 0 skips the intervals.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// One lapse rate shared by both conditions.
    #[arg(long)]
    pub shared_lapse: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub s0: Option<f64>,
    #[arg(long)]
    pub beta0: Option<f64>,
    #[arg(long)]
    pub lapse: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    #[arg(long)]
    pub trials_per_scale: Option<usize>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub condition: Option<Condition>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trial log to write (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Directory of original images (default: data directory).
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Output directory for plan.json and the stimuli.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub session: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub conditions: Option<Vec<Condition>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seeds_per_cell: Option<usize>,
    #[arg(long)]
    pub stimulus_ms: Option<u64>,
    #[arg(long)]
    pub blank_ms: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub gamma: GammaArgs,
    #[command(flatten)]
    pub codec: CodecArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Session plan; repeat to host several sessions.
    #[arg(long = "plan", required = true)]
    pub plans: Vec<PathBuf>,
    /// Response logs (default: `logs` next to the first plan).
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
}

/// Load the config and apply the global flags.
pub fn resolve_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if cli.sequential {
        cfg.sequential = true;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<Value> {
    let mut cfg = resolve_config(&cli)?;
    let data = match &cli.data_dir {
        Some(d) => metamer_core::assets::DataDir::new(d),
        None => cfg.data_dir(),
    };
    cfg.data_dir = Some(data.root().to_path_buf());
    match cli.command {
        Command::Masks(a) => masks(&mut cfg, a),
        Command::Synthesize(a) => synthesize(&mut cfg, a),
        Command::OptimizeGamma(a) => optimize_gamma(&mut cfg, a),
        Command::Fit(a) => fit(&mut cfg, a),
        Command::Simulate(a) => simulate(&mut cfg, a),
        Command::Plan(a) => plan(&mut cfg, a),
        Command::Serve(a) => serve_cmd(&mut cfg, a),
    }
}

fn data_root(cfg: &Config) -> PathBuf {
    cfg.data_dir.clone().unwrap_or_else(|| PathBuf::from("data"))
}

fn mask_summary(masks: &PoolingMasks) -> Result<Value> {
    let c = &masks.config;
    Ok(json!({
        "scale": c.scale,
        "image_size": masks.size,
        "regions": masks.len(),
        "peripheral": masks.peripheral_count(),
        "rings": c.ring_count()?,
        "angles": c.angle_count()?,
        "partition_error": masks.partition_error(),
    }))
}

fn masks(cfg: &mut Config, a: MasksArgs) -> Result<Value> {
    if let Some(s) = a.scale {
        cfg.geometry.scale = s;
    }
    if let Some(n) = a.size {
        cfg.geometry.image_size = n;
    }
    let built = if a.cache {
        MaskCache::new(data_root(cfg).join("masks")).load_or_build(&cfg.geometry)?
    } else {
        build_pooling_masks(&cfg.geometry)?
    };
    if let Some(out) = &a.out {
        metamer_core::geometry::write_mask_file(&built, out)?;
    }
    let mut v = mask_summary(&built)?;
    if let Some(out) = a.out {
        v["file"] = json!(out);
    }
    Ok(v)
}

fn apply_codec_args(cfg: &mut Config, a: &CodecArgs) {
    if let Some(k) = a.codec {
        cfg.codec.kind = k;
    }
    if a.encoder.is_some() {
        cfg.codec.encoder = a.encoder.clone();
    }
    if a.decoder.is_some() {
        cfg.codec.decoder = a.decoder.clone();
    }
}

fn apply_gamma_args(cfg: &mut Config, a: &GammaArgs) {
    if let Some(g) = a.gamma {
        cfg.synthesis.gamma_slope = g;
    }
    if a.gamma_model.is_some() {
        cfg.synthesis.gamma_model = a.gamma_model.clone();
    }
}

/// Encoder/decoder for `channels`-channel images.
fn load_codec(cfg: &Config, channels: usize) -> Result<(WeightManifest, WeightManifest)> {
    let c = &cfg.codec;
    match c.kind {
        CodecKind::Toy => Ok(orthonormal_codec(channels, c.toy_features.max(channels), c.toy_seed)?),
        CodecKind::Pretrained => {
            let data = metamer_core::assets::DataDir::new(data_root(cfg));
            let enc = c.encoder.clone().unwrap_or_else(|| data.encoder_dir());
            let dec = c.decoder.clone().unwrap_or_else(|| data.decoder_dir());
            if !enc.exists() || !dec.exists() {
                return Err(CliError::Input(format!(
                    "pretrained weights not found ({} / {}); convert them there or use --codec toy",
                    enc.display(),
                    dec.display()
                )));
            }
            Ok((load_weights(&enc)?, load_weights(&dec)?))
        }
    }
}

/// γ at `scale` from the configured model file or slope.
fn gamma_for(cfg: &Config, scale: f64) -> Result<GammaFunction> {
    let Some(path) = &cfg.synthesis.gamma_model else {
        return Ok(GammaFunction::new(cfg.synthesis.gamma_slope));
    };
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if let Ok(report) = serde_json::from_slice::<GammaSearchReport>(&bytes) {
        return Ok(report.model.for_scale(scale));
    }
    if let Ok(model) = serde_json::from_slice::<GammaModel>(&bytes) {
        return Ok(model.for_scale(scale));
    }
    serde_json::from_slice::<GammaFunction>(&bytes)
        .map_err(|e| CliError::Input(format!("{}: not a γ model, report or function ({e})", path.display())))
}

fn square(img: &ImageBuffer, what: &str) -> Result<usize> {
    if img.width != img.height {
        return Err(CliError::Input(format!("{what} is {}x{}; images must be square", img.width, img.height)));
    }
    Ok(img.width)
}

fn geometry_for(cfg: &Config, scale: f64, size: usize) -> PoolingConfig {
    PoolingConfig {
        scale,
        image_size: size,
        ..cfg.geometry.clone()
    }
}

fn synthesize(cfg: &mut Config, a: SynthesizeArgs) -> Result<Value> {
    apply_codec_args(cfg, &a.codec);
    apply_gamma_args(cfg, &a.gamma);
    if let Some(s) = a.scale {
        cfg.geometry.scale = s;
    }
    if let Some(s) = a.seed {
        cfg.synthesis.seed = s;
    }
    if a.alpha.is_some() {
        cfg.synthesis.uniform_alpha = a.alpha;
    }
    let img = read_image(&a.input)?;
    let size = square(&img, &a.input.display().to_string())?;
    let masks = build_pooling_masks(&geometry_for(cfg, cfg.geometry.scale, size))?;
    let (enc, dec) = load_codec(cfg, img.channels)?;
    let codec = Codec::new(&enc, &dec);
    let gamma;
    let field;
    let source = match cfg.synthesis.uniform_alpha {
        Some(alpha) => {
            field = AlphaField::uniform(&masks, alpha)?;
            AlphaSource::Field(&field)
        }
        None => {
            gamma = gamma_for(cfg, cfg.geometry.scale)?;
            AlphaSource::Gamma(&gamma)
        }
    };
    let metamer = synthesize_metamer(&img, cfg.synthesis.seed, source, &masks, &codec, cfg.policy())?;
    write_image(&a.output, &metamer.image)?;
    let meta_path = a.output.with_extension("json");
    std::fs::write(&meta_path, serde_json::to_vec_pretty(&metamer.metadata)?).map_err(|e| Error::io(&meta_path, e))?;
    Ok(json!({ "output": a.output, "metadata": metamer.metadata }))
}

fn load_images(dir: Option<&Path>, cfg: &Config) -> Result<Vec<(String, ImageBuffer)>> {
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(|| metamer_core::assets::DataDir::new(data_root(cfg)).images_dir());
    let images = read_png_dir(&dir)?;
    if images.is_empty() {
        return Err(CliError::Input(format!("no PNG images in {}", dir.display())));
    }
    let size = square(&images[0].1, &images[0].0)?;
    for (id, img) in &images {
        if square(img, id)? != size {
            return Err(CliError::Input(format!("image {id} is {}px; expected {size}px like the others", img.width)));
        }
    }
    Ok(images)
}

fn load_profiles(dir: &Path) -> Result<Vec<DistortionProfile>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for p in paths {
        out.push(DistortionProfile::load(&p)?);
    }
    Ok(out)
}

fn optimize_gamma(cfg: &mut Config, a: OptimizeArgs) -> Result<Value> {
    apply_codec_args(cfg, &a.codec);
    let o = &mut cfg.optimize;
    if let Some(s) = a.scales.clone() {
        o.scales = s;
    }
    if let Some(m) = a.metric {
        o.metric = m;
    }
    if let Some(p) = a.permutations {
        o.permutations = p;
    }
    if let Some(g) = a.grid_step {
        o.grid_step = g;
    }
    if let Some(s) = a.seed {
        o.seed = s;
    }
    if a.profiles.is_some() {
        o.profiles = a.profiles.clone();
    }
    let o = cfg.optimize.clone();
    let images = load_images(a.images.as_deref(), cfg)?;
    let size = images[0].1.width;
    let (enc, dec) = load_codec(cfg, images[0].1.channels)?;
    let codec = Codec::new(&enc, &dec);
    let grid = alpha_grid(o.grid_step)?;
    let supplied = o.profiles.as_deref().map(load_profiles).transpose()?;
    let data_dir = metamer_core::assets::DataDir::new(data_root(cfg));

    let mut data = Vec::with_capacity(o.scales.len());
    for &scale in &o.scales {
        let masks = build_pooling_masks(&geometry_for(cfg, scale, size))?;
        if masks.peripheral_count() == 0 {
            return Err(CliError::Input(format!("{size}px images have no peripheral regions at scale {scale}")));
        }
        let profile = match &supplied {
            Some(list) => list
                .iter()
                .find(|p| (p.scale - scale).abs() < 1e-9 && p.metric == o.metric)
                .cloned()
                .ok_or_else(|| CliError::Input(format!("no {} profile for scale {scale}", o.metric)))?,
            None => {
                let baselines: BTreeMap<String, ImageBuffer> = data_dir.baselines(scale)?.into_iter().collect();
                let pairs: Vec<ReferencePair> = images
                    .iter()
                    .filter_map(|(id, img)| {
                        baselines.get(id).map(|b| ReferencePair {
                            id: id.clone(),
                            baseline: b.clone(),
                            original: img.clone(),
                        })
                    })
                    .collect();
                build_profile(&pairs, &masks, o.metric, cfg.policy())?
            }
        };
        let table = score_nf_table(&images, &masks, &codec, o.metric, &grid, o.seed, cfg.policy())?;
        data.push(ScaleData { profile, table });
    }
    let search = GammaSearchConfig {
        grid_step: o.grid_step,
        permutations: o.permutations,
        significance: o.significance,
        seed: o.seed,
    };
    let report = run_gamma_search(&data, &search, cfg.policy())?;
    std::fs::write(&a.out, report.to_json()?).map_err(|e| Error::io(&a.out, e))?;
    Ok(json!({
        "report": a.out,
        "scale_independent": report.scale_independent,
        "ensemble_slope": report.ensemble.slope,
        "model": report.model,
        "p_values": report.scales.iter().map(|s| json!({ "scale": s.scale, "p": s.p_value, "slope": s.fit.slope })).collect::<Vec<_>>(),
    }))
}

fn fit(cfg: &mut Config, a: FitArgs) -> Result<Value> {
    if let Some(b) = a.bootstrap {
        cfg.fit.bootstrap = b;
    }
    if let Some(l) = a.level {
        cfg.fit.level = l;
    }
    if let Some(s) = a.seed {
        cfg.fit.seed = s;
    }
    if a.shared_lapse {
        cfg.fit.shared_lapse = true;
    }
    let file = File::open(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let trials = read_trials(BufReader::new(file))?;
    let present: BTreeSet<Condition> = trials.iter().map(|t| t.condition).collect();
    let wanted: Vec<Condition> = match a.condition {
        Some(c) if present.contains(&c) => vec![c],
        Some(c) => return Err(CliError::Input(format!("no {c} trials in {}", a.input.display()))),
        None => present.into_iter().collect(),
    };
    if wanted.is_empty() {
        return Err(CliError::Input(format!("{} holds no trials", a.input.display())));
    }
    let mut fits = if cfg.fit.shared_lapse {
        fit_shared_lapse(&trials)?.into_iter().filter(|f| wanted.contains(&f.condition)).collect()
    } else {
        wanted.iter().map(|&c| fit_psychometric(&trials, c)).collect::<metamer_core::Result<Vec<_>>>()?
    };
    if cfg.fit.bootstrap > 0 {
        let boot = BootstrapConfig {
            samples: cfg.fit.bootstrap,
            level: cfg.fit.level,
            seed: cfg.fit.seed,
        };
        for f in &mut fits {
            let subset: Vec<_> = trials.iter().filter(|t| t.condition == f.condition).cloned().collect();
            f.ci = Some(bootstrap_ci(&subset, f, &boot, cfg.policy())?);
        }
    }
    let report = json!({ "input": a.input, "trials": trials.len(), "fits": fits });
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(out, e))?;
    }
    Ok(report)
}

fn simulate(cfg: &mut Config, a: SimulateArgs) -> Result<Value> {
    let s = &mut cfg.simulate;
    if let Some(v) = a.s0 {
        s.s0 = v;
    }
    if let Some(v) = a.beta0 {
        s.beta0 = v;
    }
    if let Some(v) = a.lapse {
        s.lapse = v;
    }
    if let Some(v) = a.scales {
        s.scales = v;
    }
    if let Some(v) = a.trials_per_scale {
        s.trials_per_scale = v;
    }
    if let Some(v) = a.images {
        s.images = v;
    }
    if let Some(v) = a.condition {
        s.condition = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    let s = cfg.simulate.clone();
    let params = PsychometricParams {
        s0: s.s0,
        beta0: s.beta0,
        lapse: s.lapse,
    };
    let design = ObserverDesign {
        scales: s.scales.clone(),
        trials_per_scale: s.trials_per_scale,
        images: s.images,
    };
    let trials = simulate_observer(&params, &design, s.condition, s.seed)?;
    match &a.out {
        Some(path) => {
            let f = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(f);
            write_trials(&trials, &mut w)?;
            w.flush().map_err(|e| Error::io(path, e))?;
            Ok(json!({ "output": path, "trials": trials.len(), "params": params }))
        }
        None => {
            let stdout = std::io::stdout();
            write_trials(&trials, stdout.lock())?;
            Ok(Value::Null)
        }
    }
}

fn plan(cfg: &mut Config, a: PlanArgs) -> Result<Value> {
    apply_codec_args(cfg, &a.codec);
    apply_gamma_args(cfg, &a.gamma);
    let s = &mut cfg.session;
    if let Some(v) = a.session.clone() {
        s.session = v;
    }
    if let Some(v) = a.scales.clone() {
        s.scales = v;
    }
    if let Some(v) = a.conditions.clone() {
        s.conditions = v;
    }
    if let Some(v) = a.reps {
        s.reps = v;
    }
    if let Some(v) = a.seeds_per_cell {
        s.seeds_per_cell = v;
    }
    if let Some(v) = a.stimulus_ms {
        s.stimulus_ms = v;
    }
    if let Some(v) = a.blank_ms {
        s.blank_ms = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    let s = cfg.session.clone();
    if s.seeds_per_cell < 2 {
        return Err(CliError::Input("seeds_per_cell must be at least 2".into()));
    }
    let images = load_images(a.images.as_deref(), cfg)?;
    let size = images[0].1.width;
    let (enc, dec) = load_codec(cfg, images[0].1.channels)?;
    let codec = Codec::new(&enc, &dec);
    let stim_dir = a.out.join("stimuli");
    std::fs::create_dir_all(&stim_dir).map_err(|e| Error::io(&stim_dir, e))?;

    let mut files = BTreeMap::new();
    let mut cells = Vec::new();
    let mut gammas = BTreeMap::new();
    let mut counter = 0u64;
    for (id, img) in &images {
        let reference = format!("{id}_ref");
        write_image(&stim_dir.join(format!("{reference}.png")), &codec.round_trip(img, cfg.policy())?)?;
        files.insert(reference.clone(), format!("{reference}.png"));
        for &scale in &s.scales {
            let masks = build_pooling_masks(&geometry_for(cfg, scale, size))?;
            let gamma = gamma_for(cfg, scale)?;
            gammas.insert(format!("{scale}"), gamma.slope);
            let mut synth = Vec::with_capacity(s.seeds_per_cell);
            for k in 0..s.seeds_per_cell {
                let seed = derive_seed(s.seed, counter);
                counter += 1;
                let m = synthesize_metamer(img, seed, AlphaSource::Gamma(&gamma), &masks, &codec, cfg.policy())?;
                let name = format!("{id}_s{scale}_k{k}");
                write_image(&stim_dir.join(format!("{name}.png")), &m.image)?;
                files.insert(name.clone(), format!("{name}.png"));
                synth.push(name);
            }
            cells.push(CellStimuli {
                image: id.clone(),
                scale,
                synth,
                reference: reference.clone(),
            });
        }
    }
    let design = Design {
        conditions: s.conditions.clone(),
        scales: s.scales.clone(),
        images: images.iter().map(|(id, _)| id.clone()).collect(),
        reps: s.reps,
    };
    let trials = build_trials(&s.session, &design, &cells, s.seed)?;
    let plan = SessionPlan {
        session: s.session.clone(),
        seed: s.seed,
        timing: Timing {
            stimulus_ms: s.stimulus_ms,
            blank_ms: s.blank_ms,
        },
        fixation_radius_px: s.fixation_radius_px,
        image_size: size,
        design,
        metadata: json!({
            "gamma_slopes": gammas,
            "encoder": { "name": enc.name, "checksum": enc.checksum },
            "decoder": { "name": dec.name, "checksum": dec.checksum },
            "seeds_per_cell": s.seeds_per_cell,
            "timing_note": "stimulus and blank durations are configurable defaults",
        }),
        stimulus_dir: PathBuf::from("stimuli"),
        files,
        trials,
    };
    plan.validate()?;
    let path = a.out.join("plan.json");
    plan.save(&path)?;
    Ok(json!({ "plan": path, "session": plan.session, "trials": plan.trials.len(), "stimuli": plan.files.len() }))
}

fn serve_cmd(cfg: &mut Config, a: ServeArgs) -> Result<Value> {
    if let Some(b) = a.bind {
        cfg.server.bind = b;
    }
    let plans = a.plans.iter().map(|p| SessionPlan::load(p)).collect::<Result<Vec<_>>>()?;
    let log_dir = a.log_dir.unwrap_or_else(|| {
        a.plans[0]
            .parent()
            .unwrap_or(Path::new("."))
            .join("logs")
    });
    let state = AppState::open(plans, &log_dir)?;
    serve(state, &cfg.server.bind)?;
    Ok(Value::Null)
}
