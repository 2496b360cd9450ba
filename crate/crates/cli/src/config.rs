//! Single TOML config file shared by every subcommand; flags override it.

use std::path::{Path, PathBuf};

use metamer_core::assets::{DataDir, DATA_DIR_ENV};
use metamer_core::geometry::PoolingConfig;
use metamer_core::iqa::Metric;
use metamer_core::psychometrics::Condition;
use metamer_core::ExecPolicy;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Slope of the ensemble γ used when no fitted model is supplied.
pub const DEFAULT_GAMMA_SLOPE: f64 = 1.281;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CodecKind {
    /// Converted weights under the data directory (or explicit paths).
    #[default]
    Pretrained,
    /// Seeded orthonormal 1×1 pair, for weight-free runs.
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub kind: CodecKind,
    pub encoder: Option<PathBuf>,
    pub decoder: Option<PathBuf>,
    pub toy_features: usize,
    pub toy_seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            kind: CodecKind::Pretrained,
            encoder: None,
            decoder: None,
            toy_features: 8,
            toy_seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub seed: u64,
    pub gamma_slope: f64,
    /// Fitted model from `optimize-gamma`; takes precedence over the slope.
    pub gamma_model: Option<PathBuf>,
    /// Same α in every peripheral region instead of γ(z).
    pub uniform_alpha: Option<f64>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            seed: 0,
            gamma_slope: DEFAULT_GAMMA_SLOPE,
            gamma_model: None,
            uniform_alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub scales: Vec<f64>,
    pub metric: Metric,
    pub grid_step: f64,
    pub permutations: usize,
    pub significance: f64,
    pub seed: u64,
    /// Directory of distortion-profile JSON files; baselines are scored when unset.
    pub profiles: Option<PathBuf>,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            scales: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            metric: Metric::Ssim,
            grid_step: 1.0 / 20.0,
            permutations: 10_000,
            significance: 0.05,
            seed: 0,
            profiles: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub bootstrap: usize,
    pub level: f64,
    pub seed: u64,
    pub shared_lapse: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            bootstrap: 10_000,
            level: 0.68,
            seed: 0,
            shared_lapse: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub s0: f64,
    pub beta0: f64,
    pub lapse: f64,
    pub scales: Vec<f64>,
    pub trials_per_scale: usize,
    pub images: usize,
    pub condition: Condition,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            s0: 0.5,
            beta0: 3.0,
            lapse: 0.02,
            scales: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            trials_per_scale: 300,
            images: 10,
            condition: Condition::SynthVsSynth,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub session: String,
    pub scales: Vec<f64>,
    pub conditions: Vec<Condition>,
    pub reps: usize,
    /// Distinct noise seeds synthesized per (image, scale).
    pub seeds_per_cell: usize,
    pub stimulus_ms: u64,
    pub blank_ms: u64,
    pub fixation_radius_px: f64,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            session: "session".into(),
            scales: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            conditions: vec![Condition::SynthVsSynth, Condition::SynthVsReference],
            reps: 30,
            seeds_per_cell: 2,
            stimulus_ms: 500,
            blank_ms: 500,
            fixation_radius_px: 3.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data_dir: Option<PathBuf>,
    /// Run every loop on the calling thread.
    pub sequential: bool,
    pub geometry: PoolingConfig,
    pub codec: CodecConfig,
    pub synthesis: SynthesisConfig,
    pub optimize: OptimizeConfig,
    pub fit: FitConfig,
    pub simulate: SimulateConfig,
    pub session: SessionConfig,
    pub server: ServerConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text).map_err(|message| CliError::Config {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }

    /// Default, then config file, then the environment.
    pub fn data_dir(&self) -> DataDir {
        match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) => DataDir::new(dir),
            None => DataDir::new(self.data_dir.clone().unwrap_or_else(|| PathBuf::from("data"))),
        }
    }

    pub fn policy(&self) -> ExecPolicy {
        if self.sequential {
            ExecPolicy::Sequential
        } else {
            ExecPolicy::Parallel
        }
    }
}
