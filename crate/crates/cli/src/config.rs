//! The run configuration file and its flag overrides.
//!
//! One human-readable TOML file configures every subcommand; unknown keys
//! are rejected. Each command echoes the fully-resolved config into its
//! output directory so a run can be reproduced from the artifacts alone.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use dpkws_core::corpus::KeywordSpec;
use dpkws_core::features::FrameSpec;
use dpkws_core::kws::ScoringMode;
use dpkws_core::trainer::{DataKind, DataParamConfig, Mode, TrainConfig};

/// Environment variable prefixed to relative output directories.
pub const RUN_ROOT_ENV: &str = "DPKWS_RUN_ROOT";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub frames: FrameSpec,
    pub corpus: CorpusSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub train_positives: usize,
    pub train_negatives: usize,
    pub eval_positives: usize,
    pub eval_negatives: usize,
    pub keyword: KeywordSpec,
    /// Eval utterances carry longer filler stretches so the negative side
    /// accumulates meaningful false-alarm hours.
    pub eval_keyword: KeywordSpec,
    pub clean_only: bool,
    pub noise_clips_per_kind: usize,
    pub noise_clip_seconds: f64,
    pub cv_fraction: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            train_positives: 500,
            train_negatives: 750,
            eval_positives: 250,
            eval_negatives: 400,
            keyword: KeywordSpec::default(),
            eval_keyword: KeywordSpec {
                filler_segments: (5, 10),
                filler_frames: (6, 14),
                ..KeywordSpec::default()
            },
            clean_only: false,
            noise_clips_per_kind: 2,
            noise_clip_seconds: 2.0,
            cv_fraction: 0.02,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub mode: Mode,
    /// Selects the hyperparameter defaults; `auto` follows the corpus
    /// (noisy when any noisy utterance is present).
    pub data: Option<DataKind>,
    pub model_lr: f64,
    pub betas: (f64, f64),
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub early_stop_patience: usize,
    pub batch_utterances: usize,
    pub max_epochs: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub class_lr: Option<f64>,
    pub class_init: Option<f64>,
    pub instance_lr: Option<f64>,
    pub instance_init: Option<f64>,
    pub weight_decay: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            mode: Mode::Baseline,
            data: None,
            model_lr: 0.01,
            betas: (0.9, 0.999),
            plateau_patience: 2,
            plateau_factor: 0.5,
            early_stop_patience: 9,
            batch_utterances: 256,
            max_epochs: 40,
            hidden_width: 64,
            hidden_layers: 5,
            class_lr: None,
            class_init: None,
            instance_lr: None,
            instance_init: None,
            weight_decay: None,
        }
    }
}

impl TrainSection {
    /// Concrete trainer config: defaults for the (data, mode) pair with
    /// any explicit overrides applied.
    pub fn resolve(&self, data_kind: DataKind, seed: u64) -> TrainConfig {
        let mut dp = DataParamConfig::defaults(data_kind, self.mode);
        if let Some(v) = self.class_lr {
            dp.class_lr = v;
        }
        if let Some(v) = self.class_init {
            dp.class_init = v;
        }
        if let Some(v) = self.instance_lr {
            dp.instance_lr = v;
        }
        if let Some(v) = self.instance_init {
            dp.instance_init = v;
        }
        if let Some(v) = self.weight_decay {
            dp.weight_decay = v;
        }
        TrainConfig {
            mode: self.mode,
            data_kind,
            data_params: dp,
            model_lr: self.model_lr,
            betas: self.betas,
            plateau_patience: self.plateau_patience,
            plateau_factor: self.plateau_factor,
            early_stop_patience: self.early_stop_patience,
            batch_utterances: self.batch_utterances,
            max_epochs: self.max_epochs,
            hidden_width: self.hidden_width,
            hidden_layers: self.hidden_layers,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub fa_per_hour: f64,
    pub det_points: usize,
    pub scoring: ScoringMode,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            fa_per_hour: 10.0,
            det_points: 20,
            scoring: ScoringMode::Forward,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let cfg: RunConfig = toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?;
                Ok(cfg)
            }
        }
    }

    /// Echo the resolved config into an output directory.
    pub fn echo_into(&self, dir: &Path) -> anyhow::Result<()> {
        let text = toml::to_string_pretty(self).context("serializing resolved config")?;
        std::fs::write(dir.join("config.toml"), text)?;
        Ok(())
    }
}

/// Resolve an output directory against `DPKWS_RUN_ROOT` when relative.
pub fn resolve_out_dir(out: &Path) -> PathBuf {
    if out.is_absolute() {
        return out.to_path_buf();
    }
    match std::env::var_os(RUN_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    }
}

/// Exclusive lock file marking a directory as owned by one process.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join("run.lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!(
                    "run directory {} is locked (stale run.lock? remove it if no run is active)",
                    dir.display()
                )
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
