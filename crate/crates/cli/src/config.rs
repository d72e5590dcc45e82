//! Experiment configuration: a TOML file plus flag overrides (flags win).
//! Every output file embeds the SHA-256 digest of the resolved
//! configuration together with the master seed, so equal digests imply
//! identical configurations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fairaudit_core::audit::{AuditMethod, ThresholdRule};
use fairaudit_core::model::{Arch, DEFAULT_MLP_HIDDEN};
use fairaudit_core::train::{Algorithm, GroupDenominator, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    pub dataset: DatasetBlock,
    #[serde(default)]
    pub split: SplitBlock,
    pub model: ModelBlock,
    #[serde(default)]
    pub train: TrainBlock,
    #[serde(default)]
    pub audit: AuditBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetBlock {
    /// One of: synth, idx, csv, container.
    pub source: String,
    // synth
    #[serde(default)]
    pub n_per_group: Option<usize>,
    #[serde(default)]
    pub groups: Option<usize>,
    #[serde(default)]
    pub dims: Option<usize>,
    #[serde(default)]
    pub separation: Option<f64>,
    #[serde(default)]
    pub label_noise: Option<f64>,
    // idx
    #[serde(default)]
    pub images: Option<PathBuf>,
    #[serde(default)]
    pub labels_file: Option<PathBuf>,
    // csv
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub label_column: Option<String>,
    #[serde(default)]
    pub group_column: Option<String>,
    // container
    #[serde(default)]
    pub stem: Option<PathBuf>,
    /// Subsample to this many records per class (0 = off).
    #[serde(default)]
    pub per_class: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitBlock {
    pub train_fraction: f64,
    /// Number of audited samples m; 0 audits the whole training set (m = n).
    pub audit_samples: usize,
}

impl Default for SplitBlock {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            audit_samples: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub arch: String,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_hidden() -> usize {
    DEFAULT_MLP_HIDDEN
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBlock {
    pub algorithm: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_bound: f64,
    #[serde(default)]
    pub noise_multiplier: Option<f64>,
    #[serde(default)]
    pub target_epsilon: Option<f64>,
    #[serde(default)]
    pub target_delta: Option<f64>,
    pub scale_bound: f64,
    pub persist_clip_bound: bool,
    pub group_denominator: String,
}

impl Default for TrainBlock {
    fn default() -> Self {
        Self {
            algorithm: "sgd".into(),
            epochs: 20,
            batch_size: 256,
            learning_rate: 0.1,
            clip_bound: 10.0,
            noise_multiplier: None,
            target_epsilon: None,
            target_delta: None,
            scale_bound: 2.0,
            persist_clip_bound: true,
            group_denominator: "full-dataset".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditBlock {
    pub method: String,
    /// Number of rounds R (2R trials per audited sample).
    pub rounds: usize,
    #[serde(default)]
    pub target_index: Option<usize>,
    pub threshold_rule: String,
}

impl Default for AuditBlock {
    fn default() -> Self {
        Self {
            method: "alooa".into(),
            rounds: 200,
            target_index: None,
            threshold_rule: "lower-loss-member".into(),
        }
    }
}

/// Flag overrides; every field beats the config file when present.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub dataset: Option<String>,
    pub per_class: Option<usize>,
    pub workers: Option<usize>,
    pub rounds: Option<usize>,
    pub method: Option<String>,
    pub algorithm: Option<String>,
    pub arch: Option<String>,
    pub epsilon: Option<f64>,
    pub scale_bound: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;

        if let Some(v) = &overrides.out_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = overrides.seed {
            cfg.master_seed = v;
        }
        if let Some(v) = &overrides.dataset {
            cfg.dataset.source = v.clone();
        }
        if let Some(v) = overrides.per_class {
            cfg.dataset.per_class = v;
        }
        if let Some(v) = overrides.workers {
            cfg.workers = Some(v);
        }
        if let Some(v) = overrides.rounds {
            cfg.audit.rounds = v;
        }
        if let Some(v) = &overrides.method {
            cfg.audit.method = v.clone();
        }
        if let Some(v) = &overrides.algorithm {
            cfg.train.algorithm = v.clone();
        }
        if let Some(v) = &overrides.arch {
            cfg.model.arch = v.clone();
        }
        if let Some(v) = overrides.epsilon {
            cfg.train.target_epsilon = Some(v);
            cfg.train.noise_multiplier = None;
        }
        if let Some(v) = overrides.scale_bound {
            cfg.train.scale_bound = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.arch()?;
        self.algorithm()?;
        self.audit_method()?;
        self.threshold_rule()?;
        self.group_denominator()?;
        if self.train.noise_multiplier.is_some() && self.train.target_epsilon.is_some() {
            return Err(CliError::Config(
                "noise_multiplier and target_epsilon are mutually exclusive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.split.train_fraction) {
            return Err(CliError::Config("train_fraction outside [0, 1]".into()));
        }
        match self.dataset.source.as_str() {
            "synth" | "idx" | "csv" | "container" => {}
            other => {
                return Err(CliError::Config(format!(
                    "unknown dataset source '{other}' (expected synth, idx, csv, or container)"
                )))
            }
        }
        Ok(())
    }

    pub fn arch(&self) -> Result<Arch, CliError> {
        match self.model.arch.as_str() {
            "lr" => Ok(Arch::Lr),
            "mlp" => Ok(Arch::Mlp),
            "cnn" => Ok(Arch::Cnn),
            other => Err(CliError::Config(format!("unknown arch '{other}'"))),
        }
    }

    pub fn algorithm(&self) -> Result<Algorithm, CliError> {
        match self.train.algorithm.as_str() {
            "sgd" => Ok(Algorithm::Sgd),
            "dpsgd" => Ok(Algorithm::DpSgd),
            "dpsgds" => Ok(Algorithm::DpSgdS),
            other => Err(CliError::Config(format!("unknown algorithm '{other}'"))),
        }
    }

    pub fn audit_method(&self) -> Result<AuditMethod, CliError> {
        match self.audit.method.as_str() {
            "ga" => Ok(AuditMethod::Ga),
            "gba" => Ok(AuditMethod::Gba),
            "looa" => Ok(AuditMethod::Looa),
            "alooa" => Ok(AuditMethod::Alooa),
            other => Err(CliError::Config(format!("unknown audit method '{other}'"))),
        }
    }

    pub fn threshold_rule(&self) -> Result<ThresholdRule, CliError> {
        match self.audit.threshold_rule.as_str() {
            "lower-loss-member" => Ok(ThresholdRule::LowerLossMember),
            "paper-literal-ge" => Ok(ThresholdRule::PaperLiteralGe),
            "bidirectional-best" => Ok(ThresholdRule::BidirectionalBest),
            other => Err(CliError::Config(format!(
                "unknown threshold rule '{other}'"
            ))),
        }
    }

    pub fn group_denominator(&self) -> Result<GroupDenominator, CliError> {
        match self.train.group_denominator.as_str() {
            "full-dataset" => Ok(GroupDenominator::FullDataset),
            "batch-count" => Ok(GroupDenominator::BatchCount),
            other => Err(CliError::Config(format!(
                "unknown group_denominator '{other}'"
            ))),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let target = match (self.train.target_epsilon, self.train.target_delta) {
            (Some(eps), delta) => Some((eps, delta.unwrap_or(1e-5))),
            (None, _) => None,
        };
        let cfg = TrainConfig {
            algorithm: self.algorithm()?,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            clip_bound: self.train.clip_bound,
            noise_multiplier: self.train.noise_multiplier,
            scale_bound: self.train.scale_bound,
            target,
            seed: self.master_seed,
            persist_clip_bound: self.train.persist_clip_bound,
            group_denominator: self.group_denominator()?,
        };
        cfg.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// SHA-256 of the resolved configuration, hex-encoded.
    ///
    /// The output directory and worker count are normalized away first:
    /// they change where results land and how fast they are computed, never
    /// what is computed, so files with equal digests carry identical
    /// experiment results.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.workers = None;
        let json = serde_json::to_string(&canonical).expect("config serialization cannot fail");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Worker policy: flag/env/config, in that order of precedence (the
    /// flag was already folded in by `load`).
    pub fn exec_policy(&self) -> fairaudit_core::exec::ExecPolicy {
        let from_env = std::env::var("FAIRAUDIT_WORKERS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok());
        match self.workers.or(from_env) {
            Some(w) => fairaudit_core::exec::ExecPolicy::with_workers(w),
            None => fairaudit_core::exec::ExecPolicy::default(),
        }
    }
}
