//! Experiment configuration files.
//!
//! A config is a TOML document. Its `preset` key (or `--preset`) selects a
//! built-in base configuration; every table in the file is merged key by key
//! over that base, so a file only states what it changes.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wal_core::annotate::EarlyStopConfig;
use wal_core::baselines::Method;
use wal_core::bound::LossKind;
use wal_core::data::SynthConfig;
use wal_core::nets::{TrainConfig, PRESETS};

/// A configuration problem, located in the source text when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub message: String,
    /// 1-based line and column.
    pub location: Option<(usize, usize)>,
    pub path: Option<PathBuf>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.path {
            write!(f, "{}:", p.display())?;
        }
        if let Some((line, col)) = self.location {
            write!(f, "{line}:{col}: ")?;
        } else if self.path.is_some() {
            f.write_str(" ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    TargetQuantity,
    AnnotatorAccuracy,
    NoiseMean,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::TargetQuantity => "target_quantity",
            Axis::AnnotatorAccuracy => "annotator_accuracy",
            Axis::NoiseMean => "noise_mean",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub synth: SynthConfig,
    pub n_source: usize,
    pub n_target: usize,
    pub n_validation: usize,
    /// Gaussian noise added to target and validation features.
    pub noise_mean: f64,
    pub noise_sigma: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            n_source: 5000,
            n_target: 200,
            n_validation: 1000,
            noise_mean: 0.0,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorChoice {
    /// A small network trained briefly on a held-out source pool.
    Earlystop,
    /// The true label with probability `accuracy`, otherwise a uniform wrong one.
    Noise,
    Perfect,
    /// The uniform distribution for every input.
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotatorSpec {
    pub kind: AnnotatorChoice,
    /// Target accuracy of the noise annotator. A sweep over annotator
    /// accuracy sets it per cell and trains early-stop annotators until
    /// they reach it on a target-domain calibration sample.
    pub accuracy: f64,
    /// Mass the noise annotator puts on its chosen class.
    pub sharpness: f64,
    /// Samples per class in the early-stop annotator's training pool.
    pub pool_per_class: usize,
    /// Target-domain samples per class used to stop an early-stop
    /// annotator at a swept accuracy.
    pub calibration_per_class: usize,
    /// Epoch cap for an early-stop annotator trained to a swept accuracy.
    pub max_epochs: usize,
    pub earlystop: EarlyStopConfig,
}

impl Default for AnnotatorSpec {
    fn default() -> Self {
        Self {
            kind: AnnotatorChoice::Earlystop,
            accuracy: 0.55,
            sharpness: 0.8,
            pool_per_class: 100,
            calibration_per_class: 100,
            max_epochs: 200,
            earlystop: EarlyStopConfig {
                hidden: vec![16],
                epochs: 2,
                lr: 2.5e-3,
                batch_size: 32,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSpec {
    pub pool_size: usize,
    pub loss_kind: LossKind,
}

impl Default for BoundSpec {
    fn default() -> Self {
        Self {
            pool_size: wal_core::bound::DEFAULT_POOL_SIZE,
            loss_kind: LossKind::L2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub workers: usize,
    /// Write measured seconds into `metrics.csv` instead of 0.
    pub record_wall_time: bool,
    /// Write stage checkpoints, datasets and the annotator for WAL cells.
    pub save_artifacts: bool,
    pub data: DataSpec,
    pub annotator: AnnotatorSpec,
    pub train: TrainConfig,
    pub sweep: Option<SweepSpec>,
    pub bound: BoundSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset("desk-blobs").expect("built-in preset")
    }
}

impl ExperimentConfig {
    /// A built-in base configuration. The digits and cifar presets keep
    /// desk-scale data and swap in their longer optimisation schedules.
    pub fn preset(name: &str) -> Option<Self> {
        Some(Self {
            preset: name.to_string(),
            methods: Method::ALL.to_vec(),
            seeds: vec![0],
            out: PathBuf::from("runs"),
            workers: 1,
            record_wall_time: false,
            save_artifacts: true,
            data: DataSpec::default(),
            annotator: AnnotatorSpec::default(),
            train: TrainConfig::preset(name)?,
            sweep: None,
            bound: BoundSpec::default(),
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.methods.is_empty() {
            return Err("`methods` must list at least one method".into());
        }
        if self.seeds.is_empty() {
            return Err("`seeds` must list at least one seed".into());
        }
        if self.workers == 0 {
            return Err("`workers` must be at least 1".into());
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err("`sweep.values` must not be empty".into());
            }
            if s.values.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(core::cmp::Ordering::Less)) {
                return Err("`sweep.values` must be strictly increasing".into());
            }
            if s.axis == Axis::TargetQuantity && s.values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
                return Err("target_quantity values must be positive integers".into());
            }
        }
        if self.data.noise_sigma < 0.0 {
            return Err("`data.noise_sigma` must be non-negative".into());
        }
        self.data.synth.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())
    }
}

/// Byte offset to 1-based (line, column).
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Location of the first `key =` assignment, for semantic errors.
fn key_location(text: &str, key: &str) -> Option<(usize, usize)> {
    text.lines().enumerate().find_map(|(i, line)| {
        let trimmed = line.trim_start();
        let rest = trimmed.strip_prefix(key)?;
        rest.trim_start()
            .starts_with('=')
            .then(|| (i + 1, line.len() - trimmed.len() + 1))
    })
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn toml_error(text: &str, e: &toml::de::Error) -> ConfigError {
    ConfigError {
        message: e.message().to_string(),
        location: e.span().map(|s| line_col(text, s.start)),
        path: None,
    }
}

/// Parse a config from text, merging it over its preset.
///
/// `preset_override` replaces the file's `preset` key.
pub fn parse_config(text: &str, preset_override: Option<&str>) -> Result<ExperimentConfig, ConfigError> {
    // Parsing on its own first gives type errors and unknown keys a location.
    let standalone: ExperimentConfig = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
    let user: toml::Value = toml::from_str(text).map_err(|e| toml_error(text, &e))?;

    let name = preset_override
        .map(str::to_string)
        .or_else(|| user.get("preset").map(|_| standalone.preset.clone()))
        .unwrap_or_else(|| "desk-blobs".to_string());
    let base = ExperimentConfig::preset(&name).ok_or_else(|| ConfigError {
        message: format!("unknown preset `{name}`; known presets: {}", PRESETS.join(", ")),
        location: if preset_override.is_some() {
            None
        } else {
            key_location(text, "preset")
        },
        path: None,
    })?;

    let mut tree = toml::Value::try_from(&base).expect("presets serialise");
    merge(&mut tree, user);
    let mut cfg: ExperimentConfig = tree.try_into().map_err(|e: toml::de::Error| ConfigError {
        message: e.message().to_string(),
        location: None,
        path: None,
    })?;
    cfg.preset = name;

    cfg.validate().map_err(|message| {
        let key = ["methods", "seeds", "workers", "values", "noise_sigma"]
            .into_iter()
            .find(|k| message.contains(&format!("`{k}`")) || message.contains(&format!(".{k}`")));
        ConfigError {
            location: key.and_then(|k| key_location(text, k)),
            message,
            path: None,
        }
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path, preset_override: Option<&str>) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        message: e.to_string(),
        location: None,
        path: Some(path.to_path_buf()),
    })?;
    parse_config(&text, preset_override).map_err(|mut e| {
        e.path = Some(path.to_path_buf());
        e
    })
}
