//! Experiment configuration: a JSON file with stream, engine, and model
//! sections. Unknown keys are rejected so typos fail fast; omitted fields
//! fall back to the standard benchmark values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::{EngineConfig, EngineMode, RefInit, ThresholdRule};
use crate::nn::LossKind;
use crate::stream::{DriftEvent, DriftKind, GeneratorKind, StreamSpec};
use crate::vae::VaeConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stream: StreamSettings,
    #[serde(default)]
    pub engine: EngineSettings,
    #[serde(default)]
    pub model: ModelSettings,
    /// Number of normal pre-drift samples used for offline pretraining.
    #[serde(default = "defaults::pretrain_size")]
    pub pretrain_size: usize,
    #[serde(default = "defaults::repetitions")]
    pub repetitions: usize,
    /// Master seed; per-repetition seeds are derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StreamSettings {
    pub generator: GeneratorName,
    #[serde(default = "defaults::length")]
    pub length: u64,
    #[serde(default = "defaults::anomaly_rate")]
    pub anomaly_rate: f64,
    /// Omitted → the generator's standard schedule.
    #[serde(default)]
    pub drift_schedule: Option<Vec<DriftEventSettings>>,
    /// Required for the `csv` generator.
    #[serde(default)]
    pub csv_path: Option<PathBuf>,
    /// Piecewise feature scaling for CSV streams: each entry applies from
    /// its step until the next entry.
    #[serde(default)]
    pub scale_schedule: Vec<ScaleEntry>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorName {
    Sea,
    Circle,
    Sine,
    Vib,
    Csv,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DriftEventSettings {
    pub at: u64,
    pub kind: DriftKindName,
    #[serde(default)]
    pub duration: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DriftKindName {
    Abrupt,
    Incremental,
    RecurrentRevert,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScaleEntry {
    pub at: u64,
    pub factor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EngineSettings {
    pub ensemble_size: usize,
    pub w_train: usize,
    pub gamma: usize,
    pub w_drift_min: usize,
    pub w_drift_max: usize,
    pub p_thre: usize,
    pub d_thre: usize,
    pub p_warn: f64,
    pub p_alarm: f64,
    pub expiry_time: u64,
    pub threshold: ThresholdSettings,
    pub mode: ModeName,
    pub ref_init: RefInitName,
    pub min_retrain: usize,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            ensemble_size: 10,
            w_train: 3000,
            gamma: 2000,
            w_drift_min: 180,
            w_drift_max: 220,
            p_thre: 1,
            d_thre: 10,
            p_warn: 0.01,
            p_alarm: 0.001,
            expiry_time: 100,
            threshold: ThresholdSettings::Adaptive,
            mode: ModeName::Esdd,
            ref_init: RefInitName::Stream,
            min_retrain: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdSettings {
    Adaptive,
    Percentile { b: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Baseline,
    Vaepp,
    Vaeppes,
    Onedd,
    Esdd,
}

impl std::str::FromStr for ModeName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(ModeName::Baseline),
            "vaepp" => Ok(ModeName::Vaepp),
            "vaeppes" => Ok(ModeName::Vaeppes),
            "onedd" => Ok(ModeName::Onedd),
            "esdd" => Ok(ModeName::Esdd),
            other => Err(format!(
                "unknown mode {other:?}; expected baseline|vaepp|vaeppes|onedd|esdd"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RefInitName {
    Stream,
    Pretrain,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    /// Omitted → the last hidden width.
    pub latent: Option<usize>,
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossName,
    pub input_noise_std: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            hidden: vec![64, 8],
            latent: None,
            beta: 1.0,
            learning_rate: 0.001,
            epochs: 10,
            batch_size: 64,
            loss: LossName::Bce,
            input_noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum LossName {
    Bce,
    Mse,
}

mod defaults {
    pub fn pretrain_size() -> usize {
        2000
    }

    pub fn repetitions() -> usize {
        20
    }

    pub fn length() -> u64 {
        20_000
    }

    pub fn anomaly_rate() -> f64 {
        0.01
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Stable 64-bit FNV-1a over the canonical JSON form; recorded in run
    /// outputs so artifacts can be traced back to their configuration.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in text.as_bytes() {
            h ^= u64::from(*byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn generator_kind(&self) -> Option<GeneratorKind> {
        match self.stream.generator {
            GeneratorName::Sea => Some(GeneratorKind::Sea),
            GeneratorName::Circle => Some(GeneratorKind::Circle),
            GeneratorName::Sine => Some(GeneratorKind::Sine),
            GeneratorName::Vib => Some(GeneratorKind::Vib),
            GeneratorName::Csv => None,
        }
    }

    pub fn stream_spec(&self) -> Result<StreamSpec, ConfigError> {
        let kind = self
            .generator_kind()
            .ok_or_else(|| ConfigError("csv streams have no synthetic spec".into()))?;
        let schedule = match &self.stream.drift_schedule {
            Some(events) => events
                .iter()
                .map(|e| DriftEvent {
                    at: e.at,
                    kind: match e.kind {
                        DriftKindName::Abrupt => DriftKind::Abrupt,
                        DriftKindName::Incremental => DriftKind::Incremental,
                        DriftKindName::RecurrentRevert => DriftKind::RecurrentRevert,
                    },
                    duration: e.duration,
                })
                .collect(),
            None => crate::stream::default_schedule(kind),
        };
        StreamSpec::new(kind, self.stream.length, self.stream.anomaly_rate, schedule)
            .map_err(|e| ConfigError(e.to_string()))
    }

    pub fn engine_config(&self) -> EngineConfig {
        let e = &self.engine;
        EngineConfig {
            ensemble_size: e.ensemble_size,
            w_train: e.w_train,
            gamma: e.gamma,
            w_drift_min: e.w_drift_min,
            w_drift_max: e.w_drift_max,
            p_thre: e.p_thre,
            d_thre: e.d_thre,
            p_warn: e.p_warn,
            p_alarm: e.p_alarm,
            expiry_time: e.expiry_time,
            threshold: match e.threshold {
                ThresholdSettings::Adaptive => ThresholdRule::Adaptive,
                ThresholdSettings::Percentile { b } => ThresholdRule::Percentile(b),
            },
            mode: match e.mode {
                ModeName::Baseline => EngineMode::Baseline,
                ModeName::Vaepp => EngineMode::VaePp,
                ModeName::Vaeppes => EngineMode::VaePpEs,
                ModeName::Onedd => EngineMode::OneDd,
                ModeName::Esdd => EngineMode::Esdd,
            },
            ref_init: match e.ref_init {
                RefInitName::Stream => RefInit::Stream,
                RefInitName::Pretrain => RefInit::Pretrain,
            },
            min_retrain: e.min_retrain,
        }
    }

    pub fn model_config(&self, input_dim: usize) -> VaeConfig {
        let m = &self.model;
        VaeConfig {
            input_dim,
            hidden: m.hidden.clone(),
            latent_dim: m.latent.unwrap_or_else(|| m.hidden.last().copied().unwrap_or(8)),
            beta: m.beta,
            loss: match m.loss {
                LossName::Bce => LossKind::Bce,
                LossName::Mse => LossKind::Mse,
            },
            epochs: m.epochs,
            batch_size: m.batch_size,
            learning_rate: m.learning_rate,
            input_noise_std: m.input_noise_std,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

/// SplitMix64 over `(seed, salt)`: the stable per-repetition seed derivation.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
