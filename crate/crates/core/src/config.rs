//! Experiment configuration: one JSON document per run.
//!
//! ```json
//! {
//!   "dataset": { "synth": { "d_in": 8, "num_classes": 10, "per_class_count": 100 } },
//!   "regime": { "disjoint": 5 },
//!   "scenario": "task_inc",
//!   "methods": ["deepccg", "er_reservoir"],
//!   "seeds": [0, 1, 2]
//! }
//! ```
//!
//! Every other key is optional. Unknown keys are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::ccg_head::DEFAULT_PRIOR_A;
use crate::embedding::{DEFAULT_D_Z, DEFAULT_HIDDEN, DEFAULT_LEARNING_RATE};
use crate::error::{Error, Result};
use crate::memory::SelectionConfig;
use crate::stream::{SynthSpec, DEFAULT_BATCH_SIZE, DEFAULT_TEST_FRACTION};
use crate::trainer::{Hyper, Method, Scenario, DEFAULT_REPLAY_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthDataset {
    pub d_in: usize,
    pub num_classes: usize,
    pub per_class_count: usize,
    pub class_mean_scale: f64,
    pub class_cov_scale: f64,
    /// Seed of the generated data, shared by every run of the experiment.
    pub seed: u64,
}

impl Default for SynthDataset {
    fn default() -> Self {
        Self::from_spec(SynthSpec::default(), 0)
    }
}

impl SynthDataset {
    pub fn from_spec(s: SynthSpec, seed: u64) -> Self {
        SynthDataset {
            d_in: s.d_in,
            num_classes: s.num_classes,
            per_class_count: s.per_class_count,
            class_mean_scale: s.class_mean_scale,
            class_cov_scale: s.class_cov_scale,
            seed,
        }
    }

    pub fn spec(&self) -> SynthSpec {
        SynthSpec {
            d_in: self.d_in,
            num_classes: self.num_classes,
            per_class_count: self.per_class_count,
            class_mean_scale: self.class_mean_scale,
            class_cov_scale: self.class_cov_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetConfig {
    Synth(SynthDataset),
    /// Path to a dataset CSV, relative to the config file.
    Csv(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeConfig {
    Disjoint(usize),
    Window(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub d_z: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: DEFAULT_HIDDEN.to_vec(),
            d_z: DEFAULT_D_Z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub enabled: bool,
    pub stride: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            enabled: false,
            stride: 1,
        }
    }
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_replay_size() -> usize {
    DEFAULT_REPLAY_SIZE
}
fn default_eta() -> f64 {
    DEFAULT_LEARNING_RATE
}
fn default_prior_a() -> f64 {
    DEFAULT_PRIOR_A
}
fn default_test_fraction() -> f64 {
    DEFAULT_TEST_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub regime: RegimeConfig,
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_replay_size")]
    pub replay_size: usize,
    /// Defaults to 10 (task-incremental) or 30 (class-incremental).
    #[serde(default)]
    pub mem_per_class: Option<usize>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_prior_a")]
    pub prior_a: f64,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub mlp: MlpConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Standardise features with statistics of the first task's training data.
    #[serde(default)]
    pub standardize: bool,
}

impl ExperimentConfig {
    pub fn mem_per_class(&self) -> usize {
        self.mem_per_class.unwrap_or_else(|| self.scenario.default_mem_per_class())
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            eta: self.eta,
            replay_size: self.replay_size,
            prior_a: self.prior_a,
            mem_per_class: self.mem_per_class(),
            selection: self.selection,
        }
    }

    /// Embedding widths for inputs of dimension `d_in`.
    pub fn mlp_dims(&self, d_in: usize) -> Vec<usize> {
        let mut dims = vec![d_in];
        dims.extend(&self.mlp.hidden);
        dims.push(self.mlp.d_z);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, what: &str| Err(Error::Config(format!("{key}: {what}")));
        if self.methods.is_empty() {
            return fail("methods", "at least one method is required");
        }
        if self.seeds.is_empty() {
            return fail("seeds", "at least one seed is required");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be positive");
        }
        if self.mem_per_class == Some(0) {
            return fail("mem_per_class", "must be positive");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return fail("eta", "must be positive");
        }
        if !(self.prior_a > 0.0) {
            return fail("prior_a", "must be positive");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return fail("test_fraction", "must be in (0, 1)");
        }
        if self.mlp.d_z == 0 || self.mlp.hidden.contains(&0) {
            return fail("mlp", "layer widths must be positive");
        }
        if self.probe.stride == 0 {
            return fail("probe.stride", "must be positive");
        }
        if let Err(Error::Config(msg)) = self.selection.validate() {
            return fail("selection", &msg);
        }
        match self.regime {
            RegimeConfig::Disjoint(0) => return fail("regime.disjoint", "must be positive"),
            RegimeConfig::Window(0) => return fail("regime.window", "must be positive"),
            _ => {}
        }
        if let DatasetConfig::Synth(s) = &self.dataset {
            if let Err(Error::Config(msg)) = s.spec().validate() {
                return fail("dataset.synth", &msg);
            }
        }
        Ok(())
    }
}

/// Parses and validates a config document. Errors name the offending key path.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("{path}: {}", e.into_inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Config of the `gen-data` command: a synthetic dataset spec plus its seed.
pub fn parse_synth_config(text: &str) -> Result<SynthDataset> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: SynthDataset = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("{path}: {}", e.into_inner()))
    })?;
    if let Err(Error::Config(msg)) = cfg.spec().validate() {
        return Err(Error::Config(msg));
    }
    Ok(cfg)
}
