//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use bnnsim::memsim::{BitAddress, MemoryMap, PolicyName};
use bnnsim::powermodel::AnchorTable;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

fn default_trials() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_instruction_bytes() -> usize {
    bnnsim::runtime::DEFAULT_INSTRUCTION_BYTES
}

fn default_policy() -> PolicyName {
    PolicyName::SramExec
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Independent transient errors on every SRAM read.
    #[default]
    Uniform,
    /// Fixed stuck positions; the swept rate becomes the stuck-bit density.
    Patterned,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSettings {
    #[serde(default)]
    pub mode: FaultKind,
    /// Rate used by `infer`.
    #[serde(default)]
    pub ber: f64,
    /// Persistent write error rate applied at every point.
    #[serde(default)]
    pub write_ber: f64,
    /// Extra stuck positions in patterned mode.
    #[serde(default)]
    pub stuck: Vec<BitAddress>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    #[serde(default)]
    pub ber: Vec<f64>,
    #[serde(default)]
    pub voltages: Vec<f64>,
}

fn default_selftest_region() -> String {
    "interleaved_sram".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelftestSettings {
    #[serde(default = "default_selftest_region")]
    pub region: String,
    #[serde(default = "default_trials")]
    pub iterations: usize,
    /// Supply voltages; the injected rate follows the BER curve.
    #[serde(default)]
    pub voltages: Vec<f64>,
    /// Injected rates given directly.
    #[serde(default)]
    pub ber: Vec<f64>,
}

impl Default for SelftestSettings {
    fn default() -> Self {
        SelftestSettings {
            region: default_selftest_region(),
            iterations: 1,
            voltages: Vec::new(),
            ber: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSettings {
    /// Interpolated points reported next to the anchors.
    #[serde(default)]
    pub voltages: Vec<f64>,
    /// Workload for inference-rate columns; defaults to the network's count, else uVGG.
    pub ops_per_inference: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    /// Evaluate only the first N samples.
    pub samples: Option<usize>,
    #[serde(default = "default_policy")]
    pub policy: PolicyName,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub out: Option<PathBuf>,
    pub anchors: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub observation_floor: bool,
    #[serde(default = "default_instruction_bytes")]
    pub instruction_bytes: usize,
    pub memory: Option<MemoryMap>,
    #[serde(default)]
    pub fault: FaultSettings,
    #[serde(default)]
    pub sweep: SweepAxis,
    #[serde(default)]
    pub selftest: SelftestSettings,
    #[serde(default)]
    pub power: PowerSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub policy: Option<PolicyName>,
    pub out: Option<PathBuf>,
}

/// A validated configuration together with the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    /// SHA-256 of the effective configuration, hex encoded.
    pub hash: String,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Loaded, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let config = Self::from_toml(&text)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.finish(base_dir, overrides)
    }

    /// Applies overrides, validates, and fingerprints the effective configuration.
    pub fn finish(mut self, base_dir: PathBuf, overrides: &Overrides) -> Result<Loaded, CliError> {
        if let Some(s) = overrides.seed {
            self.seed = s;
        }
        if let Some(t) = overrides.trials {
            self.trials = t;
        }
        if let Some(p) = overrides.policy {
            self.policy = p;
        }
        if let Some(o) = &overrides.out {
            self.out = Some(o.clone());
        }
        // Where results go is not part of the experiment.
        let fingerprint = ExperimentConfig {
            out: None,
            ..self.clone()
        };
        let canonical =
            toml::to_string(&fingerprint).map_err(|e| CliError::Config(e.to_string()))?;
        let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
        let loaded = Loaded {
            config: self,
            base_dir,
            hash,
        };
        loaded.validate()?;
        Ok(loaded)
    }
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        match &self.config.out {
            // Command-line paths are relative to the working directory.
            Some(p) => p.clone(),
            None => PathBuf::from("results"),
        }
    }

    pub fn anchors(&self) -> Result<AnchorTable, CliError> {
        match &self.config.anchors {
            Some(p) => Ok(AnchorTable::load(&self.resolve(p))?),
            None => Ok(AnchorTable::silicon()),
        }
    }

    pub fn memory_map(&self) -> MemoryMap {
        self.config.memory.clone().unwrap_or_default()
    }

    fn validate(&self) -> Result<(), CliError> {
        let c = &self.config;
        if c.trials == 0 {
            return Err(CliError::Config("trials must be at least 1".into()));
        }
        if c.selftest.iterations == 0 {
            return Err(CliError::Config(
                "selftest.iterations must be at least 1".into(),
            ));
        }
        let rates = c
            .sweep
            .ber
            .iter()
            .chain(&c.selftest.ber)
            .chain([&c.fault.ber, &c.fault.write_ber]);
        for &b in rates {
            if !(0.0..=1.0).contains(&b) {
                return Err(CliError::Config(format!("BER {b} outside [0, 1]")));
            }
        }
        let (lo, hi) = self.anchors()?.voltage_range();
        for &v in c
            .sweep
            .voltages
            .iter()
            .chain(&c.selftest.voltages)
            .chain(&c.power.voltages)
        {
            if !(lo..=hi).contains(&v) {
                return Err(CliError::Config(format!(
                    "voltage {v} V outside the anchor range [{lo}, {hi}] V"
                )));
            }
        }
        if let Some(m) = &c.memory {
            m.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }
}
