use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{SchemeKind, TrainConfig};
use crate::anm_mm::AnmMmConfig;
use crate::clustering::ComponentCount;
use crate::envs::{EnvKind, EnvSpec, GroupSpec};
use crate::error::{Error, Result};
use crate::par::Execution;

/// Environment kind plus optional overrides of its default parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: EnvKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wind: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Steps per epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_bound: Option<f64>,
}

impl TaskConfig {
    pub fn new(kind: EnvKind) -> Self {
        TaskConfig {
            kind,
            phi: None,
            noise_sd: None,
            target: None,
            wind: None,
            gravity: None,
            dt: None,
            horizon: None,
            action_bound: None,
        }
    }

    pub fn spec(&self) -> EnvSpec {
        let d = EnvSpec::default_for(self.kind);
        EnvSpec {
            kind: self.kind,
            phi: self.phi.unwrap_or(d.phi),
            noise_sd: self.noise_sd.unwrap_or(d.noise_sd),
            target: self.target.unwrap_or(d.target),
            wind: self.wind.unwrap_or(d.wind),
            gravity: self.gravity.unwrap_or(d.gravity),
            dt: self.dt.unwrap_or(d.dt),
            horizon: self.horizon.unwrap_or(d.horizon),
            action_bound: self.action_bound.unwrap_or(d.action_bound),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    Reward,
    NextState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Number of cause samples P.
    pub samples: usize,
    /// Cause sampling interval `[s_min, s_max]`.
    pub interval: [f64; 2],
    pub effect: EffectKind,
    /// Random-policy transitions per agent, as a multiple of `samples`.
    pub rollout_factor: usize,
    /// Standard deviation of the per-agent jitter on the shared cause.
    pub cause_jitter_sd: f64,
    /// Mixture components: an integer or "auto".
    pub components: ComponentCount,
    pub anm_mm: AnmMmConfig,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            samples: 100,
            interval: [-10.0, 10.0],
            effect: EffectKind::Reward,
            rollout_factor: 10,
            cause_jitter_sd: 0.01,
            components: ComponentCount::Auto(crate::clustering::Auto::Auto),
            anm_mm: AnmMmConfig::default(),
        }
    }
}

/// A complete experiment. Every field except `task` and `groups` has a
/// default; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub task: TaskConfig,
    pub groups: Vec<GroupSpec>,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<SchemeKind>,
    /// Also train every scheme with the per-episode OU means switched off.
    #[serde(default)]
    pub compare_uncoordinated: bool,
    /// Minibatch size for the `none` scheme; the others use `training.batch_size`.
    #[serde(default = "default_none_batch")]
    pub none_batch_size: usize,
    /// Seed-sampling reward offsets have variance `scale²·reward_scale`.
    #[serde(default = "default_seed_noise")]
    pub seed_noise_scale: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub extraction: ExtractionConfig,
    #[serde(default)]
    pub training: TrainConfig,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_schemes() -> Vec<SchemeKind> {
    SchemeKind::ALL.to_vec()
}

fn default_none_batch() -> usize {
    64
}

fn default_seed_noise() -> f64 {
    0.1
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Canonical TOML form; parsing it yields an equal config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let ex = &self.extraction;
        if ex.samples < 2 {
            return Err(Error::Config("extraction.samples must be >= 2".into()));
        }
        if !(ex.interval[0] < ex.interval[1]) || !ex.interval.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!("extraction.interval {:?} is degenerate", ex.interval)));
        }
        if ex.rollout_factor == 0 {
            return Err(Error::Config("extraction.rollout_factor must be >= 1".into()));
        }
        if !(ex.cause_jitter_sd >= 0.0) {
            return Err(Error::Config("extraction.cause_jitter_sd must be >= 0".into()));
        }
        if let ComponentCount::Fixed(0) = ex.components {
            return Err(Error::Config("extraction.components must be >= 1".into()));
        }
        ex.anm_mm.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("schemes must be non-empty".into()));
        }
        if self.groups.is_empty() {
            return Err(Error::Config("groups must be non-empty".into()));
        }
        if self.none_batch_size == 0 {
            return Err(Error::Config("none_batch_size must be >= 1".into()));
        }
        if !(self.seed_noise_scale >= 0.0) {
            return Err(Error::Config("seed_noise_scale must be >= 0".into()));
        }
        self.task.spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.training.validate()
    }

    pub fn agents(&self) -> usize {
        self.groups.iter().map(|g| g.count).sum()
    }

    /// Whether any configured scheme needs mechanism extraction.
    pub fn needs_extraction(&self) -> bool {
        self.schemes.contains(&SchemeKind::Similarity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[task]
kind = "ar"

[[groups]]
param = "target"
mean = -1.0
sd = 0.1
count = 2
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.schemes.len(), 4);
        assert_eq!(cfg.none_batch_size, 64);
        assert_eq!(cfg.training.batch_size, 192);
        assert_eq!(cfg.extraction.samples, 100);
        assert_eq!(cfg.task.spec(), EnvSpec::default_for(EnvKind::Ar));
        assert_eq!(cfg.agents(), 2);
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.task.horizon = Some(30);
        cfg.extraction.components = ComponentCount::Fixed(3);
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\nbogus = 1\n");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))));
        let text = MINIMAL.replace("count = 2", "count = 2\ncolour = 1");
        assert!(ExperimentConfig::from_toml(&text).is_err());
        let text = format!("{MINIMAL}\n[training]\nepochz = 3\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = [
            "seeds = []",
            "[extraction]\nsamples = 1",
            "[extraction]\ninterval = [1.0, 1.0]",
            "[training]\ndecay = 0.0",
        ];
        for extra in bad {
            // top-level keys must precede the tables
            let text = if extra.starts_with('[') {
                format!("{MINIMAL}\n{extra}\n")
            } else {
                format!("{extra}\n{MINIMAL}")
            };
            assert!(ExperimentConfig::from_toml(&text).is_err(), "{extra}");
        }
    }

    #[test]
    fn auto_components_parse() {
        let text = format!("{MINIMAL}\n[extraction]\ncomponents = \"auto\"\n");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert!(matches!(cfg.extraction.components, ComponentCount::Auto(_)));
        let text = format!("{MINIMAL}\n[extraction]\ncomponents = 3\n");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.extraction.components, ComponentCount::Fixed(3));
    }
}
