//! Experiment orchestration: configuration, cause/effect generation, the
//! extraction → clustering → training pipeline, CSV artifacts and the
//! figure presets.

pub mod check;
pub mod config;
pub mod data;
pub mod io;
pub mod metrics;
pub mod pipeline;

pub use config::{EffectKind, ExperimentConfig, ExtractionConfig, TaskConfig};
pub use data::generate_cause_effect;
pub use metrics::{adjusted_rand_index, clustering_quality, silhouette, ClusteringQuality};
pub use pipeline::{run_extraction, run_label, run_pipeline, run_seed, PipelineMode, RunArtifacts, SeedRun};

use crate::error::{Error, Result};

/// Built-in desk-scale (and full-scale) configurations.
pub const PRESETS: [(&str, &str); 7] = [
    ("fig2", include_str!("presets/fig2.toml")),
    ("fig3", include_str!("presets/fig3.toml")),
    ("fig4", include_str!("presets/fig4.toml")),
    ("fig5", include_str!("presets/fig5.toml")),
    ("fig6", include_str!("presets/fig6.toml")),
    ("fig5_smoke", include_str!("presets/fig5_smoke.toml")),
    ("fig6_smoke", include_str!("presets/fig6_smoke.toml")),
];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
    ExperimentConfig::from_toml(text)
}

/// Presets that only run the extraction stages.
pub fn preset_mode(name: &str) -> PipelineMode {
    if name == "fig3" {
        PipelineMode::Extract
    } else {
        PipelineMode::Train
    }
}
