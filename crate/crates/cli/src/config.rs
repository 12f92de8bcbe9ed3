use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use slideloc_core::ingest::VolumeConfig;
use slideloc_core::strnet::NetworkConfig;
use slideloc_core::summarizer::DecodeParams;
use slideloc_core::trainer::{TrainConfig, Weighting};

/// Settings shared by the pipeline subcommands. Fields missing from a
/// config file take the tiny preset's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub volume: VolumeConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub decode: DecodeParams,
    /// Volumes per forward pass during detection.
    pub batch_size: usize,
    pub baseline_threshold: f64,
}

impl PipelineConfig {
    pub fn tiny() -> Self {
        Self {
            volume: VolumeConfig::tiny(),
            network: NetworkConfig::tiny(7),
            train: TrainConfig {
                learning_rate: 0.002,
                momentum: 0.9,
                epochs: 30,
                batch_size: 16,
                shuffle_seed: 0,
                weighting: Weighting::InverseFrequency,
                augment: true,
                target_accuracy: None,
            },
            decode: DecodeParams::default(),
            batch_size: 32,
            baseline_threshold: 5.0,
        }
    }

    pub fn paper() -> Self {
        Self {
            volume: VolumeConfig::default(),
            network: NetworkConfig::paper(7),
            train: TrainConfig {
                batch_size: 8,
                ..Self::tiny().train
            },
            batch_size: 8,
            ..Self::tiny()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(Self::tiny()),
            "paper" => Some(Self::paper()),
            _ => None,
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::tiny()
    }
}
