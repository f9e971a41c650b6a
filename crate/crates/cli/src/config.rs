//! Declarative run configuration.

use std::path::Path;

use ccsi::datagen::{ArrayGeometry, Placement, SceneConfig, SplitCounts};
use ccsi::model::ModelConfig;
use ccsi::training::{SubsampleConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

fn default_neighbors() -> usize {
    ccsi::charting::DEFAULT_NEIGHBORS
}
fn default_dim() -> usize {
    2
}
fn default_placement() -> Placement {
    Placement::UniformRandom
}
fn default_users() -> usize {
    4
}
fn default_snr_grid() -> Vec<f64> {
    vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0]
}
fn default_p() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSection {
    #[serde(default = "default_neighbors")]
    pub neighbors: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
}

impl Default for ChartSection {
    fn default() -> Self {
        ChartSection {
            neighbors: default_neighbors(),
            dim: default_dim(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsampleSection {
    /// Subsampling is applied during `train` when set here or by `--subsample`.
    #[serde(default)]
    pub keep_count: Option<usize>,
    #[serde(default = "default_p")]
    pub swap_probability: f64,
    pub rng_seed: u64,
}

impl SubsampleSection {
    pub fn resolve(&self, keep_count: usize) -> SubsampleConfig {
        SubsampleConfig {
            keep_count,
            swap_probability: self.swap_probability,
            rng_seed: self.rng_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Users per group `K`.
    #[serde(default = "default_users")]
    pub users: usize,
    #[serde(default = "default_snr_grid")]
    pub snr_grid_db: Vec<f64>,
    pub group_seed: u64,
    /// Must match the checkpoint when given.
    #[serde(default)]
    pub target_subcarrier: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub scene: Option<SceneConfig>,
    #[serde(default)]
    pub array: Option<ArrayGeometry>,
    #[serde(default)]
    pub counts: Option<SplitCounts>,
    #[serde(default = "default_placement")]
    pub placement: Placement,
    #[serde(default)]
    pub chart: ChartSection,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub subsample: Option<SubsampleSection>,
    #[serde(default)]
    pub eval: Option<EvalSection>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("config {}: {e}", path.display())))
    }
}

/// Returns the section or a config failure naming it.
pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, Failure> {
    section
        .as_ref()
        .ok_or_else(|| Failure::config(format!("config is missing the `{name}` section")))
}

/// Rejects argument lists that name the same file twice.
pub fn distinct_paths(paths: &[(&str, &Path)]) -> Result<(), Failure> {
    for (i, (a, pa)) in paths.iter().enumerate() {
        for (b, pb) in &paths[i + 1..] {
            if pa == pb {
                return Err(Failure::config(format!(
                    "{a} and {b} refer to the same path {}",
                    pa.display()
                )));
            }
        }
    }
    Ok(())
}
