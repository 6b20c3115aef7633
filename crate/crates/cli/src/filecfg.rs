//! Optional TOML run file. Top-level `seed` and `threads`, plus one table
//! per subcommand whose keys mirror the long flags (dashes become
//! underscores). Flags and `NESH_*` variables win over file values.

use std::path::Path;

use anyhow::{Context, Result};
use nesh::inference::TrainConfig;
use nesh::NeshError;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunFile {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub simulate: SimulateSection,
    pub train: Option<TrainConfig>,
    pub eval: EvalSection,
    pub project: ProjectSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub k: Option<usize>,
    pub r: Option<usize>,
    /// `start:stop:count` or a list of values.
    pub alpha: Option<AlphaSpec>,
    pub reps: Option<usize>,
    pub truncation_tol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Range(String),
    List(Vec<f64>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub samples: Option<usize>,
    pub time_samples: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectSection {
    pub dim: Option<usize>,
    pub lengthscale: Option<f64>,
    pub variance: Option<f64>,
}

impl RunFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunFile::default());
        };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| NeshError::Config(format!("{}: {}", path.display(), e.message())).into())
    }
}
