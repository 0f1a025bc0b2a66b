//! Run configuration, pipelines behind the command line, evaluation,
//! baselines and exports.

mod baseline;
pub mod cli;
mod eval;
mod heatmap;
mod pipeline;
pub mod selftest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use baseline::{baseline_heuristic, baseline_random, rotate_offset_fraction, HeuristicError};
pub use eval::{
    eval_config, eval_configs, eval_on, eval_ssr, ConfigOutcome, EvalConfig, EvalReport, EvalSetup, HeuristicPolicy,
    LearnedPolicy, Policy, PolicyInput, RandomPolicy,
};
pub use heatmap::{heatmap_scores, write_colored_points, write_heatmap_csv, Fixings, HeatmapVariant, HEATMAP_HEADER};
pub use pipeline::{collect, eval_all, CollectSummary, Collected, EvalBundle};

use crate::perception::{InferOptions, PerceptionDims};
use crate::sim::{builtin_library, library_from_toml, GripperSpec, ObjectModel, TaskKind};
use crate::training::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Failed(String),
    #[error("missing artifact `{0}`")]
    MissingArtifact(String),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Data(#[from] crate::datagen::DataError),
    #[error(transparent)]
    Perception(#[from] crate::perception::PerceptionError),
    #[error(transparent)]
    Train(#[from] crate::training::TrainError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Offline collection sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectSection {
    pub scenes_per_batch: usize,
    pub samples_per_scene: usize,
    /// Keep collecting batches until this many positives exist, then keep
    /// this many of each label. Unset: one batch, balanced.
    pub target_positives: Option<usize>,
    pub max_batches: usize,
    /// RL-sampler episodes added to the random data.
    pub rl_episodes: usize,
    pub sac: crate::datagen::SacConfig,
}

impl Default for CollectSection {
    fn default() -> Self {
        Self {
            scenes_per_batch: 200,
            samples_per_scene: 20,
            target_positives: None,
            max_batches: 100,
            rl_episodes: 0,
            sac: crate::datagen::SacConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_configs: usize,
    pub trials: usize,
    pub baselines: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_configs: 50,
            trials: 3,
            baselines: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSection {
    pub k_points: usize,
    pub k_orients: usize,
    pub floor: f64,
}

impl Default for InferSection {
    fn default() -> Self {
        let d = InferOptions::default();
        Self {
            k_points: d.k_points,
            k_orients: d.k_orients,
            floor: d.floor,
        }
    }
}

impl InferSection {
    pub fn options(&self) -> InferOptions {
        InferOptions {
            k_points: self.k_points,
            k_orients: self.k_orients,
            floor: self.floor,
            ..InferOptions::default()
        }
    }
}

/// Everything a run needs, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub task: TaskKind,
    pub objects: Vec<String>,
    /// Extra object library (TOML), merged over the built-ins.
    #[serde(default)]
    pub library: Option<PathBuf>,
    #[serde(default = "default_points")]
    pub n_points: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub collect: CollectSection,
    #[serde(default)]
    pub model: PerceptionDims,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub infer: InferSection,
    #[serde(default)]
    pub gripper: GripperSpec,
}

fn default_points() -> usize {
    512
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, String), HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| HarnessError::MissingArtifact(path.display().to_string()))?;
        Ok((Self::from_toml(&text)?, text))
    }

    /// Built-ins plus the configured extra library, which wins on id clashes.
    pub fn object_library(&self, base: &Path) -> Result<Vec<ObjectModel>, HarnessError> {
        let mut lib = builtin_library();
        if let Some(p) = &self.library {
            let p = if p.is_absolute() { p.clone() } else { base.join(p) };
            let text = std::fs::read_to_string(&p).map_err(|_| HarnessError::MissingArtifact(p.display().to_string()))?;
            for o in library_from_toml(&text)? {
                lib.retain(|x| x.id != o.id);
                lib.push(o);
            }
        }
        Ok(lib)
    }

    pub fn validate(&self, library: &[ObjectModel]) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.objects.is_empty() {
            return bad("objects must not be empty".into());
        }
        for id in &self.objects {
            if !library.iter().any(|o| &o.id == id) {
                return bad(format!("unknown object `{id}`"));
            }
        }
        if self.eval.n_configs == 0 || self.eval.trials == 0 {
            return bad("eval sizes must be at least 1".into());
        }
        if self.n_points < 8 {
            return bad("n_points must be at least 8".into());
        }
        if self.collect.scenes_per_batch == 0 || self.collect.samples_per_scene == 0 || self.collect.max_batches == 0 {
            return bad("collection sizes must be positive".into());
        }
        if self.infer.k_points == 0 || self.infer.k_orients == 0 {
            return bad("k_points and k_orients must be positive".into());
        }
        self.gripper.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

/// Reproducibility record written next to every run's artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// SHA-256 of the config file bytes.
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config_text: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config_hash(config_text),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

pub fn config_hash(text: &str) -> String {
    let d = Sha256::digest(text.as_bytes());
    d.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::from_toml("task = \"push\"\nobjects = [\"box\"]\n").unwrap();
        assert_eq!(c.n_points, 512);
        assert_eq!(c.eval.n_configs, 50);
        assert_eq!(c.train.batch_size, 32);
        c.validate(&builtin_library()).unwrap();
    }

    #[test]
    fn config_rejects_unknown_object_and_field() {
        let c = RunConfig::from_toml("task = \"push\"\nobjects = [\"teapot\"]\n").unwrap();
        assert!(c.validate(&builtin_library()).unwrap_err().to_string().contains("teapot"));
        assert!(RunConfig::from_toml("task = \"push\"\nobjects = []\ncolour = 1\n").is_err());
        let c = RunConfig::from_toml("task = \"push\"\nobjects = [\"box\"]\n[eval]\ntrials = 0\n").unwrap();
        assert!(c.validate(&builtin_library()).is_err());
    }

    #[test]
    fn hash_is_sha256() {
        assert_eq!(
            config_hash(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
