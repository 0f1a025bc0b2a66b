//! Losses, the module-2-then-module-1 training schedule, and collaborative
//! adaptation.

mod adapt;
mod data;
pub mod losses;
mod schedule;
pub mod targets;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use adapt::{
    balanced_indices, collaborative_adaptation, collaborative_adaptation_observed, AdaptOutcome, AdaptSetup,
    AdaptStats, Labeler, SimLabeler,
};
pub use data::{Example, TrainingSet};
pub use schedule::{train_all, train_module1, train_module2};
pub use targets::{
    target_affordance, target_affordance_many, target_c1, LatentChoice, ModuleView, NetView, PointChoice,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Perception(#[from] crate::perception::PerceptionError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Data(#[from] crate::datagen::DataError),
    #[error("no positives; increase collection or use RL sampler")]
    NoPositives,
    #[error("empty training set")]
    Empty,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("record {index}: {message}")]
    BadRecord { index: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Optimisation and estimator sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Contact points per first-critic target and latents per affordance target.
    pub n_mc: usize,
    /// Orientations per contact point in the first-critic target.
    pub m_mc: usize,
    pub epochs_critic: usize,
    pub epochs_proposal: usize,
    pub epochs_affordance: usize,
    /// Extra random points per record supervised in the affordance phase.
    pub affordance_points: usize,
    /// KL weight of the proposal loss.
    pub beta: f64,
    pub ca_rounds: usize,
    /// Scenes executed per adaptation round.
    pub ca_scenes: usize,
    pub ca_batch_size: usize,
    /// Gradient steps per head per adaptation round.
    pub ca_steps: usize,
    pub ca_temperature: f64,
    /// Allowed label imbalance of the adaptation buffer.
    pub ca_balance_tolerance: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 1e-3,
            n_mc: 10,
            m_mc: 5,
            epochs_critic: 20,
            epochs_proposal: 20,
            epochs_affordance: 10,
            affordance_points: 3,
            beta: 1.0,
            ca_rounds: 10,
            ca_scenes: 16,
            ca_batch_size: 32,
            ca_steps: 4,
            ca_temperature: 0.1,
            ca_balance_tolerance: 1,
            seed: 0,
        }
    }
}

/// Cap on Monte-Carlo samples per first-critic target.
pub const MAX_MC: usize = 256;

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 || self.ca_batch_size == 0 || self.ca_steps == 0 {
            return bad("batch sizes and step counts must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.n_mc == 0 || self.m_mc == 0 {
            return bad("n_mc and m_mc must be positive");
        }
        if self.n_mc * self.m_mc > MAX_MC {
            return bad("n_mc * m_mc must not exceed 256");
        }
        if self.epochs_critic == 0 || self.epochs_proposal == 0 || self.epochs_affordance == 0 {
            return bad("epochs must be positive");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be non-negative");
        }
        if !(self.ca_temperature > 0.0) || self.ca_scenes == 0 {
            return bad("ca_temperature and ca_scenes must be positive");
        }
        Ok(())
    }
}

/// One logged loss value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    /// Phase tag such as `m2.critic` or `ca.3`.
    pub phase: String,
    /// `L_C1`, `L_C2`, `L_P1`, `L_P2`, `L_A1` or `L_A2`.
    pub loss: String,
    pub value: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,phase,loss,value";

/// Appends loss rows; the header is written only to an empty sink.
pub fn write_loss_csv<W: Write>(mut w: W, rows: &[LossReport], header: bool) -> std::io::Result<()> {
    if header {
        writeln!(w, "{LOSS_CSV_HEADER}")?;
    }
    for r in rows {
        writeln!(w, "{},{},{},{:.6}", r.step, r.phase, r.loss, r.value)?;
    }
    Ok(())
}

/// Appends to the loss log at `path`, creating it with a header.
pub fn append_loss_log(path: &std::path::Path, rows: &[LossReport]) -> std::io::Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_loss_csv(&mut w, rows, fresh)?;
    w.flush()
}
