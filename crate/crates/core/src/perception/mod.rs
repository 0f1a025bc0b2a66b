//! Perception module: per-gripper affordance, proposal and critic networks
//! over a shared point-set encoder, and the conditional inference pipeline.

mod infer;
mod model;
mod net;
pub mod rot;

pub use infer::{
    affordance_map, critic_map, infer, infer_with, pick_with, top_k, InferOptions, Inference,
    ModulePick, Selection,
};
pub use model::{DualAfford, FirstAction, PreparedCloud, Queries};
pub use net::{CloudFeatures, GripperModule, Group, ModuleId, PerceptionDims};

#[derive(Debug, thiserror::Error)]
pub enum PerceptionError {
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("no actionable point")]
    NoActionablePoint,
    #[error("proposal decoder produced a degenerate 6D rotation twice")]
    DegenerateProposal,
    #[error("action point is {0:.2e} away from every cloud point")]
    PointNotInCloud(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("cannot open checkpoint `{0}`: {1}")]
    Missing(String, std::io::Error),
}
