//! Offline interaction collection: random and RL-guided sampling, dataset
//! storage and balancing.

mod prior;
mod random;
mod record;
mod rl;

pub use prior::{grasp_prior, top_fraction, PRIOR_SCALE};
pub use random::{
    balance_dataset, collect_random, plan_scenes, distinct_pair, label_actions, random_action_at, random_actions,
    sample_random_interaction, CollectPlan, CollectStats, Sample, ScenePlan,
};
pub use record::{
    cloud_normal, load_dataset, read_jsonl, save_dataset, write_jsonl, InteractionRecord, Observation, Provenance,
    SceneRef,
};
pub use rl::{
    contact_candidates, reward, rl_collect, rl_scenes, ReplayBuffer, Reward, RlAction, RlConfig, RlState, RlStats, Sac, SacConfig,
    SacLosses, ACTION_DIM, PRIOR_TOP, STATE_DIM,
};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("dataset line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("no positives; increase collection or use RL sampler")]
    NoPositives,
    #[error("cannot open `{0}`: {1}")]
    Missing(String, std::io::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
