//! Sample-success-rate evaluation over seeded scene configurations.

use serde::{Deserialize, Serialize};

use super::baseline::{baseline_heuristic, baseline_random};
use crate::datagen::{DataError, SceneRef};
use crate::geometry::GripperAction;
use crate::perception::{infer, DualAfford, InferOptions};
use crate::sim::{execute_dual, judge_success, GripperSpec, ObjectModel, PointCloud, SceneState, SimError, TaskKind, TaskSpec};
use crate::tensor::Rng;

const EVAL_STREAM: u64 = 21;

/// What a policy may look at. Ground truth is only handed to policies that
/// declare themselves privileged.
pub struct PolicyInput<'a> {
    pub cloud: &'a PointCloud,
    pub task: &'a TaskSpec,
    ground_truth: Option<&'a SceneState>,
}

impl PolicyInput<'_> {
    pub fn ground_truth(&self) -> Option<&SceneState> {
        self.ground_truth
    }
}

pub trait Policy: Sync {
    fn name(&self) -> String;
    fn privileged(&self) -> bool {
        false
    }
    fn propose(&self, input: &PolicyInput, rng: &mut Rng) -> Result<(GripperAction, GripperAction), String>;
}

pub struct LearnedPolicy<'a> {
    pub model: &'a DualAfford,
    pub opts: InferOptions,
}

impl Policy for LearnedPolicy<'_> {
    fn name(&self) -> String {
        "learned".into()
    }
    fn propose(&self, input: &PolicyInput, rng: &mut Rng) -> Result<(GripperAction, GripperAction), String> {
        let r = infer(self.model, input.cloud, input.task, rng, &self.opts).map_err(|e| e.to_string())?;
        Ok((r.u1, r.u2))
    }
}

pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }
    fn propose(&self, input: &PolicyInput, rng: &mut Rng) -> Result<(GripperAction, GripperAction), String> {
        Ok(baseline_random(input.cloud, rng))
    }
}

pub struct HeuristicPolicy;

impl Policy for HeuristicPolicy {
    fn name(&self) -> String {
        "heuristic".into()
    }
    fn privileged(&self) -> bool {
        true
    }
    fn propose(&self, input: &PolicyInput, _: &mut Rng) -> Result<(GripperAction, GripperAction), String> {
        let scene = input.ground_truth().ok_or("heuristic needs the ground-truth pose")?;
        baseline_heuristic(scene, input.task).map_err(|e| e.to_string())
    }
}

/// Evaluation sizes and world.
#[derive(Clone, Debug)]
pub struct EvalSetup<'a> {
    pub library: &'a [ObjectModel],
    pub objects: Vec<String>,
    pub task: TaskKind,
    pub n_points: usize,
    pub n_configs: usize,
    pub trials: usize,
    pub spec: GripperSpec,
}

/// One seeded scene and task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub object_id: String,
    pub pose_seed: u64,
    pub camera_seed: u64,
    pub task_vec: Vec<f64>,
    pub trial_seed: u64,
}

impl EvalConfig {
    pub fn scene_ref(&self) -> SceneRef {
        SceneRef {
            object_id: self.object_id.clone(),
            pose_seed: self.pose_seed,
            camera_seed: self.camera_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigOutcome {
    pub config: EvalConfig,
    pub successes: Vec<bool>,
    /// Why a trial failed before judging (inference or simulator error).
    pub flags: Vec<Option<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub task: TaskKind,
    pub seed: u64,
    pub n_configs: usize,
    pub trials: usize,
    pub successes: usize,
    pub ssr: f64,
    pub configs: Vec<ConfigOutcome>,
}

impl EvalReport {
    /// Recount from the stored per-config outcomes.
    pub fn recount(&self) -> f64 {
        let s: usize = self.configs.iter().map(|c| c.successes.iter().filter(|&&b| b).count()).sum();
        s as f64 / (self.n_configs * self.trials) as f64
    }

    pub fn flagged(&self) -> usize {
        self.configs.iter().flat_map(|c| &c.flags).filter(|f| f.is_some()).count()
    }
}

/// The first `n_configs` visible configurations drawn from `seed`.
pub fn eval_configs(setup: &EvalSetup, seed: u64) -> Result<Vec<EvalConfig>, DataError> {
    let mut rng = Rng::stream(seed, EVAL_STREAM);
    let mut out = Vec::with_capacity(setup.n_configs);
    let mut k = 0usize;
    while out.len() < setup.n_configs {
        let cfg = EvalConfig {
            object_id: setup.objects[k % setup.objects.len()].clone(),
            pose_seed: rng.next_u64(),
            camera_seed: rng.next_u64(),
            task_vec: TaskSpec::sample(setup.task, &mut rng).to_vec(),
            trial_seed: rng.next_u64(),
        };
        k += 1;
        match cfg.scene_ref().observe(setup.library, setup.n_points) {
            Ok(_) => out.push(cfg),
            Err(DataError::Sim(SimError::NotVisible { .. })) => continue,
            Err(e) => return Err(e),
        }
        if k > 100 * setup.n_configs + 100 {
            return Err(DataError::Sim(SimError::NotVisible { hits: 0, needed: setup.n_points }));
        }
    }
    Ok(out)
}

/// Trials of one configuration.
pub fn eval_config(policy: &dyn Policy, setup: &EvalSetup, cfg: &EvalConfig) -> Result<ConfigOutcome, DataError> {
    let obs = cfg.scene_ref().observe(setup.library, setup.n_points)?;
    let task = TaskSpec::from_parts(setup.task, &cfg.task_vec)?;
    let input = PolicyInput {
        cloud: &obs.cloud,
        task: &task,
        ground_truth: policy.privileged().then_some(&obs.scene),
    };
    let mut out = ConfigOutcome {
        config: cfg.clone(),
        successes: Vec::new(),
        flags: Vec::new(),
    };
    for t in 0..setup.trials {
        let mut rng = Rng::stream(cfg.trial_seed, t as u64);
        let (ok, flag) = match policy.propose(&input, &mut rng) {
            Err(e) => (false, Some(e)),
            Ok((u1, u2)) => match execute_dual(&obs.scene, &task, &u1, &u2, &setup.spec) {
                Ok(o) => (judge_success(&task, &o), None),
                Err(e) => (false, Some(e.to_string())),
            },
        };
        out.successes.push(ok);
        out.flags.push(flag);
    }
    Ok(out)
}

/// Success fraction over `n_configs × trials` executions, parallel across
/// configurations.
pub fn eval_ssr(policy: &dyn Policy, setup: &EvalSetup, seed: u64) -> Result<EvalReport, DataError> {
    let configs = eval_configs(setup, seed)?;
    eval_on(policy, setup, seed, &configs)
}

pub fn eval_on(policy: &dyn Policy, setup: &EvalSetup, seed: u64, configs: &[EvalConfig]) -> Result<EvalReport, DataError> {
    let outcomes: Result<Vec<_>, _> = crate::par::map(configs, |c| eval_config(policy, setup, c)).into_iter().collect();
    let outcomes = outcomes?;
    let successes = outcomes.iter().flat_map(|c| &c.successes).filter(|&&b| b).count();
    let total = configs.len() * setup.trials;
    Ok(EvalReport {
        policy: policy.name(),
        task: setup.task,
        seed,
        n_configs: configs.len(),
        trials: setup.trials,
        successes,
        ssr: successes as f64 / total.max(1) as f64,
        configs: outcomes,
    })
}
