//! Collection and evaluation pipelines shared by the command line and tests.

use serde::{Deserialize, Serialize};

use super::eval::{eval_configs, eval_on, EvalReport, EvalSetup, HeuristicPolicy, LearnedPolicy, RandomPolicy};
use super::{HarnessError, RunConfig};
use crate::datagen::{
    balance_dataset, collect_random, plan_scenes, rl_collect, rl_scenes, CollectPlan, CollectStats, InteractionRecord,
    RlConfig, Sac,
};
use crate::perception::DualAfford;
use crate::sim::ObjectModel;
use crate::tensor::Rng;

const COLLECT_STREAM: u64 = 31;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectSummary {
    pub batches: usize,
    pub total: usize,
    pub positives: usize,
    pub sim_errors: usize,
    pub invisible_scenes: usize,
    pub kept: usize,
    pub rl_episodes: usize,
    pub rl_positives: usize,
}

/// Collected records plus the RL sampler, when one ran.
pub struct Collected {
    pub records: Vec<InteractionRecord>,
    pub summary: CollectSummary,
    pub sac: Option<Sac>,
}

/// Random collection in batches until the positive target is met, optional
/// RL episodes on fresh scenes, then label balancing.
pub fn collect(cfg: &RunConfig, library: &[ObjectModel], seed: u64) -> Result<Collected, HarnessError> {
    let mut rng = Rng::stream(seed, COLLECT_STREAM);
    let plan = CollectPlan {
        objects: cfg.objects.clone(),
        task: cfg.task,
        scenes: cfg.collect.scenes_per_batch,
        samples_per_scene: cfg.collect.samples_per_scene,
        n_points: cfg.n_points,
    };
    let mut all = Vec::new();
    let mut sum = CollectSummary::default();
    let mut stats = CollectStats::default();
    while sum.batches < cfg.collect.max_batches {
        let (recs, st) = collect_random(library, &plan, &cfg.gripper, rng.next_u64())?;
        sum.batches += 1;
        stats.total += st.total;
        stats.positives += st.positives;
        stats.sim_errors += st.sim_errors;
        stats.invisible_scenes += st.invisible_scenes;
        all.extend(recs);
        match cfg.collect.target_positives {
            Some(t) if stats.positives < t => continue,
            _ => break,
        }
    }
    let mut sac = None;
    if cfg.collect.rl_episodes > 0 {
        let plans = plan_scenes(&cfg.objects, cfg.task, cfg.collect.scenes_per_batch, &mut rng);
        let scenes = rl_scenes(&plans, library, cfg.n_points)?;
        let rl = RlConfig {
            episodes: cfg.collect.rl_episodes,
            sac: cfg.collect.sac,
        };
        let (recs, trained, st) = rl_collect(&scenes, Sac::new(rl.sac, rng.next_u64())?, &rl, &cfg.gripper, &mut rng)?;
        sum.rl_episodes = st.episodes;
        sum.rl_positives = st.positives;
        stats.total += st.episodes;
        stats.positives += st.positives;
        stats.sim_errors += st.sim_errors;
        all.extend(recs);
        sac = Some(trained);
    }
    sum.total = stats.total;
    sum.positives = stats.positives;
    sum.sim_errors = stats.sim_errors;
    sum.invisible_scenes = stats.invisible_scenes;
    let mut kept = balance_dataset(&all, &mut rng)?;
    if let Some(t) = cfg.collect.target_positives {
        let (mut p, mut n) = (0, 0);
        kept.retain(|r| {
            let slot = if r.positive() { &mut p } else { &mut n };
            *slot += 1;
            *slot <= t
        });
    }
    sum.kept = kept.len();
    Ok(Collected {
        records: kept,
        summary: sum,
        sac,
    })
}

/// Learned model and baselines on the same configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalBundle {
    pub seed: u64,
    pub learned: Option<EvalReport>,
    pub random: Option<EvalReport>,
    pub heuristic: Option<EvalReport>,
}

pub fn eval_all(
    cfg: &RunConfig,
    library: &[ObjectModel],
    model: Option<&DualAfford>,
    seed: u64,
) -> Result<EvalBundle, HarnessError> {
    let setup = EvalSetup {
        library,
        objects: cfg.objects.clone(),
        task: cfg.task,
        n_points: cfg.n_points,
        n_configs: cfg.eval.n_configs,
        trials: cfg.eval.trials,
        spec: cfg.gripper,
    };
    let configs = eval_configs(&setup, seed)?;
    let learned = match model {
        Some(m) => Some(eval_on(
            &LearnedPolicy {
                model: m,
                opts: cfg.infer.options(),
            },
            &setup,
            seed,
            &configs,
        )?),
        None => None,
    };
    let (random, heuristic) = if cfg.eval.baselines {
        (
            Some(eval_on(&RandomPolicy, &setup, seed, &configs)?),
            Some(eval_on(&HeuristicPolicy, &setup, seed, &configs)?),
        )
    } else {
        (None, None)
    };
    Ok(EvalBundle {
        seed,
        learned,
        random,
        heuristic,
    })
}
