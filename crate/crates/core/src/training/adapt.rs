//! Collaborative adaptation: execute both proposals online and fine-tune
//! both modules on the outcomes.

use super::data::TrainingSet;
use super::schedule::{
    affordance_phase, c1_targets, critic_phase, head_items, proposal_phase, CriticItem, Log, Optim, Plan,
};
use super::{LossReport, TrainConfig, TrainError};
use crate::datagen::{plan_scenes, DataError, InteractionRecord, Observation, Provenance};
use crate::geometry::GripperAction;
use crate::perception::{infer_with, DualAfford, Group, InferOptions, ModuleId, PreparedCloud, Selection};
use crate::sim::{collaboration_check, GripperSpec, ObjectModel, SimError, TaskSpec};
use crate::tensor::Rng;

const CA_STREAM: u64 = 13;

/// Labels an executed action pair.
pub trait Labeler: Sync {
    fn label(&self, obs: &Observation, task: &TaskSpec, u1: &GripperAction, u2: &GripperAction) -> Result<bool, SimError>;
}

/// Collaboration check in the simulator.
#[derive(Clone, Debug, Default)]
pub struct SimLabeler {
    pub spec: GripperSpec,
}

impl Labeler for SimLabeler {
    fn label(&self, obs: &Observation, task: &TaskSpec, u1: &GripperAction, u2: &GripperAction) -> Result<bool, SimError> {
        Ok(collaboration_check(&obs.scene, u1, u2, task, &self.spec)?.r)
    }
}

/// Where adaptation rollouts happen.
#[derive(Clone, Debug)]
pub struct AdaptSetup<'a> {
    pub library: &'a [ObjectModel],
    pub objects: Vec<String>,
    pub n_points: usize,
    /// Candidate counts; selection is replaced by softmax sampling.
    pub infer: InferOptions,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdaptStats {
    pub rounds: usize,
    pub executed: usize,
    pub positives: usize,
    /// Simulator failures, kept as negatives.
    pub sim_errors: usize,
    /// Scenes where inference found nothing to execute.
    pub infer_failures: usize,
    pub invisible_scenes: usize,
}

#[derive(Clone, Debug, Default)]
pub struct AdaptOutcome {
    pub history: Vec<LossReport>,
    /// Online buffer in collection order.
    pub records: Vec<InteractionRecord>,
    pub stats: AdaptStats,
}

/// Buffer rows used for an update: the majority label is downsampled to at
/// most `tolerance` above the minority. A buffer holding one label only is
/// used whole.
pub fn balanced_indices(labels: &[bool], tolerance: usize, rng: &mut Rng) -> Vec<usize> {
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if !pos.is_empty() && !neg.is_empty() {
        let keep = pos.len().min(neg.len()) + tolerance;
        rng.shuffle(&mut pos);
        rng.shuffle(&mut neg);
        pos.truncate(keep);
        neg.truncate(keep);
    }
    let mut out: Vec<usize> = pos.into_iter().chain(neg).collect();
    out.sort_unstable();
    out
}

struct Optims {
    critic: [Optim; 2],
    proposal: [Optim; 2],
    affordance: [Optim; 2],
}

impl Optims {
    fn new(model: &DualAfford, lr: f64) -> Self {
        let mk = |g: &[Group]| {
            [
                Optim::new(&model.params, &model.m1, g, lr),
                Optim::new(&model.params, &model.m2, g, lr),
            ]
        };
        Self {
            critic: mk(&[Group::Encoder, Group::Critic]),
            proposal: mk(&[Group::Proposal]),
            affordance: mk(&[Group::Affordance]),
        }
    }
}

fn slot(id: ModuleId) -> usize {
    match id {
        ModuleId::First => 0,
        ModuleId::Second => 1,
    }
}

/// Runs `cfg.ca_rounds` adaptation rounds.
pub fn collaborative_adaptation(
    model: &mut DualAfford,
    setup: &AdaptSetup,
    cfg: &TrainConfig,
    labeler: &dyn Labeler,
) -> Result<AdaptOutcome, TrainError> {
    collaborative_adaptation_observed(model, setup, cfg, labeler, &mut |_, _| {})
}

/// As [`collaborative_adaptation`], calling `observer` after every round.
pub fn collaborative_adaptation_observed(
    model: &mut DualAfford,
    setup: &AdaptSetup,
    cfg: &TrainConfig,
    labeler: &dyn Labeler,
    observer: &mut dyn FnMut(usize, &DualAfford),
) -> Result<AdaptOutcome, TrainError> {
    cfg.validate()?;
    let mut out = AdaptOutcome::default();
    if cfg.ca_rounds == 0 {
        return Ok(out);
    }
    let mut rng = Rng::stream(cfg.seed, CA_STREAM);
    let mut opt = Optims::new(model, cfg.lr);
    let mut buffer = TrainingSet::default();
    let mut log = Log::default();
    let opts = InferOptions {
        selection: Selection::Softmax(cfg.ca_temperature),
        ..setup.infer
    };
    for round in 0..cfg.ca_rounds {
        let plans = plan_scenes(&setup.objects, model.task, cfg.ca_scenes, &mut rng);
        let frozen: &DualAfford = model;
        let rollouts = crate::par::map(&plans, |sp| -> Result<Rollout, TrainError> {
            let obs = match sp.scene.observe(setup.library, setup.n_points) {
                Ok(o) => o,
                Err(DataError::Sim(SimError::NotVisible { .. })) => return Ok(Rollout::Invisible),
                Err(e) => return Err(e.into()),
            };
            let mut rng = sp.rng.clone();
            let inf = match infer_with(frozen, &PreparedCloud::new(&obs.cloud), &sp.task, &mut rng, &opts, &|_, s| s) {
                Ok(i) => i,
                Err(_) => return Ok(Rollout::NoAction),
            };
            let (positive, failed) = match labeler.label(&obs, &sp.task, &inf.u1, &inf.u2) {
                Ok(r) => (r, false),
                Err(_) => (false, true),
            };
            let rec = InteractionRecord::new(&obs.scene_ref, &sp.task, &inf.u1, &inf.u2, positive, Provenance::CaOnline);
            Ok(Rollout::Done(Box::new(obs), rec, failed))
        });
        let mut fresh_pos = Vec::new();
        for r in rollouts {
            match r? {
                Rollout::Invisible => out.stats.invisible_scenes += 1,
                Rollout::NoAction => out.stats.infer_failures += 1,
                Rollout::Done(obs, rec, failed) => {
                    out.stats.executed += 1;
                    out.stats.sim_errors += failed as usize;
                    out.stats.positives += rec.positive() as usize;
                    buffer.add_observation(&obs);
                    buffer.push(out.records.len(), &rec)?;
                    if rec.positive() {
                        fresh_pos.push(buffer.len() - 1);
                    }
                    out.records.push(rec);
                }
            }
        }
        out.stats.rounds += 1;
        let labels: Vec<bool> = buffer.examples.iter().map(|e| e.positive()).collect();
        let sel = balanced_indices(&labels, cfg.ca_balance_tolerance, &mut rng);
        if !sel.is_empty() {
            update_round(model, &buffer, &sel, &fresh_pos, cfg, &mut opt, &mut rng, &mut log, round)?;
        }
        observer(round, model);
    }
    out.history = log.rows;
    Ok(out)
}

enum Rollout {
    Invisible,
    NoAction,
    Done(Box<Observation>, InteractionRecord, bool),
}

#[allow(clippy::too_many_arguments)]
fn update_round(
    model: &mut DualAfford,
    buffer: &TrainingSet,
    sel: &[usize],
    fresh_pos: &[usize],
    cfg: &TrainConfig,
    opt: &mut Optims,
    rng: &mut Rng,
    log: &mut Log,
    round: usize,
) -> Result<(), TrainError> {
    let plan = Plan::Steps(cfg.ca_steps, cfg.ca_batch_size);
    let tag = format!("ca.{round}");
    let (m1, m2) = (ModuleId::First, ModuleId::Second);

    let labels: Vec<CriticItem> = sel
        .iter()
        .map(|&e| CriticItem {
            ex: e,
            target: buffer.examples[e].label,
        })
        .collect();
    critic_phase(model, buffer, m2, &labels, &mut opt.critic[slot(m2)], plan, rng, log, &tag)?;

    // first-critic targets through the module 2 just updated
    let targets = c1_targets(model, buffer, sel, cfg.n_mc, cfg.m_mc, rng)?;
    critic_phase(model, buffer, m1, &targets, &mut opt.critic[slot(m1)], plan, rng, log, &tag)?;

    for id in [m1, m2] {
        if fresh_pos.is_empty() {
            break;
        }
        let items = head_items(model, buffer, id, fresh_pos, 0, None, rng)?;
        proposal_phase(model, buffer, id, &items, cfg.beta, &mut opt.proposal[slot(id)], plan, rng, log, &tag)?;
    }

    let mut pick = sel.to_vec();
    rng.shuffle(&mut pick);
    pick.truncate(cfg.ca_batch_size);
    pick.sort_unstable();
    for id in [m1, m2] {
        let items = head_items(model, buffer, id, &pick, cfg.affordance_points, Some(cfg.n_mc), rng)?;
        affordance_phase(model, buffer, id, &items, &mut opt.affordance[slot(id)], plan, rng, log, &tag)?;
    }
    Ok(())
}
