//! Phased training: module 2 first, then module 1 supervised through it.

use super::data::{Example, TrainingSet};
use super::losses;
use super::targets::{target_affordance_many, target_c1, LatentChoice, NetView, PointChoice};
use super::{LossReport, TrainConfig, TrainError};
use crate::perception::rot::reparameterize;
use crate::perception::{DualAfford, FirstAction, GripperModule, Group, ModuleId, Queries};
use crate::tensor::{AdamState, GradBuffer, ParameterSet, Rng, Tape, Var};

const M1_STREAM: u64 = 11;
const M2_STREAM: u64 = 12;

/// Loss rows with a running step counter.
#[derive(Debug, Default)]
pub(crate) struct Log {
    pub rows: Vec<LossReport>,
    pub step: usize,
}

impl Log {
    fn record(&mut self, phase: &str, loss: &str, value: f64) {
        self.rows.push(LossReport {
            step: self.step,
            phase: phase.to_string(),
            loss: loss.to_string(),
            value,
        });
        self.step += 1;
    }
}

/// Optimiser over a fixed set of parameter-name prefixes.
#[derive(Clone, Debug)]
pub(crate) struct Optim {
    prefixes: Vec<String>,
    adam: AdamState,
}

impl Optim {
    pub fn new(params: &ParameterSet, module: &GripperModule, groups: &[Group], lr: f64) -> Self {
        let prefixes: Vec<String> = groups.iter().map(|g| module.group_prefix(*g)).collect();
        let refs: Vec<&str> = prefixes.iter().map(String::as_str).collect();
        let adam = AdamState::for_prefixes(params, &refs, lr);
        Self { prefixes, adam }
    }

    fn tape(&self) -> Tape {
        let prefixes = self.prefixes.clone();
        Tape::with_trainable(move |n| prefixes.iter().any(|p| n.starts_with(p.as_str())))
    }
}

/// How many updates a phase runs.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Plan {
    /// Full shuffled passes.
    Epochs(usize, usize),
    /// Batches drawn with replacement.
    Steps(usize, usize),
}

/// One averaged-gradient Adam step over `batch`; per-item tapes run in
/// parallel and their gradients are summed in batch order.
fn step<T, F>(params: &mut ParameterSet, opt: &mut Optim, items: &[T], batch: &[(usize, u64)], f: &F) -> Result<f64, TrainError>
where
    T: Sync,
    F: Fn(&Tape, &ParameterSet, &T, &mut Rng) -> Result<Var, TrainError> + Sync,
{
    let p: &ParameterSet = params;
    let opt_ref: &Optim = opt;
    let outs = crate::par::map(batch, |&(i, seed)| -> Result<(f64, Vec<(String, Vec<f64>)>), TrainError> {
        let t = opt_ref.tape();
        let loss = f(&t, p, &items[i], &mut Rng::new(seed))?;
        t.backward(loss)?;
        Ok((t.item(loss), t.param_grads()))
    });
    let mut buf = GradBuffer::new();
    let mut total = 0.0;
    for o in outs {
        let (l, g) = o?;
        total += l;
        buf.merge(g);
    }
    let scale = 1.0 / batch.len() as f64;
    buf.apply(params, scale)?;
    for name in opt.adam.names() {
        if buf.get(name).is_none() {
            let n = params.get(name).map(|t| t.len()).unwrap_or(0);
            params.accumulate_grad(name, &vec![0.0; n], 1.0)?;
        }
    }
    opt.adam.step(params)?;
    Ok(total * scale)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn run<T, F>(
    params: &mut ParameterSet,
    opt: &mut Optim,
    items: &[T],
    plan: Plan,
    rng: &mut Rng,
    log: &mut Log,
    tags: (&str, &str),
    f: F,
) -> Result<(), TrainError>
where
    T: Sync,
    F: Fn(&Tape, &ParameterSet, &T, &mut Rng) -> Result<Var, TrainError> + Sync,
{
    if items.is_empty() {
        return Ok(());
    }
    let mut go = |rng: &mut Rng, idx: &[usize], log: &mut Log| -> Result<(), TrainError> {
        let batch: Vec<(usize, u64)> = idx.iter().map(|&i| (i, rng.next_u64())).collect();
        let loss = step(params, opt, items, &batch, &f)?;
        log.record(tags.0, tags.1, loss);
        Ok(())
    };
    match plan {
        Plan::Epochs(epochs, bs) => {
            let mut order: Vec<usize> = (0..items.len()).collect();
            for _ in 0..epochs {
                rng.shuffle(&mut order);
                for chunk in order.chunks(bs) {
                    go(rng, chunk, log)?;
                }
            }
        }
        Plan::Steps(steps, bs) => {
            for _ in 0..steps {
                let idx: Vec<usize> = (0..bs.min(items.len())).map(|_| rng.below(items.len())).collect();
                go(rng, &idx, log)?;
            }
        }
    }
    Ok(())
}

/// A record seen from one module: contact row, first action, orientation.
fn slot(id: ModuleId, ex: &Example) -> (usize, Option<FirstAction>, [f64; 6]) {
    match id {
        ModuleId::First => (ex.idx1, None, ex.r1),
        ModuleId::Second => (ex.idx2, Some(ex.first), ex.r2),
    }
}

fn loss_name(kind: char, id: ModuleId) -> String {
    let n = match id {
        ModuleId::First => 1,
        ModuleId::Second => 2,
    };
    format!("L_{kind}{n}")
}

/// Critic target per example, indexed like `TrainingSet::examples`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct CriticItem {
    pub ex: usize,
    pub target: f64,
}

/// Head supervision at one contact row with frozen encoder features.
#[derive(Clone, Debug)]
pub(crate) struct HeadItem {
    pub ex: usize,
    pub row: usize,
    pub fs: Vec<f64>,
    pub target: f64,
}

/// Critic phase: encoder and critic of `id`; BCE for module 2, L1 for module 1.
#[allow(clippy::too_many_arguments)]
pub(crate) fn critic_phase(
    model: &mut DualAfford,
    set: &TrainingSet,
    id: ModuleId,
    items: &[CriticItem],
    opt: &mut Optim,
    plan: Plan,
    rng: &mut Rng,
    log: &mut Log,
    phase: &str,
) -> Result<(), TrainError> {
    let module = model.module(id).clone();
    run(
        &mut model.params,
        opt,
        items,
        plan,
        rng,
        log,
        (phase, &loss_name('C', id)),
        |t, p, it, _| {
            let ex = &set.examples[it.ex];
            let cloud = &set.clouds[ex.cloud];
            let (row, first, rot) = slot(id, ex);
            let x = module.cloud_input(t, cloud)?;
            let feats = module.encode_cloud(t, p, x)?;
            let q = Queries {
                cloud,
                task: &ex.task,
                rows: &[row],
                first,
            };
            let ctx = module.query_context(t, p, &feats, &q)?;
            let c = module.critic(t, p, ctx, t.constant(1, 6, rot.to_vec())?)?;
            Ok(match id {
                ModuleId::Second => losses::bce(t, c, &[it.target])?,
                ModuleId::First => losses::l1(t, c, &[it.target])?,
            })
        },
    )
}

fn head_context(module: &GripperModule, t: &Tape, p: &ParameterSet, set: &TrainingSet, it: &HeadItem) -> Result<Var, TrainError> {
    let ex = &set.examples[it.ex];
    let (_, first, _) = slot(module.id, ex);
    let fs = t.constant(1, it.fs.len(), it.fs.clone())?;
    let q = Queries {
        cloud: &set.clouds[ex.cloud],
        task: &ex.task,
        rows: &[it.row],
        first,
    };
    Ok(module.context_from_features(t, p, fs, &q)?)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn proposal_phase(
    model: &mut DualAfford,
    set: &TrainingSet,
    id: ModuleId,
    items: &[HeadItem],
    beta: f64,
    opt: &mut Optim,
    plan: Plan,
    rng: &mut Rng,
    log: &mut Log,
    phase: &str,
) -> Result<(), TrainError> {
    let module = model.module(id).clone();
    let latent = module.dims.latent;
    run(
        &mut model.params,
        opt,
        items,
        plan,
        rng,
        log,
        (phase, &loss_name('P', id)),
        |t, p, it, rng| {
            let (_, _, rot) = slot(id, &set.examples[it.ex]);
            let ctx = head_context(&module, t, p, set, it)?;
            let target = t.constant(1, 6, rot.to_vec())?;
            let (mu, logvar) = module.propose_encode(t, p, ctx, target)?;
            let z = reparameterize(t, mu, logvar, rng.normals(latent))?;
            let dec = module.propose_decode(t, p, ctx, z)?;
            Ok(losses::proposal(t, dec, &rot, mu, logvar, beta)?)
        },
    )
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn affordance_phase(
    model: &mut DualAfford,
    set: &TrainingSet,
    id: ModuleId,
    items: &[HeadItem],
    opt: &mut Optim,
    plan: Plan,
    rng: &mut Rng,
    log: &mut Log,
    phase: &str,
) -> Result<(), TrainError> {
    let module = model.module(id).clone();
    run(
        &mut model.params,
        opt,
        items,
        plan,
        rng,
        log,
        (phase, &loss_name('A', id)),
        |t, p, it, _| {
            let ctx = head_context(&module, t, p, set, it)?;
            let a = module.affordance(t, p, ctx)?;
            Ok(losses::l1(t, a, &[it.target])?)
        },
    )
}

/// Frozen-encoder features at each example's contact row plus `extra`
/// random rows; with `n_mc`, also affordance targets from the frozen
/// critic and proposal.
pub(crate) fn head_items(
    model: &DualAfford,
    set: &TrainingSet,
    id: ModuleId,
    which: &[usize],
    extra: usize,
    n_mc: Option<usize>,
    rng: &mut Rng,
) -> Result<Vec<HeadItem>, TrainError> {
    let module = model.module(id);
    let jobs: Vec<(usize, Rng)> = which.iter().map(|&e| (e, rng.fork())).collect();
    let out = crate::par::map(&jobs, |(e, rng)| -> Result<Vec<HeadItem>, TrainError> {
        let mut rng = rng.clone();
        let ex = &set.examples[*e];
        let cloud = &set.clouds[ex.cloud];
        let (row, first, _) = slot(id, ex);
        let mut rows = vec![row];
        rows.extend((0..extra).map(|_| rng.below(cloud.len())));
        let view = NetView::new(module, &model.params, cloud, &ex.task, first)?;
        let fs = view.point_features(&rows)?;
        let width = fs.len() / rows.len();
        let targets = match n_mc {
            Some(n) => target_affordance_many(&view, &rows, LatentChoice::Prior(n), &mut rng)?,
            None => vec![0.0; rows.len()],
        };
        Ok(rows
            .iter()
            .enumerate()
            .map(|(k, &r)| HeadItem {
                ex: *e,
                row: r,
                fs: fs[k * width..(k + 1) * width].to_vec(),
                target: targets[k],
            })
            .collect())
    });
    let mut items = Vec::new();
    for o in out {
        items.extend(o?);
    }
    Ok(items)
}

/// First-critic targets through the current module 2, one per example in `which`.
pub(crate) fn c1_targets(
    model: &DualAfford,
    set: &TrainingSet,
    which: &[usize],
    n_mc: usize,
    m_mc: usize,
    rng: &mut Rng,
) -> Result<Vec<CriticItem>, TrainError> {
    let jobs: Vec<(usize, Rng)> = which.iter().map(|&e| (e, rng.fork())).collect();
    let out = crate::par::map(&jobs, |(e, rng)| -> Result<CriticItem, TrainError> {
        let ex = &set.examples[*e];
        let view = NetView::new(&model.m2, &model.params, &set.clouds[ex.cloud], &ex.task, Some(ex.first))?;
        let target = target_c1(&view, PointChoice::Sample(n_mc), LatentChoice::Prior(m_mc), &mut rng.clone())?;
        Ok(CriticItem { ex: *e, target })
    });
    out.into_iter().collect()
}

fn check(set: &TrainingSet, cfg: &TrainConfig) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(TrainError::Empty);
    }
    let all: Vec<usize> = (0..set.len()).collect();
    let pos: Vec<usize> = all.iter().copied().filter(|&i| set.examples[i].positive()).collect();
    if pos.is_empty() {
        return Err(TrainError::NoPositives);
    }
    Ok((all, pos))
}

/// Shared body of both module schedules; `critic` supplies phase-(a) items.
fn train_module(
    model: &mut DualAfford,
    set: &TrainingSet,
    cfg: &TrainConfig,
    id: ModuleId,
    critic: Vec<CriticItem>,
    rng: &mut Rng,
    log: &mut Log,
) -> Result<(), TrainError> {
    let (all, pos) = check(set, cfg)?;
    let tag = id.prefix();
    let module = model.module(id).clone();
    let mut opt = Optim::new(&model.params, &module, &[Group::Encoder, Group::Critic], cfg.lr);
    let plan = |e| Plan::Epochs(e, cfg.batch_size);
    critic_phase(model, set, id, &critic, &mut opt, plan(cfg.epochs_critic), rng, log, &format!("{tag}.critic"))?;

    let items = head_items(model, set, id, &pos, 0, None, rng)?;
    let mut opt = Optim::new(&model.params, &module, &[Group::Proposal], cfg.lr);
    proposal_phase(model, set, id, &items, cfg.beta, &mut opt, plan(cfg.epochs_proposal), rng, log, &format!("{tag}.proposal"))?;

    let items = head_items(model, set, id, &all, cfg.affordance_points, Some(cfg.n_mc), rng)?;
    let mut opt = Optim::new(&model.params, &module, &[Group::Affordance], cfg.lr);
    affordance_phase(model, set, id, &items, &mut opt, plan(cfg.epochs_affordance), rng, log, &format!("{tag}.affordance"))
}

pub(crate) fn train_module2_logged(model: &mut DualAfford, set: &TrainingSet, cfg: &TrainConfig, log: &mut Log) -> Result<(), TrainError> {
    let mut rng = Rng::stream(cfg.seed, M2_STREAM);
    let items: Vec<CriticItem> = (0..set.len())
        .map(|i| CriticItem {
            ex: i,
            target: set.examples[i].label,
        })
        .collect();
    train_module(model, set, cfg, ModuleId::Second, items, &mut rng, log)
}

pub(crate) fn train_module1_logged(model: &mut DualAfford, set: &TrainingSet, cfg: &TrainConfig, log: &mut Log) -> Result<(), TrainError> {
    check(set, cfg)?;
    let mut rng = Rng::stream(cfg.seed, M1_STREAM);
    let all: Vec<usize> = (0..set.len()).collect();
    let items = c1_targets(model, set, &all, cfg.n_mc, cfg.m_mc, &mut rng)?;
    train_module(model, set, cfg, ModuleId::First, items, &mut rng, log)
}

/// Critic, then proposal, then affordance of module 2; earlier heads are
/// frozen once their phase ends.
pub fn train_module2(model: &mut DualAfford, set: &TrainingSet, cfg: &TrainConfig) -> Result<Vec<LossReport>, TrainError> {
    let mut log = Log::default();
    train_module2_logged(model, set, cfg, &mut log)?;
    Ok(log.rows)
}

/// Module 1 against the (never mutated) module 2 of `model`.
pub fn train_module1(model: &mut DualAfford, set: &TrainingSet, cfg: &TrainConfig) -> Result<Vec<LossReport>, TrainError> {
    let mut log = Log::default();
    train_module1_logged(model, set, cfg, &mut log)?;
    Ok(log.rows)
}

/// Module 2 then module 1, with one continuous step counter.
pub fn train_all(model: &mut DualAfford, set: &TrainingSet, cfg: &TrainConfig) -> Result<Vec<LossReport>, TrainError> {
    let mut log = Log::default();
    train_module2_logged(model, set, cfg, &mut log)?;
    train_module1_logged(model, set, cfg, &mut log)?;
    Ok(log.rows)
}
