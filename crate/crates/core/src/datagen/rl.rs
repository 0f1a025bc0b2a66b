//! RL-augmented collection: one-step episodes, SAC over the two gripper
//! orientations, contacts drawn from the grasp prior.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::prior::{grasp_prior, top_fraction};
use super::random::distinct_pair;
use super::record::{InteractionRecord, Observation, Provenance};
use super::DataError;
use crate::geometry::{sixd_to_matrix, GripperAction, RotationMatrix, SixDRotation};
use crate::sim::{collaboration_check, judge_success, GripperSpec, SimOutcome, TaskSpec, MOVE_THRESHOLD};
use crate::tensor::nn::{Activation, Linear, Mlp};
use crate::tensor::{AdamState, Axis, ParameterSet, Rng, Tape, Tensor, Var};

pub const STATE_DIM: usize = 13;
pub const ACTION_DIM: usize = 12;
/// Fraction of prior-ranked points contacts are drawn from.
pub const PRIOR_TOP: f64 = 0.1;
const LOGVAR_RANGE: (f64, f64) = (-10.0, 4.0);

/// Object position and orientation (camera frame) plus both contacts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RlState(pub [f64; STATE_DIM]);

impl RlState {
    pub fn new(obs: &Observation, p1: [f64; 3], p2: [f64; 3]) -> Self {
        let pose = obs.scene.object_in_camera();
        let q = pose.orientation.into_inner();
        let mut v = [0.0; STATE_DIM];
        v[..3].copy_from_slice(pose.position.as_slice());
        v[3..7].copy_from_slice(&[q.w, q.i, q.j, q.k]);
        v[7..10].copy_from_slice(&p1);
        v[10..13].copy_from_slice(&p2);
        Self(v)
    }

    pub fn quaternion_norm(&self) -> f64 {
        self.0[3..7].iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Two stacked raw 6D orientations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RlAction(pub [f64; ACTION_DIM]);

impl RlAction {
    /// Both orientations; a degenerate half is nudged by 1e-6 first.
    /// The flag reports whether any nudge happened.
    pub fn decode(&self) -> ([SixDRotation; 2], bool) {
        let mut nudged = false;
        let mut out = [SixDRotation([0.0; 6]); 2];
        for (k, slot) in out.iter_mut().enumerate() {
            let mut six: [f64; 6] = self.0[6 * k..6 * k + 6].try_into().expect("six");
            let m = match sixd_to_matrix(&SixDRotation(six)) {
                Ok(m) => m,
                Err(_) => {
                    nudged = true;
                    six[0] += 1e-6;
                    six[4] += 1e-6;
                    sixd_to_matrix(&SixDRotation(six)).unwrap_or_else(|_| RotationMatrix::identity())
                }
            };
            *slot = m.to_sixd();
        }
        (out, nudged)
    }
}

/// Dense reward split into its two terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reward {
    pub task: f64,
    pub interaction: f64,
}

impl Reward {
    pub fn total(&self) -> f64 {
        self.task + self.interaction
    }
}

/// Task term (success 1.0; moved past the threshold but not steady 0.15;
/// steady and short of the threshold `20·d`) plus 0.25 per gripper grasping
/// at the start and again at the end.
pub fn reward(task: &TaskSpec, o: &SimOutcome) -> Reward {
    let d = o.distance();
    let task_term = if judge_success(task, o) {
        1.0
    } else if d > MOVE_THRESHOLD && !o.steady {
        0.15
    } else if o.steady && d < MOVE_THRESHOLD {
        20.0 * d
    } else {
        0.0
    };
    let grasps = o.grasped_at_start.iter().chain(&o.grasped_at_end).filter(|&&g| g).count();
    Reward {
        task: task_term,
        interaction: 0.25 * grasps as f64,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: usize,
    pub buffer: usize,
    pub batch: usize,
    pub lr: f64,
    /// Discount; one-step episodes never bootstrap, so it has no effect.
    pub gamma: f64,
    pub tau: f64,
    pub target_entropy: f64,
    /// Episodes between gradient updates.
    pub update_every: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            buffer: 16384,
            batch: 512,
            lr: 2e-4,
            gamma: 0.99,
            tau: 0.005,
            target_entropy: -(ACTION_DIM as f64),
            update_every: 25,
        }
    }
}

/// FIFO ring of one-step transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<(RlState, RlAction, f64, bool)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn push(&mut self, s: RlState, a: RlAction, r: f64, done: bool) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back((s, a, r, done));
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &(RlState, RlAction, f64, bool) {
        &self.items[i]
    }
}

/// Policy, twin critics with targets, and the entropy temperature.
#[derive(Clone, Debug)]
pub struct Sac {
    pub cfg: SacConfig,
    pub params: ParameterSet,
    trunk: Mlp,
    mean: Linear,
    logvar: Linear,
    q: [Mlp; 2],
    q_target: [Mlp; 2],
    opt_policy: AdamState,
    opt_q: AdamState,
    opt_alpha: AdamState,
    pub updates: usize,
}

const LOG_ALPHA: &str = "sac.log_alpha";

/// Losses of one update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SacLosses {
    pub q: f64,
    pub policy: f64,
    pub alpha: f64,
}

impl Sac {
    pub fn new(cfg: SacConfig, seed: u64) -> Result<Self, DataError> {
        let h = cfg.hidden;
        let trunk = Mlp::new("sac.policy.trunk", &[STATE_DIM, h, h, h, h], Activation::LeakyRelu);
        let mean = Linear::new("sac.policy.mean", h, ACTION_DIM);
        let logvar = Linear::new("sac.policy.logvar", h, ACTION_DIM);
        let qdims = [STATE_DIM + ACTION_DIM, h, h, h, 1];
        let q = [
            Mlp::new("sac.q1", &qdims, Activation::Identity),
            Mlp::new("sac.q2", &qdims, Activation::Identity),
        ];
        let q_target = [
            Mlp::new("sac.q1_target", &qdims, Activation::Identity),
            Mlp::new("sac.q2_target", &qdims, Activation::Identity),
        ];
        let mut params = ParameterSet::new();
        let mut rng = Rng::new(seed);
        trunk.init(&mut params, &mut rng)?;
        mean.init(&mut params, &mut rng)?;
        logvar.init(&mut params, &mut rng)?;
        for m in &q {
            m.init(&mut params, &mut rng)?;
        }
        for (name, value) in target_pairs(&q, &q_target) {
            let t = params.get(&name).expect("initialised").clone();
            params.insert(value, t)?;
        }
        params.insert(LOG_ALPHA, Tensor::row(vec![0.0]))?;
        let mut s = Self {
            cfg,
            params,
            trunk,
            mean,
            logvar,
            q,
            q_target,
            opt_policy: AdamState::new(vec![], cfg.lr),
            opt_q: AdamState::new(vec![], cfg.lr),
            opt_alpha: AdamState::new(vec![], cfg.lr),
            updates: 0,
        };
        s.reset_optimizers();
        Ok(s)
    }

    fn reset_optimizers(&mut self) {
        let lr = self.cfg.lr;
        self.opt_policy = AdamState::for_prefixes(&self.params, &["sac.policy."], lr);
        self.opt_q = AdamState::for_prefixes(&self.params, &["sac.q1.", "sac.q2."], lr);
        self.opt_alpha = AdamState::new(vec![LOG_ALPHA.to_string()], lr);
    }

    pub fn alpha(&self) -> f64 {
        self.params.get(LOG_ALPHA).expect("present").data()[0].exp()
    }

    /// Squashed-Gaussian sample and its log-density, `B × 12` and `B × 1`.
    fn sample(&self, t: &Tape, states: Var, eps: &[f64]) -> crate::tensor::Result<(Var, Var)> {
        let p = &self.params;
        let (b, _) = t.shape(states);
        let h = self.trunk.forward(t, p, states)?;
        let mu = self.mean.forward(t, p, h)?;
        let lv = t.clamp(self.logvar.forward(t, p, h)?, LOGVAR_RANGE.0, LOGVAR_RANGE.1);
        let std = t.exp(t.scale(lv, 0.5));
        let e = t.constant(b, ACTION_DIM, eps.to_vec())?;
        let a = t.tanh(t.add(mu, t.mul(std, e)?)?);
        let c = -0.5 * (2.0 * std::f64::consts::PI).ln();
        let gauss = t.constant(b, ACTION_DIM, eps.iter().map(|x| -0.5 * x * x + c).collect())?;
        let logn = t.sub(gauss, t.scale(lv, 0.5))?;
        // change of variables through tanh
        let squash = t.log(t.add_scalar(t.scale(t.mul(a, a)?, -1.0), 1.0 + 1e-6));
        let logp = t.sum(t.sub(logn, squash)?, Axis::Cols);
        Ok((a, logp))
    }

    /// One stochastic action for `state`.
    pub fn act(&self, state: &RlState, rng: &mut Rng) -> Result<RlAction, DataError> {
        let t = Tape::no_grad();
        let s = t.constant(1, STATE_DIM, state.0.to_vec())?;
        let (a, _) = self.sample(&t, s, &rng.normals(ACTION_DIM))?;
        Ok(RlAction(t.values(a).try_into().expect("twelve")))
    }

    fn q_value(&self, t: &Tape, net: &Mlp, s: Var, a: Var) -> crate::tensor::Result<Var> {
        net.forward(t, &self.params, t.concat(&[s, a])?)
    }

    /// Critic, policy and temperature steps on one sampled batch.
    pub fn update(&mut self, buffer: &ReplayBuffer, rng: &mut Rng) -> Result<SacLosses, DataError> {
        let n = self.cfg.batch.min(buffer.len());
        if n == 0 {
            return Err(DataError::Format {
                line: 0,
                message: "SAC update on an empty replay buffer".into(),
            });
        }
        let mut sv = Vec::with_capacity(n * STATE_DIM);
        let mut av = Vec::with_capacity(n * ACTION_DIM);
        let mut rv = Vec::with_capacity(n);
        for _ in 0..n {
            let (s, a, r, done) = buffer.get(rng.below(buffer.len()));
            debug_assert!(*done);
            sv.extend_from_slice(&s.0);
            av.extend_from_slice(&a.0);
            // every episode ends after one step, so the target is the reward
            rv.push(*r);
        }
        let alpha = self.alpha();

        let t = Tape::with_trainable(|n| n.starts_with("sac.q1.") || n.starts_with("sac.q2."));
        let s = t.constant(n, STATE_DIM, sv.clone())?;
        let a = t.constant(n, ACTION_DIM, av)?;
        let y = t.constant(n, 1, rv)?;
        let d1 = t.sub(self.q_value(&t, &self.q[0], s, a)?, y)?;
        let d2 = t.sub(self.q_value(&t, &self.q[1], s, a)?, y)?;
        let q_loss = t.add(t.mean_all(t.mul(d1, d1)?), t.mean_all(t.mul(d2, d2)?))?;
        t.backward(q_loss)?;
        self.params.zero_grad();
        t.accumulate_into(&mut self.params)?;
        self.opt_q.step(&mut self.params)?;
        let q = t.item(q_loss);

        let t = Tape::with_trainable(|n| n.starts_with("sac.policy."));
        let s = t.constant(n, STATE_DIM, sv)?;
        let (a, logp) = self.sample(&t, s, &rng.normals(n * ACTION_DIM))?;
        let q1 = self.q_value(&t, &self.q[0], s, a)?;
        let q2 = self.q_value(&t, &self.q[1], s, a)?;
        let pi_loss = t.mean_all(t.sub(t.scale(logp, alpha), t.minimum(q1, q2)?)?);
        t.backward(pi_loss)?;
        self.params.zero_grad();
        t.accumulate_into(&mut self.params)?;
        self.opt_policy.step(&mut self.params)?;
        let policy = t.item(pi_loss);
        let logp_mean = t.values(logp).iter().sum::<f64>() / n as f64;

        // d/dlogα of −logα·(log π + H̄)
        let t = Tape::new();
        let la = t.param(&self.params, LOG_ALPHA)?;
        let alpha_loss = t.scale(la, -(logp_mean + self.cfg.target_entropy));
        t.backward(alpha_loss)?;
        self.params.zero_grad();
        t.accumulate_into(&mut self.params)?;
        self.opt_alpha.step(&mut self.params)?;
        self.params.zero_grad();

        self.soft_update();
        self.updates += 1;
        Ok(SacLosses {
            q,
            policy,
            alpha: self.alpha(),
        })
    }

    /// Polyak averaging of the target critics.
    fn soft_update(&mut self) {
        let tau = self.cfg.tau;
        for (src, dst) in target_pairs(&self.q, &self.q_target) {
            let v = self.params.get(&src).expect("present").data().to_vec();
            let tgt = self.params.get_mut(&dst).expect("present");
            for (x, y) in tgt.data_mut().iter_mut().zip(v) {
                *x = (1.0 - tau) * *x + tau * y;
            }
        }
    }

    /// Saves the weights under the `sac.` prefix.
    pub fn save(&self, path: &std::path::Path) -> Result<(), DataError> {
        Ok(self.params.save(path)?)
    }

    /// Loads weights saved by [`Sac::save`]; optimizer moments start fresh.
    pub fn load(cfg: SacConfig, path: &std::path::Path) -> Result<Self, DataError> {
        let p = ParameterSet::load(path).map_err(|e| match e {
            crate::tensor::TensorError::Io(io) => DataError::Missing(path.display().to_string(), io),
            other => other.into(),
        })?;
        let mut s = Self::new(cfg, 0)?;
        let same = s.params.len() == p.len()
            && s.params.iter().all(|(n, t)| p.get(n).is_some_and(|q| q.shape() == t.shape()));
        if !same {
            return Err(DataError::Format {
                line: 0,
                message: "SAC checkpoint does not match the network layout".into(),
            });
        }
        s.params = p;
        s.reset_optimizers();
        Ok(s)
    }
}

/// `(online, target)` parameter names of the twin critics.
fn target_pairs(q: &[Mlp; 2], target: &[Mlp; 2]) -> Vec<(String, String)> {
    q.iter()
        .zip(target)
        .flat_map(|(a, b)| a.layers.iter().zip(&b.layers))
        .flat_map(|(a, b)| ["w", "b"].map(|s| (format!("{}.{s}", a.prefix), format!("{}.{s}", b.prefix))))
        .collect()
}

/// Episode budget for [`rl_collect`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RlConfig {
    pub episodes: usize,
    pub sac: SacConfig,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RlStats {
    pub episodes: usize,
    pub positives: usize,
    pub sim_errors: usize,
    /// Policy outputs that needed the 1e-6 nudge to decode.
    pub degenerate_actions: usize,
    pub updates: usize,
    pub mean_reward: f64,
    pub last_losses: Option<SacLosses>,
}

impl RlStats {
    pub fn positive_rate(&self) -> f64 {
        self.positives as f64 / self.episodes.max(1) as f64
    }
}

/// Contact candidates: the top prior points, or every point when the prior is flat.
pub fn contact_candidates(obs: &Observation) -> Vec<usize> {
    top_fraction(&grasp_prior(&obs.cloud, &obs.scene), PRIOR_TOP)
}

fn pick_pair(cands: &[usize], n: usize, rng: &mut Rng) -> (usize, usize) {
    if cands.len() >= 2 {
        let (i, j) = distinct_pair(cands.len(), rng);
        (cands[i], cands[j])
    } else {
        distinct_pair(n, rng)
    }
}

/// Observes planned scenes for RL, skipping views with too few hits.
pub fn rl_scenes(
    plans: &[super::random::ScenePlan],
    library: &[crate::sim::ObjectModel],
    n_points: usize,
) -> Result<Vec<(Observation, TaskSpec)>, DataError> {
    let seen = crate::par::map(plans, |sp| match sp.scene.observe(library, n_points) {
        Ok(o) => Ok(Some((o, sp.task))),
        Err(DataError::Sim(crate::sim::SimError::NotVisible { .. })) => Ok(None),
        Err(e) => Err(e),
    });
    Ok(seen.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().flatten().collect())
}

/// One-step SAC episodes over the given scenes (cycled in order). Every
/// episode is also emitted as a record labelled by the collaboration check;
/// simulator failures count as zero-reward negatives.
pub fn rl_collect(
    scenes: &[(Observation, TaskSpec)],
    mut sac: Sac,
    cfg: &RlConfig,
    spec: &GripperSpec,
    rng: &mut Rng,
) -> Result<(Vec<InteractionRecord>, Sac, RlStats), DataError> {
    let mut stats = RlStats::default();
    if scenes.is_empty() || cfg.episodes == 0 {
        return Ok((Vec::new(), sac, stats));
    }
    let cands: Vec<Vec<usize>> = scenes.iter().map(|(o, _)| contact_candidates(o)).collect();
    let mut buffer = ReplayBuffer::new(cfg.sac.buffer);
    let mut records = Vec::with_capacity(cfg.episodes);
    let mut reward_sum = 0.0;
    let chunk = cfg.sac.update_every.max(1);
    let mut done = 0;
    while done < cfg.episodes {
        let n = chunk.min(cfg.episodes - done);
        let mut episodes = Vec::with_capacity(n);
        for e in done..done + n {
            let k = e % scenes.len();
            let (obs, _) = &scenes[k];
            let (i, j) = pick_pair(&cands[k], obs.cloud.len(), rng);
            let p = |i: usize| {
                let q = obs.cloud.points[i];
                [q.x, q.y, q.z]
            };
            let state = RlState::new(obs, p(i), p(j));
            let action = sac.act(&state, rng)?;
            let (rots, nudged) = action.decode();
            stats.degenerate_actions += nudged as usize;
            let u1 = GripperAction { point: p(i), rotation: rots[0] };
            let u2 = GripperAction { point: p(j), rotation: rots[1] };
            episodes.push((k, state, action, u1, u2));
        }
        // rollouts within a chunk share one policy, so simulate them together
        let results = crate::par::map(&episodes, |(k, _, _, u1, u2)| {
            let (obs, task) = &scenes[*k];
            collaboration_check(&obs.scene, u1, u2, task, spec).map(|c| (c.r, reward(task, &c.dual).total()))
        });
        for ((k, state, action, u1, u2), res) in episodes.into_iter().zip(results) {
            let (obs, task) = &scenes[k];
            let (positive, r) = match res {
                Ok(v) => v,
                Err(_) => {
                    stats.sim_errors += 1;
                    (false, 0.0)
                }
            };
            stats.episodes += 1;
            stats.positives += positive as usize;
            reward_sum += r;
            buffer.push(state, action, r, true);
            records.push(InteractionRecord::new(&obs.scene_ref, task, &u1, &u2, positive, Provenance::Rl));
        }
        done += n;
        stats.last_losses = Some(sac.update(&buffer, rng)?);
        stats.updates += 1;
    }
    stats.mean_reward = reward_sum / stats.episodes as f64;
    Ok((records, sac, stats))
}
