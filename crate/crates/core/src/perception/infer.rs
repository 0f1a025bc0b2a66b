//! Conditional two-stage inference: module 1 proposes, module 2 answers.

use super::model::{DualAfford, FirstAction, PreparedCloud, Queries};
use super::net::{GripperModule, ModuleId};
use super::PerceptionError;
use crate::geometry::{sixd_to_matrix, GripperAction, SixDRotation};
use crate::sim::{PointCloud, TaskSpec};
use crate::tensor::{ParameterSet, Rng, Tape};

/// How the final (point, orientation) pair is picked among the scored candidates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Selection {
    Argmax,
    /// Softmax over critic scores with this temperature (exploration).
    Softmax(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferOptions {
    pub k_points: usize,
    pub k_orients: usize,
    /// Candidates scoring below this on the affordance map are unusable.
    pub floor: f64,
    pub selection: Selection,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            k_points: 10,
            k_orients: 10,
            floor: 0.01,
            selection: Selection::Argmax,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Inference {
    pub u1: GripperAction,
    pub u2: GripperAction,
    pub idx1: usize,
    pub idx2: usize,
    /// Module-1 affordance map.
    pub a1: Vec<f64>,
    /// Module-2 affordance map conditioned on `u1`.
    pub a2: Vec<f64>,
    pub critic1: f64,
    pub critic2: f64,
    /// Critic evaluations spent by each module.
    pub critic_calls: [usize; 2],
}

/// One module's pick.
#[derive(Clone, Debug)]
pub struct ModulePick {
    pub action: GripperAction,
    pub index: usize,
    pub map: Vec<f64>,
    pub critic: f64,
    pub critic_calls: usize,
}

/// Affordance map of a module over every cloud point.
pub fn affordance_map(
    module: &GripperModule,
    params: &ParameterSet,
    cloud: &PreparedCloud,
    task: &[f64],
    first: Option<FirstAction>,
) -> Result<Vec<f64>, PerceptionError> {
    let t = Tape::no_grad();
    let x = module.cloud_input(&t, cloud)?;
    let feats = module.encode_cloud(&t, params, x)?;
    let rows: Vec<usize> = (0..cloud.len()).collect();
    let ctx = module.query_context(&t, params, &feats, &Queries { cloud, task, rows: &rows, first })?;
    Ok(t.values(module.affordance(&t, params, ctx)?))
}

/// Critic scores at every cloud point for a fixed orientation.
pub fn critic_map(
    module: &GripperModule,
    params: &ParameterSet,
    cloud: &PreparedCloud,
    task: &[f64],
    first: Option<FirstAction>,
    rot6: &[f64; 6],
) -> Result<Vec<f64>, PerceptionError> {
    let t = Tape::no_grad();
    let x = module.cloud_input(&t, cloud)?;
    let feats = module.encode_cloud(&t, params, x)?;
    let rows: Vec<usize> = (0..cloud.len()).collect();
    let ctx = module.query_context(&t, params, &feats, &Queries { cloud, task, rows: &rows, first })?;
    let r = t.constant(rows.len(), 6, rot6.iter().copied().cycle().take(6 * rows.len()).collect())?;
    Ok(t.values(module.critic(&t, params, ctx, r)?))
}

/// Indices of the `k` best scores (ties to the lower index), skipping `exclude`.
pub fn top_k(scores: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).filter(|i| Some(*i) != exclude).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Proposes an action with one module: top affordance points, sampled
/// orientations at each, best critic score. Spends exactly
/// `k_points · k_orients` critic evaluations (fewer if the cloud is smaller).
///
/// `critic_hook` may rewrite the critic scores before selection.
#[allow(clippy::too_many_arguments)]
pub fn pick_with(
    module: &GripperModule,
    params: &ParameterSet,
    cloud: &PreparedCloud,
    task: &[f64],
    first: Option<FirstAction>,
    exclude: Option<usize>,
    opts: &InferOptions,
    rng: &mut Rng,
    critic_hook: &dyn Fn(ModuleId, Vec<f64>) -> Vec<f64>,
) -> Result<ModulePick, PerceptionError> {
    let t = Tape::no_grad();
    let x = module.cloud_input(&t, cloud)?;
    let feats = module.encode_cloud(&t, params, x)?;
    let all: Vec<usize> = (0..cloud.len()).collect();
    let q = Queries { cloud, task, rows: &all, first };
    let ctx_all = module.query_context(&t, params, &feats, &q)?;
    let map = t.values(module.affordance(&t, params, ctx_all)?);
    let cand = top_k(&map, opts.k_points, exclude);
    if cand.is_empty() || map[cand[0]] < opts.floor {
        return Err(PerceptionError::NoActionablePoint);
    }
    let m = opts.k_orients;
    let latent = module.dims.latent;
    // one row per (candidate, orientation draw)
    let rows: Vec<usize> = cand.iter().flat_map(|&i| std::iter::repeat_n(i, m)).collect();
    let ctx = t.gather_rows(ctx_all, &rows)?;
    let z = t.constant(rows.len(), latent, rng.normals(rows.len() * latent))?;
    let mut sixes = t.values(module.propose_decode(&t, params, ctx, z)?);
    for r in 0..rows.len() {
        let six: [f64; 6] = sixes[6 * r..6 * r + 6].try_into().expect("six");
        let fixed = match sixd_to_matrix(&SixDRotation(six)) {
            Ok(m) => m.to_sixd().0,
            Err(_) => {
                // one redraw, then give up
                let one = t.gather_rows(ctx, &[r])?;
                let z = t.constant(1, latent, rng.normals(latent))?;
                let again: [f64; 6] = t.values(module.propose_decode(&t, params, one, z)?).try_into().expect("six");
                sixd_to_matrix(&SixDRotation(again))
                    .map_err(|_| PerceptionError::DegenerateProposal)?
                    .to_sixd()
                    .0
            }
        };
        sixes[6 * r..6 * r + 6].copy_from_slice(&fixed);
    }
    let rots = t.constant(rows.len(), 6, sixes.clone())?;
    let scores = critic_hook(module.id, t.values(module.critic(&t, params, ctx, rots)?));
    let calls = rows.len();
    let best = match opts.selection {
        Selection::Argmax => top_k(&scores, 1, None)[0],
        Selection::Softmax(temp) => {
            let hi = scores.iter().copied().fold(f64::MIN, f64::max);
            let w: Vec<f64> = scores.iter().map(|s| ((s - hi) / temp).exp()).collect();
            rng.weighted(&w)
        }
    };
    let index = rows[best];
    let six: [f64; 6] = sixes[6 * best..6 * best + 6].try_into().expect("six");
    Ok(ModulePick {
        action: GripperAction {
            point: {
                let p = cloud.points[index];
                [p.x, p.y, p.z]
            },
            rotation: SixDRotation(six),
        },
        index,
        map,
        critic: scores[best],
        critic_calls: calls,
    })
}

/// Full two-module inference with an optional critic-score hook.
pub fn infer_with(
    model: &DualAfford,
    cloud: &PreparedCloud,
    task: &TaskSpec,
    rng: &mut Rng,
    opts: &InferOptions,
    critic_hook: &dyn Fn(ModuleId, Vec<f64>) -> Vec<f64>,
) -> Result<Inference, PerceptionError> {
    let tv = task.to_vec();
    let first = pick_with(&model.m1, &model.params, cloud, &tv, None, None, opts, rng, critic_hook)?;
    let fa = FirstAction::new(cloud, &first.action);
    let second = pick_with(
        &model.m2,
        &model.params,
        cloud,
        &tv,
        Some(fa),
        Some(first.index),
        opts,
        rng,
        critic_hook,
    )?;
    Ok(Inference {
        u1: first.action,
        u2: second.action,
        idx1: first.index,
        idx2: second.index,
        a1: first.map,
        a2: second.map,
        critic1: first.critic,
        critic2: second.critic,
        critic_calls: [first.critic_calls, second.critic_calls],
    })
}

pub fn infer(
    model: &DualAfford,
    cloud: &PointCloud,
    task: &TaskSpec,
    rng: &mut Rng,
    opts: &InferOptions,
) -> Result<Inference, PerceptionError> {
    infer_with(model, &PreparedCloud::new(cloud), task, rng, opts, &|_, s| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::SceneRef;
    use crate::perception::PerceptionDims;
    use crate::sim::{builtin_library, TaskKind};

    fn scene(n: usize) -> crate::datagen::Observation {
        SceneRef {
            object_id: "box".into(),
            pose_seed: 3,
            camera_seed: 4,
        }
        .observe(&builtin_library(), n)
        .unwrap()
    }

    fn model() -> DualAfford {
        DualAfford::new(TaskKind::Push, PerceptionDims::tiny(16), 7).unwrap()
    }

    fn task() -> TaskSpec {
        TaskSpec::from_parts(TaskKind::Push, &[0.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn maps_in_unit_interval() {
        let m = model();
        let cloud = PreparedCloud::new(&scene(64).cloud);
        let tv = task().to_vec();
        let a = affordance_map(&m.m1, &m.params, &cloud, &tv, None).unwrap();
        let c = critic_map(&m.m1, &m.params, &cloud, &tv, None, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(a.len(), 64);
        assert!(a.iter().chain(&c).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn batched_rows_match_single_rows() {
        let m = model();
        let cloud = PreparedCloud::new(&scene(32).cloud);
        let tv = task().to_vec();
        let all = affordance_map(&m.m1, &m.params, &cloud, &tv, None).unwrap();
        let t = Tape::no_grad();
        let feats = m.m1.encode_cloud(&t, &m.params, m.m1.cloud_input(&t, &cloud).unwrap()).unwrap();
        for i in [0, 7, 31] {
            let q = Queries { cloud: &cloud, task: &tv, rows: &[i], first: None };
            let ctx = m.m1.query_context(&t, &m.params, &feats, &q).unwrap();
            let one = t.item(m.m1.affordance(&t, &m.params, ctx).unwrap());
            assert!((one - all[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_equivariance() {
        let m = model();
        let obs = scene(48);
        let mut perm: Vec<usize> = (0..48).collect();
        Rng::new(2).shuffle(&mut perm);
        let shuffled = PointCloud {
            points: perm.iter().map(|&i| obs.cloud.points[i]).collect(),
            faces: perm.iter().map(|&i| obs.cloud.faces[i]).collect(),
        };
        let tv = task().to_vec();
        let a = affordance_map(&m.m1, &m.params, &PreparedCloud::new(&obs.cloud), &tv, None).unwrap();
        let b = affordance_map(&m.m1, &m.params, &PreparedCloud::new(&shuffled), &tv, None).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert!((b[k] - a[i]).abs() < 1e-9);
        }
        let opts = InferOptions::default();
        let x = infer(&m, &obs.cloud, &task(), &mut Rng::new(5), &opts).unwrap();
        let y = infer(&m, &shuffled, &task(), &mut Rng::new(5), &opts).unwrap();
        for k in 0..3 {
            assert!((x.u1.point[k] - y.u1.point[k]).abs() < 1e-12);
        }
        for k in 0..6 {
            assert!((x.u1.rotation.0[k] - y.u1.rotation.0[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn critic_hook_decides_and_calls_are_linear() {
        let m = model();
        let obs = scene(64);
        let opts = InferOptions {
            k_points: 4,
            k_orients: 3,
            ..InferOptions::default()
        };
        let calls = std::cell::RefCell::new(Vec::new());
        let hook = |id: ModuleId, s: Vec<f64>| {
            calls.borrow_mut().push((id, s.len()));
            let mut out = vec![0.0; s.len()];
            out[0] = 1.0;
            out
        };
        let prepared = PreparedCloud::new(&obs.cloud);
        let inf = infer_with(&m, &prepared, &task(), &mut Rng::new(1), &opts, &hook).unwrap();
        assert_eq!(*calls.borrow(), vec![(ModuleId::First, 12), (ModuleId::Second, 12)]);
        assert_eq!(inf.critic_calls, [12, 12]);
        // orientation 0 belongs to the best affordance candidate
        assert_eq!(inf.idx1, top_k(&inf.a1, 1, None)[0]);
        assert_eq!(inf.idx2, top_k(&inf.a2, 1, Some(inf.idx1))[0]);
        assert_eq!(inf.critic1, 1.0);
    }

    #[test]
    fn top_k_ignores_monotone_maps() {
        let s = [0.2, 0.9, 0.1, 0.5, 0.7];
        let warped: Vec<f64> = s.iter().map(|v: &f64| v.powi(3) + v.exp()).collect();
        assert_eq!(top_k(&s, 3, None), top_k(&warped, 3, None));
        assert_eq!(top_k(&s, 2, Some(1)), vec![4, 3]);
    }

    #[test]
    fn second_module_needs_first_action() {
        let m = model();
        let cloud = PreparedCloud::new(&scene(16).cloud);
        let tv = task().to_vec();
        assert!(affordance_map(&m.m2, &m.params, &cloud, &tv, None).is_err());
        let fa = FirstAction { point: [0.0; 3], rot6: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0] };
        assert!(affordance_map(&m.m1, &m.params, &cloud, &tv, Some(fa)).is_err());
        assert!(affordance_map(&m.m2, &m.params, &cloud, &tv, Some(fa)).is_ok());
    }

    #[test]
    fn flat_low_map_is_not_actionable() {
        let m = model();
        let obs = scene(16);
        let opts = InferOptions {
            floor: 1.1,
            ..InferOptions::default()
        };
        let err = infer(&m, &obs.cloud, &task(), &mut Rng::new(1), &opts).unwrap_err();
        assert_eq!(err.to_string(), "no actionable point");
    }

    #[test]
    fn chosen_points_lie_on_the_object() {
        let m = model();
        let obs = scene(256);
        let inf = infer(&m, &obs.cloud, &task(), &mut Rng::new(9), &InferOptions::default()).unwrap();
        assert_ne!(inf.idx1, inf.idx2);
        for u in [inf.u1, inf.u2] {
            let q = obs.scene.camera_to_object(&u.point());
            assert!(obs.scene.object.surface_distance(&q).0.abs() < 1e-3);
            assert!(sixd_to_matrix(&u.rotation).unwrap().orthonormality_error() < 1e-9);
        }
    }
}
