//! Monte-Carlo supervision targets for the first critic and the affordance heads.

use crate::geometry::{sixd_to_matrix, SixDRotation};
use crate::perception::{CloudFeatures, FirstAction, GripperModule, PerceptionError, PreparedCloud, Queries};
use crate::tensor::{ParameterSet, Rng, Tape};

/// A module bound to one cloud, task and (for module 2) first action.
/// Every estimator reads a module only through this view, so stubs can
/// stand in for networks.
pub trait ModuleView {
    fn num_points(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn affordance_map(&self) -> Result<Vec<f64>, PerceptionError>;
    /// Orthonormal orientations decoded from one latent per row.
    fn decode(&self, rows: &[usize], z: &[f64]) -> Result<Vec<[f64; 6]>, PerceptionError>;
    fn critic(&self, rows: &[usize], rot6: &[[f64; 6]]) -> Result<Vec<f64>, PerceptionError>;
}

/// Contact points for the first-critic target.
#[derive(Clone, Copy, Debug)]
pub enum PointChoice {
    /// `n` draws proportional to the affordance map (uniform if it is flat).
    Sample(usize),
    /// Every cloud point once.
    All,
}

/// Latents decoded at each contact point.
#[derive(Clone, Copy, Debug)]
pub enum LatentChoice<'a> {
    /// `m` draws from the standard normal prior.
    Prior(usize),
    /// Every entry of a fixed codebook.
    Codebook(&'a [Vec<f64>]),
}

/// Below this range the affordance map counts as flat.
pub const FLAT_MAP: f64 = 1e-6;

fn latents_for(view: &dyn ModuleView, rows: usize, choice: LatentChoice, rng: &mut Rng) -> (usize, Vec<f64>) {
    let d = view.latent_dim();
    match choice {
        LatentChoice::Prior(m) => (m, rng.normals(rows * m * d)),
        LatentChoice::Codebook(book) => {
            let mut z = Vec::with_capacity(rows * book.len() * d);
            for _ in 0..rows {
                for code in book {
                    assert_eq!(code.len(), d, "codebook entry width");
                    z.extend_from_slice(code);
                }
            }
            (book.len(), z)
        }
    }
}

/// Mean critic score over decoded orientations at each of `points`.
pub fn target_affordance_many(
    view: &dyn ModuleView,
    points: &[usize],
    latents: LatentChoice,
    rng: &mut Rng,
) -> Result<Vec<f64>, PerceptionError> {
    let (m, z) = latents_for(view, points.len(), latents, rng);
    if m == 0 {
        return Ok(vec![0.0; points.len()]);
    }
    let rows: Vec<usize> = points.iter().flat_map(|&p| std::iter::repeat_n(p, m)).collect();
    let rots = view.decode(&rows, &z)?;
    let scores = view.critic(&rows, &rots)?;
    Ok(scores.chunks(m).map(mean).collect())
}

/// Expected success when executing proposals at `point`.
pub fn target_affordance(
    view: &dyn ModuleView,
    point: usize,
    latents: LatentChoice,
    rng: &mut Rng,
) -> Result<f64, PerceptionError> {
    Ok(target_affordance_many(view, &[point], latents, rng)?[0])
}

/// Expected collaborative success of a first action: second-module critic
/// averaged over contact points from its affordance map and decoded
/// orientations. `view` must be module 2 conditioned on that action.
pub fn target_c1(
    view: &dyn ModuleView,
    points: PointChoice,
    latents: LatentChoice,
    rng: &mut Rng,
) -> Result<f64, PerceptionError> {
    let n_all = view.num_points();
    let chosen: Vec<usize> = match points {
        PointChoice::All => (0..n_all).collect(),
        PointChoice::Sample(n) => {
            let map = view.affordance_map()?;
            let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo < FLAT_MAP {
                (0..n).map(|_| rng.below(n_all)).collect()
            } else {
                (0..n).map(|_| rng.weighted(&map)).collect()
            }
        }
    };
    if chosen.is_empty() {
        return Ok(0.0);
    }
    let per_point = target_affordance_many(view, &chosen, latents, rng)?;
    Ok(mean(&per_point))
}

/// Mean taken relative to the first value, so constant inputs come back
/// exactly.
fn mean(xs: &[f64]) -> f64 {
    let x0 = xs[0];
    x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64
}

/// Orthonormalized decoder output; degenerate rows get a tiny nudge.
pub fn orthonormal6(raw: [f64; 6]) -> [f64; 6] {
    if let Ok(m) = sixd_to_matrix(&SixDRotation(raw)) {
        return m.to_sixd().0;
    }
    let mut nudged = raw;
    nudged[0] += 1e-6;
    nudged[4] += 1e-6;
    sixd_to_matrix(&SixDRotation(nudged))
        .map(|m| m.to_sixd().0)
        .unwrap_or([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
}

/// Network-backed view; encodes the cloud once and answers queries from
/// the cached features.
pub struct NetView<'a> {
    module: &'a GripperModule,
    params: &'a ParameterSet,
    cloud: &'a PreparedCloud,
    task: &'a [f64],
    first: Option<FirstAction>,
    tape: Tape,
    feats: CloudFeatures,
}

impl<'a> NetView<'a> {
    pub fn new(
        module: &'a GripperModule,
        params: &'a ParameterSet,
        cloud: &'a PreparedCloud,
        task: &'a [f64],
        first: Option<FirstAction>,
    ) -> Result<Self, PerceptionError> {
        let tape = Tape::no_grad();
        let x = module.cloud_input(&tape, cloud)?;
        let feats = module.encode_cloud(&tape, params, x)?;
        Ok(Self {
            module,
            params,
            cloud,
            task,
            first,
            tape,
            feats,
        })
    }

    fn context(&self, rows: &[usize]) -> Result<crate::tensor::Var, PerceptionError> {
        let q = Queries {
            cloud: self.cloud,
            task: self.task,
            rows,
            first: self.first,
        };
        self.module.query_context(&self.tape, self.params, &self.feats, &q)
    }

    /// Fused point features `f_s` at `rows`, row-major.
    pub fn point_features(&self, rows: &[usize]) -> Result<Vec<f64>, PerceptionError> {
        let fs = self.module.point_features(&self.tape, self.params, &self.feats, rows)?;
        Ok(self.tape.values(fs))
    }
}

impl ModuleView for NetView<'_> {
    fn num_points(&self) -> usize {
        self.cloud.len()
    }

    fn latent_dim(&self) -> usize {
        self.module.dims.latent
    }

    fn affordance_map(&self) -> Result<Vec<f64>, PerceptionError> {
        let rows: Vec<usize> = (0..self.cloud.len()).collect();
        let ctx = self.context(&rows)?;
        Ok(self.tape.values(self.module.affordance(&self.tape, self.params, ctx)?))
    }

    fn decode(&self, rows: &[usize], z: &[f64]) -> Result<Vec<[f64; 6]>, PerceptionError> {
        let t = &self.tape;
        let ctx = self.context(rows)?;
        let z = t.constant(rows.len(), self.latent_dim(), z.to_vec())?;
        let raw = t.values(self.module.propose_decode(t, self.params, ctx, z)?);
        Ok(raw
            .chunks(6)
            .map(|c| orthonormal6(c.try_into().expect("six")))
            .collect())
    }

    fn critic(&self, rows: &[usize], rot6: &[[f64; 6]]) -> Result<Vec<f64>, PerceptionError> {
        let t = &self.tape;
        let ctx = self.context(rows)?;
        let r = t.constant(rows.len(), 6, rot6.iter().flatten().copied().collect())?;
        Ok(t.values(self.module.critic(t, self.params, ctx, r)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Critic value depends on the row, orientation on the latent.
    struct Stub {
        map: Vec<f64>,
        per_point: Vec<f64>,
        latent_weight: f64,
    }

    impl ModuleView for Stub {
        fn num_points(&self) -> usize {
            self.map.len()
        }
        fn latent_dim(&self) -> usize {
            2
        }
        fn affordance_map(&self) -> Result<Vec<f64>, PerceptionError> {
            Ok(self.map.clone())
        }
        fn decode(&self, rows: &[usize], z: &[f64]) -> Result<Vec<[f64; 6]>, PerceptionError> {
            Ok((0..rows.len()).map(|i| [z[2 * i], z[2 * i + 1], 0.0, 0.0, 0.0, 0.0]).collect())
        }
        fn critic(&self, rows: &[usize], rot6: &[[f64; 6]]) -> Result<Vec<f64>, PerceptionError> {
            Ok(rows
                .iter()
                .zip(rot6)
                .map(|(&r, o)| self.per_point[r] + self.latent_weight * o[0])
                .collect())
        }
    }

    fn constant(v: f64, n: usize) -> Stub {
        Stub {
            map: (0..n).map(|i| i as f64 / n as f64).collect(),
            per_point: vec![v; n],
            latent_weight: 0.0,
        }
    }

    #[test]
    fn constant_critic_gives_constant_targets() {
        let s = constant(0.7, 20);
        let mut rng = Rng::new(1);
        for (n, m) in [(1, 1), (10, 5), (3, 17)] {
            let c = target_c1(&s, PointChoice::Sample(n), LatentChoice::Prior(m), &mut rng).unwrap();
            assert_eq!(c, 0.7);
        }
        let s = constant(0.4, 20);
        assert_eq!(target_affordance(&s, 3, LatentChoice::Prior(9), &mut rng).unwrap(), 0.4);
    }

    #[test]
    fn enumeration_matches_plain_mean() {
        let per_point: Vec<f64> = (0..13).map(|i| ((i * 7) % 13) as f64 / 13.0).collect();
        let s = Stub {
            map: vec![0.5; 13],
            per_point: per_point.clone(),
            latent_weight: 0.0,
        };
        let c = target_c1(&s, PointChoice::All, LatentChoice::Prior(1), &mut Rng::new(2)).unwrap();
        let mean = per_point.iter().sum::<f64>() / 13.0;
        assert!((c - mean).abs() < 1e-12);
    }

    #[test]
    fn per_latent_values_average() {
        let s = Stub {
            map: vec![0.1; 4],
            per_point: vec![0.0; 4],
            latent_weight: 1.0,
        };
        let book = vec![vec![0.2, 0.0], vec![0.6, 0.0]];
        let a = target_affordance(&s, 1, LatentChoice::Codebook(&book), &mut Rng::new(3)).unwrap();
        assert!((a - 0.4).abs() < 1e-15);
    }

    #[test]
    fn flat_map_samples_uniformly() {
        // with a peaked map every draw lands on the peak
        let mut s = constant(0.0, 5);
        s.per_point = vec![0.0, 0.0, 1.0, 0.0, 0.0];
        s.map = vec![0.0, 0.0, 1.0, 0.0, 0.0];
        let c = target_c1(&s, PointChoice::Sample(50), LatentChoice::Prior(1), &mut Rng::new(4)).unwrap();
        assert_eq!(c, 1.0);
        s.map = vec![0.3; 5];
        let c = target_c1(&s, PointChoice::Sample(200), LatentChoice::Prior(1), &mut Rng::new(4)).unwrap();
        assert!(c > 0.1 && c < 0.3, "{c}");
    }

    #[test]
    fn net_view_targets_in_unit_interval_and_repeatable() {
        use crate::perception::{DualAfford, ModuleId, PerceptionDims};
        use crate::sim::TaskKind;
        let model = DualAfford::new(TaskKind::Push, PerceptionDims::tiny(8), 5).unwrap();
        let mut rng = Rng::new(9);
        let pts: Vec<f64> = rng.normals(3 * 30);
        let cloud = crate::sim::PointCloud {
            points: pts.chunks(3).map(|c| crate::geometry::Vec3::new(c[0], c[1], c[2])).collect(),
            faces: vec![0; 30],
        };
        let cloud = PreparedCloud::new(&cloud);
        let task = [1.0, 0.0, 0.0];
        let first = FirstAction {
            point: [0.1, 0.2, 0.0],
            rot6: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        };
        let view = NetView::new(model.module(ModuleId::Second), &model.params, &cloud, &task, Some(first)).unwrap();
        let a = target_c1(&view, PointChoice::Sample(10), LatentChoice::Prior(5), &mut Rng::new(1)).unwrap();
        let b = target_c1(&view, PointChoice::Sample(10), LatentChoice::Prior(5), &mut Rng::new(1)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!((0.0..=1.0).contains(&a));
    }
}
