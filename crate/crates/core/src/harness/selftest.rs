//! Built-in checks run by `selftest`: gradients of every loss on tiny
//! networks, and rotation round trips.

use std::f64::consts::PI;

use crate::geometry::{geodesic_distance, random_rotation, sixd_to_matrix, RotationMatrix, Vec3};
use crate::perception::rot::reparameterize;
use crate::perception::{DualAfford, FirstAction, GripperModule, ModuleId, PerceptionDims, PreparedCloud, Queries};
use crate::sim::{PointCloud, TaskKind};
use crate::tensor::{grad_check, GradCheckReport, ParameterSet, Result, Rng, Tape, Var};
use crate::training::losses;

/// Width of every layer in the gradient suite.
pub const TINY_WIDTH: usize = 8;
const CLOUD_POINTS: usize = 12;
const ROWS: [usize; 3] = [0, 5, 9];

/// One finite-difference check.
#[derive(Clone, Debug)]
pub struct GradLine {
    pub name: String,
    pub report: GradCheckReport,
}

struct Fixture {
    model: DualAfford,
    cloud: PreparedCloud,
    task: Vec<f64>,
    first: FirstAction,
}

fn fixture(seed: u64) -> Result<Fixture> {
    let model = DualAfford::new(TaskKind::Push, PerceptionDims::tiny(TINY_WIDTH), seed)
        .map_err(to_tensor)?;
    let mut rng = Rng::new(seed ^ 0x5eed);
    let points: Vec<Vec3> = (0..CLOUD_POINTS)
        .map(|_| Vec3::new(rng.range(-0.5, 0.5), rng.range(-0.5, 0.5), rng.range(0.0, 1.0)))
        .collect();
    let cloud = PreparedCloud::new(&PointCloud {
        faces: vec![0; points.len()],
        points,
    });
    let first = FirstAction {
        point: cloud.centre(&cloud.points[2]),
        rot6: random_rotation(&mut rng).to_sixd().0,
    };
    Ok(Fixture {
        model,
        cloud,
        task: vec![0.6, -0.8, 0.0],
        first,
    })
}

fn context(f: &Fixture, m: &GripperModule, t: &Tape, p: &ParameterSet) -> Result<Var> {
    let x = m.cloud_input(t, &f.cloud).map_err(to_tensor)?;
    let feats = m.encode_cloud(t, p, x)?;
    let first = (m.id == ModuleId::Second).then_some(f.first);
    m.query_context(t, p, &feats, &Queries {
        cloud: &f.cloud,
        task: &f.task,
        rows: &ROWS,
        first,
    })
    .map_err(to_tensor)
}

fn to_tensor(e: crate::perception::PerceptionError) -> crate::tensor::TensorError {
    match e {
        crate::perception::PerceptionError::Tensor(t) => t,
        other => crate::tensor::TensorError::Io(std::io::Error::other(other.to_string())),
    }
}

/// Fixed orientation rows, one per query.
fn rotations(seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..ROWS.len()).flat_map(|_| random_rotation(&mut rng).to_sixd().0).collect()
}

/// Finite-difference checks of the critic cross-entropy, the critic and
/// affordance L1 losses and the proposal loss, through both full modules.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradLine>> {
    let f = fixture(seed)?;
    let mut out = Vec::new();
    let rots = rotations(seed + 1);
    let mut rng = Rng::new(seed + 2);
    let eps = rng.normals(ROWS.len() * TINY_WIDTH);
    for id in [ModuleId::Second, ModuleId::First] {
        let m = f.model.module(id).clone();
        let params = f.model.params.subset(&format!("{}.", id.prefix()));
        let tag = id.prefix();
        let rot_var = |t: &Tape| t.constant(ROWS.len(), 6, rots.clone());

        let report = grad_check(&params, |t, p| {
            let ctx = context(&f, &m, t, p)?;
            let s = m.critic(t, p, ctx, rot_var(t)?)?;
            losses::bce(t, s, &[1.0, 0.0, 1.0])
        })?;
        out.push(GradLine {
            name: format!("{tag} critic cross-entropy"),
            report,
        });

        let report = grad_check(&params, |t, p| {
            let ctx = context(&f, &m, t, p)?;
            let s = m.critic(t, p, ctx, rot_var(t)?)?;
            losses::l1(t, s, &[0.91, 0.13, 0.47])
        })?;
        out.push(GradLine {
            name: format!("{tag} critic L1"),
            report,
        });

        let report = grad_check(&params, |t, p| {
            let ctx = context(&f, &m, t, p)?;
            let (mu, logvar) = m.propose_encode(t, p, ctx, rot_var(t)?)?;
            let z = reparameterize(t, mu, logvar, eps.clone())?;
            let dec = m.propose_decode(t, p, ctx, z)?;
            losses::proposal(t, dec, &rots, mu, logvar, 1.0)
        })?;
        out.push(GradLine {
            name: format!("{tag} proposal"),
            report,
        });

        let report = grad_check(&params, |t, p| {
            let ctx = context(&f, &m, t, p)?;
            let a = m.affordance(t, p, ctx)?;
            losses::l1(t, a, &[0.88, 0.21, 0.53])
        })?;
        out.push(GradLine {
            name: format!("{tag} affordance L1"),
            report,
        });
    }
    Ok(out)
}

/// Worst errors over the rotation checks.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RotationReport {
    pub samples: usize,
    /// `max |RᵀR − I|` after decoding.
    pub orthonormality: f64,
    pub determinant: f64,
    /// Matrix → 6D → matrix entry error.
    pub round_trip: f64,
    /// `|d(a, b) − d(b, a)|`.
    pub symmetry: f64,
    /// Geodesic of axis-angle rotations against the known angle.
    pub known_angle: f64,
}

impl RotationReport {
    pub fn worst(&self) -> f64 {
        [
            self.orthonormality,
            self.determinant,
            self.round_trip,
            self.symmetry,
            self.known_angle,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn rotation_suite(samples: usize, seed: u64) -> RotationReport {
    let mut rng = Rng::new(seed);
    let mut r = RotationReport {
        samples,
        ..Default::default()
    };
    for _ in 0..samples {
        let a = random_rotation(&mut rng);
        let back = sixd_to_matrix(&a.to_sixd()).expect("orthonormal columns decode");
        r.orthonormality = r.orthonormality.max(back.orthonormality_error());
        r.determinant = r.determinant.max((back.matrix().determinant() - 1.0).abs());
        r.round_trip = r.round_trip.max((back.matrix() - a.matrix()).abs().max());
        let b = random_rotation(&mut rng);
        r.symmetry = r.symmetry.max((geodesic_distance(&a, &b) - geodesic_distance(&b, &a)).abs());
    }
    for (axis, angle) in [
        (Vec3::z(), PI / 2.0),
        (Vec3::x(), PI / 3.0),
        (Vec3::new(1.0, 1.0, 0.0), PI / 4.0),
        (Vec3::y(), 0.0),
        (Vec3::z(), PI),
    ] {
        let rot = RotationMatrix::from_axis_angle(&axis, angle);
        let d = geodesic_distance(&RotationMatrix::identity(), &rot);
        r.known_angle = r.known_angle.max((d - angle).abs());
    }
    r
}
