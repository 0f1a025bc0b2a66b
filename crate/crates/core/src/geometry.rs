//! Rotations, frames, surface normals and orientation sampling.
//!
//! Gripper convention used everywhere: the third column of a gripper
//! rotation is its approach axis (the direction the gripper travels toward
//! the contact), and the first two columns span the finger closing plane.

use nalgebra::{Matrix3, SymmetricEigen, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::tensor::Rng;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Orthonormality and determinant tolerance for [`RotationMatrix`].
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate 6D rotation")]
    DegenerateSixD,
    #[error("matrix is not a rotation (orthonormality error {ortho:e}, det {det})")]
    NotRotation { ortho: f64, det: f64 },
    #[error("vector is not unit length (norm {0})")]
    NotUnit(f64),
}

/// Proper rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix(Mat3);

impl RotationMatrix {
    pub fn new(m: Mat3) -> Result<Self, GeometryError> {
        let ortho = (m.transpose() * m - Mat3::identity()).abs().max();
        let det = m.determinant();
        if ortho > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::NotRotation { ortho, det });
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Right-handed rotation of `angle` radians about `axis`.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Self(*nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix())
    }

    /// Builds a rotation from three columns, without checking them.
    pub(crate) fn from_columns_unchecked(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Self(Mat3::from_columns(&[c0, c1, c2]))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn column(&self, i: usize) -> Vec3 {
        self.0.column(i).into_owned()
    }

    /// Approach axis of a gripper with this orientation.
    pub fn approach(&self) -> Vec3 {
        self.column(2)
    }

    pub fn to_sixd(&self) -> SixDRotation {
        let a = self.column(0);
        let b = self.column(1);
        SixDRotation([a.x, a.y, a.z, b.x, b.y, b.z])
    }

    pub fn mul(&self, other: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * other.0)
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix(self.0.transpose())
    }

    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).abs().max()
    }
}

/// First two columns of a rotation matrix, stacked.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SixDRotation(pub [f64; 6]);

impl SixDRotation {
    pub fn first(&self) -> Vec3 {
        Vec3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn second(&self) -> Vec3 {
        Vec3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn to_matrix(&self) -> Result<RotationMatrix, GeometryError> {
        sixd_to_matrix(self)
    }
}

/// Gram-Schmidt decoding of a 6D rotation.
pub fn sixd_to_matrix(v: &SixDRotation) -> Result<RotationMatrix, GeometryError> {
    let a = v.first();
    let b = v.second();
    let na = a.norm();
    if !(na > ROTATION_TOL) {
        return Err(GeometryError::DegenerateSixD);
    }
    let c0 = a / na;
    let rejected = b - c0 * b.dot(&c0);
    let nr = rejected.norm();
    if !(nr > ROTATION_TOL) {
        return Err(GeometryError::DegenerateSixD);
    }
    let c1 = rejected / nr;
    let c2 = c0.cross(&c1);
    Ok(RotationMatrix::from_columns_unchecked(c0, c1, c2))
}

pub fn matrix_to_sixd(m: &Mat3) -> Result<SixDRotation, GeometryError> {
    Ok(RotationMatrix::new(*m)?.to_sixd())
}

/// Angle of the relative rotation `R1ᵀR2`, in `[0, π]`.
pub fn geodesic_distance(r1: &RotationMatrix, r2: &RotationMatrix) -> f64 {
    let tr = (r1.0.transpose() * r2.0).trace();
    ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Unit-length direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitVector3(Vec3);

impl UnitVector3 {
    pub fn new(v: Vec3) -> Result<Self, GeometryError> {
        let n = v.norm();
        if (n - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::NotUnit(n));
        }
        Ok(Self(v))
    }

    /// Normalizes `v`; `None` for (near) zero vectors.
    pub fn normalize(v: Vec3) -> Option<Self> {
        let n = v.norm();
        (n > 1e-12 && n.is_finite()).then(|| Self(v / n))
    }

    pub fn x() -> Self {
        Self(Vec3::x())
    }

    pub fn z() -> Self {
        Self(Vec3::z())
    }

    pub fn as_vec(&self) -> &Vec3 {
        &self.0
    }

    pub fn into_inner(self) -> Vec3 {
        self.0
    }
}

/// Angle between two (not necessarily unit) vectors, radians.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return std::f64::consts::PI;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0).acos()
}

/// Rigid pose: position plus unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn from_yaw(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            orientation: UnitQuaternion::from_axis_angle(&Vec3::z_axis(), yaw),
        }
    }

    pub fn yaw(&self) -> f64 {
        self.orientation.euler_angles().2
    }

    /// Maps a point expressed in this pose's frame to the parent frame.
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.orientation * p + self.position
    }

    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.orientation.inverse() * (p - self.position)
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.orientation * v
    }

    pub fn inverse_transform_vector(&self, v: &Vec3) -> Vec3 {
        self.orientation.inverse() * v
    }

    pub fn rotation(&self) -> RotationMatrix {
        RotationMatrix(*self.orientation.to_rotation_matrix().matrix())
    }

    /// Composition `self ∘ other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.transform_point(&other.position),
            orientation: self.orientation * other.orientation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose {
            position: -(inv * self.position),
            orientation: inv,
        }
    }
}

/// Surface normal estimate; `fallback` marks rank-deficient neighborhoods.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalEstimate {
    pub normal: UnitVector3,
    pub fallback: bool,
}

/// Default neighborhood size for normal estimation.
pub const NORMAL_K: usize = 16;

/// k-NN plane fit at `points[index]`, oriented toward `viewpoint`.
///
/// Degenerate (collinear or coincident) neighborhoods fall back to the
/// direction from the point to the viewpoint.
pub fn estimate_normal(points: &[Vec3], index: usize, k: usize, viewpoint: &Vec3) -> NormalEstimate {
    let p = points[index];
    let toward = viewpoint - p;
    let fallback = || NormalEstimate {
        normal: UnitVector3::normalize(toward).unwrap_or_else(UnitVector3::z),
        fallback: true,
    };
    let k = k.min(points.len());
    if k < 3 {
        return fallback();
    }
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, q)| ((q - p).norm_squared(), i))
        .collect();
    order.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let nbrs: Vec<Vec3> = order[..k].iter().map(|&(_, i)| points[i]).collect();
    let mean = nbrs.iter().sum::<Vec3>() / k as f64;
    let mut cov = Mat3::zeros();
    for q in &nbrs {
        let d = q - mean;
        cov += d * d.transpose();
    }
    cov /= k as f64;
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l1, l2) = (eig.eigenvalues[idx[1]], eig.eigenvalues[idx[2]]);
    // plane fit needs two well-spread directions
    if !(l2 > 1e-18) || l1 < 1e-6 * l2 {
        return fallback();
    }
    let mut n: Vec3 = eig.eigenvectors.column(idx[0]).into_owned();
    if n.dot(&toward) < 0.0 {
        n = -n;
    }
    match UnitVector3::normalize(n) {
        Some(normal) => NormalEstimate {
            normal,
            fallback: false,
        },
        None => fallback(),
    }
}

/// Any unit vector perpendicular to `v`.
pub fn perpendicular(v: &Vec3) -> Vec3 {
    let helper = if v.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    v.cross(&helper).normalize()
}

/// Orientation with approach axis `approach` and roll `roll` about it.
pub fn orientation_from_approach(approach: &Vec3, roll: f64) -> RotationMatrix {
    let a = approach.normalize();
    let x0 = perpendicular(&a);
    let x = x0 * roll.cos() + a.cross(&x0) * roll.sin();
    let y = a.cross(&x);
    RotationMatrix::from_columns_unchecked(x, y, a)
}

/// Gripper orientation whose approach axis is uniform over the hemisphere
/// facing into the surface (`a·normal ≤ 0`), with uniform roll.
pub fn sample_hemisphere_orientation(normal: &UnitVector3, rng: &mut Rng) -> RotationMatrix {
    let n = normal.as_vec();
    let a = loop {
        let v = Vec3::new(rng.normal(), rng.normal(), rng.normal());
        let len = v.norm();
        if len > 1e-9 {
            let mut a = v / len;
            if a.dot(n) > 0.0 {
                a = -a;
            }
            break a;
        }
    };
    let roll = rng.range(0.0, 2.0 * std::f64::consts::PI);
    orientation_from_approach(&a, roll)
}

/// Uniformly random rotation (via a normalized Gaussian quaternion).
pub fn random_rotation(rng: &mut Rng) -> RotationMatrix {
    loop {
        let q = nalgebra::Quaternion::new(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        if q.norm() > 1e-9 {
            let u = UnitQuaternion::from_quaternion(q);
            return RotationMatrix(*u.to_rotation_matrix().matrix());
        }
    }
}

/// Contact point plus gripper orientation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GripperAction {
    pub point: [f64; 3],
    pub rotation: SixDRotation,
}

impl GripperAction {
    pub fn new(point: Vec3, rotation: &RotationMatrix) -> Self {
        Self {
            point: [point.x, point.y, point.z],
            rotation: rotation.to_sixd(),
        }
    }

    pub fn point(&self) -> Vec3 {
        Vec3::from(self.point)
    }

    pub fn matrix(&self) -> Result<RotationMatrix, GeometryError> {
        sixd_to_matrix(&self.rotation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn identity_sixd() {
        let r = sixd_to_matrix(&SixDRotation([1., 0., 0., 0., 1., 0.])).unwrap();
        assert_eq!(*r.matrix(), Mat3::identity());
        assert_eq!(
            matrix_to_sixd(&Mat3::identity()).unwrap(),
            SixDRotation([1., 0., 0., 0., 1., 0.])
        );
    }

    #[test]
    fn gram_schmidt_by_hand() {
        let r = sixd_to_matrix(&SixDRotation([2., 0., 0., 1., 1., 0.])).unwrap();
        assert_eq!(r.column(0), Vec3::x());
        assert_eq!(r.column(1), Vec3::y());
        assert_eq!(r.column(2), Vec3::z());
    }

    #[test]
    fn quarter_turn_about_z() {
        let m = Mat3::new(0., -1., 0., 1., 0., 0., 0., 0., 1.);
        let s = matrix_to_sixd(&m).unwrap();
        assert_eq!(s, SixDRotation([0., 1., 0., -1., 0., 0.]));
    }

    #[test]
    fn degenerate_inputs() {
        let zero = SixDRotation([0., 0., 0., 0., 1., 0.]);
        assert_eq!(sixd_to_matrix(&zero), Err(GeometryError::DegenerateSixD));
        let parallel = SixDRotation([1., 0., 0., 3., 0., 0.]);
        assert_eq!(
            sixd_to_matrix(&parallel).unwrap_err().to_string(),
            "degenerate 6D rotation"
        );
        assert!(matrix_to_sixd(&(Mat3::identity() * 2.0)).is_err());
        let reflection = Mat3::new(1., 0., 0., 0., 1., 0., 0., 0., -1.);
        assert!(matrix_to_sixd(&reflection).is_err());
    }

    #[test]
    fn geodesic_known_values() {
        let i = RotationMatrix::identity();
        assert_eq!(geodesic_distance(&i, &i), 0.0);
        let rz = RotationMatrix::from_axis_angle(&Vec3::z(), PI);
        assert!((geodesic_distance(&i, &rz) - PI).abs() < 1e-9);
    }

    #[test]
    fn planar_patch_normal() {
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                pts.push(Vec3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
        }
        let est = estimate_normal(&pts, 14, 16, &Vec3::new(0.2, 0.2, 3.0));
        assert!(!est.fallback);
        assert!((est.normal.as_vec() - Vec3::z()).norm() < 1e-9);
    }

    #[test]
    fn collinear_falls_back() {
        let pts: Vec<Vec3> = (0..20).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let est = estimate_normal(&pts, 5, 16, &Vec3::new(5.0, 0.0, 2.0));
        assert!(est.fallback);
        assert!((est.normal.as_vec() - Vec3::z()).norm() < 1e-12);
    }

    #[test]
    fn hemisphere_seeded_determinism() {
        let n = UnitVector3::z();
        let a: Vec<_> = {
            let mut r = Rng::new(9);
            (0..5).map(|_| sample_hemisphere_orientation(&n, &mut r)).collect()
        };
        let mut r = Rng::new(9);
        let b: Vec<_> = (0..5).map(|_| sample_hemisphere_orientation(&n, &mut r)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn orientation_from_approach_is_rotation() {
        let r = orientation_from_approach(&Vec3::new(0.3, -0.2, -0.9), 1.1);
        assert!(RotationMatrix::new(*r.matrix()).is_ok());
        assert!((r.approach() - Vec3::new(0.3, -0.2, -0.9).normalize()).norm() < 1e-12);
    }

    #[test]
    fn pose_round_trip() {
        let pose = Pose::from_yaw(Vec3::new(1.0, 2.0, 0.0), 0.7);
        let p = Vec3::new(0.3, -0.4, 0.5);
        let q = pose.inverse_transform_point(&pose.transform_point(&p));
        assert!((p - q).norm() < 1e-12);
        let composed = pose.compose(&pose.inverse());
        assert!(composed.position.norm() < 1e-12);
        assert!((pose.yaw() - 0.7).abs() < 1e-12);
    }
}
