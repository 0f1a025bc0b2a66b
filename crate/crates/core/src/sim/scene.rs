//! Scene construction and partial scans.

use std::io::{Read, Write};

use super::object::ObjectModel;
use super::SimError;
use crate::geometry::{Pose, Vec3};
use crate::tensor::Rng;

const POSE_STREAM: u64 = 101;
const CAMERA_STREAM: u64 = 102;
const SCAN_STREAM: u64 = 103;
/// Rays per side of the scan grid.
pub const SCAN_GRID: usize = 96;

/// Object on the ground plus the camera-base frame (z up, x forward).
#[derive(Clone, Debug, PartialEq)]
pub struct SceneState {
    pub object: ObjectModel,
    /// Object frame in the world; always a yaw about z with the base at z = 0.
    pub pose: Pose,
    /// Camera-base frame in the world; origin at the camera.
    pub camera: Pose,
    /// World point the optical axis passes through.
    pub look_at: Vec3,
}

impl SceneState {
    /// Places the camera at `distance` from the object centre with the given
    /// azimuth and elevation (radians).
    pub fn with_camera(
        object: ObjectModel,
        pose: Pose,
        azimuth: f64,
        elevation: f64,
        distance: f64,
    ) -> Self {
        let look_at = pose.position + Vec3::new(0.0, 0.0, object.height / 2.0);
        let offset = Vec3::new(
            elevation.cos() * azimuth.cos(),
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
        ) * distance;
        let camera = Pose::from_yaw(look_at + offset, azimuth + std::f64::consts::PI);
        Self {
            object,
            pose,
            camera,
            look_at,
        }
    }

    /// Deterministic scene from a pose seed (object yaw and offset) and a
    /// camera seed (viewpoint).
    pub fn from_seeds(object: ObjectModel, pose_seed: u64, camera_seed: u64) -> Self {
        let mut pr = Rng::stream(pose_seed, POSE_STREAM);
        let yaw = pr.range(-std::f64::consts::PI, std::f64::consts::PI);
        let pos = Vec3::new(pr.range(-0.2, 0.2), pr.range(-0.2, 0.2), 0.0);
        let pose = Pose::from_yaw(pos, yaw);
        let mut cr = Rng::stream(camera_seed, CAMERA_STREAM);
        let azimuth = cr.range(-std::f64::consts::PI, std::f64::consts::PI);
        let elevation = cr.range(25f64.to_radians(), 50f64.to_radians());
        let distance = cr.range(3.0, 3.6).max(2.5 * object.bounding_radius());
        Self::with_camera(object, pose, azimuth, elevation, distance)
    }

    /// Generator for the scan jitter belonging to a camera seed.
    pub fn scan_rng(camera_seed: u64) -> Rng {
        Rng::stream(camera_seed, SCAN_STREAM)
    }

    /// Camera-frame point to object frame.
    pub fn camera_to_object(&self, p: &Vec3) -> Vec3 {
        self.pose
            .inverse_transform_point(&self.camera.transform_point(p))
    }

    pub fn object_to_camera(&self, p: &Vec3) -> Vec3 {
        self.camera
            .inverse_transform_point(&self.pose.transform_point(p))
    }

    /// Object pose expressed in the camera-base frame.
    pub fn object_in_camera(&self) -> Pose {
        self.camera.inverse().compose(&self.pose)
    }
}

/// Partial scan in the camera-base frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// Object face each point was sampled from.
    pub faces: Vec<usize>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / self.points.len().max(1) as f64
    }

    /// Row-major `N × 3` values.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    /// Sidecar binary: `PCB1`, u32 N, N×3 little-endian f32.
    pub fn write_pcb1<W: Write>(&self, mut w: W) -> Result<(), SimError> {
        w.write_all(b"PCB1")?;
        w.write_all(&(self.points.len() as u32).to_le_bytes())?;
        for p in &self.points {
            for c in [p.x, p.y, p.z] {
                w.write_all(&(c as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a sidecar file; face indices are not stored and come back as 0.
    pub fn read_pcb1<R: Read>(mut r: R) -> Result<PointCloud, SimError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"PCB1" {
            return Err(SimError::PointCloudFormat("bad magic".into()));
        }
        let mut n = [0u8; 4];
        r.read_exact(&mut n)?;
        let n = u32::from_le_bytes(n) as usize;
        let mut points = Vec::with_capacity(n);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            let mut c = [0.0; 3];
            for v in &mut c {
                r.read_exact(&mut buf)?;
                *v = f32::from_le_bytes(buf) as f64;
            }
            points.push(Vec3::from(c));
        }
        Ok(PointCloud {
            faces: vec![0; n],
            points,
        })
    }
}

/// Ray against the convex object (object frame); entry distance and face.
pub(crate) fn ray_hit(planes: &[super::object::Plane], o: &Vec3, d: &Vec3) -> Option<(f64, usize)> {
    let (mut t0, mut t1, mut face) = (0.0f64, f64::INFINITY, usize::MAX);
    for (i, pl) in planes.iter().enumerate() {
        let denom = pl.normal.dot(d);
        let dist = pl.offset - pl.normal.dot(o);
        if denom.abs() < 1e-15 {
            if dist < 0.0 {
                return None;
            }
            continue;
        }
        let t = dist / denom;
        if denom < 0.0 {
            if t > t0 {
                t0 = t;
                face = i;
            }
        } else if t < t1 {
            t1 = t;
        }
    }
    (face != usize::MAX && t0 <= t1).then_some((t0, face))
}

/// Ray-casts a jittered grid from the camera and farthest-point subsamples
/// the first hits to exactly `n_points`.
pub fn render_partial_scan(
    scene: &SceneState,
    n_points: usize,
    rng: &mut Rng,
) -> Result<PointCloud, SimError> {
    let obj = &scene.object;
    let planes = obj.planes();
    let eye_world = scene.camera.position;
    let eye = scene.pose.inverse_transform_point(&eye_world);
    if obj.surface_distance(&eye).0 <= 0.0 {
        return Err(SimError::CameraInside);
    }
    let radius = obj.bounding_radius();
    let axis_world = scene.look_at - eye_world;
    let dist = axis_world.norm();
    if dist <= radius {
        return Err(SimError::CameraInside);
    }
    let w = axis_world / dist;
    let right = w.cross(&Vec3::z()).normalize();
    let up = right.cross(&w);
    let half = 1.05 * radius / (dist * dist - radius * radius).sqrt();

    let grid = SCAN_GRID;
    let mut hits: Vec<(Vec3, usize)> = Vec::new();
    for i in 0..grid {
        for j in 0..grid {
            let su = ((i as f64 + rng.uniform()) / grid as f64) * 2.0 - 1.0;
            let sv = ((j as f64 + rng.uniform()) / grid as f64) * 2.0 - 1.0;
            let dir_world = (w + (right * su + up * sv) * half).normalize();
            let dir = scene.pose.inverse_transform_vector(&dir_world);
            if let Some((t, face)) = ray_hit(&planes, &eye, &dir) {
                hits.push((eye + dir * t, face));
            }
        }
    }
    if hits.len() < n_points {
        return Err(SimError::NotVisible {
            hits: hits.len(),
            needed: n_points,
        });
    }
    let chosen = farthest_point_sample(&hits.iter().map(|h| h.0).collect::<Vec<_>>(), n_points);
    let points = chosen
        .iter()
        .map(|&k| scene.object_to_camera(&hits[k].0))
        .collect();
    let faces = chosen.iter().map(|&k| hits[k].1).collect();
    Ok(PointCloud { points, faces })
}

/// Greedy farthest-point sampling starting from index 0.
pub fn farthest_point_sample(points: &[Vec3], k: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(k);
    let mut best = vec![f64::INFINITY; points.len()];
    let mut current = 0;
    for _ in 0..k.min(points.len()) {
        chosen.push(current);
        let c = points[current];
        let mut far = (f64::MIN, 0);
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < best[i] {
                best[i] = d;
            }
            if best[i] > far.0 {
                far = (best[i], i);
            }
        }
        current = far.1;
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::object::builtin;

    fn cube_scene() -> SceneState {
        let cube = builtin("box").unwrap();
        SceneState::with_camera(cube, Pose::identity(), 0.0, 0.5, 3.0)
    }

    #[test]
    fn back_face_occluded() {
        let scene = cube_scene();
        let cloud = render_partial_scan(&scene, 512, &mut Rng::new(3)).unwrap();
        assert_eq!(cloud.len(), 512);
        for p in &cloud.points {
            let q = scene.camera_to_object(p);
            assert!(q.x > -0.5 + 1e-6, "{q:?}");
        }
    }

    #[test]
    fn points_on_surface_and_deterministic() {
        for id in ["box", "bucket", "wedge", "display"] {
            let scene = SceneState::from_seeds(builtin(id).unwrap(), 4, 9);
            let a = render_partial_scan(&scene, 512, &mut SceneState::scan_rng(9)).unwrap();
            let b = render_partial_scan(&scene, 512, &mut SceneState::scan_rng(9)).unwrap();
            assert_eq!(a, b);
            for p in &a.points {
                let q = scene.camera_to_object(p);
                assert!(scene.object.surface_distance(&q).0.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn camera_frame_is_upright_and_forward() {
        let scene = cube_scene();
        // object centre lies ahead (+x) and below the camera
        let c = scene.camera.inverse_transform_point(&scene.look_at);
        assert!(c.x > 0.0 && c.y.abs() < 1e-9 && c.z < 0.0);
    }

    #[test]
    fn too_many_points_is_not_visible() {
        let scene = cube_scene();
        let err = render_partial_scan(&scene, 100_000, &mut Rng::new(1)).unwrap_err();
        assert!(err.to_string().contains("object not visible"));
    }

    #[test]
    fn pcb1_round_trip() {
        let scene = cube_scene();
        let cloud = render_partial_scan(&scene, 64, &mut Rng::new(2)).unwrap();
        let mut buf = Vec::new();
        cloud.write_pcb1(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PCB1");
        assert_eq!(buf.len(), 8 + 64 * 12);
        let back = PointCloud::read_pcb1(&buf[..]).unwrap();
        for (a, b) in cloud.points.iter().zip(&back.points) {
            assert!((a - b).norm() < 1e-6);
        }
    }
}
