//! Reference policies: random contacts, and hand rules over the true pose.

use std::f64::consts::FRAC_PI_2;

use crate::datagen::random_actions;
use crate::geometry::{orientation_from_approach, GripperAction, Vec3};
use crate::sim::{PointCloud, SceneState, TaskSpec, TOP_FACE};
use crate::tensor::Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HeuristicError {
    #[error("object `{object}` has no {feature} for the {task} heuristic")]
    MissingFeature {
        object: String,
        feature: &'static str,
        task: &'static str,
    },
}

/// Random proposal: two distinct scan points, hemisphere orientations.
/// Sees only the scan.
pub fn baseline_random(cloud: &PointCloud, rng: &mut Rng) -> (GripperAction, GripperAction) {
    random_actions(cloud, rng)
}

struct Frame<'a> {
    scene: &'a SceneState,
}

impl Frame<'_> {
    fn to_object(&self, v: &Vec3) -> Vec3 {
        let s = self.scene;
        s.pose.inverse_transform_vector(&s.camera.transform_vector(v))
    }

    fn to_camera(&self, v: &Vec3) -> Vec3 {
        let s = self.scene;
        s.camera.inverse_transform_vector(&s.pose.transform_vector(v))
    }

    /// Object-frame horizontal unit vector of a camera-frame direction.
    fn horizontal(&self, v: &Vec3) -> Vec3 {
        let o = self.to_object(v);
        Vec3::new(o.x, o.y, 0.0).normalize()
    }

    fn action(&self, point: Vec3, approach: &Vec3) -> GripperAction {
        let p = self.scene.object_to_camera(&point);
        GripperAction::new(p, &orientation_from_approach(&self.to_camera(approach), 0.0))
    }
}

/// Distances from the vertical axis to the surface along `+side` and
/// `-side` at height `z`.
fn chord(scene: &SceneState, side: &Vec3, z: f64) -> Option<(f64, f64)> {
    let far = 10.0 * scene.object.bounding_radius();
    let lift = Vec3::new(0.0, 0.0, z);
    let hi = scene.object.ray_entry(&(lift + side * far), &-side)?.0;
    let lo = scene.object.ray_entry(&(lift - side * far), side)?.0;
    Some(((hi - lift).dot(side), -(lo - lift).dot(side)))
}

/// Side-face point hit when moving along `dir` at lateral offset `lat`
/// (along `side`) and height `z`.
fn side_point(scene: &SceneState, side: &Vec3, dir: &Vec3, lat: f64, z: f64) -> Option<Vec3> {
    let far = 10.0 * scene.object.bounding_radius();
    let origin = side * lat + Vec3::new(0.0, 0.0, z) - dir * far;
    scene.object.ray_entry(&origin, dir).map(|(p, _)| p)
}

/// Top-face point straight above lateral offset `lat` along `side`.
fn top_point(scene: &SceneState, side: &Vec3, lat: f64) -> Option<Vec3> {
    let origin = side * lat + Vec3::new(0.0, 0.0, scene.object.height + 1.0);
    match scene.object.ray_entry(&origin, &-Vec3::z()) {
        Some((p, f)) if f == TOP_FACE => Some(p),
        _ => None,
    }
}

/// Linear map from `|θ|` in (0°, 90°] to the fulcrum offset in [0.5, 0.1]
/// object lengths.
pub fn rotate_offset_fraction(theta: f64) -> f64 {
    let t = (theta.abs() / FRAC_PI_2).clamp(0.0, 1.0);
    0.5 - 0.4 * t
}

/// Rule-based actions from the ground-truth scene. Reads no learned weights.
pub fn baseline_heuristic(scene: &SceneState, task: &TaskSpec) -> Result<(GripperAction, GripperAction), HeuristicError> {
    let f = Frame { scene };
    let obj = &scene.object;
    let h = obj.height;
    let missing = |feature, task| HeuristicError::MissingFeature {
        object: obj.id.clone(),
        feature,
        task,
    };
    // camera left and forward, in the object frame
    let left = f.horizontal(&Vec3::y());
    let forward = f.horizontal(&Vec3::x());
    let right = -left;
    match task {
        TaskSpec::Push(l) | TaskSpec::Topple(l) => {
            let (z, name) = match task {
                TaskSpec::Push(_) => (0.5 * h, "push"),
                _ => (0.2 * h, "topple"),
            };
            let d = f.horizontal(l.as_vec());
            let side = Vec3::z().cross(&d);
            let (hi, lo) = chord(scene, &side, z).ok_or_else(|| missing("side face", name))?;
            let len = hi + lo;
            let p1 = side_point(scene, &side, &d, hi - len / 5.0, z).ok_or_else(|| missing("side face", name))?;
            let p2 = side_point(scene, &side, &d, -lo + len / 5.0, z).ok_or_else(|| missing("side face", name))?;
            Ok((f.action(p1, &d), f.action(p2, &d)))
        }
        TaskSpec::Rotate(theta) => {
            let top = h - 1e-6;
            let (r_ext, l_ext) = chord(scene, &right, top).ok_or_else(|| missing("top face", "rotate"))?;
            let len = r_ext + l_ext;
            // clockwise pivots on the right end, anticlockwise on the left
            let (fulcrum, toward) = if *theta < 0.0 {
                (r_ext - len / 10.0, -1.0)
            } else {
                (-(l_ext - len / 10.0), 1.0)
            };
            let p1 = top_point(scene, &right, fulcrum).ok_or_else(|| missing("top face", "rotate"))?;
            let z = 0.5 * h;
            let (zr, zl) = chord(scene, &right, z).ok_or_else(|| missing("near face", "rotate"))?;
            let span = 0.999 * zr.min(zl);
            let lat = (fulcrum + toward * rotate_offset_fraction(*theta) * len).clamp(-span, span);
            let p2 = side_point(scene, &right, &forward, lat, z).ok_or_else(|| missing("near face", "rotate"))?;
            Ok((f.action(p1, &-Vec3::z()), f.action(p2, &forward)))
        }
        TaskSpec::Pick(l) => {
            let up = f.to_object(l.as_vec());
            let (r_ext, l_ext) = chord(scene, &right, h - 1e-6).ok_or_else(|| missing("top edge", "pick"))?;
            let margin = (0.1 * (r_ext + l_ext)).min(0.02);
            let pl = top_point(scene, &left, l_ext - margin).ok_or_else(|| missing("top edge", "pick"))?;
            let pr = top_point(scene, &right, r_ext - margin).ok_or_else(|| missing("top edge", "pick"))?;
            Ok((f.action(pl, &up), f.action(pr, &up)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitVector3;
    use crate::sim::builtin;

    fn scene(id: &str) -> SceneState {
        SceneState::from_seeds(builtin(id).unwrap(), 5, 6)
    }

    #[test]
    fn push_contacts_halfway_up() {
        let s = scene("box");
        let task = TaskSpec::Push(UnitVector3::new(Vec3::new(0.8, 0.6, 0.0)).unwrap());
        let (u1, u2) = baseline_heuristic(&s, &task).unwrap();
        for u in [&u1, &u2] {
            let q = s.camera_to_object(&u.point());
            assert!((q.z - 0.5).abs() < 1e-9);
            assert!(s.object.surface_distance(&q).0.abs() < 1e-9);
            let a = u.matrix().unwrap().approach();
            assert!((a - Vec3::new(0.8, 0.6, 0.0)).norm() < 1e-9);
        }
        assert!((u1.point() - u2.point()).norm() > 0.3);
    }

    #[test]
    fn rotate_clockwise_pins_down_on_the_right() {
        let s = scene("keyboard");
        let (u1, u2) = baseline_heuristic(&s, &TaskSpec::Rotate(-0.6)).unwrap();
        let a = u1.matrix().unwrap().approach();
        assert!((a - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        // right of the camera is -y; the second contact sits left of the fulcrum
        assert!(u1.point().y < u2.point().y);
        let (v1, _) = baseline_heuristic(&s, &TaskSpec::Rotate(0.6)).unwrap();
        assert!(v1.point().y > u1.point().y);
    }

    #[test]
    fn pick_contacts_on_rim() {
        let s = scene("bucket");
        let up = UnitVector3::normalize(Vec3::new(0.1, 0.0, 1.0)).unwrap();
        let (u1, u2) = baseline_heuristic(&s, &TaskSpec::Pick(up)).unwrap();
        for u in [&u1, &u2] {
            let q = s.camera_to_object(&u.point());
            let rim = s.object.features.iter().map(|g| g.distance(&q)).fold(f64::INFINITY, f64::min);
            assert!(rim < 0.05, "{rim}");
            assert!((u.matrix().unwrap().approach() - up.as_vec()).norm() < 1e-9);
        }
    }

    #[test]
    fn offset_map_endpoints() {
        assert!((rotate_offset_fraction(FRAC_PI_2) - 0.1).abs() < 1e-12);
        assert!((rotate_offset_fraction(1e-9) - 0.5).abs() < 1e-9);
    }
}
