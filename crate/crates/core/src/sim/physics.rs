//! Quasi-static single-shot execution of gripper primitives.

use serde::{Deserialize, Serialize};

use super::scene::SceneState;
use super::task::{is_steady, judge_success, TaskSpec};
use super::SimError;
use crate::geometry::{angle_between, GripperAction, UnitVector3, Vec3};

pub const GRAVITY: f64 = 1.0;
/// Contact points must lie this close to the object surface.
pub const SURFACE_TOL: f64 = 1e-3;
/// Distance from a feature segment that still counts as on the feature.
pub const GRASP_REACH: f64 = 0.03;
pub const GRASP_CONE_DEG: f64 = 45.0;
/// Half-angle of the cone in which a pad can press on a face.
pub const PUSH_CONE_DEG: f64 = 60.0;
/// Horizontal distance from the grasp line to the CoM a two-point lift tolerates.
pub const BALANCE_TOL: f64 = 0.15;
/// A hanging object slips out of the fingers beyond this tilt.
pub const SLIP_TILT_DEG: f64 = 75.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GripperSpec {
    pub max_opening: f64,
    /// Standoff `d_g` the gripper spawns at before approaching.
    pub standoff: f64,
    pub finger_force: f64,
    /// Length of the motion primitive after contact.
    pub stroke: f64,
}

impl Default for GripperSpec {
    fn default() -> Self {
        Self {
            max_opening: 0.08,
            standoff: 0.3,
            finger_force: 0.4,
            stroke: 0.3,
        }
    }
}

impl GripperSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if [self.max_opening, self.standoff, self.finger_force, self.stroke]
            .iter()
            .all(|v| *v > 0.0)
        {
            Ok(())
        } else {
            Err(SimError::InvalidGripper)
        }
    }
}

/// Everything success predicates and rewards read, in the camera-base frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SimOutcome {
    /// Final minus initial CoM.
    pub displacement: Vec3,
    pub planar_direction: Option<UnitVector3>,
    pub yaw: f64,
    pub tilt: f64,
    pub tilt_direction: Option<UnitVector3>,
    pub height_gain: f64,
    pub grasped_at_start: [bool; 2],
    pub grasped_at_end: [bool; 2],
    pub steady: bool,
    pub collision: bool,
}

impl SimOutcome {
    /// No motion, nothing grasped.
    pub fn at_rest() -> Self {
        Self {
            displacement: Vec3::zeros(),
            planar_direction: None,
            yaw: 0.0,
            tilt: 0.0,
            tilt_direction: None,
            height_gain: 0.0,
            grasped_at_start: [false; 2],
            grasped_at_end: [false; 2],
            steady: true,
            collision: false,
        }
    }

    pub fn distance(&self) -> f64 {
        self.displacement.norm()
    }
}

struct Contact {
    point: Vec3,
    /// Outward normals of every face the point lies on (several on edges).
    normals: Vec<Vec3>,
    approach: Vec3,
    grasped: bool,
}

fn resolve_contact(
    scene: &SceneState,
    u: &GripperAction,
    index: usize,
    spec: &GripperSpec,
) -> Result<Contact, SimError> {
    let obj = &scene.object;
    let local_cam = u.point();
    let point = scene.camera.transform_point(&local_cam);
    let p_obj = scene.pose.inverse_transform_point(&point);
    let (dist, _) = obj.surface_distance(&p_obj);
    if dist.abs() > SURFACE_TOL {
        return Err(SimError::OffSurface {
            gripper: index + 1,
            distance: dist,
        });
    }
    let rot = u.matrix()?;
    let approach = scene.camera.transform_vector(&rot.approach());
    let normals = obj
        .planes()
        .iter()
        .filter(|pl| pl.signed_distance(&p_obj) >= -SURFACE_TOL)
        .map(|pl| scene.pose.transform_vector(&pl.normal))
        .collect();
    let a_obj = scene.pose.inverse_transform_vector(&approach);
    let grasped = obj.features.iter().any(|f| {
        f.thickness < spec.max_opening
            && f.distance(&p_obj) <= GRASP_REACH
            && angle_between(&a_obj, &Vec3::from(f.approach)) <= GRASP_CONE_DEG.to_radians()
    });
    Ok(Contact {
        point,
        normals,
        approach,
        grasped,
    })
}

/// The approach path crosses the ground or comes through the object.
fn collides(c: &Contact, spec: &GripperSpec) -> bool {
    let spawn = c.point - c.approach * spec.standoff;
    spawn.z < 0.0 || c.normals.iter().all(|n| c.approach.dot(n) > 1e-9)
}

/// Motion direction for the task primitive at a contact (world frame).
fn motion_direction(scene: &SceneState, task: &TaskSpec, p: &Vec3) -> Option<Vec3> {
    match task {
        TaskSpec::Rotate(theta) => {
            let com = scene.pose.position;
            let r = Vec3::new(p.x - com.x, p.y - com.y, 0.0);
            let t = Vec3::z().cross(&r);
            let n = t.norm();
            (n > 1e-9).then(|| t / n * theta.signum())
        }
        _ => Some(scene.camera.transform_vector(task.direction().expect("directional").as_vec())),
    }
}

struct WorldMotion {
    displacement: Vec3,
    yaw: f64,
    tilt: f64,
    tilt_direction: Option<Vec3>,
    held_end: Vec<bool>,
}

impl WorldMotion {
    fn none(n: usize) -> Self {
        Self {
            displacement: Vec3::zeros(),
            yaw: 0.0,
            tilt: 0.0,
            tilt_direction: None,
            held_end: vec![false; n],
        }
    }
}

fn lift(scene: &SceneState, contacts: &[Contact], dir: &Vec3, spec: &GripperSpec) -> WorldMotion {
    let com_h = scene.object.com_height();
    let com = scene.pose.position + Vec3::new(0.0, 0.0, com_h);
    let held: Vec<&Contact> = contacts.iter().filter(|c| c.grasped).collect();
    let (lever, grip_z) = match held.as_slice() {
        [c] => (
            Vec3::new(c.point.x - com.x, c.point.y - com.y, 0.0).norm(),
            c.point.z,
        ),
        [a, b] => {
            let pa = Vec3::new(a.point.x, a.point.y, 0.0);
            let pb = Vec3::new(b.point.x, b.point.y, 0.0);
            let c2 = Vec3::new(com.x, com.y, 0.0);
            let ab = pb - pa;
            let t = ((c2 - pa).dot(&ab) / ab.norm_squared().max(1e-18)).clamp(0.0, 1.0);
            let off = (c2 - (pa + ab * t)).norm();
            (if off <= BALANCE_TOL { 0.0 } else { off }, 0.5 * (a.point.z + b.point.z))
        }
        _ => return WorldMotion::none(contacts.len()),
    };
    let tilt = if lever == 0.0 {
        0.0
    } else {
        lever.atan2((grip_z - com.z).max(1e-6)).min(std::f64::consts::FRAC_PI_2)
    };
    let holds = tilt < SLIP_TILT_DEG.to_radians();
    let held_end = contacts.iter().map(|c| c.grasped && holds).collect();
    if !holds {
        // falls back onto its base
        return WorldMotion {
            held_end,
            ..WorldMotion::none(contacts.len())
        };
    }
    WorldMotion {
        displacement: dir * spec.stroke,
        yaw: 0.0,
        tilt,
        tilt_direction: None,
        held_end,
    }
}

fn planar(
    scene: &SceneState,
    contacts: &[Contact],
    forces: &[Option<Vec3>],
    spec: &GripperSpec,
) -> WorldMotion {
    let obj = &scene.object;
    let n = contacts.len();
    let com = scene.pose.position;
    let com_h = obj.com_height();
    let weight = obj.mass * GRAVITY;
    let f_max = obj.friction * weight;
    let tau_max = f_max * obj.friction_radius();

    let mut total = Vec3::zeros();
    let mut torque = 0.0;
    let mut active = Vec::new();
    for (c, f) in contacts.iter().zip(forces) {
        if let Some(f) = f {
            let f = Vec3::new(f.x, f.y, 0.0);
            let r = c.point - com;
            total += f;
            torque += r.x * f.y - r.y * f.x;
            active.push((c, f));
        }
    }
    if active.is_empty() {
        return WorldMotion::none(n);
    }
    let slide_load = ((total.norm() / f_max).powi(2) + (torque / tau_max).powi(2)).sqrt();
    let mut tip_load = 0.0;
    let mut tip_dir = None;
    let mut arm = 0.0;
    if total.norm() > 1e-9 {
        let t = total / total.norm();
        let moment: f64 = active.iter().map(|(c, f)| f.dot(&t) * c.point.z).sum();
        arm = obj
            .footprint
            .iter()
            .map(|v| {
                let w = scene.pose.transform_vector(&Vec3::new(v[0], v[1], 0.0));
                w.dot(&t)
            })
            .fold(f64::MIN, f64::max);
        if moment > 0.0 {
            tip_load = moment / (weight * arm);
            tip_dir = Some(t);
        }
    }
    if slide_load <= 1.0 && tip_load <= 1.0 {
        return WorldMotion::none(n);
    }
    if tip_load > slide_load {
        let t = tip_dir.expect("tipping direction");
        // rotating a quarter turn about the leading edge lowers the CoM only
        // when the edge is closer than the CoM height; otherwise it rocks back
        if arm >= com_h {
            return WorldMotion::none(n);
        }
        return WorldMotion {
            displacement: t * (com_h + arm) + Vec3::z() * (arm - com_h),
            yaw: 0.0,
            tilt: std::f64::consts::FRAC_PI_2,
            tilt_direction: Some(t),
            held_end: contacts.iter().map(|c| c.grasped).collect(),
        };
    }
    // ellipsoidal limit surface: twist parallel to the load gradient
    let v = Vec3::new(total.x / (f_max * f_max), total.y / (f_max * f_max), 0.0);
    let omega = torque / (tau_max * tau_max);
    let progress = active
        .iter()
        .map(|(c, f)| {
            let r = c.point - com;
            let vel = v + Vec3::new(-omega * r.y, omega * r.x, 0.0);
            vel.dot(&(f / f.norm()))
        })
        .fold(f64::MIN, f64::max);
    if progress <= 1e-12 {
        return WorldMotion::none(n);
    }
    let s = spec.stroke / progress;
    WorldMotion {
        displacement: v * s,
        yaw: omega * s,
        tilt: 0.0,
        tilt_direction: None,
        held_end: contacts.iter().map(|c| c.grasped).collect(),
    }
}

fn execute(
    scene: &SceneState,
    task: &TaskSpec,
    actions: &[&GripperAction],
    spec: &GripperSpec,
) -> Result<SimOutcome, SimError> {
    spec.validate()?;
    let contacts = actions
        .iter()
        .enumerate()
        .map(|(i, u)| resolve_contact(scene, u, i, spec))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = SimOutcome::at_rest();
    if contacts.iter().any(|c| collides(c, spec)) {
        out.steady = false;
        out.collision = true;
        return Ok(out);
    }
    for (i, c) in contacts.iter().enumerate() {
        out.grasped_at_start[i] = c.grasped;
    }
    let push_cos = PUSH_CONE_DEG.to_radians().cos();
    let motion = if let TaskSpec::Pick(_) = task {
        let dir = motion_direction(scene, task, &Vec3::zeros()).expect("pick direction");
        lift(scene, &contacts, &dir, spec)
    } else {
        let forces: Vec<Option<Vec3>> = contacts
            .iter()
            .map(|c| {
                let m = motion_direction(scene, task, &c.point)?;
                let presses = c
                    .normals
                    .iter()
                    .any(|n| m.dot(&-n) >= push_cos && c.approach.dot(&-n) >= push_cos);
                (c.grasped || presses).then(|| m * spec.finger_force)
            })
            .collect();
        planar(scene, &contacts, &forces, spec)
    };

    let cam = &scene.camera;
    out.displacement = cam.inverse_transform_vector(&motion.displacement);
    out.planar_direction =
        UnitVector3::normalize(Vec3::new(out.displacement.x, out.displacement.y, 0.0))
            .filter(|_| Vec3::new(out.displacement.x, out.displacement.y, 0.0).norm() > 1e-12);
    out.yaw = motion.yaw;
    out.tilt = motion.tilt.clamp(0.0, std::f64::consts::FRAC_PI_2);
    out.tilt_direction = motion
        .tilt_direction
        .and_then(|t| UnitVector3::normalize(cam.inverse_transform_vector(&t)));
    out.height_gain = motion.displacement.z;
    for (i, h) in motion.held_end.iter().enumerate() {
        out.grasped_at_end[i] = *h;
    }
    out.steady = is_steady(out.yaw, out.tilt);
    Ok(out)
}

/// Both grippers act simultaneously.
pub fn execute_dual(
    scene: &SceneState,
    task: &TaskSpec,
    u1: &GripperAction,
    u2: &GripperAction,
    spec: &GripperSpec,
) -> Result<SimOutcome, SimError> {
    execute(scene, task, &[u1, u2], spec)
}

/// One gripper acting alone.
pub fn execute_single(
    scene: &SceneState,
    task: &TaskSpec,
    u: &GripperAction,
    spec: &GripperSpec,
) -> Result<SimOutcome, SimError> {
    execute(scene, task, &[u], spec)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Collaboration {
    pub r: bool,
    pub dual: SimOutcome,
    pub solo1: SimOutcome,
    pub solo2: SimOutcome,
}

/// Dual success that neither gripper achieves alone.
pub fn collaboration_check(
    scene: &SceneState,
    u1: &GripperAction,
    u2: &GripperAction,
    task: &TaskSpec,
    spec: &GripperSpec,
) -> Result<Collaboration, SimError> {
    let dual = execute_dual(scene, task, u1, u2, spec)?;
    let solo1 = execute_single(scene, task, u1, spec)?;
    let solo2 = execute_single(scene, task, u2, spec)?;
    let r = judge_success(task, &dual) && !judge_success(task, &solo1) && !judge_success(task, &solo2);
    Ok(Collaboration {
        r,
        dual,
        solo1,
        solo2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{orientation_from_approach, Pose};
    use crate::sim::object::{builtin, ObjectModel};

    /// Box at the origin, camera on −x looking along +x so camera and world
    /// axes agree up to translation.
    fn scene_for(obj: ObjectModel) -> SceneState {
        SceneState::with_camera(obj, Pose::identity(), std::f64::consts::PI, 0.0, 4.0)
    }

    fn action(scene: &SceneState, world: Vec3, approach: Vec3) -> GripperAction {
        let p = scene.camera.inverse_transform_point(&world);
        let a = scene.camera.inverse_transform_vector(&approach);
        GripperAction::new(p, &orientation_from_approach(&a, 0.0))
    }

    fn push_x() -> TaskSpec {
        TaskSpec::Push(UnitVector3::x())
    }

    #[test]
    fn camera_axes_match_world_in_fixture() {
        let s = scene_for(builtin("box").unwrap());
        let v = s.camera.transform_vector(&Vec3::x());
        assert!((v - Vec3::x()).norm() < 1e-12);
    }

    #[test]
    fn symmetric_dual_push_translates() {
        let s = scene_for(builtin("box").unwrap());
        let spec = GripperSpec::default();
        let u1 = action(&s, Vec3::new(-0.5, 0.25, 0.5), Vec3::x());
        let u2 = action(&s, Vec3::new(-0.5, -0.25, 0.5), Vec3::x());
        let o = execute_dual(&s, &push_x(), &u1, &u2, &spec).unwrap();
        assert!(o.displacement.x > 0.05, "{o:?}");
        assert!(o.displacement.y.abs() < 1e-9 && o.yaw.abs() < 1e-9 && o.tilt == 0.0);
        assert!(judge_success(&push_x(), &o));
    }

    #[test]
    fn single_push_sticks_and_offcenter_yaws() {
        let s = scene_for(builtin("box").unwrap());
        let spec = GripperSpec::default();
        let centre = action(&s, Vec3::new(-0.5, 0.0, 0.5), Vec3::x());
        let o = execute_single(&s, &push_x(), &centre, &spec).unwrap();
        assert_eq!(o.displacement, Vec3::zeros());
        let edge = action(&s, Vec3::new(-0.5, 0.48, 0.5), Vec3::x());
        let o = execute_single(&s, &push_x(), &edge, &spec).unwrap();
        assert!(o.yaw.abs() > 1e-3, "{o:?}");
        assert!(o.yaw < 0.0, "push at +y along +x turns clockwise");
    }

    #[test]
    fn friction_cone_oracle_for_collaboration() {
        // F = 0.4 per gripper, μ m g = 0.6: one alone sticks, two slide
        let s = scene_for(builtin("box").unwrap());
        let spec = GripperSpec::default();
        assert!(spec.finger_force < 0.6 && 2.0 * spec.finger_force > 0.6);
        let u1 = action(&s, Vec3::new(-0.5, 0.2, 0.4), Vec3::x());
        let u2 = action(&s, Vec3::new(-0.5, -0.2, 0.4), Vec3::x());
        let c = collaboration_check(&s, &u1, &u2, &push_x(), &spec).unwrap();
        assert!(c.r, "{c:?}");
    }

    #[test]
    fn high_push_topples_tall_prism() {
        let mut obj = builtin("tall_box").unwrap();
        obj.mass = 0.5;
        let s = scene_for(obj.clone());
        let spec = GripperSpec::default();
        let z = 1.8;
        // analytic: moment F z against m g (w/2); sliding needs F > μ m g
        let tip_load = spec.finger_force * z / (obj.mass * GRAVITY * 0.3);
        let slide_load = spec.finger_force / (obj.friction * obj.mass * GRAVITY);
        assert!(tip_load > 1.0 && tip_load > slide_load);
        let u = action(&s, Vec3::new(-0.3, 0.0, z), Vec3::x());
        let o = execute_single(&s, &TaskSpec::Topple(UnitVector3::x()), &u, &spec).unwrap();
        assert!(o.tilt > 0.0);
        assert!(o.tilt_direction.unwrap().as_vec().x > 0.99);
        assert!(o.height_gain < 0.0);
    }

    #[test]
    fn single_rim_lift_is_unsteady() {
        let s = scene_for(builtin("bucket").unwrap());
        let spec = GripperSpec::default();
        let f = &s.object.features[0];
        let mid = (Vec3::from(f.a) + Vec3::from(f.b)) / 2.0;
        let u = action(&s, mid, -Vec3::z());
        let task = TaskSpec::Pick(UnitVector3::z());
        let o = execute_single(&s, &task, &u, &spec).unwrap();
        assert!(o.grasped_at_start[0] && o.grasped_at_end[0]);
        assert!(!o.steady);
        // opposite rim edges balance the lift
        let g = &s.object.features[4];
        let mid2 = (Vec3::from(g.a) + Vec3::from(g.b)) / 2.0;
        let u2 = action(&s, mid2, -Vec3::z());
        let o = execute_dual(&s, &task, &u, &u2, &spec).unwrap();
        assert!(o.steady && o.height_gain > 0.05);
        assert!(collaboration_check(&s, &u, &u2, &task, &spec).unwrap().r);
    }

    #[test]
    fn ground_collision_and_off_surface() {
        let s = scene_for(builtin("box").unwrap());
        let spec = GripperSpec::default();
        // approaching upward from below the ground
        let u = action(&s, Vec3::new(-0.5, 0.0, 0.05), Vec3::new(1.0, 0.0, 1.0).normalize());
        let o = execute_single(&s, &push_x(), &u, &spec).unwrap();
        assert!(o.collision && !o.steady && o.displacement == Vec3::zeros());
        let off = action(&s, Vec3::new(-0.6, 0.0, 0.5), Vec3::x());
        assert!(matches!(
            execute_single(&s, &push_x(), &off, &spec),
            Err(SimError::OffSurface { .. })
        ));
    }

    #[test]
    fn rotation_needs_two_on_slab() {
        let s = scene_for(builtin("keyboard").unwrap());
        let spec = GripperSpec::default();
        let task = TaskSpec::Rotate(25f64.to_radians());
        let u1 = action(&s, Vec3::new(0.75, -0.25, 0.15), Vec3::y());
        let u2 = action(&s, Vec3::new(0.65, -0.25, 0.15), Vec3::y());
        let c = collaboration_check(&s, &u1, &u2, &task, &spec).unwrap();
        assert!(c.dual.yaw > 10f64.to_radians(), "{:?}", c.dual);
        assert_eq!(c.solo1.yaw, 0.0);
        assert!(c.r);
    }
}
