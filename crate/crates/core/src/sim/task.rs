//! Tasks and success predicates.

use serde::{Deserialize, Serialize};

use super::physics::SimOutcome;
use super::SimError;
use crate::geometry::{angle_between, UnitVector3, Vec3};
use crate::tensor::Rng;

pub const MOVE_THRESHOLD: f64 = 0.05;
pub const DIRECTION_TOL_DEG: f64 = 30.0;
pub const PICK_DIRECTION_TOL_DEG: f64 = 45.0;
pub const MIN_ROTATION_DEG: f64 = 10.0;
pub const ROTATION_TOL_DEG: f64 = 30.0;
pub const MIN_TILT_DEG: f64 = 10.0;
pub const STEADY_YAW_DEG: f64 = 10.0;
pub const STEADY_TILT_DEG: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Push,
    Rotate,
    Topple,
    Pick,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::Push, TaskKind::Rotate, TaskKind::Topple, TaskKind::Pick];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Push => "push",
            TaskKind::Rotate => "rotate",
            TaskKind::Topple => "topple",
            TaskKind::Pick => "pick",
        }
    }

    /// Length of the task vector fed to the networks.
    pub fn dim(self) -> usize {
        if self == TaskKind::Rotate {
            1
        } else {
            3
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SimError::InvalidTask(format!("unknown task kind `{s}`")))
    }
}

/// Task in the camera-base frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TaskSpec {
    Push(UnitVector3),
    /// Signed yaw in radians, counter-clockwise positive.
    Rotate(f64),
    Topple(UnitVector3),
    Pick(UnitVector3),
}

impl TaskSpec {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskSpec::Push(_) => TaskKind::Push,
            TaskSpec::Rotate(_) => TaskKind::Rotate,
            TaskSpec::Topple(_) => TaskKind::Topple,
            TaskSpec::Pick(_) => TaskKind::Pick,
        }
    }

    pub fn direction(&self) -> Option<&UnitVector3> {
        match self {
            TaskSpec::Push(d) | TaskSpec::Topple(d) | TaskSpec::Pick(d) => Some(d),
            TaskSpec::Rotate(_) => None,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            TaskSpec::Rotate(t) => vec![*t],
            _ => {
                let d = self.direction().expect("directional").as_vec();
                vec![d.x, d.y, d.z]
            }
        }
    }

    /// Builds and validates a task from its stored kind and vector.
    pub fn from_parts(kind: TaskKind, v: &[f64]) -> Result<TaskSpec, SimError> {
        if v.len() != kind.dim() {
            return Err(SimError::InvalidTask(format!(
                "{} task needs {} values, got {}",
                kind.name(),
                kind.dim(),
                v.len()
            )));
        }
        if kind == TaskKind::Rotate {
            return if v[0].is_finite() {
                Ok(TaskSpec::Rotate(v[0]))
            } else {
                Err(SimError::InvalidTask("rotation angle must be finite".into()))
            };
        }
        let d = Vec3::new(v[0], v[1], v[2]);
        let unit = UnitVector3::new(d).map_err(|_| {
            SimError::InvalidTask(format!("{} direction must be unit length", kind.name()))
        })?;
        match kind {
            TaskKind::Push | TaskKind::Topple if d.z.abs() > 1e-9 => Err(SimError::InvalidTask(
                format!("{} direction must be horizontal", kind.name()),
            )),
            TaskKind::Pick if d.z <= 0.0 => {
                Err(SimError::InvalidTask("pick direction must point up".into()))
            }
            TaskKind::Push => Ok(TaskSpec::Push(unit)),
            TaskKind::Topple => Ok(TaskSpec::Topple(unit)),
            _ => Ok(TaskSpec::Pick(unit)),
        }
    }

    /// Random task of the given kind. Push and topple directions point away
    /// from the camera within 60° of its forward axis; rotations have
    /// magnitude between 20° and 60°; pick directions lie within 30° of up.
    pub fn sample(kind: TaskKind, rng: &mut Rng) -> TaskSpec {
        let horizontal = |rng: &mut Rng| {
            let phi = rng.range(-60f64.to_radians(), 60f64.to_radians());
            UnitVector3::normalize(Vec3::new(phi.cos(), phi.sin(), 0.0)).expect("unit")
        };
        match kind {
            TaskKind::Push => TaskSpec::Push(horizontal(rng)),
            TaskKind::Topple => TaskSpec::Topple(horizontal(rng)),
            TaskKind::Rotate => {
                let mag = rng.range(20f64.to_radians(), 60f64.to_radians());
                TaskSpec::Rotate(if rng.uniform() < 0.5 { -mag } else { mag })
            }
            TaskKind::Pick => {
                let tilt = (1.0 - rng.uniform() * (1.0 - 30f64.to_radians().cos())).acos();
                let phi = rng.range(-std::f64::consts::PI, std::f64::consts::PI);
                let v = Vec3::new(tilt.sin() * phi.cos(), tilt.sin() * phi.sin(), tilt.cos());
                TaskSpec::Pick(UnitVector3::normalize(v).expect("unit"))
            }
        }
    }
}

fn deg(x: f64) -> f64 {
    x.to_radians()
}

/// Whether the outcome accomplishes the task. Pure; every comparison strict.
pub fn judge_success(task: &TaskSpec, o: &SimOutcome) -> bool {
    match task {
        TaskSpec::Push(l) => {
            let planar = Vec3::new(o.displacement.x, o.displacement.y, 0.0);
            planar.norm() > MOVE_THRESHOLD
                && o.planar_direction
                    .is_some_and(|d| angle_between(d.as_vec(), l.as_vec()) < deg(DIRECTION_TOL_DEG))
                && o.steady
        }
        TaskSpec::Rotate(theta) => {
            o.yaw.abs() > deg(MIN_ROTATION_DEG)
                && theta * o.yaw > 0.0
                && (o.yaw - theta).abs() < deg(ROTATION_TOL_DEG)
        }
        TaskSpec::Topple(l) => {
            o.tilt > deg(MIN_TILT_DEG)
                && o.tilt_direction
                    .is_some_and(|d| angle_between(d.as_vec(), l.as_vec()) < deg(DIRECTION_TOL_DEG))
                && o.yaw.abs() < deg(STEADY_YAW_DEG)
        }
        TaskSpec::Pick(l) => {
            o.height_gain > MOVE_THRESHOLD
                && angle_between(&o.displacement, l.as_vec()) < deg(PICK_DIRECTION_TOL_DEG)
                && o.steady
        }
    }
}

/// The steadiness rule shared by outcomes: small yaw and small tilt.
pub fn is_steady(yaw: f64, tilt: f64) -> bool {
    yaw.abs() < deg(STEADY_YAW_DEG) && tilt < deg(STEADY_TILT_DEG)
}
