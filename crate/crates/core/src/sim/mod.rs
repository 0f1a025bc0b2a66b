//! Deterministic toy physics: scenes, partial scans, gripper execution and
//! task success predicates.

mod object;
mod physics;
mod scene;
mod task;

pub use object::{
    builtin, builtin_library, library_from_toml, library_to_toml, GraspFeature, ObjectModel, Plane,
    BOTTOM_FACE, TOP_FACE,
};
pub use physics::{
    collaboration_check, execute_dual, execute_single, Collaboration, GripperSpec, SimOutcome,
    BALANCE_TOL, GRASP_CONE_DEG, GRASP_REACH, GRAVITY, PUSH_CONE_DEG, SURFACE_TOL,
};
pub use scene::{farthest_point_sample, render_partial_scan, PointCloud, SceneState};
pub use task::{
    is_steady, judge_success, TaskKind, TaskSpec, DIRECTION_TOL_DEG, MIN_ROTATION_DEG,
    MIN_TILT_DEG, MOVE_THRESHOLD, PICK_DIRECTION_TOL_DEG, ROTATION_TOL_DEG, STEADY_TILT_DEG,
    STEADY_YAW_DEG,
};

use crate::geometry::GeometryError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("object `{0}`: {1}")]
    InvalidObject(String, String),
    #[error("scene file: {0}")]
    SceneFile(String),
    #[error("object not visible: {hits} hits, {needed} points requested")]
    NotVisible { hits: usize, needed: usize },
    #[error("camera inside the object bounding volume")]
    CameraInside,
    #[error("gripper {gripper} contact is {distance:.2e} off the surface")]
    OffSurface { gripper: usize, distance: f64 },
    #[error("gripper spec values must be positive")]
    InvalidGripper,
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("point cloud file: {0}")]
    PointCloudFormat(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
