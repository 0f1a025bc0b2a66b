#![allow(dead_code)]

use dualafford::datagen::InteractionRecord;
use dualafford::sim::{execute_dual, execute_single, judge_success, GripperSpec, ObjectModel};

/// Re-executes a stored record from its seeds and applies the label rule
/// with the simulator primitives directly.
pub fn resimulate(r: &InteractionRecord, library: &[ObjectModel], n_points: usize, spec: &GripperSpec) -> bool {
    let obs = r.scene_ref().observe(library, n_points).expect("scene");
    let task = r.task().expect("task");
    let run = |o: Result<dualafford::sim::SimOutcome, _>| o.map(|o| judge_success(&task, &o)).unwrap_or(false);
    let dual = run(execute_dual(&obs.scene, &task, &r.u1(), &r.u2(), spec));
    let solo1 = run(execute_single(&obs.scene, &task, &r.u1(), spec));
    let solo2 = run(execute_single(&obs.scene, &task, &r.u2(), spec));
    dual && !solo1 && !solo2
}
