//! Random interaction sampling, bulk collection and label balancing.

use super::record::{cloud_normal, InteractionRecord, Observation, Provenance, SceneRef};
use super::DataError;
use crate::geometry::{sample_hemisphere_orientation, GripperAction};
use crate::sim::{collaboration_check, GripperSpec, ObjectModel, PointCloud, TaskKind, TaskSpec};
use crate::tensor::Rng;

/// Two distinct uniformly chosen cloud indices.
pub fn distinct_pair(n: usize, rng: &mut Rng) -> (usize, usize) {
    assert!(n >= 2, "need at least two points");
    let i = rng.below(n);
    loop {
        let j = rng.below(n);
        if j != i {
            return (i, j);
        }
    }
}

/// Random action at a cloud point: orientation facing into the estimated surface.
/// Needs only the scan, never the object pose.
pub fn random_action_at(cloud: &PointCloud, index: usize, rng: &mut Rng) -> GripperAction {
    let normal = cloud_normal(cloud, index).normal;
    let rot = sample_hemisphere_orientation(&normal, rng);
    GripperAction::new(cloud.points[index], &rot)
}

/// Two random actions at distinct cloud points.
pub fn random_actions(cloud: &PointCloud, rng: &mut Rng) -> (GripperAction, GripperAction) {
    let (i, j) = distinct_pair(cloud.len(), rng);
    let u1 = random_action_at(cloud, i, rng);
    let u2 = random_action_at(cloud, j, rng);
    (u1, u2)
}

/// A labelled random sample; `sim_error` is set when execution failed and the
/// record was labelled negative.
#[derive(Clone, Debug)]
pub struct Sample {
    pub record: InteractionRecord,
    pub sim_error: Option<String>,
}

/// Labels a pair of actions by dual success with both solos failing.
pub fn label_actions(
    obs: &Observation,
    task: &TaskSpec,
    u1: &GripperAction,
    u2: &GripperAction,
    spec: &GripperSpec,
    provenance: Provenance,
) -> Sample {
    let (positive, sim_error) = match collaboration_check(&obs.scene, u1, u2, task, spec) {
        Ok(c) => (c.r, None),
        Err(e) => (false, Some(e.to_string())),
    };
    Sample {
        record: InteractionRecord::new(&obs.scene_ref, task, u1, u2, positive, provenance),
        sim_error,
    }
}

pub fn sample_random_interaction(
    obs: &Observation,
    task: &TaskSpec,
    rng: &mut Rng,
    spec: &GripperSpec,
) -> Sample {
    let (u1, u2) = random_actions(&obs.cloud, rng);
    label_actions(obs, task, &u1, &u2, spec, Provenance::Random)
}

/// Downsamples the majority label so the counts differ by at most one, then
/// shuffles.
pub fn balance_dataset(records: &[InteractionRecord], rng: &mut Rng) -> Result<Vec<InteractionRecord>, DataError> {
    let mut pos: Vec<InteractionRecord> = records.iter().filter(|r| r.positive()).cloned().collect();
    let mut neg: Vec<InteractionRecord> = records.iter().filter(|r| !r.positive()).cloned().collect();
    if pos.is_empty() {
        return Err(DataError::NoPositives);
    }
    // canonical order first so the output does not depend on input order
    let key = |r: &InteractionRecord| serde_json::to_string(r).unwrap_or_default();
    pos.sort_by_cached_key(key);
    neg.sort_by_cached_key(key);
    let keep = pos.len().min(neg.len());
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);
    pos.truncate(keep);
    neg.truncate(keep);
    let mut out = pos;
    out.extend(neg);
    rng.shuffle(&mut out);
    Ok(out)
}

/// Sizes for random collection.
#[derive(Clone, Debug)]
pub struct CollectPlan {
    pub objects: Vec<String>,
    pub task: TaskKind,
    pub scenes: usize,
    pub samples_per_scene: usize,
    pub n_points: usize,
}

/// Statistics from a collection run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CollectStats {
    pub total: usize,
    pub positives: usize,
    pub sim_errors: usize,
    pub invisible_scenes: usize,
}

impl CollectStats {
    pub fn positive_rate(&self) -> f64 {
        self.positives as f64 / self.total.max(1) as f64
    }
}

/// One planned scene: where to look, what to do, and its private generator.
#[derive(Clone, Debug)]
pub struct ScenePlan {
    pub scene: SceneRef,
    pub task: TaskSpec,
    pub rng: Rng,
}

/// Deterministic per-scene seeds and tasks, drawn sequentially from `rng`.
pub fn plan_scenes(objects: &[String], kind: TaskKind, count: usize, rng: &mut Rng) -> Vec<ScenePlan> {
    (0..count)
        .map(|k| {
            let object_id = objects[k % objects.len()].clone();
            let pose_seed = rng.next_u64();
            let camera_seed = rng.next_u64();
            let task = TaskSpec::sample(kind, rng);
            ScenePlan {
                scene: SceneRef {
                    object_id,
                    pose_seed,
                    camera_seed,
                },
                task,
                rng: rng.fork(),
            }
        })
        .collect()
}

/// Random collection, parallel across scenes, deterministic in `seed`.
pub fn collect_random(
    library: &[ObjectModel],
    plan: &CollectPlan,
    spec: &GripperSpec,
    seed: u64,
) -> Result<(Vec<InteractionRecord>, CollectStats), DataError> {
    let mut rng = Rng::new(seed);
    let scenes = plan_scenes(&plan.objects, plan.task, plan.scenes, &mut rng);
    let results = crate::par::map(&scenes, |sp| -> Result<Option<Vec<Sample>>, DataError> {
        let obs = match sp.scene.observe(library, plan.n_points) {
            Ok(o) => o,
            Err(DataError::Sim(crate::sim::SimError::NotVisible { .. })) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut rng = sp.rng.clone();
        Ok(Some(
            (0..plan.samples_per_scene)
                .map(|_| sample_random_interaction(&obs, &sp.task, &mut rng, spec))
                .collect(),
        ))
    });
    let mut stats = CollectStats::default();
    let mut records = Vec::new();
    for r in results {
        match r? {
            None => stats.invisible_scenes += 1,
            Some(samples) => {
                for s in samples {
                    stats.total += 1;
                    stats.positives += s.record.positive() as usize;
                    stats.sim_errors += s.sim_error.is_some() as usize;
                    records.push(s.record);
                }
            }
        }
    }
    Ok((records, stats))
}
