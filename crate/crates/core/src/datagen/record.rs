//! Interaction records and their JSON-lines storage.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::geometry::{estimate_normal, GripperAction, NormalEstimate, SixDRotation, Vec3, NORMAL_K};
use crate::sim::{render_partial_scan, ObjectModel, PointCloud, SceneState, TaskKind, TaskSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Random,
    Rl,
    CaOnline,
}

/// One labelled dual-gripper interaction. The observation is regenerated
/// from the scene seeds, never stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionRecord {
    pub object_id: String,
    pub pose_seed: u64,
    pub camera_seed: u64,
    pub task_kind: TaskKind,
    pub task_vec: Vec<f64>,
    pub p1: [f64; 3],
    #[serde(rename = "R1")]
    pub r1: SixDRotation,
    pub p2: [f64; 3],
    #[serde(rename = "R2")]
    pub r2: SixDRotation,
    pub r: u8,
    pub provenance: Provenance,
}

impl InteractionRecord {
    pub fn new(
        scene: &SceneRef,
        task: &TaskSpec,
        u1: &GripperAction,
        u2: &GripperAction,
        positive: bool,
        provenance: Provenance,
    ) -> Self {
        Self {
            object_id: scene.object_id.clone(),
            pose_seed: scene.pose_seed,
            camera_seed: scene.camera_seed,
            task_kind: task.kind(),
            task_vec: task.to_vec(),
            p1: u1.point,
            r1: u1.rotation,
            p2: u2.point,
            r2: u2.rotation,
            r: positive as u8,
            provenance,
        }
    }

    pub fn positive(&self) -> bool {
        self.r == 1
    }

    pub fn task(&self) -> Result<TaskSpec, DataError> {
        Ok(TaskSpec::from_parts(self.task_kind, &self.task_vec)?)
    }

    pub fn u1(&self) -> GripperAction {
        GripperAction {
            point: self.p1,
            rotation: self.r1,
        }
    }

    pub fn u2(&self) -> GripperAction {
        GripperAction {
            point: self.p2,
            rotation: self.r2,
        }
    }

    pub fn scene_ref(&self) -> SceneRef {
        SceneRef {
            object_id: self.object_id.clone(),
            pose_seed: self.pose_seed,
            camera_seed: self.camera_seed,
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.r > 1 {
            return Err(format!("label r must be 0 or 1, got {}", self.r));
        }
        if self.p1 == self.p2 {
            return Err("contact points coincide".into());
        }
        TaskSpec::from_parts(self.task_kind, &self.task_vec).map_err(|e| e.to_string())?;
        Ok(())
    }
}

/// Seeds that regenerate a scene and its scan.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SceneRef {
    pub object_id: String,
    pub pose_seed: u64,
    pub camera_seed: u64,
}

impl SceneRef {
    pub fn observe(&self, library: &[ObjectModel], n_points: usize) -> Result<Observation, DataError> {
        let object = library
            .iter()
            .find(|o| o.id == self.object_id)
            .ok_or_else(|| DataError::UnknownObject(self.object_id.clone()))?
            .clone();
        let scene = SceneState::from_seeds(object, self.pose_seed, self.camera_seed);
        let cloud = render_partial_scan(&scene, n_points, &mut SceneState::scan_rng(self.camera_seed))?;
        Ok(Observation {
            scene_ref: self.clone(),
            scene,
            cloud,
        })
    }
}

/// A scene together with its partial scan.
#[derive(Clone, Debug)]
pub struct Observation {
    pub scene_ref: SceneRef,
    pub scene: SceneState,
    pub cloud: PointCloud,
}

impl Observation {
    /// Normal at a cloud point, oriented toward the camera.
    pub fn normal(&self, index: usize) -> NormalEstimate {
        cloud_normal(&self.cloud, index)
    }
}

/// Normal at a camera-frame cloud point, oriented toward the camera.
pub fn cloud_normal(cloud: &PointCloud, index: usize) -> NormalEstimate {
    estimate_normal(&cloud.points, index, NORMAL_K, &Vec3::zeros())
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[InteractionRecord]) -> Result<(), DataError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| DataError::Format {
            line: 0,
            message: e.to_string(),
        })?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<InteractionRecord>, DataError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InteractionRecord = serde_json::from_str(&line).map_err(|e| DataError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        rec.check().map_err(|message| DataError::Format { line: i + 1, message })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_dataset(path: &std::path::Path, records: &[InteractionRecord]) -> Result<(), DataError> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_jsonl(&mut w, records)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &std::path::Path) -> Result<Vec<InteractionRecord>, DataError> {
    let f = std::fs::File::open(path).map_err(|e| DataError::Missing(path.display().to_string(), e))?;
    read_jsonl(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RotationMatrix;

    fn sample() -> InteractionRecord {
        let u1 = GripperAction::new(Vec3::new(0.1, 0.2, 0.3), &RotationMatrix::identity());
        let u2 = GripperAction::new(
            Vec3::new(-0.1, 0.7, 1.0 / 3.0),
            &RotationMatrix::from_axis_angle(&Vec3::z(), 0.3),
        );
        let scene = SceneRef {
            object_id: "box".into(),
            pose_seed: 3,
            camera_seed: u64::MAX,
        };
        let task = TaskSpec::from_parts(TaskKind::Push, &[0.6, 0.8, 0.0]).unwrap();
        InteractionRecord::new(&scene, &task, &u1, &u2, true, Provenance::CaOnline)
    }

    #[test]
    fn round_trip_is_exact() {
        let recs = vec![sample(), sample()];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"R1\"") && text.contains("\"ca-online\""));
        assert_eq!(read_jsonl(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn unknown_field_names_line_and_field() {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[sample()]).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        let bad = text.trim_end().replacen('{', "{\"colour\":1,", 1);
        text.push_str(&bad);
        text.push('\n');
        let err = read_jsonl(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("colour"), "{err}");
    }

    #[test]
    fn invalid_label_rejected() {
        let mut rec = sample();
        rec.r = 2;
        let line = serde_json::to_string(&rec).unwrap();
        assert!(read_jsonl(line.as_bytes()).is_err());
    }
}
