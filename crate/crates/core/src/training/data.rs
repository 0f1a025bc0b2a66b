//! Records resolved against their regenerated clouds.

use std::collections::HashMap;

use super::TrainError;
use crate::datagen::{InteractionRecord, Observation, SceneRef};
use crate::perception::{FirstAction, PreparedCloud};
use crate::sim::ObjectModel;

/// One record in network terms.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// Index into [`TrainingSet::clouds`].
    pub cloud: usize,
    pub task: Vec<f64>,
    pub idx1: usize,
    pub idx2: usize,
    pub first: FirstAction,
    pub r1: [f64; 6],
    pub r2: [f64; 6],
    pub label: f64,
}

impl Example {
    pub fn positive(&self) -> bool {
        self.label > 0.5
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainingSet {
    pub clouds: Vec<PreparedCloud>,
    pub examples: Vec<Example>,
    scenes: HashMap<SceneRef, usize>,
}

impl TrainingSet {
    /// Regenerates every referenced scene (in parallel) and resolves the
    /// contact points to cloud indices.
    pub fn from_records(
        records: &[InteractionRecord],
        library: &[ObjectModel],
        n_points: usize,
    ) -> Result<Self, TrainError> {
        let mut refs: Vec<SceneRef> = records.iter().map(|r| r.scene_ref()).collect();
        refs.sort();
        refs.dedup();
        let observed = crate::par::map(&refs, |s| s.observe(library, n_points));
        let mut set = TrainingSet::default();
        for obs in observed {
            set.add_observation(&obs?);
        }
        for (i, r) in records.iter().enumerate() {
            set.push(i, r)?;
        }
        Ok(set)
    }

    /// Registers a scene's cloud; returns its index.
    pub fn add_observation(&mut self, obs: &Observation) -> usize {
        if let Some(&i) = self.scenes.get(&obs.scene_ref) {
            return i;
        }
        self.clouds.push(PreparedCloud::new(&obs.cloud));
        self.scenes.insert(obs.scene_ref.clone(), self.clouds.len() - 1);
        self.clouds.len() - 1
    }

    /// Adds a record whose scene is already registered.
    pub fn push(&mut self, index: usize, r: &InteractionRecord) -> Result<(), TrainError> {
        let bad = |m: String| TrainError::BadRecord { index, message: m };
        let cloud = *self
            .scenes
            .get(&r.scene_ref())
            .ok_or_else(|| bad("scene not registered".into()))?;
        let c = &self.clouds[cloud];
        let idx1 = c.index_of(&r.u1().point()).map_err(|e| bad(e.to_string()))?;
        let idx2 = c.index_of(&r.u2().point()).map_err(|e| bad(e.to_string()))?;
        self.examples.push(Example {
            cloud,
            task: r.task_vec.clone(),
            idx1,
            idx2,
            first: FirstAction::new(c, &r.u1()),
            r1: r.r1.0,
            r2: r.r2.0,
            label: r.r as f64,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.examples.iter().filter(|e| e.positive()).count()
    }
}
