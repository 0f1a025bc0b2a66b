//! Both gripper modules, their checkpoint, and batched evaluation helpers.

use std::path::Path;

use super::net::{CloudFeatures, GripperModule, ModuleId, PerceptionDims};
use super::PerceptionError;
use crate::geometry::{GripperAction, Vec3};
use crate::sim::{PointCloud, TaskKind};
use crate::tensor::{ParameterSet, Rng, Tape, Tensor, Var};

/// Cloud centred on its centroid, ready for the set encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedCloud {
    pub centroid: Vec3,
    /// Row-major `N × 3`.
    pub centred: Vec<f64>,
    pub points: Vec<Vec3>,
}

impl PreparedCloud {
    pub fn new(cloud: &PointCloud) -> Self {
        let centroid = cloud.centroid();
        let centred = cloud
            .points
            .iter()
            .flat_map(|p| {
                let q = p - centroid;
                [q.x, q.y, q.z]
            })
            .collect();
        Self {
            centroid,
            centred,
            points: cloud.points.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centre(&self, p: &Vec3) -> [f64; 3] {
        let q = p - self.centroid;
        [q.x, q.y, q.z]
    }

    /// Index of the cloud point nearest to `p`, with its distance.
    pub fn nearest(&self, p: &Vec3) -> (usize, f64) {
        self.points
            .iter()
            .enumerate()
            .map(|(i, q)| (i, (q - p).norm()))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
    }

    /// Index of the cloud point carrying action point `p` (within 1e-3).
    pub fn index_of(&self, p: &Vec3) -> Result<usize, PerceptionError> {
        let (i, d) = self.nearest(p);
        if d <= 1e-3 {
            Ok(i)
        } else {
            Err(PerceptionError::PointNotInCloud(d))
        }
    }
}

/// First-gripper action as network input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FirstAction {
    pub point: [f64; 3],
    pub rot6: [f64; 6],
}

impl FirstAction {
    pub fn new(cloud: &PreparedCloud, u: &GripperAction) -> Self {
        Self {
            point: cloud.centre(&u.point()),
            rot6: u.rotation.0,
        }
    }
}

/// Inputs of one module's head, repeated per query row.
pub struct Queries<'a> {
    pub cloud: &'a PreparedCloud,
    pub task: &'a [f64],
    pub rows: &'a [usize],
    pub first: Option<FirstAction>,
}

fn repeat(row: &[f64], n: usize) -> Vec<f64> {
    row.iter().copied().cycle().take(row.len() * n).collect()
}

/// Two gripper modules with one parameter set.
#[derive(Clone, Debug)]
pub struct DualAfford {
    pub task: TaskKind,
    pub dims: PerceptionDims,
    pub m1: GripperModule,
    pub m2: GripperModule,
    pub params: ParameterSet,
}

const META_DIMS: &str = "meta.dims";
const META_TASK: &str = "meta.task";

impl DualAfford {
    pub fn new(task: TaskKind, dims: PerceptionDims, seed: u64) -> Result<Self, PerceptionError> {
        let m1 = GripperModule::new(ModuleId::First, task, dims);
        let m2 = GripperModule::new(ModuleId::Second, task, dims);
        let mut params = ParameterSet::new();
        let mut rng = Rng::new(seed);
        m1.init(&mut params, &mut rng)?;
        m2.init(&mut params, &mut rng)?;
        Ok(Self {
            task,
            dims,
            m1,
            m2,
            params,
        })
    }

    pub fn module(&self, id: ModuleId) -> &GripperModule {
        match id {
            ModuleId::First => &self.m1,
            ModuleId::Second => &self.m2,
        }
    }

    /// Checkpoint archive with the layout stored alongside the weights.
    pub fn to_checkpoint(&self) -> Result<ParameterSet, PerceptionError> {
        let mut p = self.params.clone();
        let d = self.dims;
        let dims = [d.point_hidden, d.point_feature, d.encoder, d.head_hidden, d.latent];
        p.insert(META_DIMS, Tensor::row(dims.iter().map(|&v| v as f64).collect()))?;
        let task = TaskKind::ALL.iter().position(|k| *k == self.task).expect("known kind");
        p.insert(META_TASK, Tensor::row(vec![task as f64]))?;
        Ok(p)
    }

    pub fn from_checkpoint(mut p: ParameterSet) -> Result<Self, PerceptionError> {
        let meta = |p: &ParameterSet, name: &str| -> Result<Vec<f64>, PerceptionError> {
            p.get(name)
                .map(|t| t.data().to_vec())
                .ok_or_else(|| PerceptionError::Checkpoint(format!("missing `{name}`")))
        };
        let dims = meta(&p, META_DIMS)?;
        let task = meta(&p, META_TASK)?;
        if dims.len() != 5 || task.len() != 1 {
            return Err(PerceptionError::Checkpoint("malformed layout record".into()));
        }
        let dims = PerceptionDims {
            point_hidden: dims[0] as usize,
            point_feature: dims[1] as usize,
            encoder: dims[2] as usize,
            head_hidden: dims[3] as usize,
            latent: dims[4] as usize,
        };
        let task = *TaskKind::ALL
            .get(task[0] as usize)
            .ok_or_else(|| PerceptionError::Checkpoint("unknown task kind".into()))?;
        let mut fresh = Self::new(task, dims, 0)?;
        p = strip_meta(p);
        let want: Vec<String> = fresh.params.names().map(str::to_string).collect();
        let got: Vec<String> = p.names().map(str::to_string).collect();
        if want != got {
            return Err(PerceptionError::Checkpoint("parameter names do not match the layout".into()));
        }
        for name in &want {
            let (a, b) = (fresh.params.get(name).expect("present"), p.get(name).expect("present"));
            if a.shape() != b.shape() {
                return Err(PerceptionError::Checkpoint(format!("shape mismatch for `{name}`")));
            }
        }
        fresh.params = p;
        Ok(fresh)
    }

    pub fn save(&self, path: &Path) -> Result<(), PerceptionError> {
        Ok(self.to_checkpoint()?.save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, PerceptionError> {
        let p = ParameterSet::load(path).map_err(|e| match e {
            crate::tensor::TensorError::Io(io) => PerceptionError::Missing(path.display().to_string(), io),
            other => other.into(),
        })?;
        Self::from_checkpoint(p)
    }

    /// Fingerprint of one module's parameters.
    pub fn module_fingerprint(&self, id: ModuleId) -> String {
        self.params.subset(&format!("{}.", id.prefix())).fingerprint()
    }
}

fn strip_meta(p: ParameterSet) -> ParameterSet {
    let mut out = ParameterSet::new();
    for (name, t) in p.iter() {
        if !name.starts_with("meta.") {
            out.insert(name, t.clone()).expect("unique names");
        }
    }
    out
}

/// Tape-level forward helpers shared by inference and training.
impl GripperModule {
    pub fn cloud_input(&self, t: &Tape, cloud: &PreparedCloud) -> Result<Var, PerceptionError> {
        Ok(t.constant(cloud.len(), 3, cloud.centred.clone())?)
    }

    /// Head context rows for the queries: `B × context_width`.
    pub fn query_context(
        &self,
        t: &Tape,
        p: &ParameterSet,
        feats: &CloudFeatures,
        q: &Queries,
    ) -> Result<Var, PerceptionError> {
        let fs = self.point_features(t, p, feats, q.rows)?;
        self.context_from_features(t, p, fs, q)
    }

    /// Context rows from precomputed `f_s` rows (`B × point_feature`).
    pub fn context_from_features(
        &self,
        t: &Tape,
        p: &ParameterSet,
        fs: Var,
        q: &Queries,
    ) -> Result<Var, PerceptionError> {
        let b = q.rows.len();
        let task = t.constant(b, q.task.len(), repeat(q.task, b))?;
        let pts: Vec<f64> = q
            .rows
            .iter()
            .flat_map(|&i| q.cloud.centred[3 * i..3 * i + 3].to_vec())
            .collect();
        let pts = t.constant(b, 3, pts)?;
        let first = match q.first {
            Some(f) => Some((
                t.constant(b, 3, repeat(&f.point, b))?,
                t.constant(b, 6, repeat(&f.rot6, b))?,
            )),
            None => None,
        };
        Ok(self.context(t, p, fs, task, pts, first)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_keeps_layout() {
        let m = DualAfford::new(TaskKind::Rotate, PerceptionDims::tiny(4), 3).unwrap();
        let ck = m.to_checkpoint().unwrap();
        let back = DualAfford::from_checkpoint(ck).unwrap();
        assert_eq!(back.task, TaskKind::Rotate);
        assert_eq!(back.dims, m.dims);
        assert_eq!(back.params.fingerprint(), m.params.fingerprint());
    }

    #[test]
    fn mismatched_checkpoint_rejected() {
        let m = DualAfford::new(TaskKind::Push, PerceptionDims::tiny(4), 3).unwrap();
        let mut ck = m.to_checkpoint().unwrap();
        ck.insert("m1.extra", Tensor::row(vec![1.0])).unwrap();
        assert!(DualAfford::from_checkpoint(ck).is_err());
    }
}
