//! Gripper-module networks: encoders plus affordance, critic and proposal heads.

use serde::{Deserialize, Serialize};

use crate::sim::TaskKind;
use crate::tensor::nn::{Activation, Linear, Mlp};
use crate::tensor::{ParameterSet, Result, Rng, Tape, Var};

/// Layer widths shared by both modules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionDims {
    /// Hidden width of the shared per-point MLP.
    pub point_hidden: usize,
    /// Per-point feature width `f_s`.
    pub point_feature: usize,
    /// Width of each small encoder (task, point, orientation, first action).
    pub encoder: usize,
    /// Hidden width of every head.
    pub head_hidden: usize,
    pub latent: usize,
}

impl Default for PerceptionDims {
    fn default() -> Self {
        Self {
            point_hidden: 64,
            point_feature: 128,
            encoder: 32,
            head_hidden: 128,
            latent: 32,
        }
    }
}

impl PerceptionDims {
    /// Every width set to `w`; used for finite-difference checks.
    pub fn tiny(w: usize) -> Self {
        Self {
            point_hidden: w,
            point_feature: w,
            encoder: w,
            head_hidden: w,
            latent: w,
        }
    }
}

/// Which gripper a module proposes for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModuleId {
    First,
    Second,
}

impl ModuleId {
    pub fn prefix(self) -> &'static str {
        match self {
            ModuleId::First => "m1",
            ModuleId::Second => "m2",
        }
    }
}

/// Parameter groups of a module; each training phase updates one or two.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Encoder,
    Affordance,
    Critic,
    Proposal,
}

impl Group {
    fn part(self) -> &'static str {
        match self {
            Group::Encoder => "enc",
            Group::Affordance => "aff",
            Group::Critic => "critic",
            Group::Proposal => "prop",
        }
    }
}

/// Layout of one gripper module. Parameters live in a shared
/// [`ParameterSet`] under `m1.` / `m2.`.
#[derive(Clone, Debug, PartialEq)]
pub struct GripperModule {
    pub id: ModuleId,
    pub task: TaskKind,
    pub dims: PerceptionDims,
    set_l0: Linear,
    set_l1: Linear,
    fuse: Linear,
    task_enc: Linear,
    point_enc: Linear,
    rot_enc: Linear,
    first_point_enc: Option<Linear>,
    first_rot_enc: Option<Linear>,
    affordance: Mlp,
    critic: Mlp,
    prop_enc: Mlp,
    prop_mu: Linear,
    prop_logvar: Linear,
    prop_dec: Mlp,
}

/// Per-point features of one cloud.
#[derive(Clone, Copy, Debug)]
pub struct CloudFeatures {
    /// `N × point_feature` local features before fusion.
    pub local: Var,
    /// `1 × point_feature` max-pooled global feature.
    pub global: Var,
}

impl GripperModule {
    pub fn new(id: ModuleId, task: TaskKind, dims: PerceptionDims) -> Self {
        let p = |s: &str| format!("{}.{s}", id.prefix());
        let d = dims;
        let ctx = d.point_feature + 2 * d.encoder + if id == ModuleId::Second { 2 * d.encoder } else { 0 };
        let second = id == ModuleId::Second;
        Self {
            id,
            task,
            dims,
            set_l0: Linear::new(p("enc.set0"), 3, d.point_hidden),
            set_l1: Linear::new(p("enc.set1"), d.point_hidden, d.point_feature),
            fuse: Linear::new(p("enc.fuse"), 2 * d.point_feature, d.point_feature),
            task_enc: Linear::new(p("enc.task"), task.dim(), d.encoder),
            point_enc: Linear::new(p("enc.point"), 3, d.encoder),
            rot_enc: Linear::new(p("enc.rot"), 6, d.encoder),
            first_point_enc: second.then(|| Linear::new(p("enc.p1"), 3, d.encoder)),
            first_rot_enc: second.then(|| Linear::new(p("enc.r1"), 6, d.encoder)),
            affordance: Mlp::new(&p("aff"), &[ctx, d.head_hidden, 1], Activation::Sigmoid),
            critic: Mlp::new(&p("critic"), &[ctx + d.encoder, d.head_hidden, 1], Activation::Sigmoid),
            prop_enc: Mlp::new(
                &p("prop.enc"),
                &[ctx + d.encoder, d.head_hidden, d.latent],
                Activation::LeakyRelu,
            ),
            prop_mu: Linear::new(p("prop.mu"), d.latent, d.latent),
            prop_logvar: Linear::new(p("prop.logvar"), d.latent, d.latent),
            prop_dec: Mlp::new(&p("prop.dec"), &[ctx + d.latent, d.head_hidden, 6], Activation::Identity),
        }
    }

    /// Parameter-name prefix of a group, e.g. `m2.critic.`.
    pub fn group_prefix(&self, g: Group) -> String {
        format!("{}.{}.", self.id.prefix(), g.part())
    }

    /// Width of the affordance input (point, task and, for module 2, first action).
    pub fn context_width(&self) -> usize {
        self.affordance.inputs()
    }

    pub fn critic_width(&self) -> usize {
        self.critic.inputs()
    }

    pub fn decoder_width(&self) -> usize {
        self.prop_dec.inputs()
    }

    pub fn init(&self, params: &mut ParameterSet, rng: &mut Rng) -> Result<()> {
        for l in [
            &self.set_l0,
            &self.set_l1,
            &self.fuse,
            &self.task_enc,
            &self.point_enc,
            &self.rot_enc,
        ] {
            l.init(params, rng)?;
        }
        for l in [&self.first_point_enc, &self.first_rot_enc].into_iter().flatten() {
            l.init(params, rng)?;
        }
        self.affordance.init(params, rng)?;
        self.critic.init(params, rng)?;
        self.prop_enc.init(params, rng)?;
        self.prop_mu.init(params, rng)?;
        self.prop_logvar.init(params, rng)?;
        self.prop_dec.init(params, rng)
    }

    /// Shared per-point MLP and max-pool over a centred `N × 3` cloud.
    pub fn encode_cloud(&self, t: &Tape, p: &ParameterSet, cloud: Var) -> Result<CloudFeatures> {
        let h = t.leaky_relu(self.set_l0.forward(t, p, cloud)?);
        let local = t.leaky_relu(self.set_l1.forward(t, p, h)?);
        let (global, _) = t.max_pool_rows(local)?;
        Ok(CloudFeatures { local, global })
    }

    /// Fused segmentation-style features `f_s` at the given cloud rows.
    pub fn point_features(&self, t: &Tape, p: &ParameterSet, f: &CloudFeatures, rows: &[usize]) -> Result<Var> {
        let local = t.gather_rows(f.local, rows)?;
        let global = t.tile_rows(f.global, rows.len())?;
        Ok(t.leaky_relu(self.fuse.forward(t, p, t.concat(&[local, global])?)?))
    }

    fn enc(&self, t: &Tape, p: &ParameterSet, l: &Linear, x: Var) -> Result<Var> {
        Ok(t.leaky_relu(l.forward(t, p, x)?))
    }

    /// Concatenated head input `[f_s, f_l, f_p (, f_p1, f_R1)]`, one row per query.
    ///
    /// `task` is `B × task_dim`, `points` `B × 3` (centred), `first` the
    /// first action as (`B × 3` centred point, `B × 6` rotation).
    pub fn context(
        &self,
        t: &Tape,
        p: &ParameterSet,
        fs: Var,
        task: Var,
        points: Var,
        first: Option<(Var, Var)>,
    ) -> Result<Var> {
        let mut parts = vec![
            fs,
            self.enc(t, p, &self.task_enc, task)?,
            self.enc(t, p, &self.point_enc, points)?,
        ];
        match (&self.first_point_enc, &self.first_rot_enc, first) {
            (Some(pe), Some(re), Some((p1, r1))) => {
                parts.push(self.enc(t, p, pe, p1)?);
                parts.push(self.enc(t, p, re, r1)?);
            }
            (None, None, None) => {}
            _ => {
                return Err(crate::tensor::TensorError::Rank {
                    op: "context: first action required exactly for module 2",
                    shape: vec![],
                })
            }
        }
        t.concat(&parts)
    }

    /// Affordance scores in `[0, 1]`, `B × 1`.
    pub fn affordance(&self, t: &Tape, p: &ParameterSet, ctx: Var) -> Result<Var> {
        self.affordance.forward(t, p, ctx)
    }

    /// Critic scores for `B × 6` orientations, `B × 1`.
    pub fn critic(&self, t: &Tape, p: &ParameterSet, ctx: Var, rot6: Var) -> Result<Var> {
        let fr = self.enc(t, p, &self.rot_enc, rot6)?;
        self.critic.forward(t, p, t.concat(&[ctx, fr])?)
    }

    /// Posterior `(μ, log σ²)` for orientations `rot6`.
    pub fn propose_encode(&self, t: &Tape, p: &ParameterSet, ctx: Var, rot6: Var) -> Result<(Var, Var)> {
        let fr = self.enc(t, p, &self.rot_enc, rot6)?;
        let h = self.prop_enc.forward(t, p, t.concat(&[ctx, fr])?)?;
        Ok((self.prop_mu.forward(t, p, h)?, self.prop_logvar.forward(t, p, h)?))
    }

    /// Raw 6D orientation from a latent, `B × 6`.
    pub fn propose_decode(&self, t: &Tape, p: &ParameterSet, ctx: Var, z: Var) -> Result<Var> {
        self.prop_dec.forward(t, p, t.concat(&[ctx, z])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_widths() {
        let d = PerceptionDims::default();
        let m1 = GripperModule::new(ModuleId::First, TaskKind::Push, d);
        let m2 = GripperModule::new(ModuleId::Second, TaskKind::Push, d);
        assert_eq!(m1.context_width(), 192);
        assert_eq!(m1.critic_width(), 224);
        assert_eq!(m1.decoder_width(), 224);
        assert_eq!(m2.context_width(), 256);
        assert_eq!(m2.critic_width(), 288);
        assert_eq!(m2.decoder_width(), 288);
        let mut p = ParameterSet::new();
        m1.init(&mut p, &mut Rng::new(1)).unwrap();
        m2.init(&mut p, &mut Rng::new(2)).unwrap();
        assert_eq!(p.get("m1.enc.task.w").unwrap().shape(), &[3, 32]);
        assert_eq!(p.get("m2.prop.mu.w").unwrap().shape(), &[32, 32]);
        assert_eq!(p.get("m2.prop.enc.l0.w").unwrap().shape(), &[288, 128]);
        assert!(p.get("m1.enc.p1.w").is_none());
        let rot = GripperModule::new(ModuleId::First, TaskKind::Rotate, d);
        let mut q = ParameterSet::new();
        rot.init(&mut q, &mut Rng::new(1)).unwrap();
        assert_eq!(q.get("m1.enc.task.w").unwrap().shape(), &[1, 32]);
    }
}
