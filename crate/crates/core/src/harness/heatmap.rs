//! Per-point score export for external plotting.

use std::io::Write;
use std::str::FromStr;

use super::HarnessError;
use crate::geometry::{GripperAction, SixDRotation};
use crate::perception::{affordance_map, critic_map, DualAfford, FirstAction, PreparedCloud};
use crate::sim::{PointCloud, TaskSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatmapVariant {
    /// First-gripper affordance.
    Affordance1,
    /// Second-gripper affordance given the first action.
    Affordance2,
    /// First critic for a fixed orientation.
    Critic1,
    /// Second critic given the first action and a second orientation.
    Critic2,
}

impl HeatmapVariant {
    pub const ALL: [HeatmapVariant; 4] = [
        HeatmapVariant::Affordance1,
        HeatmapVariant::Affordance2,
        HeatmapVariant::Critic1,
        HeatmapVariant::Critic2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeatmapVariant::Affordance1 => "affordance-1",
            HeatmapVariant::Affordance2 => "affordance-2",
            HeatmapVariant::Critic1 => "critic-1",
            HeatmapVariant::Critic2 => "critic-2",
        }
    }
}

impl FromStr for HeatmapVariant {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| HarnessError::Usage(format!("unknown heatmap variant `{s}`")))
    }
}

/// Inputs some variants are conditioned on.
#[derive(Clone, Debug, Default)]
pub struct Fixings {
    pub first: Option<GripperAction>,
    pub rotation: Option<SixDRotation>,
}

/// Scores in `[0, 1]`, one per cloud point.
pub fn heatmap_scores(
    model: &DualAfford,
    cloud: &PointCloud,
    task: &TaskSpec,
    variant: HeatmapVariant,
    fix: &Fixings,
) -> Result<Vec<f64>, HarnessError> {
    let need = |what: &str| HarnessError::Usage(format!("heatmap variant `{}` needs {what}", variant.name()));
    let prepared = PreparedCloud::new(cloud);
    let tv = task.to_vec();
    let first = || -> Result<FirstAction, HarnessError> {
        let u = fix.first.as_ref().ok_or_else(|| need("a first action (--u1)"))?;
        Ok(FirstAction::new(&prepared, u))
    };
    let rot = || -> Result<[f64; 6], HarnessError> {
        let r = fix.rotation.ok_or_else(|| need("an orientation (--rotation)"))?;
        Ok(r.to_matrix()?.to_sixd().0)
    };
    let p = &model.params;
    Ok(match variant {
        HeatmapVariant::Affordance1 => affordance_map(&model.m1, p, &prepared, &tv, None)?,
        HeatmapVariant::Affordance2 => affordance_map(&model.m2, p, &prepared, &tv, Some(first()?))?,
        HeatmapVariant::Critic1 => critic_map(&model.m1, p, &prepared, &tv, None, &rot()?)?,
        HeatmapVariant::Critic2 => critic_map(&model.m2, p, &prepared, &tv, Some(first()?), &rot()?)?,
    })
}

pub const HEATMAP_HEADER: &str = "x,y,z,score";

/// `x,y,z,score` with six decimals and LF line endings.
pub fn write_heatmap_csv<W: Write>(mut w: W, cloud: &PointCloud, scores: &[f64]) -> std::io::Result<()> {
    w.write_all(HEATMAP_HEADER.as_bytes())?;
    w.write_all(b"\n")?;
    for (p, s) in cloud.points.iter().zip(scores) {
        writeln!(w, "{:.6},{:.6},{:.6},{:.6}", p.x, p.y, p.z, s)?;
    }
    Ok(())
}

/// Whitespace-separated `x y z r g b` rows coloured by viridis.
pub fn write_colored_points<W: Write>(mut w: W, cloud: &PointCloud, scores: &[f64]) -> std::io::Result<()> {
    for (p, s) in cloud.points.iter().zip(scores) {
        let c = colorous::VIRIDIS.eval_continuous(s.clamp(0.0, 1.0));
        writeln!(w, "{:.6} {:.6} {:.6} {} {} {}", p.x, p.y, p.z, c.r, c.g, c.b)?;
    }
    Ok(())
}
