//! Geometric grasp prior: closeness to a pinchable feature segment.

use crate::sim::{PointCloud, SceneState};

/// Distance decay length of the prior.
pub const PRIOR_SCALE: f64 = 0.05;

/// Per-point score `exp(-d / PRIOR_SCALE)` with `d` the distance to the
/// nearest graspable feature; all zero for objects without features.
pub fn grasp_prior(cloud: &PointCloud, scene: &SceneState) -> Vec<f64> {
    let features = &scene.object.features;
    cloud
        .points
        .iter()
        .map(|p| {
            let q = scene.camera_to_object(p);
            features
                .iter()
                .map(|f| (-f.distance(&q) / PRIOR_SCALE).exp())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Indices of the top `fraction` of scores (at least one), best first.
/// A flat score vector yields every index, so callers sample uniformly.
pub fn top_fraction(scores: &[f64], fraction: f64) -> Vec<usize> {
    let (lo, hi) = scores
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &s| (a.min(s), b.max(s)));
    if scores.is_empty() || hi - lo < 1e-12 {
        return (0..scores.len()).collect();
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let k = ((scores.len() as f64 * fraction).ceil() as usize).clamp(1, scores.len());
    order.truncate(k);
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::SceneRef;
    use crate::sim::{builtin_library, BOTTOM_FACE, TOP_FACE};

    #[test]
    fn bucket_rim_scores_high() {
        let lib = builtin_library();
        let obs = SceneRef {
            object_id: "bucket".into(),
            pose_seed: 2,
            camera_seed: 3,
        }
        .observe(&lib, 512)
        .unwrap();
        let s = grasp_prior(&obs.cloud, &obs.scene);
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        let feats = &obs.scene.object.features;
        let mut rim = 0;
        for (i, p) in obs.cloud.points.iter().enumerate() {
            let q = obs.scene.camera_to_object(p);
            let d = feats.iter().map(|f| f.distance(&q)).fold(f64::MAX, f64::min);
            if d < 0.01 {
                rim += 1;
                assert!(s[i] > 0.5);
            }
            assert_ne!(obs.cloud.faces[i], BOTTOM_FACE);
            // centre of the top face is far from the rim
            if obs.cloud.faces[i] == TOP_FACE && q.xy().norm() < 0.2 {
                assert!(s[i] < 0.1);
            }
        }
        assert!(rim > 0);
        // bottom face points, synthesized directly
        let bottom = crate::geometry::Vec3::new(0.0, 0.1, 0.0);
        let cloud = PointCloud {
            points: vec![obs.scene.object_to_camera(&bottom)],
            faces: vec![BOTTOM_FACE],
        };
        assert!(grasp_prior(&cloud, &obs.scene)[0] < 0.1);
    }

    #[test]
    fn featureless_object_falls_back_to_uniform() {
        let lib = builtin_library();
        let obs = SceneRef {
            object_id: "box".into(),
            pose_seed: 2,
            camera_seed: 3,
        }
        .observe(&lib, 100)
        .unwrap();
        let s = grasp_prior(&obs.cloud, &obs.scene);
        assert!(s.iter().all(|v| *v == 0.0));
        assert_eq!(top_fraction(&s, 0.1).len(), 100);
        assert_eq!(top_fraction(&[0.1, 0.9, 0.5, 0.2], 0.5), vec![1, 2]);
    }
}
