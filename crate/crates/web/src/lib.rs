//! Browser bindings for a few toy-world operations. Build with
//! `cargo build --target wasm32-unknown-unknown` and `wasm-bindgen --target web`.

use wasm_bindgen::prelude::*;

use dualafford::datagen::{grasp_prior, label_actions, random_actions, Provenance, SceneRef};
use dualafford::geometry::{geodesic_distance, sixd_to_matrix, SixDRotation, UnitVector3, Vec3};
use dualafford::sim::{builtin_library, GripperSpec, TaskSpec};
use dualafford::tensor::Rng;

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn six(v: &[f64]) -> Result<SixDRotation, JsValue> {
    let a: [f64; 6] = v.try_into().map_err(|_| err(format!("expected 6 numbers, got {}", v.len())))?;
    Ok(SixDRotation(a))
}

/// Ids of the built-in objects.
#[wasm_bindgen]
pub fn object_ids() -> Vec<String> {
    builtin_library().into_iter().map(|o| o.id).collect()
}

/// Gram-Schmidt decode of a 6D orientation; row-major 3x3.
#[wasm_bindgen]
pub fn decode_rotation(v: &[f64]) -> Result<Vec<f64>, JsValue> {
    let m = sixd_to_matrix(&six(v)?).map_err(err)?;
    let m = m.matrix();
    Ok((0..3).flat_map(|r| (0..3).map(move |c| m[(r, c)])).collect())
}

/// Geodesic distance between two 6D orientations, in degrees.
#[wasm_bindgen]
pub fn geodesic_degrees(a: &[f64], b: &[f64]) -> Result<f64, JsValue> {
    let ra = sixd_to_matrix(&six(a)?).map_err(err)?;
    let rb = sixd_to_matrix(&six(b)?).map_err(err)?;
    Ok(geodesic_distance(&ra, &rb).to_degrees())
}

/// Partial scan of a seeded scene as `x, y, z, prior` rows.
#[wasm_bindgen]
pub fn scan(object: &str, pose_seed: u64, camera_seed: u64, n_points: usize) -> Result<Vec<f64>, JsValue> {
    let lib = builtin_library();
    let scene = SceneRef {
        object_id: object.to_string(),
        pose_seed,
        camera_seed,
    };
    let obs = scene.observe(&lib, n_points).map_err(err)?;
    let prior = grasp_prior(&obs.cloud, &obs.scene);
    Ok(obs
        .cloud
        .points
        .iter()
        .zip(prior)
        .flat_map(|(p, s)| [p.x, p.y, p.z, s])
        .collect())
}

/// One random dual-gripper push along `heading_deg` (world frame) in the
/// seeded scene. Returns `[label, x1, y1, z1, x2, y2, z2]`, points in the
/// scan frame; label 1 means both grippers were needed.
#[wasm_bindgen]
pub fn random_push_trial(
    object: &str,
    pose_seed: u64,
    camera_seed: u64,
    n_points: usize,
    heading_deg: f64,
    trial_seed: u64,
) -> Result<Vec<f64>, JsValue> {
    let lib = builtin_library();
    let scene = SceneRef {
        object_id: object.to_string(),
        pose_seed,
        camera_seed,
    };
    let obs = scene.observe(&lib, n_points).map_err(err)?;
    let h = heading_deg.to_radians();
    let dir = UnitVector3::normalize(Vec3::new(h.cos(), h.sin(), 0.0)).ok_or_else(|| err("bad heading"))?;
    let task = TaskSpec::Push(dir);
    let mut rng = Rng::new(trial_seed);
    let (u1, u2) = random_actions(&obs.cloud, &mut rng);
    let s = label_actions(&obs, &task, &u1, &u2, &GripperSpec::default(), Provenance::Random);
    if let Some(e) = s.sim_error {
        return Err(err(e));
    }
    let mut out = vec![s.record.r as f64];
    out.extend(u1.point);
    out.extend(u2.point);
    Ok(out)
}
