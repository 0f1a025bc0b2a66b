//! The four training losses on the tape.

use crate::perception::rot::{geodesic, kl_standard_normal};
use crate::tensor::{Result, Tape, Var};

/// Probability clamp for the cross-entropy.
pub const PROB_EPS: f64 = 1e-7;

/// Mean binary cross-entropy of `B × 1` probabilities against 0/1 labels.
pub fn bce(t: &Tape, pred: Var, labels: &[f64]) -> Result<Var> {
    let (b, _) = t.shape(pred);
    let c = t.clamp(pred, PROB_EPS, 1.0 - PROB_EPS);
    let r = t.constant(b, 1, labels.to_vec())?;
    let one_minus_r = t.constant(b, 1, labels.iter().map(|v| 1.0 - v).collect())?;
    let pos = t.mul(r, t.log(c))?;
    let neg = t.mul(one_minus_r, t.log(t.add_scalar(t.scale(c, -1.0), 1.0)))?;
    Ok(t.scale(t.mean_all(t.add(pos, neg)?), -1.0))
}

/// Mean absolute error against fixed targets.
pub fn l1(t: &Tape, pred: Var, targets: &[f64]) -> Result<Var> {
    let (b, c) = t.shape(pred);
    let y = t.constant(b, c, targets.to_vec())?;
    Ok(t.mean_all(t.abs(t.sub(pred, y)?)))
}

/// Mean of geodesic reconstruction error plus `beta`-weighted KL to the prior.
///
/// `target` holds `B` orthonormal 6D rows.
pub fn proposal(t: &Tape, decoded: Var, target: &[f64], mu: Var, logvar: Var, beta: f64) -> Result<Var> {
    let (b, _) = t.shape(decoded);
    let cols = |off: usize| -> Vec<f64> {
        (0..b).flat_map(|i| target[6 * i + off..6 * i + off + 3].to_vec()).collect()
    };
    let c1 = t.constant(b, 3, cols(0))?;
    let c2 = t.constant(b, 3, cols(3))?;
    let geo = geodesic(t, decoded, c1, c2)?;
    let kl = kl_standard_normal(t, mu, logvar)?;
    Ok(t.mean_all(t.add(geo, t.scale(kl, beta))?))
}
