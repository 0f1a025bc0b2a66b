//! Rotation math on the tape.

use crate::tensor::{Axis, Result, Tape, Var};

/// Column clamp keeping `acos` differentiable.
const COS_LIMIT: f64 = 1.0 - 1e-7;

/// Gram-Schmidt on `B × 6` rows; returns the first two orthonormal columns
/// (`B × 3` each). The third column is never needed: the geodesic uses only
/// dot products of the first two.
pub fn gram_schmidt(t: &Tape, six: Var) -> Result<(Var, Var)> {
    let a1 = t.slice_cols(six, 0, 3)?;
    let a2 = t.slice_cols(six, 3, 6)?;
    let (rows, _) = t.shape(six);
    let ones = t.constant(rows, 1, vec![1.0; rows])?;
    let b1 = t.mul_col(a1, t.div(ones, t.row_norm(a1))?)?;
    let proj = t.mul_col(b1, t.row_dot(b1, a2)?)?;
    let u2 = t.sub(a2, proj)?;
    let b2 = t.mul_col(u2, t.div(ones, t.row_norm(u2))?)?;
    Ok((b1, b2))
}

/// Geodesic angle between the rotations decoded from `pred` (`B × 6`, any
/// scale) and orthonormal targets with columns `c1`, `c2` (`B × 3`).
///
/// `trace(Pᵀ Q) = b1·c1 + b2·c2 + (b1×b2)·(c1×c2)` and the last term is
/// `(b1·c1)(b2·c2) − (b1·c2)(b2·c1)` by the Binet-Cauchy identity.
pub fn geodesic(t: &Tape, pred: Var, c1: Var, c2: Var) -> Result<Var> {
    let (b1, b2) = gram_schmidt(t, pred)?;
    let d11 = t.row_dot(b1, c1)?;
    let d22 = t.row_dot(b2, c2)?;
    let d12 = t.row_dot(b1, c2)?;
    let d21 = t.row_dot(b2, c1)?;
    let cross = t.sub(t.mul(d11, d22)?, t.mul(d12, d21)?)?;
    let trace = t.add(t.add(d11, d22)?, cross)?;
    let cos = t.scale(t.add_scalar(trace, -1.0), 0.5);
    Ok(t.acos(t.clamp(cos, -COS_LIMIT, COS_LIMIT)))
}

/// Per-row `KL(N(μ, σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − log σ²)`, `B × 1`.
pub fn kl_standard_normal(t: &Tape, mu: Var, logvar: Var) -> Result<Var> {
    let terms = t.sub(t.add(t.mul(mu, mu)?, t.exp(logvar))?, t.add_scalar(logvar, 1.0))?;
    Ok(t.scale(t.sum(terms, Axis::Cols), 0.5))
}

/// Reparameterized sample `μ + exp(½ log σ²) ⊙ ε`.
pub fn reparameterize(t: &Tape, mu: Var, logvar: Var, eps: Vec<f64>) -> Result<Var> {
    let (r, c) = t.shape(mu);
    let e = t.constant(r, c, eps)?;
    t.add(mu, t.mul(t.exp(t.scale(logvar, 0.5)), e)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{geodesic_distance, random_rotation, sixd_to_matrix, SixDRotation};
    use crate::tensor::Rng;

    #[test]
    fn matches_closed_form_geodesic() {
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let raw: Vec<f64> = rng.normals(6);
            let target = random_rotation(&mut rng);
            let t = Tape::no_grad();
            let pred = t.constant(1, 6, raw.clone()).unwrap();
            let c1 = target.column(0);
            let c2 = target.column(1);
            let c1v = t.row(&[c1.x, c1.y, c1.z]);
            let c2v = t.row(&[c2.x, c2.y, c2.z]);
            let g = t.item(geodesic(&t, pred, c1v, c2v).unwrap());
            let p = sixd_to_matrix(&SixDRotation(raw.try_into().unwrap())).unwrap();
            let want = geodesic_distance(&p, &target);
            assert!((g - want).abs() < 1e-6, "{g} vs {want}");
        }
    }

    #[test]
    fn kl_closed_forms() {
        let t = Tape::no_grad();
        let mu = t.constant(1, 32, vec![0.0; 32]).unwrap();
        let lv = t.constant(1, 32, vec![0.0; 32]).unwrap();
        assert_eq!(t.item(kl_standard_normal(&t, mu, lv).unwrap()), 0.0);
        let mu = t.constant(1, 32, vec![1.0; 32]).unwrap();
        assert!((t.item(kl_standard_normal(&t, mu, lv).unwrap()) - 16.0).abs() < 1e-12);
    }
}
