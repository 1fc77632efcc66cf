use nalgebra::{DMatrix, DVector};

/// Steps shorter than this (2-norm) leave the approximation unchanged.
pub const MIN_STEP: f64 = 1e-12;

/// Powell-damped BFGS update of a symmetric positive definite Hessian
/// approximation. When the curvature `s'y` is too small relative to
/// `s'Hs`, `y` is blended with `Hs` so the update stays positive definite.
///
/// Returns `false` when the update was skipped.
pub fn bfgs_update(h: &mut DMatrix<f64>, step: &DVector<f64>, grad_change: &DVector<f64>) -> bool {
    if step.norm() < MIN_STEP {
        return false;
    }
    let hs = &*h * step;
    let shs = step.dot(&hs);
    if !(shs > 0.0) || !shs.is_finite() {
        return false;
    }
    let sy = step.dot(grad_change);
    let theta = if sy >= 0.2 * shs {
        1.0
    } else {
        0.8 * shs / (shs - sy)
    };
    let r = grad_change * theta + &hs * (1.0 - theta);
    let sr = step.dot(&r);
    if !(sr > 0.0) || !sr.is_finite() {
        return false;
    }
    h.ger(1.0 / sr, &r, &r, 1.0);
    h.ger(-1.0 / shs, &hs, &hs, 1.0);
    // re-symmetrise against round-off drift
    let n = h.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = avg;
            h[(j, i)] = avg;
        }
    }
    true
}
