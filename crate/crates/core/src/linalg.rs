//! Dense linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{GgpError, Result};

/// Relative jitter ladder for Cholesky: `1e-6 · mean(diag)` escalating by
/// ×10 up to `1e-2 · mean(diag)`.
pub const JITTER_LADDER: [f64; 5] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

/// Cholesky factor of `K + c·mean(diag K)·I` for the first rung `c` of the
/// jitter ladder that succeeds. Returns the factor and the relative rung.
pub fn cholesky_jittered(k: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let m = k.nrows();
    let scale = k.diagonal().mean().abs().max(f64::MIN_POSITIVE);
    for &rung in &JITTER_LADDER {
        let mut kj = k.clone();
        for i in 0..m {
            kj[(i, i)] += rung * scale;
        }
        if let Some(ch) = kj.cholesky() {
            return Ok((ch.unpack(), rung));
        }
    }
    Err(GgpError::numerical(format!(
        "Cholesky failed for {m}x{m} matrix after jitter ladder {:?} x mean(diag)={scale:e}",
        JITTER_LADDER
    )))
}

/// Solves `L X = B` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b).expect("non-singular triangular factor")
}

/// Solves `Lᵀ X = B` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.tr_solve_lower_triangular(b).expect("non-singular triangular factor")
}

/// Reverse-mode step through `L = chol(K)`: given `∂f/∂L` (only the lower
/// triangle is read) returns the symmetric `∂f/∂K`.
pub fn cholesky_backward(l: &DMatrix<f64>, l_bar: &DMatrix<f64>) -> DMatrix<f64> {
    let m = l.nrows();
    let mut c = l.transpose() * l_bar.lower_triangle();
    // Φ: lower triangle with halved diagonal, then symmetric split
    for i in 0..m {
        for j in (i + 1)..m {
            c[(i, j)] = 0.0;
        }
        c[(i, i)] *= 0.5;
    }
    let c = (&c + c.transpose()) * 0.5;
    // L⁻ᵀ C L⁻¹
    let t = solve_lower_transpose(l, &c);
    let k_bar = solve_lower_transpose(l, &t.transpose());
    (&k_bar + k_bar.transpose()) * 0.5
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Derivative of softplus, the logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Conjugate gradients for a symmetric positive definite operator.
/// Stops when `‖r‖ ≤ tol · ‖b‖` or after `max_iter` steps.
pub fn conjugate_gradient<F>(apply: F, b: &DVector<f64>, tol: f64, max_iter: usize) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = b.len();
    let mut x = DVector::zeros(n);
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    for _ in 0..max_iter {
        if rs.sqrt() <= tol * b_norm {
            return Ok(x);
        }
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(GgpError::input("linear system is singular or not positive definite"));
        }
        let alpha = rs / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rs_new = r.dot(&r);
        p = &r + &p * (rs_new / rs);
        rs = rs_new;
    }
    if rs.sqrt() <= 1e3 * tol * b_norm {
        Ok(x)
    } else {
        Err(GgpError::numerical(format!(
            "conjugate gradients did not converge: residual {:e}",
            rs.sqrt() / b_norm
        )))
    }
}
