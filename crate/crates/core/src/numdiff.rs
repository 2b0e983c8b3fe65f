//! Central finite differences and deterministic summation.
//!
//! Step sizes follow the usual optimal-order rules for central differences:
//! ε^(1/3)·max(1,|x|) for first derivatives and ε^(1/4)·max(1,|x|) for
//! anything feeding a second derivative (differencing a gradient, or double
//! differencing a function), with ε the f64 machine epsilon.
//!
//! Evaluation failures (infeasible points, non-finite values) surface as
//! errors — never as silent NaNs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Step factor for first derivatives: ε^(1/3).
pub fn grad_step_factor() -> f64 {
    f64::EPSILON.cbrt()
}

/// Step factor for second-derivative work: ε^(1/4).
pub fn hess_step_factor() -> f64 {
    f64::EPSILON.sqrt().sqrt()
}

pub fn grad_step(x: f64) -> f64 {
    grad_step_factor() * x.abs().max(1.0)
}

pub fn hess_step(x: f64) -> f64 {
    hess_step_factor() * x.abs().max(1.0)
}

/// Central-difference gradient of a scalar function.
pub fn central_gradient<F>(mut f: F, x: &DVector<f64>) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let m = x.len();
    let mut g = DVector::zeros(m);
    let mut xp = x.clone();
    for a in 0..m {
        let h = grad_step(x[a]);
        xp[a] = x[a] + h;
        let fp = f(&xp)?;
        xp[a] = x[a] - h;
        let fm = f(&xp)?;
        xp[a] = x[a];
        let d = (fp - fm) / (2.0 * h);
        if !d.is_finite() {
            return Err(Error::NonFiniteDifference);
        }
        g[a] = d;
    }
    Ok(g)
}

/// Central-difference Jacobian of a vector function; column a holds
/// ∂f/∂xₐ. The step rule is supplied by the caller (gradient- or
/// Hessian-grade).
pub fn central_jacobian<F>(
    mut f: F,
    x: &DVector<f64>,
    step: impl Fn(f64) -> f64,
) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let m = x.len();
    let mut xp = x.clone();
    let mut out: Option<DMatrix<f64>> = None;
    for a in 0..m {
        let h = step(x[a]);
        xp[a] = x[a] + h;
        let fp = f(&xp)?;
        xp[a] = x[a] - h;
        let fm = f(&xp)?;
        xp[a] = x[a];
        let col = (fp - fm) / (2.0 * h);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDifference);
        }
        let store = out.get_or_insert_with(|| DMatrix::zeros(col.len(), m));
        store.set_column(a, &col);
    }
    Ok(out.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

/// Central-difference Hessian of a scalar function (ε^(1/4) steps), exactly
/// symmetric by construction.
pub fn central_hessian<F>(mut f: F, x: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let m = x.len();
    let f0 = f(x)?;
    let mut h = DMatrix::zeros(m, m);
    let mut xp = x.clone();
    for a in 0..m {
        let ha = hess_step(x[a]);
        xp[a] = x[a] + ha;
        let fp = f(&xp)?;
        xp[a] = x[a] - ha;
        let fm = f(&xp)?;
        xp[a] = x[a];
        h[(a, a)] = (fp - 2.0 * f0 + fm) / (ha * ha);
    }
    for a in 0..m {
        let ha = hess_step(x[a]);
        for b in (a + 1)..m {
            let hb = hess_step(x[b]);
            let mut eval = |da: f64, db: f64| -> Result<f64> {
                xp[a] = x[a] + da;
                xp[b] = x[b] + db;
                let v = f(&xp);
                xp[a] = x[a];
                xp[b] = x[b];
                v
            };
            let v = (eval(ha, hb)? - eval(ha, -hb)? - eval(-ha, hb)? + eval(-ha, -hb)?)
                / (4.0 * ha * hb);
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteDifference);
    }
    Ok(h)
}

/// Pairwise (cascade) summation: deterministic for a fixed ordering and far
/// more accurate than sequential folding on long vectors.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BASE: usize = 16;
    if xs.len() <= BASE {
        let mut acc = 0.0;
        for &v in xs {
            acc += v;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
