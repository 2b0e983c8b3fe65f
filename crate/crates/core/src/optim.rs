//! Limited-memory quasi-Newton maximization with projected box constraints.
//!
//! The objective and gradient closures return `Option`: `None` marks an
//! infeasible point (for example a parameter vector whose implied covariance
//! is not positive definite), which the line search treats as a failed step
//! rather than an error. Convergence is declared when the scaled projected
//! gradient satisfies max_a |pg_a|·max(1,|x_a|)/max(1,|f|) < `grad_tol`, or
//! when the relative step length falls below `step_tol`.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Elementwise box constraints.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Bounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::LengthMismatch { got: upper.len(), expected: lower.len() });
        }
        for a in 0..lower.len() {
            if !lower[a].is_finite() || !upper[a].is_finite() || lower[a] > upper[a] {
                return Err(Error::Config(format!(
                    "invalid bound for parameter {}: [{}, {}]",
                    a + 1,
                    lower[a],
                    upper[a]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(m: usize) -> Self {
        // Large finite box; keeps the arithmetic free of infinities.
        Self {
            lower: DVector::from_element(m, -1e12),
            upper: DVector::from_element(m, 1e12),
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.len() == 0
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |a, _| x[a].clamp(self.lower[a], self.upper[a]))
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        (0..x.len()).all(|a| x[a] >= self.lower[a] && x[a] <= self.upper[a])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OptimOptions {
    pub max_iters: usize,
    pub memory: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self { max_iters: 500, memory: 10, grad_tol: 1e-6, step_tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub x: DVector<f64>,
    pub f: f64,
    pub converged: bool,
    pub iterations: usize,
}

const ARMIJO_C1: f64 = 1e-4;
const WOLFE_C2: f64 = 0.9;
const CURVATURE_TOL: f64 = 1e-10;
const MIN_STEP_SCALE: f64 = 1e-14;
/// Bound-activity tolerance relative to the box width.
const ACTIVE_TOL: f64 = 1e-12;

/// Projected gradient of the *minimized* objective: components that point
/// out of the box at an active bound are zeroed.
fn projected_gradient(gm: &DVector<f64>, x: &DVector<f64>, bounds: &Bounds) -> DVector<f64> {
    DVector::from_fn(x.len(), |a, _| {
        let width = (bounds.upper[a] - bounds.lower[a]).max(1.0);
        let at_lower = x[a] - bounds.lower[a] <= ACTIVE_TOL * width;
        let at_upper = bounds.upper[a] - x[a] <= ACTIVE_TOL * width;
        if (at_lower && gm[a] > 0.0) || (at_upper && gm[a] < 0.0) {
            0.0
        } else {
            gm[a]
        }
    })
}

fn scaled_grad_norm(pg: &DVector<f64>, x: &DVector<f64>, f: f64) -> f64 {
    let denom = f.abs().max(1.0);
    (0..x.len())
        .map(|a| pg[a].abs() * x[a].abs().max(1.0) / denom)
        .fold(0.0, f64::max)
}

/// Maximizes `f` over the box using L-BFGS directions with an Armijo
/// backtracking search along the projected path. Returns an error only when
/// no feasible starting value exists; optimizer failure is reported through
/// `converged = false`.
pub fn maximize_box<F, G>(
    mut f: F,
    mut g: G,
    x0: &DVector<f64>,
    bounds: &Bounds,
    opts: &OptimOptions,
) -> Result<OptimOutcome>
where
    F: FnMut(&DVector<f64>) -> Option<f64>,
    G: FnMut(&DVector<f64>) -> Option<DVector<f64>>,
{
    if x0.len() != bounds.len() {
        return Err(Error::LengthMismatch { got: bounds.len(), expected: x0.len() });
    }
    let m = x0.len();
    let mut x = bounds.project(x0);
    if m == 0 {
        let f0 = f(&x).ok_or(Error::StartValue)?;
        return Ok(OptimOutcome { x, f: f0, converged: true, iterations: 0 });
    }
    let mut fx = match f(&x) {
        Some(v) if v.is_finite() => v,
        _ => return Err(Error::StartValue),
    };
    // Work in minimization form: φ = −f, gm = −∇f.
    let mut gm = match g(&x) {
        Some(v) => -v,
        None => return Err(Error::StartValue),
    };

    let mut s_mem: Vec<DVector<f64>> = Vec::new();
    let mut y_mem: Vec<DVector<f64>> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..opts.max_iters {
        iterations = iter + 1;
        let pg = projected_gradient(&gm, &x, bounds);
        if scaled_grad_norm(&pg, &x, fx) < opts.grad_tol {
            converged = true;
            iterations = iter;
            break;
        }

        // Two-loop recursion on the stored pairs.
        let mut d = {
            let k = s_mem.len();
            let mut q = gm.clone();
            let mut alphas = vec![0.0; k];
            for i in (0..k).rev() {
                let rho = 1.0 / y_mem[i].dot(&s_mem[i]);
                alphas[i] = rho * s_mem[i].dot(&q);
                q -= &y_mem[i] * alphas[i];
            }
            if k > 0 {
                let gamma = s_mem[k - 1].dot(&y_mem[k - 1]) / y_mem[k - 1].dot(&y_mem[k - 1]);
                q *= gamma;
            }
            for i in 0..k {
                let rho = 1.0 / y_mem[i].dot(&s_mem[i]);
                let beta = rho * y_mem[i].dot(&q);
                q += &s_mem[i] * (alphas[i] - beta);
            }
            -q
        };
        if !d.iter().all(|v| v.is_finite()) || d.dot(&gm) >= 0.0 {
            // Not a descent direction for φ: fall back to steepest descent.
            s_mem.clear();
            y_mem.clear();
            d = -gm.clone();
        }

        // Weak-Wolfe line search along the projected path: bisection on the
        // Armijo condition, expansion on the curvature condition. A point
        // satisfying both guarantees a positive-curvature (s, y) pair; if the
        // bracket collapses first, the last Armijo-satisfying point is used.
        let gd0 = gm.dot(&d);
        let mut lo = 0.0_f64;
        let mut hi = f64::INFINITY;
        let mut t = 1.0_f64;
        let mut accepted: Option<(DVector<f64>, f64, DVector<f64>)> = None;
        for _ in 0..60 {
            let trial = bounds.project(&(&x + &d * t));
            let dx = &trial - &x;
            if dx.amax() == 0.0 {
                break; // direction entirely blocked by the box
            }
            let armijo = match f(&trial) {
                Some(ft) if ft.is_finite() => {
                    // φ(trial) − φ(x) ≤ c1·∇φᵀdx
                    (-(ft - fx) <= ARMIJO_C1 * gm.dot(&dx)).then_some(ft)
                }
                _ => None,
            };
            let Some(ft) = armijo else {
                hi = t;
                t = 0.5 * (lo + hi);
                if hi - lo < MIN_STEP_SCALE {
                    break;
                }
                continue;
            };
            match g(&trial) {
                Some(gt) => {
                    let gmt = -gt;
                    let curvature_ok = gmt.dot(&d) >= WOLFE_C2 * gd0;
                    accepted = Some((trial, ft, gmt));
                    if curvature_ok {
                        break;
                    }
                    lo = t;
                    t = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * t };
                }
                None => {
                    // Feasible objective but infeasible gradient: back off.
                    hi = t;
                    t = 0.5 * (lo + hi);
                }
            }
            if hi.is_finite() && hi - lo < MIN_STEP_SCALE {
                break;
            }
        }

        let Some((x_new, f_new, gm_new)) = accepted else {
            // No acceptable step along this direction; if we were using
            // curvature memory, drop it and retry as plain gradient descent.
            if s_mem.is_empty() {
                break;
            }
            s_mem.clear();
            y_mem.clear();
            continue;
        };
        let s = &x_new - &x;
        let y = &gm_new - &gm;
        let step_scale = (0..m)
            .map(|a| s[a].abs() / x_new[a].abs().max(1.0))
            .fold(0.0, f64::max);
        let ys = y.dot(&s);
        if ys > CURVATURE_TOL * s.norm() * y.norm() {
            s_mem.push(s);
            y_mem.push(y);
            if s_mem.len() > opts.memory {
                s_mem.remove(0);
                y_mem.remove(0);
            }
        }
        x = x_new;
        fx = f_new;
        gm = gm_new;
        if step_scale < opts.step_tol {
            converged = true;
            break;
        }
    }

    if !converged && iterations < opts.max_iters {
        // Line search stalled; check whether we are in fact at a stationary
        // point of the box-constrained problem.
        let pg = projected_gradient(&gm, &x, bounds);
        if scaled_grad_norm(&pg, &x, fx) < opts.grad_tol {
            converged = true;
        }
    }

    Ok(OptimOutcome { x, f: fx, converged, iterations })
}
