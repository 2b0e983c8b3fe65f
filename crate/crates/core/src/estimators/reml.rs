//! Restricted maximum likelihood for the growth-curve family.
//!
//! The supported family is the random-coefficient growth model and its
//! degenerate special cases: zero fixed intercepts ν, fully fixed design
//! loadings Λ (e.g. `[1 t]` time scores), no structural regressions, free
//! latent means α, and free parameters confined to α, Θ, and Ψ. For n
//! subjects observed on the same p occasions this is the balanced linear
//! mixed model yᵢ ~ N(Λα, V) with V = ΛΨΛᵀ + Θ, and the restricted
//! log-likelihood collapses to summary statistics:
//!
//!   ℓ_REML(V) = −½[ n·log|V| + log|n·ΛᵀV⁻¹Λ| + n·tr(V⁻¹S)
//!                   + n·δᵀV⁻¹δ + (np − q)·log 2π ],
//!
//! with δ = ȳ − Λα̂(V) and α̂(V) the GLS coefficients. Only the variance
//! parameters are optimized; α̂ is profiled out exactly. Standard errors:
//! inverse observed Hessian of ℓ_REML for the variance parameters, the GLS
//! covariance (ΛᵀV̂⁻¹Λ)⁻¹/n for α.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::data::{DataSummary, Dataset};
use crate::error::{Error, Result};
use crate::likelihood::LOG_2PI;
use crate::model::{Cell, MatrixId, ModelSpec};
use crate::numdiff;
use crate::optim::Bounds;

use super::{
    acceptance_threshold, check_acceptable, default_bounds, optimize_restarts, select,
    starting_values, Estimator, FitOptions, FitResult, RejectionReason,
};

/// Checks that `spec` is in the growth-curve family handled by REML; returns
/// the full-parameter indices of the α coefficients (in α row order) and of
/// the variance parameters (canonical order).
fn growth_family_indices(spec: &ModelSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let unsupported = |why: &str| {
        Err(Error::Unsupported(format!(
            "restricted likelihood covers only growth-curve-family specifications \
             (fixed zero intercepts, fixed loadings, no structural regressions, \
             free latent means): {why}"
        )))
    };
    if !spec.mean_structure {
        return unsupported("the specification has no mean structure");
    }
    if spec.q == 0 {
        return unsupported("there are no latent variables");
    }
    for i in 0..spec.p {
        if spec.nu.get(i, 0) != Cell::Fixed(0.0) {
            return unsupported("observed intercepts must all be fixed at zero");
        }
        for k in 0..spec.q {
            if !matches!(spec.lambda.get(i, k), Cell::Fixed(_)) {
                return unsupported("all loadings must be fixed");
            }
        }
    }
    for r in 0..spec.q {
        for c in 0..spec.q {
            if spec.b.get(r, c) != Cell::Fixed(0.0) {
                return unsupported("structural regressions must all be fixed at zero");
            }
        }
    }
    let mut alpha_idx = vec![usize::MAX; spec.q];
    let mut var_idx = Vec::new();
    for (idx, group) in spec.free_groups().iter().enumerate() {
        match group.matrix {
            MatrixId::Alpha => {
                if group.cells.len() != 1 {
                    return unsupported("latent means must be separate parameters");
                }
                alpha_idx[group.cells[0].0] = idx;
            }
            MatrixId::Theta | MatrixId::Psi => var_idx.push(idx),
            _ => return unsupported("free parameters must lie in α, Θ, or Ψ"),
        }
    }
    if alpha_idx.contains(&usize::MAX) {
        return unsupported("every latent mean must be free");
    }
    Ok((alpha_idx, var_idx))
}

struct RemlPieces {
    loglik: f64,
    alpha_hat: DVector<f64>,
    /// Λᵀ V̂⁻¹ Λ, the per-subject GLS information for α.
    gls_info: DMatrix<f64>,
}

/// Evaluates the restricted log-likelihood at one variance-parameter vector.
/// Non-positive-definite V (or a rank-deficient design) is an infeasible
/// step, reported as an error for the caller to map.
fn reml_pieces(
    spec: &ModelSpec,
    var_idx: &[usize],
    x_var: &DVector<f64>,
    lambda: &DMatrix<f64>,
    summary: &DataSummary,
) -> Result<RemlPieces> {
    let mut theta = DVector::zeros(spec.n_params());
    for (r, &pi) in var_idx.iter().enumerate() {
        theta[pi] = x_var[r];
    }
    let v = spec.implied_moments(&theta)?.sigma;
    let chol = Cholesky::new(v).ok_or(Error::NotPositiveDefinite("marginal covariance"))?;
    let logdet_v = 2.0 * chol.l().diagonal().map(f64::ln).sum();
    let vinv_lambda = chol.solve(lambda);
    let gls_info = lambda.transpose() * &vinv_lambda;
    let info_chol = Cholesky::new(gls_info.clone())
        .ok_or(Error::NotPositiveDefinite("generalized least-squares information"))?;
    let nf = summary.n as f64;
    let qf = spec.q as f64;
    // log|n·M| = q·log n + log|M|.
    let logdet_info = qf * nf.ln() + 2.0 * info_chol.l().diagonal().map(f64::ln).sum();
    let alpha_hat = info_chol.solve(&(vinv_lambda.transpose() * &summary.ybar));
    let delta = &summary.ybar - lambda * &alpha_hat;
    let quad = delta.dot(&chol.solve(&delta));
    let trace = chol.solve(&summary.s).trace();
    let df = nf * spec.p as f64 - qf;
    let loglik =
        -0.5 * (nf * logdet_v + logdet_info + nf * trace + nf * quad + df * LOG_2PI);
    if !loglik.is_finite() {
        return Err(Error::NonFiniteDifference);
    }
    Ok(RemlPieces { loglik, alpha_hat, gls_info })
}

/// Restricted-maximum-likelihood fit for growth-curve-family specifications
/// (see the module docs for the family and the objective). Other
/// specifications are an [`Error::Unsupported`].
pub fn fit_reml_gcm(spec: &ModelSpec, data: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    let t0 = Instant::now();
    let (alpha_idx, var_idx) = growth_family_indices(spec)?;
    let n = data.n();
    if n < 2 {
        return Err(Error::Underdetermined(format!(
            "restricted likelihood needs at least two subjects, got n = {n}"
        )));
    }
    if n * spec.p <= spec.q {
        return Err(Error::Underdetermined(format!(
            "{} observations cannot identify {} fixed effects",
            n * spec.p,
            spec.q
        )));
    }
    let summary = data.summary();
    let threshold = opts.se_threshold.unwrap_or_else(|| acceptance_threshold(spec, &summary));
    let m = spec.n_params();
    let lambda = spec.unpack(&DVector::zeros(m))?.lambda;

    let bounds = match &opts.bounds {
        Some(b) => {
            if b.len() != m {
                return Err(Error::LengthMismatch { got: b.len(), expected: m });
            }
            Bounds::new(select(&b.lower, &var_idx), select(&b.upper, &var_idx))?
        }
        None => {
            let full = default_bounds(spec, &summary)?;
            Bounds::new(select(&full.lower, &var_idx), select(&full.upper, &var_idx))?
        }
    };
    let base = match &opts.start {
        Some(s) => {
            if s.len() != m {
                return Err(Error::LengthMismatch { got: s.len(), expected: m });
            }
            select(s, &var_idx)
        }
        None => select(&starting_values(spec, &summary)?, &var_idx),
    };

    let objective =
        |x: &DVector<f64>| reml_pieces(spec, &var_idx, x, &lambda, &summary).map(|p| p.loglik);
    let (x_var, converged, iterations) = {
        let mut f = |x: &DVector<f64>| objective(x).ok();
        let mut g = |x: &DVector<f64>| {
            numdiff::central_gradient(objective, x)
                .ok()
                .filter(|v| v.iter().all(|t| t.is_finite()))
        };
        optimize_restarts(&mut f, &mut g, &base, &bounds, opts.max_restarts, opts.seed, &opts.optim)?
    };

    let pieces = reml_pieces(spec, &var_idx, &x_var, &lambda, &summary);
    let (loglik, alpha_hat, gls_info) = match pieces {
        Ok(p) => (p.loglik, p.alpha_hat, p.gls_info),
        Err(_) => (f64::NAN, DVector::zeros(spec.q), DMatrix::zeros(spec.q, spec.q)),
    };

    let mut theta = DVector::zeros(m);
    for (r, &pi) in var_idx.iter().enumerate() {
        theta[pi] = x_var[r];
    }
    for (row, &pi) in alpha_idx.iter().enumerate() {
        theta[pi] = alpha_hat[row];
    }

    let mut se = DVector::from_element(m, f64::INFINITY);
    if loglik.is_finite() {
        if let Some(alpha_cov) = Cholesky::new(gls_info).map(|c| c.inverse()) {
            for (row, &pi) in alpha_idx.iter().enumerate() {
                se[pi] = (alpha_cov[(row, row)] / n as f64).sqrt();
            }
        }
        if let Ok(hess) = numdiff::central_hessian(objective, &x_var) {
            if let Some(cov) = Cholesky::new(-hess).map(|c| c.inverse()) {
                for (r, &pi) in var_idx.iter().enumerate() {
                    let v = cov[(r, r)];
                    if v > 0.0 {
                        se[pi] = v.sqrt();
                    }
                }
            }
        }
    }

    let fit = FitResult {
        estimator: Estimator::Reml,
        theta_hat: theta,
        se_screen: se.clone(),
        se,
        loglik,
        penalty: 0.0,
        converged,
        acceptable: false,
        rejection_reason: RejectionReason::NoConvergence,
        iterations,
        wall_time: 0.0,
    };
    let mut fit = check_acceptable(fit, spec, threshold);
    fit.wall_time = t0.elapsed().as_secs_f64();
    Ok(fit)
}

// ---------------------------------------------------------------------------
