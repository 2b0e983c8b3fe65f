//! Multivariate-normal log-likelihood, analytic scores, and the observed
//! information / outer-product matrices behind sandwich standard errors.
//!
//! With sample mean ȳ and biased covariance S (divisor n), the model
//! log-likelihood is
//!
//! ```text
//! ℓ(ϑ) = −(n/2)[ p log 2π + log|Σ(ϑ)| + tr(Σ(ϑ)⁻¹S) + δᵀΣ(ϑ)⁻¹δ ],   δ = ȳ − μ(ϑ),
//! ```
//!
//! with the quadratic (mean) term dropped when the specification carries no
//! mean structure. Analytic scores come from the chain rule through the two
//! blocks ℓ_μ = Σ⁻¹δ and L_Σ = Σ⁻¹WΣ⁻¹ − Σ⁻¹, where W = S + δδᵀ when a mean
//! structure is present and W = S otherwise; the substitution keeps the
//! chain rule equal to the gradient of the *full* likelihood, including the
//! quadratic term.
//!
//! The information-style matrices are
//! - `j`: the negative Hessian of ℓ by central differences of the analytic
//!   score (step ε^(1/4)·max(1,|ϑₐ|)), symmetrized;
//! - `e`: the summed outer products of the per-observation score rows
//!   (analytic, see [`contribution_scores`]; cross-checked in tests against
//!   central differences of the contributions), accumulated with pairwise
//!   summation for reproducibility;
//! - the sandwich j⁻¹ e j⁻¹, whose square-rooted diagonal gives robust
//!   standard errors.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::data::{DataSummary, Dataset};
use crate::error::{Error, Result};
use crate::model::{self, MatrixId, ModelSpec};
use crate::numdiff;

pub(crate) const LOG_2PI: f64 = 1.8378770664093453; // log(2π)

/// The two gradient blocks of the normal likelihood in moment space.
#[derive(Debug, Clone)]
pub struct ScoreBlocks {
    /// ℓ_μ = Σ⁻¹(ȳ−μ); zero when the spec has no mean structure.
    pub l_mu: DVector<f64>,
    /// L_Σ = Σ⁻¹WΣ⁻¹ − Σ⁻¹ with W as documented at module level.
    pub l_sigma: DMatrix<f64>,
}

/// Negative Hessian `j`, outer-product matrix `e`, and the sandwich
/// j⁻¹ e j⁻¹.
#[derive(Debug, Clone)]
pub struct InfoMatrices {
    pub j: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub sandwich: DMatrix<f64>,
}

/// Σ(ϑ) factored once; shared by the likelihood and score paths.
struct MomentFactor {
    mu: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    log_det: f64,
}

fn factor_moments(spec: &ModelSpec, theta: &DVector<f64>) -> Result<(model::ModelMatrices, MomentFactor)> {
    let mats = spec.unpack(theta)?;
    let moments = spec.implied_moments_from(&mats)?;
    let chol = Cholesky::new(moments.sigma.clone())
        .ok_or(Error::NotPositiveDefinite("implied covariance matrix"))?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok((mats, MomentFactor { mu: moments.mu, chol, log_det }))
}

/// Model log-likelihood at ϑ given sufficient statistics.
pub fn loglik(spec: &ModelSpec, theta: &DVector<f64>, data: &DataSummary) -> Result<f64> {
    if data.p() != spec.p {
        return Err(Error::ShapeMismatch(format!(
            "data has {} variables, specification expects {}",
            data.p(),
            spec.p
        )));
    }
    let (_, fac) = factor_moments(spec, theta)?;
    let p = spec.p as f64;
    let n = data.n as f64;
    let trace = fac.chol.solve(&data.s).trace();
    let mut core = p * LOG_2PI + fac.log_det + trace;
    if spec.mean_structure {
        let delta = &data.ybar - &fac.mu;
        core += delta.dot(&fac.chol.solve(&delta));
    }
    let value = -0.5 * n * core;
    if !value.is_finite() {
        return Err(Error::NonFiniteDifference);
    }
    Ok(value)
}

/// Per-observation likelihood contributions; they sum to [`loglik`].
///
/// Each row contributes ℓᵢ = −½[p log 2π + log|Σ| + (yᵢ−c)ᵀΣ⁻¹(yᵢ−c)], with
/// centre c = μ(ϑ) when the spec has a mean structure and c = ȳ otherwise
/// (matching the dropped quadratic term in the total likelihood).
pub fn loglik_contributions(
    spec: &ModelSpec,
    theta: &DVector<f64>,
    data: &Dataset,
) -> Result<DVector<f64>> {
    if data.p() != spec.p {
        return Err(Error::ShapeMismatch(format!(
            "data has {} variables, specification expects {}",
            data.p(),
            spec.p
        )));
    }
    let (_, fac) = factor_moments(spec, theta)?;
    let centre = if spec.mean_structure { fac.mu.clone() } else { data.summary().ybar };
    let p = spec.p as f64;
    let base = -0.5 * (p * LOG_2PI + fac.log_det);
    let n = data.n();
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let d = data.row(i) - &centre;
        let quad = d.dot(&fac.chol.solve(&d));
        let v = base - 0.5 * quad;
        if !v.is_finite() {
            return Err(Error::NonFiniteDifference);
        }
        out[i] = v;
    }
    Ok(out)
}

/// ℓ_μ and L_Σ at ϑ.
pub fn score_blocks(spec: &ModelSpec, theta: &DVector<f64>, data: &DataSummary) -> Result<ScoreBlocks> {
    let (_, fac) = factor_moments(spec, theta)?;
    Ok(score_blocks_from(spec, &fac, data))
}

fn score_blocks_from(spec: &ModelSpec, fac: &MomentFactor, data: &DataSummary) -> ScoreBlocks {
    let p = spec.p;
    let sigma_inv = fac.chol.inverse();
    let (l_mu, w) = if spec.mean_structure {
        let delta = &data.ybar - &fac.mu;
        let l_mu = &sigma_inv * &delta;
        let w = &data.s + &delta * delta.transpose();
        (l_mu, w)
    } else {
        (DVector::zeros(p), data.s.clone())
    };
    let l_sigma = model::symmetrize(&(&sigma_inv * w * &sigma_inv - &sigma_inv));
    ScoreBlocks { l_mu, l_sigma }
}

/// Analytic gradient of [`loglik`] for any specification.
///
/// Each free parameter's derivative is the sum over its (possibly shared)
/// cells of n·ℓ_μᵀ(∂μ/∂cell) + (n/2)·tr(L_Σ ∂Σ/∂cell), assembled from
/// B̃ = (I−B)⁻¹, κ = B̃α and Ψ̃ = B̃ΨB̃ᵀ without forming any structure
/// matrices explicitly.
pub fn score_general(spec: &ModelSpec, theta: &DVector<f64>, data: &DataSummary) -> Result<DVector<f64>> {
    if data.p() != spec.p {
        return Err(Error::ShapeMismatch(format!(
            "data has {} variables, specification expects {}",
            data.p(),
            spec.p
        )));
    }
    let (mats, fac) = factor_moments(spec, theta)?;
    let blocks = score_blocks_from(spec, &fac, data);
    let l_mu = &blocks.l_mu;
    let l_sigma = &blocks.l_sigma;
    let n = data.n as f64;

    let b_tilde = model::invert_i_minus_b(&mats.b)?;
    let g = &mats.lambda * &b_tilde; // p×q, = ΛB̃
    let kappa = &b_tilde * &mats.alpha; // q, = B̃α
    let psi_tilde = &b_tilde * &mats.psi * b_tilde.transpose(); // q×q, = B̃ΨB̃ᵀ
    let m_psi = g.transpose() * l_sigma * &g; // q×q, GᵀL_ΣG
    let t_lambda = &psi_tilde * mats.lambda.transpose() * l_sigma; // q×p, Ψ̃ΛᵀL_Σ
    let t_b = &t_lambda * &g; // q×q, Ψ̃ΛᵀL_ΣΛB̃
    let a_mu = g.transpose() * l_mu; // q, Gᵀℓ_μ

    let mut out = DVector::zeros(spec.n_params());
    for (a, group) in spec.free_groups().iter().enumerate() {
        let mut acc = 0.0;
        for &(i, j) in &group.cells {
            acc += match group.matrix {
                MatrixId::Nu => n * l_mu[i],
                MatrixId::Alpha => n * a_mu[i],
                MatrixId::Theta => {
                    0.5 * n * if i == j { l_sigma[(i, i)] } else { 2.0 * l_sigma[(i, j)] }
                }
                MatrixId::Psi => {
                    0.5 * n * if i == j { m_psi[(i, i)] } else { 2.0 * m_psi[(i, j)] }
                }
                MatrixId::Lambda => n * l_mu[i] * kappa[j] + n * t_lambda[(j, i)],
                MatrixId::B => n * a_mu[i] * kappa[j] + n * t_b[(j, i)],
            };
        }
        out[a] = acc;
    }
    Ok(out)
}

/// Closed-form score for the centred two-factor model (13 parameters:
/// four free loadings, the structural slope, six residual variances, two
/// factor variances). `data` must summarize centred data; only S is used.
pub fn score_two_factor(theta: &DVector<f64>, data: &DataSummary) -> Result<DVector<f64>> {
    let spec = crate::model::presets::two_factor()
        .profiled_reduction()
        .expect("two-factor preset profiles its intercepts")
        .reduced;
    let (mats, fac) = factor_moments(&spec, theta)?;
    let blocks = score_blocks_from(&spec, &fac, data);
    let l_sigma = &blocks.l_sigma;
    let n = data.n as f64;

    let b_tilde = model::invert_i_minus_b(&mats.b)?;
    let psi_tilde = &b_tilde * &mats.psi * b_tilde.transpose();
    let g = &mats.lambda * &b_tilde;
    // ∂ℓ/∂λᵢⱼ = n (L_Σ Λ Ψ̃)ᵢⱼ
    let l_lam_psi = l_sigma * &mats.lambda * &psi_tilde;
    // ∂ℓ/∂β for the cell B[2,1]: n (Ψ̃ΛᵀL_ΣΛB̃)[1,2] (1-based)
    let m_b = &psi_tilde * mats.lambda.transpose() * l_sigma * &mats.lambda * &b_tilde;
    // ∂ℓ/∂ψₖₖ = (n/2)(B̃ᵀΛᵀL_ΣΛB̃)ₖₖ
    let m_psi = g.transpose() * l_sigma * &g;

    let mut out = DVector::zeros(13);
    out[0] = n * l_lam_psi[(1, 0)];
    out[1] = n * l_lam_psi[(2, 0)];
    out[2] = n * l_lam_psi[(4, 1)];
    out[3] = n * l_lam_psi[(5, 1)];
    out[4] = n * m_b[(0, 1)];
    for i in 0..6 {
        out[5 + i] = 0.5 * n * l_sigma[(i, i)];
    }
    out[11] = 0.5 * n * m_psi[(0, 0)];
    out[12] = 0.5 * n * m_psi[(1, 1)];
    Ok(out)
}

/// Closed-form score for the growth-curve model (6 parameters: two mean
/// coefficients, three latent (co)variances, one shared residual variance).
pub fn score_gcm(theta: &DVector<f64>, data: &DataSummary) -> Result<DVector<f64>> {
    let spec = crate::model::presets::gcm();
    let (mats, fac) = factor_moments(&spec, theta)?;
    let blocks = score_blocks_from(&spec, &fac, data);
    let l_sigma = &blocks.l_sigma;
    let n = data.n as f64;

    // ∂ℓ/∂α = n ΛᵀΣ⁻¹(ȳ−μ)
    let alpha_score = mats.lambda.transpose() * &blocks.l_mu * n;
    // ∂ℓ/∂ψₖₗ from M = ΛᵀL_ΣΛ (B = 0 here, so B̃ = I)
    let m_psi = mats.lambda.transpose() * l_sigma * &mats.lambda;

    let mut out = DVector::zeros(6);
    out[0] = alpha_score[0];
    out[1] = alpha_score[1];
    out[2] = 0.5 * n * m_psi[(0, 0)];
    out[3] = 0.5 * n * m_psi[(1, 1)];
    out[4] = 0.5 * n * 2.0 * m_psi[(1, 0)];
    out[5] = 0.5 * n * l_sigma.trace();
    Ok(out)
}

/// Negative Hessian of the log-likelihood by central differences of the
/// analytic score, symmetrized as (H+Hᵀ)/2.
pub fn info_j(spec: &ModelSpec, theta: &DVector<f64>, data: &DataSummary) -> Result<DMatrix<f64>> {
    let h = numdiff::central_jacobian(
        |t| score_general(spec, t, data),
        theta,
        numdiff::hess_step,
    )?;
    Ok((-0.5) * (&h + h.transpose()))
}

/// Analytic per-observation score matrix: row i holds ∂ℓᵢ/∂ϑ for the
/// contribution ℓᵢ = −½[p log2π + log|Σ| + rᵢᵀΣ⁻¹rᵢ], rᵢ = yᵢ − c.
///
/// Each cell derivative is rᵢᵀΣ⁻¹(∂c/∂cell) + ½[qᵢᵀ(∂Σ/∂cell)qᵢ −
/// tr(Σ⁻¹∂Σ/∂cell)] with qᵢ = Σ⁻¹rᵢ; the centre c is μ(ϑ) under a mean
/// structure (so the first term is live) and the fixed constant ȳ otherwise
/// (so it vanishes). Rows sum to the corresponding aggregate score.
pub fn contribution_scores(
    spec: &ModelSpec,
    theta: &DVector<f64>,
    data: &Dataset,
) -> Result<DMatrix<f64>> {
    if data.p() != spec.p {
        return Err(Error::ShapeMismatch(format!(
            "data has {} variables, specification expects {}",
            data.p(),
            spec.p
        )));
    }
    let (mats, fac) = factor_moments(spec, theta)?;
    let centre = if spec.mean_structure { fac.mu.clone() } else { data.summary().ybar };
    let sigma_inv = fac.chol.inverse();

    let b_tilde = model::invert_i_minus_b(&mats.b)?;
    let g = &mats.lambda * &b_tilde; // p×q, = ΛB̃
    let kappa = &b_tilde * &mats.alpha; // q, = B̃α
    let psi_tilde = &b_tilde * &mats.psi * b_tilde.transpose(); // q×q, = B̃ΨB̃ᵀ
    // Observation-independent trace constants, one per cell shape.
    let c_psi = g.transpose() * &sigma_inv * &g; // q×q, GᵀΣ⁻¹G
    let c_lambda = &psi_tilde * mats.lambda.transpose() * &sigma_inv; // q×p, Ψ̃ΛᵀΣ⁻¹
    let c_b = &c_lambda * &g; // q×q, Ψ̃ΛᵀΣ⁻¹ΛB̃

    let n = data.n();
    let mut out = DMatrix::zeros(n, spec.n_params());
    for row in 0..n {
        let r = data.row(row) - &centre;
        let q = &sigma_inv * &r; // Σ⁻¹rᵢ
        let a_vec = g.transpose() * &q; // GᵀΣ⁻¹rᵢ
        let v = &psi_tilde * (mats.lambda.transpose() * &q); // Ψ̃ΛᵀΣ⁻¹rᵢ
        for (idx, group) in spec.free_groups().iter().enumerate() {
            let mut acc = 0.0;
            for &(i, j) in &group.cells {
                acc += match group.matrix {
                    MatrixId::Nu => {
                        if spec.mean_structure {
                            q[i]
                        } else {
                            0.0
                        }
                    }
                    MatrixId::Alpha => {
                        if spec.mean_structure {
                            a_vec[i]
                        } else {
                            0.0
                        }
                    }
                    MatrixId::Theta => {
                        if i == j {
                            0.5 * (q[i] * q[i] - sigma_inv[(i, i)])
                        } else {
                            q[i] * q[j] - sigma_inv[(i, j)]
                        }
                    }
                    MatrixId::Psi => {
                        if i == j {
                            0.5 * (a_vec[i] * a_vec[i] - c_psi[(i, i)])
                        } else {
                            a_vec[i] * a_vec[j] - c_psi[(i, j)]
                        }
                    }
                    MatrixId::Lambda => {
                        let mean_term = if spec.mean_structure { q[i] * kappa[j] } else { 0.0 };
                        mean_term + q[i] * v[j] - c_lambda[(j, i)]
                    }
                    MatrixId::B => {
                        let mean_term = if spec.mean_structure { a_vec[i] * kappa[j] } else { 0.0 };
                        mean_term + a_vec[i] * v[j] - c_b[(j, i)]
                    }
                };
            }
            if !acc.is_finite() {
                return Err(Error::NonFiniteDifference);
            }
            out[(row, idx)] = acc;
        }
    }
    Ok(out)
}

/// Per-observation gradient matrix (n×m) of the likelihood contributions by
/// central finite differences. Retained as the numeric cross-check for
/// [`contribution_scores`].
#[cfg(test)]
pub(crate) fn contribution_gradients_fd(
    spec: &ModelSpec,
    theta: &DVector<f64>,
    data: &Dataset,
) -> Result<DMatrix<f64>> {
    let m = spec.n_params();
    let n = data.n();
    let mut grads = DMatrix::zeros(n, m);
    let mut tp = theta.clone();
    for a in 0..m {
        let h = numdiff::grad_step(theta[a]);
        tp[a] = theta[a] + h;
        let cp = loglik_contributions(spec, &tp, data)?;
        tp[a] = theta[a] - h;
        let cm = loglik_contributions(spec, &tp, data)?;
        tp[a] = theta[a];
        for i in 0..n {
            let d = (cp[i] - cm[i]) / (2.0 * h);
            if !d.is_finite() {
                return Err(Error::NonFiniteDifference);
            }
            grads[(i, a)] = d;
        }
    }
    Ok(grads)
}

/// Outer-product information e(ϑ): e_{kl} = Σᵢ (∂ℓᵢ/∂ϑₖ)(∂ℓᵢ/∂ϑₗ), with
/// analytic per-observation scores and entries accumulated by pairwise
/// summation.
pub fn info_e(spec: &ModelSpec, theta: &DVector<f64>, data: &Dataset) -> Result<DMatrix<f64>> {
    let grads = contribution_scores(spec, theta, data)?;
    let m = spec.n_params();
    let n = data.n();
    let mut e = DMatrix::zeros(m, m);
    let mut buf = vec![0.0; n];
    for a in 0..m {
        for b in a..m {
            for i in 0..n {
                buf[i] = grads[(i, a)] * grads[(i, b)];
            }
            let v = numdiff::pairwise_sum(&buf);
            e[(a, b)] = v;
            e[(b, a)] = v;
        }
    }
    Ok(e)
}

/// j⁻¹ e j⁻¹ for symmetric j, via two linear solves; symmetrized to remove
/// rounding skew.
pub fn sandwich_from(j: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lu = j.clone().lu();
    let x = lu.solve(e).ok_or(Error::SingularInformation)?; // j⁻¹e
    let y = lu.solve(&x.transpose()).ok_or(Error::SingularInformation)?; // j⁻¹(j⁻¹e)ᵀ
    Ok(model::symmetrize(&y.transpose()))
}

/// j, e and the sandwich at ϑ for a dataset.
pub fn info_matrices(spec: &ModelSpec, theta: &DVector<f64>, data: &Dataset) -> Result<InfoMatrices> {
    let summary = data.summary();
    let j = info_j(spec, theta, &summary)?;
    let e = info_e(spec, theta, data)?;
    let sandwich = sandwich_from(&j, &e)?;
    Ok(InfoMatrices { j, e, sandwich })
}

/// Robust standard errors: square roots of the sandwich diagonal.
pub fn sandwich_se(spec: &ModelSpec, theta: &DVector<f64>, data: &Dataset) -> Result<DVector<f64>> {
    let info = info_matrices(spec, theta, data)?;
    se_from_sandwich(&info.sandwich)
}

/// Standard errors from the observed information alone: square roots of
/// diag(j⁻¹). The acceptability screen inspects these; interval estimates
/// use the sandwich.
pub fn se_from_information(j: &DMatrix<f64>) -> Result<DVector<f64>> {
    let inv = j.clone().try_inverse().ok_or(Error::SingularInformation)?;
    se_from_sandwich(&inv)
}

/// Extracts standard errors from a variance matrix diagonal, flagging
/// negative variances as numerical breakdown.
pub fn se_from_sandwich(sandwich: &DMatrix<f64>) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(sandwich.nrows());
    for a in 0..sandwich.nrows() {
        let v = sandwich[(a, a)];
        if !v.is_finite() {
            return Err(Error::NonFiniteDifference);
        }
        if v < 0.0 {
            return Err(Error::NegativeSandwichVariance);
        }
        out[a] = v.sqrt();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::{gcm, gcm_truth, two_factor, two_factor_truth, Reliability};
    use crate::model::{MatrixPattern, ModelSpec};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Deterministic filler with enough spread for PD sample covariances.
    fn test_dataset(n: usize, p: usize, scale: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = DMatrix::from_fn(n, p, |_, _| {
            let u: f64 = rng.random::<f64>();
            let v: f64 = rng.random::<f64>();
            // Box–Muller; heavier tails unnecessary here.
            scale * (-2.0 * u.max(1e-12).ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
        });
        Dataset::new(rows).unwrap()
    }

    fn saturated_theta(spec: &ModelSpec, summary: &DataSummary) -> DVector<f64> {
        let mut mats = spec.unpack(&DVector::zeros(spec.n_params())).unwrap();
        mats.nu = summary.ybar.clone();
        mats.theta = summary.s.clone();
        spec.pack(&mats).unwrap()
    }

    #[test]
    fn saturated_loglik_has_closed_form() {
        let data = test_dataset(17, 3, 1.3, 5);
        let summary = data.summary();
        let spec = ModelSpec::saturated(3);
        let theta = saturated_theta(&spec, &summary);
        let got = loglik(&spec, &theta, &summary).unwrap();
        let log_det_s = summary.s.clone().cholesky().unwrap().l_dirty().diagonal().map(|v| v.ln()).sum() * 2.0;
        let expect = -0.5 * 17.0 * (3.0 * LOG_2PI + log_det_s + 3.0);
        assert_abs_diff_eq!(got, expect, epsilon = 1e-9 * expect.abs());
    }

    #[test]
    fn two_point_scalar_example() {
        // y = (0, 2): ȳ = 1, S = 1; model μ = 0, Σ = 1 → ℓ = −log 2π − 2.
        let data = Dataset::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let summary = data.summary();
        let mut nu = MatrixPattern::general(1, 1);
        nu.set_fixed(0, 0, 0.0).unwrap();
        let mut theta_pat = MatrixPattern::symmetric(1);
        theta_pat.set_free(0, 0, 0).unwrap();
        let spec = ModelSpec::new(
            1,
            0,
            nu,
            MatrixPattern::general(1, 0),
            theta_pat,
            MatrixPattern::general(0, 1),
            MatrixPattern::general(0, 0),
            MatrixPattern::symmetric(0),
            true,
        )
        .unwrap();
        let theta = DVector::from_column_slice(&[1.0]);
        let got = loglik(&spec, &theta, &summary).unwrap();
        assert_abs_diff_eq!(got, -LOG_2PI - 2.0, epsilon = 1e-12);
    }

    #[test]
    fn contributions_sum_to_loglik() {
        let data = test_dataset(20, 6, 0.9, 11);
        let spec = two_factor();
        let theta = two_factor_truth(Reliability::High);
        let contribs = loglik_contributions(&spec, &theta, &data).unwrap();
        let total = loglik(&spec, &theta, &data.summary()).unwrap();
        let sum: f64 = contribs.iter().sum();
        assert_abs_diff_eq!(sum, total, epsilon = 1e-8 * total.abs());

        // Also for a covariance-only spec (centres at ȳ).
        let reduced = spec.profiled_reduction().unwrap();
        let theta13 = DVector::from_iterator(13, reduced.kept.iter().map(|&k| theta[k]));
        let contribs = loglik_contributions(&reduced.reduced, &theta13, &data).unwrap();
        let total = loglik(&reduced.reduced, &theta13, &data.summary()).unwrap();
        let sum: f64 = contribs.iter().sum();
        assert_abs_diff_eq!(sum, total, epsilon = 1e-8 * total.abs());
    }

    #[test]
    fn identical_rows_identical_contributions() {
        let row = vec![0.3, -1.0, 2.0];
        let data = Dataset::from_rows(&[row.clone(), row.clone(), row]).unwrap();
        let spec = ModelSpec::saturated(3);
        let mut mats = spec.unpack(&DVector::zeros(spec.n_params())).unwrap();
        mats.nu = DVector::from_column_slice(&[0.0, 0.0, 0.0]);
        mats.theta = DMatrix::identity(3, 3);
        let theta = spec.pack(&mats).unwrap();
        let c = loglik_contributions(&spec, &theta, &data).unwrap();
        assert_eq!(c[0], c[1]);
        assert_eq!(c[1], c[2]);
    }

    #[test]
    fn contribution_at_centre_with_identity_sigma() {
        let data = Dataset::from_rows(&[vec![0.7, -0.2]]).unwrap();
        let spec = ModelSpec::saturated(2);
        let mut mats = spec.unpack(&DVector::zeros(spec.n_params())).unwrap();
        mats.nu = DVector::from_column_slice(&[0.7, -0.2]);
        mats.theta = DMatrix::identity(2, 2);
        let theta = spec.pack(&mats).unwrap();
        let c = loglik_contributions(&spec, &theta, &data).unwrap();
        assert_abs_diff_eq!(c[0], -LOG_2PI, epsilon = 1e-12);
    }

    #[test]
    fn score_blocks_vanish_at_saturated_match() {
        let data = test_dataset(25, 4, 1.1, 23);
        let summary = data.summary();
        let spec = ModelSpec::saturated(4);
        let theta = saturated_theta(&spec, &summary);
        let blocks = score_blocks(&spec, &theta, &summary).unwrap();
        assert!(blocks.l_mu.amax() < 1e-10);
        assert!(blocks.l_sigma.amax() < 1e-10);
        // The full analytic score vanishes there too.
        let g = score_general(&spec, &theta, &summary).unwrap();
        assert!(g.amax() < 1e-7, "score at saturated match: {}", g.amax());
    }

    #[test]
    fn scalar_l_sigma_value() {
        // p = 1: Σ = 2, S = 4, μ = ȳ → L_Σ = 4/4 − 1/2 = 1/2.
        let summary = DataSummary::new(
            10,
            DVector::from_column_slice(&[0.0]),
            DMatrix::from_row_slice(1, 1, &[4.0]),
        )
        .unwrap();
        let mut nu = MatrixPattern::general(1, 1);
        nu.set_fixed(0, 0, 0.0).unwrap();
        let mut theta_pat = MatrixPattern::symmetric(1);
        theta_pat.set_free(0, 0, 0).unwrap();
        let spec = ModelSpec::new(
            1,
            0,
            nu,
            MatrixPattern::general(1, 0),
            theta_pat,
            MatrixPattern::general(0, 1),
            MatrixPattern::general(0, 0),
            MatrixPattern::symmetric(0),
            true,
        )
        .unwrap();
        let blocks = score_blocks(&spec, &DVector::from_column_slice(&[2.0]), &summary).unwrap();
        assert_abs_diff_eq!(blocks.l_sigma[(0, 0)], 0.5, epsilon = 1e-14);
        assert_eq!(blocks.l_mu[0], 0.0);
    }

    #[test]
    fn l_mu_positive_when_ybar_exceeds_mu() {
        let summary = DataSummary::new(
            5,
            DVector::from_column_slice(&[1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]),
        )
        .unwrap();
        let spec = ModelSpec::saturated(2);
        let mut mats = spec.unpack(&DVector::zeros(spec.n_params())).unwrap();
        mats.nu = DVector::from_column_slice(&[0.5, 1.0]); // below ȳ
        mats.theta = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 5.0]);
        let theta = spec.pack(&mats).unwrap();
        let blocks = score_blocks(&spec, &theta, &summary).unwrap();
        assert!(blocks.l_mu[0] > 0.0 && blocks.l_mu[1] > 0.0);
    }

    fn random_two_factor_theta(rng: &mut ChaCha8Rng) -> DVector<f64> {
        let mut t = DVector::zeros(19);
        for i in 0..6 {
            t[i] = rng.random_range(-1.0..1.0); // ν
        }
        for i in 6..10 {
            t[i] = rng.random_range(0.3..1.2); // loadings
        }
        t[10] = rng.random_range(-0.5..0.5); // β
        for i in 11..17 {
            t[i] = rng.random_range(0.15..1.5); // θ
        }
        t[17] = rng.random_range(0.4..1.6); // ψ₁₁
        t[18] = rng.random_range(0.4..1.6); // ψ₂₂
        t
    }

    fn random_gcm_theta(rng: &mut ChaCha8Rng) -> DVector<f64> {
        let mut t: DVector<f64> = DVector::zeros(6);
        t[0] = rng.random_range(-5.0..5.0);
        t[1] = rng.random_range(-5.0..5.0);
        t[2] = rng.random_range(150.0..600.0); // ψ₁₁
        t[3] = rng.random_range(25.0..120.0); // ψ₂₂
        let bound = (t[2] * t[3]).sqrt() * 0.7;
        t[4] = rng.random_range(-bound..bound); // ψ₂₁
        t[5] = rng.random_range(250.0..1500.0); // θ
        t
    }

    #[test]
    fn analytic_score_matches_finite_differences() {
        let tf_data = test_dataset(40, 6, 1.0, 31).summary();
        let gcm_data = {
            let raw = test_dataset(40, 10, 1.0, 37);
            // Rescale to GCM-like magnitudes so relative comparisons bite.
            let mut m = raw.matrix().clone() * 25.0;
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    m[(r, c)] += 3.0 * c as f64;
                }
            }
            Dataset::new(m).unwrap().summary()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        for trial in 0..120 {
            let (spec, theta, data) = if trial % 2 == 0 {
                (two_factor(), random_two_factor_theta(&mut rng), &tf_data)
            } else {
                (gcm(), random_gcm_theta(&mut rng), &gcm_data)
            };
            if spec.implied_moments(&theta).is_err() {
                continue;
            }
            if Cholesky::new(spec.implied_moments(&theta).unwrap().sigma).is_none() {
                continue;
            }
            let analytic = score_general(&spec, &theta, data).unwrap();
            let numeric =
                numdiff::central_gradient(|t| loglik(&spec, t, data), &theta).unwrap();
            for a in 0..spec.n_params() {
                let denom = analytic[a].abs().max(numeric[a].abs()).max(1.0);
                assert!(
                    (analytic[a] - numeric[a]).abs() / denom < 1e-6,
                    "trial {trial}, parameter {a}: analytic {} vs numeric {}",
                    analytic[a],
                    numeric[a]
                );
            }
            checked += 1;
        }
        assert!(checked >= 100, "only {checked} admissible draws");
    }

    #[test]
    fn contribution_scores_match_finite_differences() {
        let tf_rows = test_dataset(12, 6, 1.0, 51);
        let gcm_rows = {
            let raw = test_dataset(12, 10, 1.0, 53);
            Dataset::new(raw.matrix() * 20.0).unwrap()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut checked = 0;
        for trial in 0..40 {
            let (spec, theta, data) = if trial % 2 == 0 {
                (two_factor(), random_two_factor_theta(&mut rng), &tf_rows)
            } else {
                (gcm(), random_gcm_theta(&mut rng), &gcm_rows)
            };
            let admissible = spec
                .implied_moments(&theta)
                .ok()
                .and_then(|m| Cholesky::new(m.sigma))
                .is_some();
            if !admissible {
                continue;
            }
            let analytic = contribution_scores(&spec, &theta, data).unwrap();
            let numeric = contribution_gradients_fd(&spec, &theta, data).unwrap();
            for i in 0..data.n() {
                for a in 0..spec.n_params() {
                    let denom = analytic[(i, a)].abs().max(numeric[(i, a)].abs()).max(1.0);
                    assert!(
                        (analytic[(i, a)] - numeric[(i, a)]).abs() / denom < 1e-6,
                        "trial {trial}, row {i}, parameter {a}: analytic {} vs numeric {}",
                        analytic[(i, a)],
                        numeric[(i, a)]
                    );
                }
            }
            checked += 1;
        }
        assert!(checked >= 20, "only {checked} admissible draws");

        // Covariance-only spec: the centre ȳ is a data constant, so the
        // rows must match the finite differences of the centred contributions.
        let reduced = two_factor().profiled_reduction().unwrap().reduced;
        let full = two_factor_truth(Reliability::High);
        let theta13 = DVector::from_iterator(13, (6..19).map(|k| full[k]));
        let analytic = contribution_scores(&reduced, &theta13, &tf_rows).unwrap();
        let numeric = contribution_gradients_fd(&reduced, &theta13, &tf_rows).unwrap();
        for i in 0..tf_rows.n() {
            for a in 0..13 {
                let denom = analytic[(i, a)].abs().max(numeric[(i, a)].abs()).max(1.0);
                assert!((analytic[(i, a)] - numeric[(i, a)]).abs() / denom < 1e-6);
            }
        }
    }

    #[test]
    fn contribution_scores_rows_sum_to_aggregate_score() {
        let data = test_dataset(30, 6, 1.0, 57);
        let summary = data.summary();
        let spec = two_factor();
        let theta = two_factor_truth(Reliability::Low);
        let rows = contribution_scores(&spec, &theta, &data).unwrap();
        let aggregate = score_general(&spec, &theta, &summary).unwrap();
        for a in 0..spec.n_params() {
            let col: Vec<f64> = (0..data.n()).map(|i| rows[(i, a)]).collect();
            let sum = numdiff::pairwise_sum(&col);
            let denom = aggregate[a].abs().max(1.0);
            assert!(
                (sum - aggregate[a]).abs() / denom < 1e-9,
                "parameter {a}: row sum {sum} vs aggregate {}",
                aggregate[a]
            );
        }
    }

    #[test]
    fn two_factor_closed_form_matches_general() {
        let reduced = two_factor().profiled_reduction().unwrap().reduced;
        let data = test_dataset(35, 6, 1.0, 41).summary();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let full = random_two_factor_theta(&mut rng);
            let theta = DVector::from_iterator(13, (6..19).map(|k| full[k]));
            if reduced.implied_moments(&theta).is_err() {
                continue;
            }
            let general = score_general(&reduced, &theta, &data).unwrap();
            let closed = score_two_factor(&theta, &data).unwrap();
            for a in 0..13 {
                let denom = general[a].abs().max(closed[a].abs()).max(1e-8);
                assert!(
                    (general[a] - closed[a]).abs() / denom < 1e-9,
                    "parameter {a}: general {} vs closed {}",
                    general[a],
                    closed[a]
                );
            }
        }
    }

    #[test]
    fn two_factor_score_zero_at_exact_moments() {
        // Synthetic S = Σ(ϑ): the covariance part of the score vanishes.
        let reduced = two_factor().profiled_reduction().unwrap().reduced;
        let full = two_factor_truth(Reliability::Low);
        let theta = DVector::from_iterator(13, (6..19).map(|k| full[k]));
        let sigma = reduced.implied_moments(&theta).unwrap().sigma;
        let summary = DataSummary::new(50, DVector::zeros(6), sigma).unwrap();
        let score = score_two_factor(&theta, &summary).unwrap();
        assert!(score.amax() < 1e-10, "score at exact moments: {}", score.amax());
    }

    #[test]
    fn gcm_closed_form_matches_general() {
        let spec = gcm();
        let data = {
            let raw = test_dataset(30, 10, 22.0, 43);
            let mut m = raw.matrix().clone();
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    m[(r, c)] += 2.0 * c as f64;
                }
            }
            Dataset::new(m).unwrap().summary()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let theta = random_gcm_theta(&mut rng);
            if spec.implied_moments(&theta).is_err() {
                continue;
            }
            let general = score_general(&spec, &theta, &data).unwrap();
            let closed = score_gcm(&theta, &data).unwrap();
            for a in 0..6 {
                let denom = general[a].abs().max(closed[a].abs()).max(1e-8);
                assert!(
                    (general[a] - closed[a]).abs() / denom < 1e-9,
                    "parameter {a}: general {} vs closed {}",
                    general[a],
                    closed[a]
                );
            }
        }
    }

    #[test]
    fn gcm_alpha_score_zero_when_mean_matches() {
        let spec = gcm();
        let theta = gcm_truth(Reliability::High);
        let moments = spec.implied_moments(&theta).unwrap();
        // ȳ = μ(ϑ) exactly, S arbitrary PD.
        let mut s = DMatrix::identity(10, 10) * 400.0;
        s[(2, 1)] = 30.0;
        s[(1, 2)] = 30.0;
        let summary = DataSummary::new(40, moments.mu.clone(), s).unwrap();
        let score = score_gcm(&theta, &summary).unwrap();
        assert_abs_diff_eq!(score[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(score[1], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn gcm_psi12_score_doubles_single_entry() {
        let spec = gcm();
        let data = test_dataset(25, 10, 20.0, 47).summary();
        let theta = gcm_truth(Reliability::Low);
        let blocks = score_blocks(&spec, &theta, &data).unwrap();
        let mats = spec.unpack(&theta).unwrap();
        let m_psi = mats.lambda.transpose() * &blocks.l_sigma * &mats.lambda;
        let closed = score_gcm(&theta, &data).unwrap();
        let n = data.n as f64;
        assert_abs_diff_eq!(
            closed[4],
            2.0 * (0.5 * n * m_psi[(1, 0)]),
            epsilon = 1e-9 * closed[4].abs().max(1.0)
        );
        // And the doubled value is the finite-difference derivative.
        let numeric = numdiff::central_gradient(|t| loglik(&spec, t, &data), &theta).unwrap();
        let denom = closed[4].abs().max(numeric[4].abs()).max(1.0);
        assert!((closed[4] - numeric[4]).abs() / denom < 1e-6);
    }

    #[test]
    fn score_jacobian_nearly_symmetric_before_symmetrization() {
        let data = test_dataset(30, 6, 1.0, 53).summary();
        let spec = two_factor();
        let theta = two_factor_truth(Reliability::High);
        let h = numdiff::central_jacobian(
            |t| score_general(&spec, t, &data),
            &theta,
            numdiff::hess_step,
        )
        .unwrap();
        let asym = (&h - h.transpose()).amax();
        assert!(asym / h.amax() < 1e-6, "asymmetry {}", asym / h.amax());
    }

    #[test]
    fn univariate_info_closed_forms_at_mle() {
        let data = test_dataset(200, 1, 1.4, 59);
        let summary = data.summary();
        let spec = ModelSpec::saturated(1);
        // MLE: ν̂ = ȳ, θ̂ = S.
        let theta_hat = saturated_theta(&spec, &summary);
        let n = summary.n as f64;
        let v = summary.s[(0, 0)];

        let j = info_j(&spec, &theta_hat, &summary).unwrap();
        assert_abs_diff_eq!(j[(0, 0)], n / v, epsilon = 1e-5 * (n / v));
        assert_abs_diff_eq!(j[(1, 1)], n / (2.0 * v * v), epsilon = 1e-5 * n / (2.0 * v * v));
        assert!(j[(0, 1)].abs() < 1e-5 * n / v);

        let e = info_e(&spec, &theta_hat, &data).unwrap();
        let ybar = summary.ybar[0];
        let m3: f64 = data.matrix().column(0).iter().map(|y| (y - ybar).powi(3)).sum::<f64>() / n;
        let m4: f64 = data.matrix().column(0).iter().map(|y| (y - ybar).powi(4)).sum::<f64>() / n;
        assert_abs_diff_eq!(e[(0, 0)], n / v, epsilon = 1e-6 * n / v);
        assert_abs_diff_eq!(
            e[(0, 1)],
            n * m3 / (2.0 * v.powi(3)),
            epsilon = 1e-6 * (n * m3.abs() / (2.0 * v.powi(3))).max(1e-4)
        );
        assert_abs_diff_eq!(
            e[(1, 1)],
            n * (m4 - v * v) / (4.0 * v.powi(4)),
            epsilon = 1e-6 * n * (m4 - v * v) / (4.0 * v.powi(4))
        );
    }

    #[test]
    fn info_e_rank_one_for_single_observation() {
        let data = Dataset::from_rows(&[vec![0.4, 1.7]]).unwrap();
        let spec = ModelSpec::saturated(2);
        let mut mats = spec.unpack(&DVector::zeros(spec.n_params())).unwrap();
        mats.nu = DVector::from_column_slice(&[0.0, 1.0]);
        mats.theta = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]);
        let theta = spec.pack(&mats).unwrap();
        let e = info_e(&spec, &theta, &data).unwrap();
        let eig = e.symmetric_eigenvalues();
        let mut vals: Vec<f64> = eig.iter().copied().collect();
        vals.sort_by(|a, b| b.abs().partial_cmp(&a.abs()).unwrap());
        assert!(vals[1].abs() < 1e-8 * vals[0].abs().max(1.0), "second eigenvalue {}", vals[1]);
    }

    #[test]
    fn info_e_is_positive_semidefinite() {
        let data = test_dataset(60, 6, 1.0, 61);
        let spec = two_factor();
        let theta = two_factor_truth(Reliability::High);
        let e = info_e(&spec, &theta, &data).unwrap();
        let min_eig = e.symmetric_eigenvalues().min();
        assert!(min_eig > -1e-8 * e.amax(), "min eigenvalue {min_eig}");
    }

    #[test]
    fn info_j_scales_linearly_on_duplicated_data() {
        let data = test_dataset(30, 6, 1.0, 67);
        let doubled = {
            let m = data.matrix();
            let mut big = DMatrix::zeros(60, 6);
            big.rows_mut(0, 30).copy_from(m);
            big.rows_mut(30, 30).copy_from(m);
            Dataset::new(big).unwrap()
        };
        let spec = two_factor();
        let theta = two_factor_truth(Reliability::Low);
        let j1 = info_j(&spec, &theta, &data.summary()).unwrap();
        let j2 = info_j(&spec, &theta, &doubled.summary()).unwrap();
        let diff = (&j2 - 2.0 * &j1).amax();
        assert!(diff < 1e-8 * j2.amax().max(1.0), "j additivity violated: {diff}");
    }

    #[test]
    fn sandwich_collapses_when_e_equals_j() {
        let data = test_dataset(80, 6, 1.0, 71);
        let spec = two_factor();
        let theta = two_factor_truth(Reliability::High);
        let j = info_j(&spec, &theta, &data.summary()).unwrap();
        let s = sandwich_from(&j, &j).unwrap();
        let j_inv = j.clone().try_inverse().unwrap();
        assert!((s - j_inv).amax() < 1e-10, "sandwich(j, j) must equal j⁻¹");
    }

    #[test]
    fn sandwich_ses_shrink_root_two_on_duplicated_data() {
        let data = test_dataset(40, 6, 1.0, 73);
        let doubled = {
            let m = data.matrix();
            let mut big = DMatrix::zeros(80, 6);
            big.rows_mut(0, 40).copy_from(m);
            big.rows_mut(40, 40).copy_from(m);
            Dataset::new(big).unwrap()
        };
        let spec = two_factor();
        let theta = two_factor_truth(Reliability::High);
        let se1 = sandwich_se(&spec, &theta, &data).unwrap();
        let se2 = sandwich_se(&spec, &theta, &doubled).unwrap();
        for a in 0..spec.n_params() {
            let expected = se1[a] / 2.0_f64.sqrt();
            assert!(
                (se2[a] - expected).abs() / expected < 1e-6,
                "parameter {a}: {} vs {}",
                se2[a],
                expected
            );
        }
    }

    #[test]
    fn normal_mean_sandwich_matches_classical_rate() {
        let n = 10_000;
        let data = test_dataset(n, 1, 1.0, 79);
        let summary = data.summary();
        let spec = ModelSpec::saturated(1);
        let theta_hat = saturated_theta(&spec, &summary);
        let se = sandwich_se(&spec, &theta_hat, &data).unwrap();
        let classical = (summary.s[(0, 0)] / n as f64).sqrt();
        assert!(
            (se[0] - classical).abs() / classical < 0.05,
            "sandwich SE {} vs classical {}",
            se[0],
            classical
        );
    }

    #[test]
    fn gcm_loglik_matches_direct_mixed_model_density() {
        // The growth-curve marginal law is N(Λα, ΛΨΛᵀ + θI); evaluate that
        // density directly, without the model machinery, and compare.
        let spec = gcm();
        let theta = gcm_truth(Reliability::High);
        let data = {
            let raw = test_dataset(12, 10, 20.0, 83);
            let mut m = raw.matrix().clone();
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    m[(r, c)] += 5.0 * c as f64;
                }
            }
            Dataset::new(m).unwrap()
        };
        let summary = data.summary();
        let got = loglik(&spec, &theta, &summary).unwrap();

        let t: Vec<f64> = (0..10).map(|j| j as f64).collect();
        let z = DMatrix::from_fn(10, 2, |r, c| if c == 0 { 1.0 } else { t[r] });
        let psi = DMatrix::from_row_slice(2, 2, &[theta[2], theta[4], theta[4], theta[3]]);
        let v = &z * psi * z.transpose() + DMatrix::identity(10, 10) * theta[5];
        let mu = &z * DVector::from_column_slice(&[theta[0], theta[1]]);
        let chol = Cholesky::new(v.clone()).unwrap();
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let mut direct = 0.0;
        for i in 0..data.n() {
            let d = data.row(i) - &mu;
            direct += -0.5 * (10.0 * LOG_2PI + log_det + d.dot(&chol.solve(&d)));
        }
        assert_abs_diff_eq!(got, direct, epsilon = 1e-8 * direct.abs().max(1.0));
    }

    #[test]
    fn covariance_part_invariant_to_translation() {
        let data = test_dataset(30, 6, 1.0, 89);
        let shifted = {
            let mut m = data.matrix().clone();
            for r in 0..m.nrows() {
                m[(r, 2)] += 7.5;
            }
            Dataset::new(m).unwrap()
        };
        let reduced = two_factor().profiled_reduction().unwrap().reduced;
        let full = two_factor_truth(Reliability::High);
        let theta = DVector::from_iterator(13, (6..19).map(|k| full[k]));
        let l1 = loglik(&reduced, &theta, &data.summary()).unwrap();
        let l2 = loglik(&reduced, &theta, &shifted.summary()).unwrap();
        assert_abs_diff_eq!(l1, l2, epsilon = 1e-10 * l1.abs());
    }

    #[test]
    fn non_pd_sigma_is_a_domain_error() {
        let spec = two_factor();
        let mut theta = two_factor_truth(Reliability::High);
        for i in 11..17 {
            theta[i] = -0.5; // negative residual variances
        }
        let data = test_dataset(10, 6, 1.0, 97).summary();
        match loglik(&spec, &theta, &data) {
            Err(Error::NotPositiveDefinite(_)) => {}
            other => panic!("expected non-PD error, got {other:?}"),
        }
    }
}
