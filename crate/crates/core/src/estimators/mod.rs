//! Point estimation and acceptability screening.
//!
//! Six estimators share one [`FitResult`] shape:
//!
//! - **ML** ([`fit_ml`]): box-constrained quasi-Newton maximization of the
//!   normal log-likelihood. When the mean part is exactly μ = ν with every
//!   intercept free, the intercepts are profiled out as ν̂ = ȳ (exact) and
//!   only the covariance parameters are optimized.
//! - **iRBM** ([`fit_irbm`]): maximizes ℓ(ϑ) + P(ϑ) with the empirical
//!   bias-reducing penalty P(ϑ) = −½tr{j(ϑ)⁻¹e(ϑ)} recomputed (fresh j and
//!   e) at every objective evaluation.
//! - **eRBM** ([`fit_erbm`]): one explicit correction step
//!   ϑ† = θ̂ + j(θ̂)⁻¹∇P(θ̂) from the ML estimate, re-screened for
//!   acceptability (the jump can leave the admissible region).
//! - **Boot** ([`bootstrap_correct`]): θ̂_boot = 2θ̂ − mean of resample ML
//!   estimates, with unacceptable resamples dropped and optional quantile
//!   trimming; SEs are the replicate standard deviations.
//! - **Jack** ([`jackknife_correct`]): θ̂_jack = nθ̂ − (n−1)·mean of
//!   leave-one-out estimates; SEs from the jackknife variance.
//! - **REML** ([`reml::fit_reml_gcm`]): restricted likelihood for
//!   growth-curve-family specifications.
//!
//! The penalized estimators work in the *full* parameter space (including
//! free intercepts): the intercept block of tr{j⁻¹e} is what carries the
//! variance bias correction, so profiling it away would neutralize the
//! penalty. Profiling stays confined to the plain ML point, where ν̂ = ȳ is
//! exact.
//!
//! An estimate is *acceptable* when the fit converged, the implied
//! covariance Σ(θ̂) is positive definite, and every standard error is below
//! the model's threshold; [`check_acceptable`] screens every result and
//! records the first failed criterion as its rejection reason.

pub mod reml;

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::data::{DataSummary, Dataset};
use crate::error::{Error, Result};
use crate::likelihood;
use crate::model::{Cell, MatrixId, ModelSpec, ProfiledReduction};
use crate::numdiff;
use crate::optim::{maximize_box, Bounds, OptimOptions};
use crate::seeds;

/// Data-derived box constraints (see [`default_bounds`] for the rules).
pub type BoundsPolicy = Bounds;

const RESTART_JITTER: f64 = 0.3;
const BOOT_TAG: u64 = 0xB002_57A9;
const JACK_TAG: u64 = 0x1ACC_A11F;

/// Which estimator produced a [`FitResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Ml,
    Erbm,
    Irbm,
    Boot,
    Jack,
    Reml,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Ml => "ML",
            Estimator::Erbm => "eRBM",
            Estimator::Irbm => "iRBM",
            Estimator::Boot => "Boot",
            Estimator::Jack => "Jack",
            Estimator::Reml => "REML",
        }
    }

    /// All estimators, in reporting order.
    pub fn all() -> [Estimator; 6] {
        [Estimator::Ml, Estimator::Erbm, Estimator::Irbm, Estimator::Boot, Estimator::Jack, Estimator::Reml]
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ml" => Ok(Estimator::Ml),
            "erbm" => Ok(Estimator::Erbm),
            "irbm" => Ok(Estimator::Irbm),
            "boot" | "bootstrap" => Ok(Estimator::Boot),
            "jack" | "jackknife" => Ok(Estimator::Jack),
            "reml" => Ok(Estimator::Reml),
            other => Err(Error::Config(format!(
                "unknown estimator {other:?}; expected one of ML, eRBM, iRBM, Boot, Jack, REML"
            ))),
        }
    }
}

impl Serialize for Estimator {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> serde::Deserialize<'de> for Estimator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Why a fit was rejected; `None` for acceptable fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectionReason {
    None,
    NoConvergence,
    SigmaNotPd,
    SeOutOfRange,
}

impl RejectionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectionReason::None => "none",
            RejectionReason::NoConvergence => "no_convergence",
            RejectionReason::SigmaNotPd => "sigma_not_pd",
            RejectionReason::SeOutOfRange => "se_out_of_range",
        }
    }
}

/// A fitted model: point estimate, robust standard errors, and the
/// acceptability verdict.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub estimator: Estimator,
    pub theta_hat: DVector<f64>,
    /// Sandwich standard errors (replicate-spread for Boot/Jack, Hessian /
    /// GLS for REML); +∞ marks entries whose variance computation failed.
    pub se: DVector<f64>,
    /// Standard errors the acceptability screen inspects: square roots of
    /// diag(j⁻¹) for the likelihood-based estimators (the screen flags
    /// ill-conditioned information, while `se` carries the robust sandwich
    /// values used for intervals); identical to `se` for Boot/Jack/REML.
    pub se_screen: DVector<f64>,
    /// Log-likelihood at `theta_hat` (restricted likelihood for REML); NaN
    /// when the value is undefined at the reported point.
    pub loglik: f64,
    /// Penalty P(θ̃) for iRBM; 0 for every other estimator.
    pub penalty: f64,
    pub converged: bool,
    pub acceptable: bool,
    pub rejection_reason: RejectionReason,
    pub iterations: usize,
    pub wall_time: f64,
}

impl Serialize for FitResult {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("FitResult", 11)?;
        st.serialize_field("estimator", self.estimator.as_str())?;
        st.serialize_field("theta_hat", self.theta_hat.as_slice())?;
        st.serialize_field("se", self.se.as_slice())?;
        st.serialize_field("se_screen", self.se_screen.as_slice())?;
        st.serialize_field("loglik", &self.loglik)?;
        st.serialize_field("penalty", &self.penalty)?;
        st.serialize_field("converged", &self.converged)?;
        st.serialize_field("acceptable", &self.acceptable)?;
        st.serialize_field("rejection_reason", self.rejection_reason.as_str())?;
        st.serialize_field("iterations", &self.iterations)?;
        st.serialize_field("wall_time", &self.wall_time)?;
        st.end()
    }
}

/// Knobs shared by all estimators. `Default` gives the standard pipeline:
/// data-derived bounds, heuristic starts, three jittered restarts, bootstrap
/// T = 200 untrimmed.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Box constraints in the full parameter space; `None` derives them from
    /// the data via [`default_bounds`].
    pub bounds: Option<BoundsPolicy>,
    /// Full-length start vector; `None` uses [`starting_values`].
    pub start: Option<DVector<f64>>,
    /// Jittered restarts after a failed first attempt.
    pub max_restarts: usize,
    /// Master seed for restart jitter and resampling substreams.
    pub seed: u64,
    /// Overrides the model's acceptability threshold on standard errors.
    pub se_threshold: Option<f64>,
    pub optim: OptimOptions,
    /// Bootstrap resample count T.
    pub bootstrap_reps: usize,
    /// Per-parameter quantile pair (lo, hi); replicate estimates outside are
    /// discarded before averaging.
    pub bootstrap_trim: Option<(f64, f64)>,
    /// When true, a bootstrap with zero acceptable resamples is an error
    /// instead of a rejected fit.
    pub bootstrap_strict: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bounds: None,
            start: None,
            max_restarts: 3,
            seed: 0,
            se_threshold: None,
            optim: OptimOptions::default(),
            bootstrap_reps: 200,
            bootstrap_trim: None,
            bootstrap_strict: false,
        }
    }
}

/// Resampling bookkeeping: how many replicate fits were attempted and how
/// many were dropped (failed or unacceptable).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ResampleDiagnostics {
    pub attempted: usize,
    pub dropped: usize,
}

// ---------------------------------------------------------------------------
// Bounds, starts, acceptability.
// ---------------------------------------------------------------------------

/// Variance scale per latent variable: the observed variance of the first
/// indicator with a fixed nonzero loading on it, divided by that loading
/// squared (falling back to the largest observed variance when no such
/// anchor exists).
fn anchor_variances(spec: &ModelSpec, s: &DMatrix<f64>) -> DVector<f64> {
    let fallback = (0..spec.p).map(|j| s[(j, j)]).fold(f64::MIN, f64::max);
    DVector::from_fn(spec.q, |k, _| {
        for i in 0..spec.p {
            if let Cell::Fixed(v) = spec.lambda.get(i, k) {
                if v != 0.0 {
                    return s[(i, i)] / (v * v);
                }
            }
        }
        fallback
    })
}

/// Data-informed box constraints:
///
/// - residual variances θᵢᵢ ∈ [0, 2·Sᵢᵢ]; latent variances ψₖₖ ∈
///   [0, 2·(anchor variance of factor k)];
/// - covariances bounded by the Cauchy–Schwarz box of their variance upper
///   bounds: |σ₁₂| ≤ √(upper₁·upper₂);
/// - loadings and structural slopes in ±10·(standard-deviation ratio of the
///   two sides of the arrow);
/// - mean parameters (ν, α) in ±10·maxⱼ(|ȳⱼ| + sdⱼ).
///
/// Shared parameters read their scale off the group's first canonical cell.
pub fn default_bounds(spec: &ModelSpec, data: &DataSummary) -> Result<BoundsPolicy> {
    if data.p() != spec.p {
        return Err(Error::ShapeMismatch(format!(
            "data has {} variables, specification expects {}",
            data.p(),
            spec.p
        )));
    }
    let s = &data.s;
    for j in 0..spec.p {
        if s[(j, j)].is_nan() || s[(j, j)] <= 0.0 {
            return Err(Error::Data(format!(
                "indicator {} has zero sample variance; data-derived bounds are undefined",
                j + 1
            )));
        }
    }
    let anchor = anchor_variances(spec, s);
    let mean_scale = 10.0
        * (0..spec.p)
            .map(|j| data.ybar[j].abs() + s[(j, j)].sqrt())
            .fold(0.0, f64::max);

    let m = spec.n_params();
    let mut lower = DVector::zeros(m);
    let mut upper = DVector::zeros(m);
    for (idx, group) in spec.free_groups().iter().enumerate() {
        let (i, j) = group.cells[0];
        let (lo, hi) = match group.matrix {
            MatrixId::Nu | MatrixId::Alpha => (-mean_scale, mean_scale),
            MatrixId::Theta => {
                if i == j {
                    (0.0, 2.0 * s[(i, i)])
                } else {
                    let b = (2.0 * s[(i, i)] * 2.0 * s[(j, j)]).sqrt();
                    (-b, b)
                }
            }
            MatrixId::Psi => {
                if i == j {
                    (0.0, 2.0 * anchor[i])
                } else {
                    let b = (2.0 * anchor[i] * 2.0 * anchor[j]).sqrt();
                    (-b, b)
                }
            }
            MatrixId::Lambda => {
                let ratio = (s[(i, i)] / anchor[j]).sqrt();
                (-10.0 * ratio, 10.0 * ratio)
            }
            MatrixId::B => {
                let ratio = (anchor[i] / anchor[j]).sqrt();
                (-10.0 * ratio, 10.0 * ratio)
            }
        };
        lower[idx] = lo;
        upper[idx] = hi;
    }
    Bounds::new(lower, upper)
}

/// Saturated-moments start heuristic: ν = ȳ, residual variances = ½·Sᵢᵢ,
/// latent variances = ½·anchor variance, loadings 1, slopes and covariances
/// 0, latent means by least squares of ȳ on the start loadings.
pub fn starting_values(spec: &ModelSpec, data: &DataSummary) -> Result<DVector<f64>> {
    if data.p() != spec.p {
        return Err(Error::ShapeMismatch(format!(
            "data has {} variables, specification expects {}",
            data.p(),
            spec.p
        )));
    }
    let anchor = anchor_variances(spec, &data.s);
    let m = spec.n_params();
    let mut x = DVector::zeros(m);
    let mut alpha_groups: Vec<(usize, usize)> = Vec::new(); // (param index, α row)
    for (idx, group) in spec.free_groups().iter().enumerate() {
        let (i, j) = group.cells[0];
        x[idx] = match group.matrix {
            MatrixId::Nu => data.ybar[i],
            MatrixId::Alpha => {
                alpha_groups.push((idx, i));
                0.0
            }
            MatrixId::Theta => {
                if i == j {
                    0.5 * data.s[(i, i)]
                } else {
                    0.0
                }
            }
            MatrixId::Psi => {
                if i == j {
                    0.5 * anchor[i]
                } else {
                    0.0
                }
            }
            MatrixId::Lambda => 1.0,
            MatrixId::B => 0.0,
        };
    }
    if spec.mean_structure && !alpha_groups.is_empty() {
        // μ ≈ ν₀ + Λ₀α at the start values (B starts at 0), so take the
        // least-squares coefficients of (ȳ − ν₀) on Λ₀.
        if let Ok(mats) = spec.unpack(&x) {
            let resid = &data.ybar - &mats.nu;
            let gram = mats.lambda.transpose() * &mats.lambda;
            let rhs = mats.lambda.transpose() * resid;
            if let Some(sol) = gram.lu().solve(&rhs) {
                if sol.iter().all(|v| v.is_finite()) {
                    for &(idx, row) in &alpha_groups {
                        x[idx] = sol[row];
                    }
                }
            }
        }
    }
    Ok(x)
}

/// The standard-error threshold used for acceptability: the model's own
/// threshold when it declares one, otherwise 5·max(1, largest indicator
/// standard deviation).
pub fn acceptance_threshold(spec: &ModelSpec, data: &DataSummary) -> f64 {
    spec.se_threshold.unwrap_or_else(|| {
        let max_sd = (0..data.p()).map(|j| data.s[(j, j)].sqrt()).fold(0.0, f64::max);
        5.0 * max_sd.max(1.0)
    })
}

/// Screens a fit against the three acceptability criteria, in order:
/// (a) convergence, (b) positive-definite implied covariance at the
/// estimate, (c) every screen standard error (inverse observed information
/// for the likelihood-based estimators, replicate spread for the resampling
/// corrections) strictly below `threshold`. The first failed criterion
/// becomes the rejection reason.
pub fn check_acceptable(mut fit: FitResult, spec: &ModelSpec, threshold: f64) -> FitResult {
    fit.acceptable = false;
    if !fit.converged || fit.theta_hat.iter().any(|v| !v.is_finite()) {
        fit.rejection_reason = RejectionReason::NoConvergence;
        return fit;
    }
    let sigma_pd = spec
        .implied_moments(&fit.theta_hat)
        .ok()
        .and_then(|m| Cholesky::new(m.sigma))
        .is_some();
    if !sigma_pd {
        fit.rejection_reason = RejectionReason::SigmaNotPd;
        return fit;
    }
    if fit.se_screen.iter().any(|s| !s.is_finite() || *s >= threshold) {
        fit.rejection_reason = RejectionReason::SeOutOfRange;
        return fit;
    }
    fit.acceptable = true;
    fit.rejection_reason = RejectionReason::None;
    fit
}

// ---------------------------------------------------------------------------
// Shared optimization plumbing.
// ---------------------------------------------------------------------------

fn jitter(base: &DVector<f64>, bounds: &Bounds, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let shaken = DVector::from_fn(base.len(), |a, _| {
        base[a] + rng.random_range(-RESTART_JITTER..RESTART_JITTER) * base[a].abs().max(1.0)
    });
    bounds.project(&shaken)
}

/// First attempt from `base`, then up to `max_restarts` jittered retries;
/// returns the first converged outcome, else the best non-converged one.
/// Every candidate start must be feasible for at least one attempt, or the
/// whole fit is a start-value error.
fn optimize_restarts<F, G>(
    f: &mut F,
    g: &mut G,
    base: &DVector<f64>,
    bounds: &Bounds,
    max_restarts: usize,
    seed: u64,
    oo: &OptimOptions,
) -> Result<(DVector<f64>, bool, usize)>
where
    F: FnMut(&DVector<f64>) -> Option<f64>,
    G: FnMut(&DVector<f64>) -> Option<DVector<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(seed, 0x5EED_0001));
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut iterations = 0usize;
    for attempt in 0..=max_restarts {
        let x0 = if attempt == 0 { bounds.project(base) } else { jitter(base, bounds, &mut rng) };
        if f(&x0).is_none() {
            continue;
        }
        let out = maximize_box(&mut *f, &mut *g, &x0, bounds, oo)?;
        iterations += out.iterations;
        if out.converged {
            return Ok((out.x, true, iterations));
        }
        if best.as_ref().is_none_or(|(_, bf)| out.f > *bf) {
            best = Some((out.x, out.f));
        }
    }
    match best {
        Some((x, _)) => Ok((x, false, iterations)),
        None => Err(Error::StartValue),
    }
}

/// Closed-form MLE for saturated specifications (free means and a fully
/// free covariance): ν̂ = ȳ, Θ̂ = S.
fn saturated_closed_form(spec: &ModelSpec, data: &DataSummary) -> Option<DVector<f64>> {
    if !spec.is_saturated() {
        return None;
    }
    let mut theta = DVector::zeros(spec.n_params());
    for (idx, group) in spec.free_groups().iter().enumerate() {
        let (i, j) = group.cells[0];
        theta[idx] = match group.matrix {
            MatrixId::Nu => data.ybar[i],
            MatrixId::Theta => data.s[(i, j)],
            _ => return None,
        };
    }
    Some(theta)
}

/// ML point estimate for one spec: closed form when saturated, otherwise
/// restarted box-constrained quasi-Newton. Returns (θ̂, converged,
/// iterations).
fn ml_point(
    spec: &ModelSpec,
    summary: &DataSummary,
    bounds: &Bounds,
    start: Option<&DVector<f64>>,
    opts: &FitOptions,
) -> Result<(DVector<f64>, bool, usize)> {
    let m = spec.n_params();
    if m == 0 {
        return Ok((DVector::zeros(0), true, 0));
    }
    if let Some(t) = saturated_closed_form(spec, summary) {
        return Ok((t, true, 0));
    }
    let base = match start {
        Some(s) => {
            if s.len() != m {
                return Err(Error::LengthMismatch { got: s.len(), expected: m });
            }
            s.clone()
        }
        None => starting_values(spec, summary)?,
    };
    let mut f = |x: &DVector<f64>| likelihood::loglik(spec, x, summary).ok();
    let mut g = |x: &DVector<f64>| likelihood::score_general(spec, x, summary).ok();
    optimize_restarts(&mut f, &mut g, &base, bounds, opts.max_restarts, opts.seed, &opts.optim)
}

fn select(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&k| v[k]))
}

/// Rebuilds the full parameter vector from a profiled fit: intercepts get
/// ȳ, everything else comes from the reduced vector.
fn assemble_profiled(
    spec: &ModelSpec,
    red: &ProfiledReduction,
    theta_r: &DVector<f64>,
    summary: &DataSummary,
) -> DVector<f64> {
    let mut theta = DVector::zeros(spec.n_params());
    for (i, &pi) in red.nu_indices.iter().enumerate() {
        theta[pi] = summary.ybar[i];
    }
    for (r, &pi) in red.kept.iter().enumerate() {
        theta[pi] = theta_r[r];
    }
    theta
}

// ---------------------------------------------------------------------------
// Maximum likelihood.
// ---------------------------------------------------------------------------

/// Robust (sandwich) and screen (inverse-information) standard errors at a
/// fitted point; +∞ entries mark a breakdown of the respective computation.
fn se_pair(
    spec: &ModelSpec,
    theta: &DVector<f64>,
    data: &Dataset,
    summary: &DataSummary,
) -> (DVector<f64>, DVector<f64>) {
    let inf = DVector::from_element(spec.n_params(), f64::INFINITY);
    let Ok(j) = likelihood::info_j(spec, theta, summary) else {
        return (inf.clone(), inf);
    };
    let se_screen = likelihood::se_from_information(&j).unwrap_or_else(|_| inf.clone());
    let se = likelihood::info_e(spec, theta, data)
        .ok()
        .and_then(|e| likelihood::sandwich_from(&j, &e).ok())
        .and_then(|s| likelihood::se_from_sandwich(&s).ok())
        .unwrap_or(inf);
    (se, se_screen)
}

/// Maximum-likelihood fit with data-derived box constraints and sandwich
/// standard errors. Optimizer failure is reported through
/// `converged = false`, never as an error; an error means no admissible
/// start value existed at all.
pub fn fit_ml(spec: &ModelSpec, data: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    let t0 = Instant::now();
    let summary = data.summary();
    let threshold = opts.se_threshold.unwrap_or_else(|| acceptance_threshold(spec, &summary));
    let m = spec.n_params();
    let nf = summary.n as f64;

    let (theta, se, se_screen, converged, iterations) = match spec.profiled_reduction() {
        Some(red) => {
            let bounds = match &opts.bounds {
                Some(b) => {
                    if b.len() != m {
                        return Err(Error::LengthMismatch { got: b.len(), expected: m });
                    }
                    Bounds::new(select(&b.lower, &red.kept), select(&b.upper, &red.kept))?
                }
                None => default_bounds(&red.reduced, &summary)?,
            };
            let start = opts.start.as_ref().map(|s| select(s, &red.kept));
            let (theta_r, converged, iterations) =
                ml_point(&red.reduced, &summary, &bounds, start.as_ref(), opts)?;
            let theta = assemble_profiled(spec, &red, &theta_r, &summary);
            let mut se = DVector::from_element(m, f64::INFINITY);
            let mut se_screen = DVector::from_element(m, f64::INFINITY);
            for (i, &pi) in red.nu_indices.iter().enumerate() {
                let mean_se = (summary.s[(i, i)] / nf).sqrt();
                se[pi] = mean_se;
                se_screen[pi] = mean_se;
            }
            if red.reduced.n_params() > 0 {
                let (se_r, screen_r) = se_pair(&red.reduced, &theta_r, data, &summary);
                for (r, &pi) in red.kept.iter().enumerate() {
                    se[pi] = se_r[r];
                    se_screen[pi] = screen_r[r];
                }
            }
            (theta, se, se_screen, converged, iterations)
        }
        None => {
            let bounds = match &opts.bounds {
                Some(b) => b.clone(),
                None => default_bounds(spec, &summary)?,
            };
            let (theta, converged, iterations) =
                ml_point(spec, &summary, &bounds, opts.start.as_ref(), opts)?;
            let (se, se_screen) = se_pair(spec, &theta, data, &summary);
            (theta, se, se_screen, converged, iterations)
        }
    };
    let loglik = likelihood::loglik(spec, &theta, &summary).unwrap_or(f64::NAN);
    let fit = FitResult {
        estimator: Estimator::Ml,
        theta_hat: theta,
        se,
        se_screen,
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
// The bias-reducing penalty and the two RBM estimators.
// ---------------------------------------------------------------------------

/// −½·tr(j⁻¹e) by Cholesky solve. Requires j positive definite: an
/// indefinite information matrix makes the trace meaningless (and would pull
/// a penalized optimizer toward the singularity).
pub fn penalty_from(j: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<f64> {
    if j.nrows() != j.ncols() || e.nrows() != e.ncols() || j.nrows() != e.nrows() {
        return Err(Error::ShapeMismatch("penalty needs square j, e of equal size".into()));
    }
    if j.is_empty() {
        return Ok(0.0);
    }
    let chol =
        Cholesky::new(j.clone()).ok_or(Error::NotPositiveDefinite("observed information"))?;
    let tr = chol.solve(e).trace();
    if !tr.is_finite() {
        return Err(Error::NonFiniteDifference);
    }
    Ok(-0.5 * tr)
}

fn penalty_at(
    spec: &ModelSpec,
    theta: &DVector<f64>,
    data: &Dataset,
    summary: &DataSummary,
) -> Result<f64> {
    let j = likelihood::info_j(spec, theta, summary)?;
    let e = likelihood::info_e(spec, theta, data)?;
    penalty_from(&j, &e)
}

/// Empirical bias-reducing penalty P(ϑ) = −½·tr{j(ϑ)⁻¹e(ϑ)}.
pub fn rbm_penalty(spec: &ModelSpec, theta: &DVector<f64>, data: &Dataset) -> Result<f64> {
    let summary = data.summary();
    penalty_at(spec, theta, data, &summary)
}

/// Implicit reduced-bias estimator: maximizes ℓ(ϑ) + P(ϑ) under the same
/// bounds as ML, recomputing j and e at every evaluation. Starts from the
/// ML estimate when that fit is acceptable, else from the heuristic start.
pub fn fit_irbm(
    spec: &ModelSpec,
    data: &Dataset,
    opts: &FitOptions,
    ml: Option<&FitResult>,
) -> Result<FitResult> {
    let t0 = Instant::now();
    let summary = data.summary();
    let threshold = opts.se_threshold.unwrap_or_else(|| acceptance_threshold(spec, &summary));
    let bounds = match &opts.bounds {
        Some(b) => b.clone(),
        None => default_bounds(spec, &summary)?,
    };
    let base = match (&opts.start, ml) {
        (Some(s), _) => s.clone(),
        (None, Some(f)) if f.acceptable => f.theta_hat.clone(),
        _ => starting_values(spec, &summary)?,
    };

    let (theta, converged, iterations) = {
        let mut f = |x: &DVector<f64>| -> Option<f64> {
            let ll = likelihood::loglik(spec, x, &summary).ok()?;
            let p = penalty_at(spec, x, data, &summary).ok()?;
            let v = ll + p;
            v.is_finite().then_some(v)
        };
        let mut g = |x: &DVector<f64>| -> Option<DVector<f64>> {
            let gl = likelihood::score_general(spec, x, &summary).ok()?;
            let gp =
                numdiff::central_gradient(|t| penalty_at(spec, t, data, &summary), x).ok()?;
            let tot = gl + gp;
            tot.iter().all(|v| v.is_finite()).then_some(tot)
        };
        optimize_restarts(&mut f, &mut g, &base, &bounds, opts.max_restarts, opts.seed, &opts.optim)?
    };

    let penalty = penalty_at(spec, &theta, data, &summary).unwrap_or(f64::NAN);
    let loglik = likelihood::loglik(spec, &theta, &summary).unwrap_or(f64::NAN);
    let (se, se_screen) = se_pair(spec, &theta, data, &summary);
    let fit = FitResult {
        estimator: Estimator::Irbm,
        theta_hat: theta,
        se,
        se_screen,
        loglik,
        penalty,
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

/// Explicit reduced-bias estimator: one correction step
/// ϑ† = θ̂ + j(θ̂)⁻¹∇P(θ̂) from a converged ML fit, with ∇P by central
/// differences of the penalty. The corrected point is re-screened: the jump
/// can produce an indefinite implied covariance even when ML was acceptable.
pub fn fit_erbm(
    spec: &ModelSpec,
    data: &Dataset,
    opts: &FitOptions,
    ml: &FitResult,
) -> Result<FitResult> {
    let t0 = Instant::now();
    let summary = data.summary();
    let threshold = opts.se_threshold.unwrap_or_else(|| acceptance_threshold(spec, &summary));
    let m = spec.n_params();

    if !ml.converged {
        let fit = FitResult {
            estimator: Estimator::Erbm,
            theta_hat: ml.theta_hat.clone(),
            se: DVector::from_element(m, f64::INFINITY),
            se_screen: DVector::from_element(m, f64::INFINITY),
            loglik: f64::NAN,
            penalty: 0.0,
            converged: false,
            acceptable: false,
            rejection_reason: RejectionReason::NoConvergence,
            iterations: ml.iterations,
            wall_time: t0.elapsed().as_secs_f64(),
        };
        return Ok(fit);
    }

    let j = likelihood::info_j(spec, &ml.theta_hat, &summary)?;
    let a = numdiff::central_gradient(|t| penalty_at(spec, t, data, &summary), &ml.theta_hat)?;
    let chol =
        Cholesky::new(j).ok_or(Error::NotPositiveDefinite("observed information"))?;
    let theta = &ml.theta_hat + chol.solve(&a);
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteDifference);
    }

    let loglik = likelihood::loglik(spec, &theta, &summary).unwrap_or(f64::NAN);
    let (se, se_screen) = se_pair(spec, &theta, data, &summary);
    let fit = FitResult {
        estimator: Estimator::Erbm,
        theta_hat: theta,
        se,
        se_screen,
        loglik,
        penalty: 0.0,
        converged: true,
        acceptable: false,
        rejection_reason: RejectionReason::NoConvergence,
        iterations: ml.iterations,
        wall_time: 0.0,
    };
    let mut fit = check_acceptable(fit, spec, threshold);
    fit.wall_time = t0.elapsed().as_secs_f64();
    Ok(fit)
}

// ---------------------------------------------------------------------------
// Resampling corrections.
// ---------------------------------------------------------------------------

fn sample_mean(vals: &[f64]) -> f64 {
    numdiff::pairwise_sum(vals) / vals.len() as f64
}

fn sample_sd(vals: &[f64], mean: f64) -> f64 {
    if vals.len() < 2 {
        return f64::INFINITY;
    }
    let sq: Vec<f64> = vals.iter().map(|v| (v - mean) * (v - mean)).collect();
    (numdiff::pairwise_sum(&sq) / (vals.len() - 1) as f64).sqrt()
}

/// Linear-interpolation sample quantile on a sorted slice.
fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let last = sorted.len() - 1;
    let h = last as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Warm-started ML refit on a resampled dataset; `None` when the fit fails
/// or is unacceptable.
fn resample_fit(
    spec: &ModelSpec,
    sample: &Dataset,
    opts: &FitOptions,
    warm: &DVector<f64>,
    seed: u64,
) -> Option<DVector<f64>> {
    let sub = FitOptions {
        bounds: opts.bounds.clone(),
        start: Some(warm.clone()),
        seed,
        ..opts.clone()
    };
    match fit_ml(spec, sample, &sub) {
        Ok(f) if f.acceptable => Some(f.theta_hat),
        _ => None,
    }
}

fn rejected_resampling_result(
    estimator: Estimator,
    base: &FitResult,
    m: usize,
) -> FitResult {
    FitResult {
        estimator,
        theta_hat: base.theta_hat.clone(),
        se: DVector::from_element(m, f64::INFINITY),
        se_screen: DVector::from_element(m, f64::INFINITY),
        loglik: f64::NAN,
        penalty: 0.0,
        converged: false,
        acceptable: false,
        rejection_reason: RejectionReason::NoConvergence,
        iterations: base.iterations,
        wall_time: 0.0,
    }
}

/// Bootstrap bias correction with caller-supplied resample indices (each row
/// of `draws` lists the original-row indices of one resample). Exposed so
/// degenerate designs (e.g. the identity resample) are testable; use
/// [`bootstrap_correct`] for seeded with-replacement draws.
pub fn bootstrap_correct_with_draws(
    spec: &ModelSpec,
    data: &Dataset,
    opts: &FitOptions,
    draws: &[Vec<usize>],
) -> Result<(FitResult, ResampleDiagnostics)> {
    if draws.is_empty() {
        return Err(Error::Resampling("bootstrap needs at least one resample".into()));
    }
    if let Some((lo, hi)) = opts.bootstrap_trim {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(Error::Config(format!(
                "bootstrap trim quantiles must satisfy 0 ≤ lo < hi ≤ 1, got ({lo}, {hi})"
            )));
        }
    }
    let t0 = Instant::now();
    let summary = data.summary();
    let threshold = opts.se_threshold.unwrap_or_else(|| acceptance_threshold(spec, &summary));
    let m = spec.n_params();
    let base = fit_ml(spec, data, opts)?;

    let replicates: Vec<Option<DVector<f64>>> = draws
        .par_iter()
        .enumerate()
        .map(|(t, idx)| {
            let sample = data.select_rows(idx).ok()?;
            resample_fit(spec, &sample, opts, &base.theta_hat, seeds::mix(opts.seed, BOOT_TAG ^ t as u64))
        })
        .collect();
    let kept: Vec<&DVector<f64>> = replicates.iter().flatten().collect();
    let diagnostics =
        ResampleDiagnostics { attempted: draws.len(), dropped: draws.len() - kept.len() };

    if kept.is_empty() {
        if opts.bootstrap_strict {
            return Err(Error::Resampling(format!(
                "all {} bootstrap resamples were rejected",
                draws.len()
            )));
        }
        let mut fit = rejected_resampling_result(Estimator::Boot, &base, m);
        fit.wall_time = t0.elapsed().as_secs_f64();
        return Ok((fit, diagnostics));
    }

    let mut mean = DVector::zeros(m);
    let mut se = DVector::zeros(m);
    for a in 0..m {
        let mut vals: Vec<f64> = kept.iter().map(|v| v[a]).collect();
        if let Some((lo, hi)) = opts.bootstrap_trim {
            vals.sort_by(f64::total_cmp);
            let ql = sorted_quantile(&vals, lo);
            let qh = sorted_quantile(&vals, hi);
            vals.retain(|v| *v >= ql && *v <= qh);
        }
        mean[a] = sample_mean(&vals);
        se[a] = sample_sd(&vals, mean[a]);
    }
    let theta = 2.0 * &base.theta_hat - mean;
    let loglik = likelihood::loglik(spec, &theta, &summary).unwrap_or(f64::NAN);
    let fit = FitResult {
        estimator: Estimator::Boot,
        theta_hat: theta,
        se_screen: se.clone(),
        se,
        loglik,
        penalty: 0.0,
        converged: base.converged,
        acceptable: false,
        rejection_reason: RejectionReason::NoConvergence,
        iterations: base.iterations,
        wall_time: 0.0,
    };
    let mut fit = check_acceptable(fit, spec, threshold);
    fit.wall_time = t0.elapsed().as_secs_f64();
    Ok((fit, diagnostics))
}

/// Bootstrap bias correction: θ̂_boot = 2θ̂ − T⁻¹Σθ̂*, over
/// `opts.bootstrap_reps` with-replacement resamples (seeded substreams),
/// warm-started at θ̂. Unacceptable resample fits are dropped and counted;
/// replicate standard deviations become the standard errors.
pub fn bootstrap_correct(
    spec: &ModelSpec,
    data: &Dataset,
    opts: &FitOptions,
) -> Result<(FitResult, ResampleDiagnostics)> {
    let n = data.n();
    let t = opts.bootstrap_reps;
    if t == 0 {
        return Err(Error::Resampling("bootstrap needs at least one resample".into()));
    }
    let draws: Vec<Vec<usize>> = (0..t)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(opts.seed, BOOT_TAG.wrapping_add(k as u64)));
            (0..n).map(|_| rng.random_range(0..n)).collect()
        })
        .collect();
    bootstrap_correct_with_draws(spec, data, opts, &draws)
}

/// Jackknife bias correction: θ̂_jack = nθ̂ − (n−1)·mean of leave-one-out
/// estimates (mean over the acceptable ones). More than 20% failed
/// leave-one-out fits rejects the result; standard errors come from the
/// jackknife variance (k−1)/k·Σ(θ₍ᵢ₎ − θ̄)².
pub fn jackknife_correct(
    spec: &ModelSpec,
    data: &Dataset,
    opts: &FitOptions,
) -> Result<(FitResult, ResampleDiagnostics)> {
    let n = data.n();
    let m = spec.n_params();
    if n < m + 2 {
        return Err(Error::Underdetermined(format!(
            "jackknife needs n ≥ m + 2 = {}, got n = {n}",
            m + 2
        )));
    }
    let t0 = Instant::now();
    let summary = data.summary();
    let threshold = opts.se_threshold.unwrap_or_else(|| acceptance_threshold(spec, &summary));
    let base = fit_ml(spec, data, opts)?;

    let replicates: Vec<Option<DVector<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sample = data.without_row(i).ok()?;
            resample_fit(spec, &sample, opts, &base.theta_hat, seeds::mix(opts.seed, JACK_TAG ^ i as u64))
        })
        .collect();
    let kept: Vec<&DVector<f64>> = replicates.iter().flatten().collect();
    let diagnostics = ResampleDiagnostics { attempted: n, dropped: n - kept.len() };

    if kept.is_empty() || diagnostics.dropped * 5 > n {
        let mut fit = rejected_resampling_result(Estimator::Jack, &base, m);
        fit.wall_time = t0.elapsed().as_secs_f64();
        return Ok((fit, diagnostics));
    }

    let k = kept.len() as f64;
    let nf = n as f64;
    let mut theta = DVector::zeros(m);
    let mut se = DVector::zeros(m);
    for a in 0..m {
        let vals: Vec<f64> = kept.iter().map(|v| v[a]).collect();
        let mean = sample_mean(&vals);
        theta[a] = nf * base.theta_hat[a] - (nf - 1.0) * mean;
        let sq: Vec<f64> = vals.iter().map(|v| (v - mean) * (v - mean)).collect();
        se[a] = ((k - 1.0) / k * numdiff::pairwise_sum(&sq)).sqrt();
    }
    let loglik = likelihood::loglik(spec, &theta, &summary).unwrap_or(f64::NAN);
    let fit = FitResult {
        estimator: Estimator::Jack,
        theta_hat: theta,
        se_screen: se.clone(),
        se,
        loglik,
        penalty: 0.0,
        converged: base.converged,
        acceptable: false,
        rejection_reason: RejectionReason::NoConvergence,
        iterations: base.iterations,
        wall_time: 0.0,
    };
    let mut fit = check_acceptable(fit, spec, threshold);
    fit.wall_time = t0.elapsed().as_secs_f64();
    Ok((fit, diagnostics))
}

/// Runs the requested estimator end to end (fitting ML first where the
/// estimator is a correction of it).
pub fn fit(
    spec: &ModelSpec,
    data: &Dataset,
    estimator: Estimator,
    opts: &FitOptions,
) -> Result<FitResult> {
    match estimator {
        Estimator::Ml => fit_ml(spec, data, opts),
        Estimator::Irbm => {
            let ml = fit_ml(spec, data, opts)?;
            fit_irbm(spec, data, opts, Some(&ml))
        }
        Estimator::Erbm => {
            let ml = fit_ml(spec, data, opts)?;
            fit_erbm(spec, data, opts, &ml)
        }
        Estimator::Boot => bootstrap_correct(spec, data, opts).map(|(f, _)| f),
        Estimator::Jack => jackknife_correct(spec, data, opts).map(|(f, _)| f),
        Estimator::Reml => reml::fit_reml_gcm(spec, data, opts),
    }
}

// ---------------------------------------------------------------------------
