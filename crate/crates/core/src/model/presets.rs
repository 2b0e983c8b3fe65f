//! Built-in model presets and their true parameter values.
//!
//! Two presets are provided:
//!
//! * `two_factor`: six indicators, two correlated-through-regression factors
//!   (three indicators each, first loading per factor fixed at 1), free
//!   intercepts, diagonal Θ and Ψ, and the structural slope η₂ ← η₁.
//!   19 free parameters; the intercepts profile out during fitting.
//! * `gcm`: linear latent growth curve over 10 occasions with fixed loadings
//!   (intercept column of ones, slope column 0..9), free latent means, full
//!   2×2 latent covariance, and one shared residual variance. 6 parameters.
//!
//! Each preset comes in a high- and a low-reliability flavour of its true
//! values (average explained variance share ≈ 0.8 / ≈ 0.5).

use nalgebra::DVector;

use super::{MatrixPattern, ModelSpec};

/// Which column of true values to use when simulating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reliability {
    /// ≈ 0.8 average explained variance share.
    High,
    /// ≈ 0.5 average explained variance share.
    Low,
}

impl Reliability {
    pub fn as_str(self) -> &'static str {
        match self {
            Reliability::High => "high",
            Reliability::Low => "low",
        }
    }
}

impl std::str::FromStr for Reliability {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" | "0.8" => Ok(Reliability::High),
            "low" | "0.5" => Ok(Reliability::Low),
            other => Err(crate::error::Error::Config(format!(
                "unknown reliability {other:?}, expected \"high\" or \"low\""
            ))),
        }
    }
}

impl serde::Serialize for Reliability {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> serde::Deserialize<'de> for Reliability {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <String as serde::Deserialize>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Acceptability threshold on standard errors for the two-factor preset.
pub const TWO_FACTOR_SE_THRESHOLD: f64 = 5.0;
/// Acceptability threshold on standard errors for the growth-curve preset
/// (its indicators live on a much larger variance scale).
pub const GCM_SE_THRESHOLD: f64 = 500.0;

/// Two-factor model: y1–y3 load on η₁, y4–y6 on η₂, η₂ = βη₁ + ζ₂.
///
/// Parameter order: ν₁..ν₆, λ₂₁, λ₃₁, λ₅₂, λ₆₂, β (= b₂₁), θ₁₁..θ₆₆,
/// ψ₁₁, ψ₂₂.
pub fn two_factor() -> ModelSpec {
    let p = 6;
    let q = 2;
    let mut nu = MatrixPattern::general(p, 1);
    for i in 0..p {
        nu.set_free(i, 0, i).unwrap();
    }
    let mut lambda = MatrixPattern::general(p, q);
    lambda.set_fixed(0, 0, 1.0).unwrap();
    lambda.set_free(1, 0, 6).unwrap();
    lambda.set_free(2, 0, 7).unwrap();
    lambda.set_fixed(3, 1, 1.0).unwrap();
    lambda.set_free(4, 1, 8).unwrap();
    lambda.set_free(5, 1, 9).unwrap();
    let mut b = MatrixPattern::general(q, q);
    b.set_free(1, 0, 10).unwrap();
    let mut theta = MatrixPattern::diagonal(p);
    for i in 0..p {
        theta.set_free(i, i, 11 + i).unwrap();
    }
    let alpha = MatrixPattern::general(q, 1); // fixed at zero
    let mut psi = MatrixPattern::diagonal(q);
    psi.set_free(0, 0, 17).unwrap();
    psi.set_free(1, 1, 18).unwrap();
    let mut spec = ModelSpec::new(p, q, nu, lambda, theta, alpha, b, psi, true)
        .expect("two-factor preset is valid");
    spec.se_threshold = Some(TWO_FACTOR_SE_THRESHOLD);
    spec
}

/// True parameter values for [`two_factor`].
pub fn two_factor_truth(rel: Reliability) -> DVector<f64> {
    let theta_diag: [f64; 6] = match rel {
        Reliability::High => [0.25, 0.1225, 0.09, 0.25, 0.1225, 0.09],
        Reliability::Low => [1.0, 0.49, 0.36, 1.0, 0.49, 0.36],
    };
    let mut v = vec![0.0; 6]; // intercepts
    v.extend_from_slice(&[0.7, 0.6, 0.7, 0.6]); // free loadings
    v.push(0.25); // β
    v.extend_from_slice(&theta_diag);
    v.extend_from_slice(&[1.0, 1.0]); // ψ11, ψ22
    DVector::from_vec(v)
}

/// Linear latent growth-curve model over 10 occasions.
///
/// Parameter order: α₁, α₂, ψ₁₁, ψ₂₂, ψ₁₂, θ₁₁ (shared across all
/// residual-variance cells).
pub fn gcm() -> ModelSpec {
    let p = 10;
    let q = 2;
    let mut nu = MatrixPattern::general(p, 1);
    for i in 0..p {
        nu.set_fixed(i, 0, 0.0).unwrap();
    }
    let mut lambda = MatrixPattern::general(p, q);
    for t in 0..p {
        lambda.set_fixed(t, 0, 1.0).unwrap();
        lambda.set_fixed(t, 1, t as f64).unwrap();
    }
    let mut alpha = MatrixPattern::general(q, 1);
    alpha.set_free(0, 0, 0).unwrap();
    alpha.set_free(1, 0, 1).unwrap();
    let b = MatrixPattern::general(q, q); // all zero
    let mut psi = MatrixPattern::symmetric(q);
    psi.set_free(0, 0, 2).unwrap();
    psi.set_free(1, 1, 3).unwrap();
    psi.set_free(1, 0, 4).unwrap();
    let mut theta = MatrixPattern::diagonal(p);
    for i in 0..p {
        theta.set_free(i, i, 5).unwrap();
    }
    let mut spec = ModelSpec::new(p, q, nu, lambda, theta, alpha, b, psi, true)
        .expect("growth-curve preset is valid");
    spec.se_threshold = Some(GCM_SE_THRESHOLD);
    spec
}

/// True parameter values for [`gcm`].
pub fn gcm_truth(rel: Reliability) -> DVector<f64> {
    match rel {
        Reliability::High => DVector::from_column_slice(&[0.0, 0.0, 550.0, 100.0, 40.0, 500.0]),
        Reliability::Low => DVector::from_column_slice(&[0.0, 0.0, 275.0, 50.0, 20.0, 1300.0]),
    }
}

/// Looks a preset up by its CLI name.
pub fn by_name(name: &str) -> Option<ModelSpec> {
    match name {
        "two_factor" => Some(two_factor()),
        "gcm" => Some(gcm()),
        _ => None,
    }
}

/// True values for a preset by name.
pub fn truth_by_name(name: &str, rel: Reliability) -> Option<DVector<f64>> {
    match name {
        "two_factor" => Some(two_factor_truth(rel)),
        "gcm" => Some(gcm_truth(rel)),
        _ => None,
    }
}
