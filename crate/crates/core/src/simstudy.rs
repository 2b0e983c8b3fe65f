//! Monte-Carlo performance study: run estimators over a grid of
//! (model, n, reliability, distribution) cells and report bias, probability
//! of underestimation, RMSE, and Wald coverage per parameter and estimator.
//!
//! Conventions:
//!
//! - Metrics are computed over the *accepted* replications only; the
//!   acceptance rate and accepted count R are reported alongside so nothing
//!   is hidden by the conditioning.
//! - Replication r of cell c draws its dataset from substream (master, c, r);
//!   every estimator within a replication sees the identical dataset.
//! - A cell with zero accepted replications for some estimator reports that
//!   estimator's metrics as unavailable (`None`, "NA" in the CSV) rather
//!   than failing the run.
//! - [`run_grid`] writes one CSV row per (cell, estimator, parameter),
//!   checkpoints each finished cell, and resumes from checkpoints, so a
//!   re-run with the same configuration is a no-op and the same master seed
//!   always yields a byte-identical `results.csv`.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::datagen::{self, DistributionSpec};
use crate::error::{Error, Result};
use crate::estimators::{fit, Estimator, FitOptions, FitResult};
use crate::model::presets::{self, Reliability};
use crate::model::ModelSpec;
use crate::numdiff::pairwise_sum;
use crate::seeds;

/// Wald critical value for nominal 95% intervals.
const WALD_Z: f64 = 1.96;
/// Substream tag separating estimator-level seeds from the data seed.
const ESTIMATOR_SEED_TAG: u64 = 0xE571_0000;

/// Which preset a simulation cell draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    TwoFactor,
    Gcm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::TwoFactor => "two_factor",
            ModelKind::Gcm => "gcm",
        }
    }

    pub fn spec(self) -> ModelSpec {
        match self {
            ModelKind::TwoFactor => presets::two_factor(),
            ModelKind::Gcm => presets::gcm(),
        }
    }

    pub fn truth(self, rel: Reliability) -> DVector<f64> {
        match self {
            ModelKind::TwoFactor => presets::two_factor_truth(rel),
            ModelKind::Gcm => presets::gcm_truth(rel),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "two_factor" | "two-factor" | "twofactor" => Ok(ModelKind::TwoFactor),
            "gcm" | "growth" | "growth_curve" => Ok(ModelKind::Gcm),
            other => Err(Error::Config(format!(
                "unknown model {other:?}; expected \"two_factor\" or \"gcm\""
            ))),
        }
    }
}

impl Serialize for ModelKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ModelKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = <String as Deserialize>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The label used for a distribution in CSV output and file names.
pub fn dist_label(dist: &DistributionSpec) -> String {
    if dist.is_normal() {
        "normal".to_string()
    } else {
        format!("skew{}_kurt{}", dist.skewness, dist.excess_kurtosis)
    }
}

/// One experimental cell: the generating configuration plus the estimators
/// to run on each replication.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimSetting {
    pub model: ModelKind,
    pub n: usize,
    pub reliability: Reliability,
    pub dist: DistributionSpec,
    pub replications: usize,
    /// Cell-level seed; replication r uses substream (seed, r).
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    /// Resample count passed to the bootstrap estimator.
    pub bootstrap_t: usize,
}

/// Per-parameter summary of one estimator in one cell. All metric fields
/// are `None` when undefined (zero accepted replications; zero truth for
/// the relative bias; no usable standard errors for coverage).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamMetrics {
    pub parameter: String,
    pub truth: f64,
    pub mean_bias: Option<f64>,
    pub rel_mean_bias: Option<f64>,
    pub pu: Option<f64>,
    pub rmse: Option<f64>,
    pub coverage: Option<f64>,
    /// Replications excluded from coverage for a nonpositive or non-finite
    /// standard error.
    pub coverage_excluded: usize,
    pub mc_se_bias: Option<f64>,
}

/// One estimator's outcome over all replications of a cell.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EstimatorMetrics {
    pub estimator: Estimator,
    /// Replications attempted (0 when the estimator is skipped on this model).
    pub attempted: usize,
    /// Accepted replications (the R the metrics condition on).
    pub accepted: usize,
    pub acceptance_rate: Option<f64>,
    /// Present when the estimator was not run on this cell, with the reason.
    pub skipped: Option<String>,
    pub params: Vec<ParamMetrics>,
}

/// Full per-cell results: the setting echoed back plus per-estimator metrics.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimMetrics {
    pub setting: SimSetting,
    pub parameters: Vec<String>,
    pub estimators: Vec<EstimatorMetrics>,
    /// Replications whose dataset simulation failed (counted as rejected for
    /// every estimator).
    pub simulation_failures: usize,
}

// ---------------------------------------------------------------------------
// Metric primitives.
// ---------------------------------------------------------------------------

/// Mean of (estimate − truth).
pub fn mean_bias(estimates: &[f64], truth: f64) -> f64 {
    let devs: Vec<f64> = estimates.iter().map(|e| e - truth).collect();
    pairwise_sum(&devs) / estimates.len() as f64
}

/// Σ estimates / (R·truth) − 1; undefined when the true value is zero.
pub fn rel_mean_bias(estimates: &[f64], truth: f64) -> Option<f64> {
    if truth == 0.0 {
        return None;
    }
    Some(pairwise_sum(estimates) / (estimates.len() as f64 * truth) - 1.0)
}

/// Fraction of estimates strictly below the true value; ties count as
/// not-under.
pub fn prob_underestimate(estimates: &[f64], truth: f64) -> f64 {
    let under = estimates.iter().filter(|e| **e < truth).count();
    under as f64 / estimates.len() as f64
}

/// √(mean of squared deviations from the true value).
pub fn rmse(estimates: &[f64], truth: f64) -> f64 {
    let sq: Vec<f64> = estimates.iter().map(|e| (e - truth) * (e - truth)).collect();
    (pairwise_sum(&sq) / estimates.len() as f64).sqrt()
}

/// Wald-interval coverage at the 95% level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageStat {
    /// Fraction of usable replications whose interval covers the truth;
    /// `None` when no replication had a usable standard error.
    pub fraction: Option<f64>,
    /// Replications excluded for a nonpositive or non-finite standard error.
    pub excluded: usize,
}

/// Coverage of ϑ̂ ± 1.96·SE over replications. Standard errors that are not
/// strictly positive and finite cannot form an interval; those replications
/// are excluded from the fraction and counted.
pub fn coverage(estimates: &[f64], ses: &[f64], truth: f64) -> CoverageStat {
    assert_eq!(estimates.len(), ses.len(), "estimate/SE length mismatch");
    let mut covered = 0usize;
    let mut usable = 0usize;
    for (e, s) in estimates.iter().zip(ses) {
        if !s.is_finite() || *s <= 0.0 {
            continue;
        }
        usable += 1;
        if (e - WALD_Z * s..=e + WALD_Z * s).contains(&truth) {
            covered += 1;
        }
    }
    CoverageStat {
        fraction: (usable > 0).then(|| covered as f64 / usable as f64),
        excluded: estimates.len() - usable,
    }
}

/// Monte-Carlo standard error of the mean bias: sd(estimates)/√R.
pub fn mc_se_bias(estimates: &[f64]) -> Option<f64> {
    let r = estimates.len();
    if r < 2 {
        return None;
    }
    let mean = pairwise_sum(estimates) / r as f64;
    let sq: Vec<f64> = estimates.iter().map(|e| (e - mean) * (e - mean)).collect();
    let sd = (pairwise_sum(&sq) / (r - 1) as f64).sqrt();
    Some(sd / (r as f64).sqrt())
}

// ---------------------------------------------------------------------------
// Cell execution.
// ---------------------------------------------------------------------------

/// Why an estimator does not run on a given model.
fn skip_reason(model: ModelKind, estimator: Estimator) -> Option<String> {
    match (model, estimator) {
        (ModelKind::TwoFactor, Estimator::Reml) => Some(
            "restricted likelihood is defined only for the growth-curve family".to_string(),
        ),
        _ => None,
    }
}

/// Accepted estimate and its standard errors from one replication.
type Accepted = Option<(DVector<f64>, DVector<f64>)>;

fn run_estimator(
    spec: &ModelSpec,
    data: &Dataset,
    estimator: Estimator,
    opts: &FitOptions,
) -> Accepted {
    match fit(spec, data, estimator, opts) {
        Ok(FitResult { acceptable: true, theta_hat, se, .. }) => Some((theta_hat, se)),
        _ => None,
    }
}

/// Runs one experimental cell: simulate `replications` datasets, fit every
/// requested estimator on each, and summarize the accepted replications.
pub fn run_cell(setting: &SimSetting) -> Result<SimMetrics> {
    let spec = setting.model.spec();
    let truth = setting.model.truth(setting.reliability);
    let labels = spec.label_names();
    let m = spec.n_params();
    // Validate the distribution once up front.
    DistributionSpec::new(setting.dist.skewness, setting.dist.excess_kurtosis)?;

    let active: Vec<(usize, Estimator)> = setting
        .estimators
        .iter()
        .enumerate()
        .filter(|(_, e)| skip_reason(setting.model, **e).is_none())
        .map(|(i, e)| (i, *e))
        .collect();

    // rep-major results: replication → per-active-estimator outcome.
    let outcomes: Vec<(bool, Vec<Accepted>)> = (0..setting.replications)
        .into_par_iter()
        .map(|r| {
            let data_seed = seeds::mix(setting.seed, r as u64);
            let data = match datagen::simulate(&spec, &truth, setting.n, &setting.dist, data_seed)
            {
                Ok(d) => d,
                Err(_) => return (false, vec![None; active.len()]),
            };
            let fits = active
                .iter()
                .map(|(i, est)| {
                    let opts = FitOptions {
                        seed: seeds::mix(data_seed, ESTIMATOR_SEED_TAG + *i as u64),
                        bootstrap_reps: setting.bootstrap_t,
                        ..FitOptions::default()
                    };
                    run_estimator(&spec, &data, *est, &opts)
                })
                .collect();
            (true, fits)
        })
        .collect();
    let simulation_failures = outcomes.iter().filter(|(ok, _)| !ok).count();

    let mut estimators = Vec::with_capacity(setting.estimators.len());
    for (pos, est) in setting.estimators.iter().enumerate() {
        if let Some(reason) = skip_reason(setting.model, *est) {
            estimators.push(EstimatorMetrics {
                estimator: *est,
                attempted: 0,
                accepted: 0,
                acceptance_rate: None,
                skipped: Some(reason),
                params: Vec::new(),
            });
            continue;
        }
        let slot = active.iter().position(|(i, _)| *i == pos).expect("active estimator");
        let kept: Vec<&(DVector<f64>, DVector<f64>)> =
            outcomes.iter().filter_map(|(_, fits)| fits[slot].as_ref()).collect();
        let accepted = kept.len();
        let params = (0..m)
            .map(|a| {
                let est_a: Vec<f64> = kept.iter().map(|(t, _)| t[a]).collect();
                let se_a: Vec<f64> = kept.iter().map(|(_, s)| s[a]).collect();
                if accepted == 0 {
                    ParamMetrics {
                        parameter: labels[a].clone(),
                        truth: truth[a],
                        mean_bias: None,
                        rel_mean_bias: None,
                        pu: None,
                        rmse: None,
                        coverage: None,
                        coverage_excluded: 0,
                        mc_se_bias: None,
                    }
                } else {
                    let cov = coverage(&est_a, &se_a, truth[a]);
                    ParamMetrics {
                        parameter: labels[a].clone(),
                        truth: truth[a],
                        mean_bias: Some(mean_bias(&est_a, truth[a])),
                        rel_mean_bias: rel_mean_bias(&est_a, truth[a]),
                        pu: Some(prob_underestimate(&est_a, truth[a])),
                        rmse: Some(rmse(&est_a, truth[a])),
                        coverage: cov.fraction,
                        coverage_excluded: cov.excluded,
                        mc_se_bias: mc_se_bias(&est_a),
                    }
                }
            })
            .collect();
        estimators.push(EstimatorMetrics {
            estimator: *est,
            attempted: setting.replications,
            accepted,
            acceptance_rate: (setting.replications > 0)
                .then(|| accepted as f64 / setting.replications as f64),
            skipped: None,
            params,
        });
    }

    Ok(SimMetrics {
        setting: setting.clone(),
        parameters: labels,
        estimators,
        simulation_failures,
    })
}

// ---------------------------------------------------------------------------
// Grid runner.
// ---------------------------------------------------------------------------

/// Grid configuration, usually read from a JSON file. Cells enumerate as
/// models × ns × reliabilities × dists, in the order given.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridConfig {
    pub models: Vec<ModelKind>,
    pub ns: Vec<usize>,
    pub reliabilities: Vec<Reliability>,
    pub dists: Vec<DistributionSpec>,
    pub replications: usize,
    pub estimators: Vec<Estimator>,
    #[serde(rename = "bootstrap_T", default = "default_bootstrap_t")]
    pub bootstrap_t: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

fn default_bootstrap_t() -> usize {
    200
}

impl GridConfig {
    pub fn from_json_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: GridConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty()
            || self.ns.is_empty()
            || self.reliabilities.is_empty()
            || self.dists.is_empty()
        {
            return Err(Error::Config(
                "grid needs at least one model, n, reliability, and distribution".into(),
            ));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("grid needs at least one estimator".into()));
        }
        for d in &self.dists {
            DistributionSpec::new(d.skewness, d.excess_kurtosis)?;
        }
        Ok(())
    }

    /// Cell settings in canonical order with their substream seeds.
    pub fn cells(&self) -> Vec<SimSetting> {
        let mut out = Vec::new();
        let mut index = 0u64;
        for model in &self.models {
            for &n in &self.ns {
                for rel in &self.reliabilities {
                    for dist in &self.dists {
                        out.push(SimSetting {
                            model: *model,
                            n,
                            reliability: *rel,
                            dist: *dist,
                            replications: self.replications,
                            seed: seeds::mix(self.master_seed, index),
                            estimators: self.estimators.clone(),
                            bootstrap_t: self.bootstrap_t,
                        });
                        index += 1;
                    }
                }
            }
        }
        out
    }
}

/// CSV header of `results.csv`.
pub const RESULTS_HEADER: &str = "model,n,reliability,dist,estimator,parameter,R,\
acceptance_rate,mean_bias,rel_mean_bias,pu,rmse,coverage,mc_se_bias";

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => "NA".to_string(),
    }
}

/// The `results.csv` rows for one finished cell (estimators in configuration
/// order, parameters in label order).
pub fn cell_rows(metrics: &SimMetrics) -> Vec<String> {
    let s = &metrics.setting;
    let prefix = format!(
        "{},{},{},{}",
        s.model,
        s.n,
        s.reliability.as_str(),
        dist_label(&s.dist)
    );
    let mut rows = Vec::new();
    for em in &metrics.estimators {
        if em.skipped.is_some() {
            for label in &metrics.parameters {
                rows.push(format!(
                    "{prefix},{},{label},0,NA,NA,NA,NA,NA,NA,NA",
                    em.estimator
                ));
            }
            continue;
        }
        for pm in &em.params {
            rows.push(format!(
                "{prefix},{},{},{},{},{},{},{},{},{},{}",
                em.estimator,
                pm.parameter,
                em.accepted,
                fmt_opt(em.acceptance_rate),
                fmt_opt(pm.mean_bias),
                fmt_opt(pm.rel_mean_bias),
                fmt_opt(pm.pu),
                fmt_opt(pm.rmse),
                fmt_opt(pm.coverage),
                fmt_opt(pm.mc_se_bias),
            ));
        }
    }
    rows
}

/// One checkpoint file: the setting that produced the rows plus the rows
/// themselves, so a resumed run can both verify and reuse them.
#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    setting: SimSetting,
    rows: Vec<String>,
    wall_time: f64,
    simulation_failures: usize,
}

/// Summary of a [`run_grid`] invocation.
#[derive(Debug, Clone, Serialize)]
pub struct GridOutcome {
    pub results_path: PathBuf,
    pub manifest_path: PathBuf,
    pub cells_total: usize,
    pub cells_resumed: usize,
    pub cells_failed: usize,
}

#[derive(Debug, Serialize)]
struct ManifestCell {
    index: usize,
    model: ModelKind,
    n: usize,
    reliability: Reliability,
    dist: DistributionSpec,
    seed: u64,
    wall_time: f64,
    resumed: bool,
    simulation_failures: usize,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct Manifest {
    version: String,
    master_seed: u64,
    replications: usize,
    estimators: Vec<Estimator>,
    bootstrap_t: usize,
    total_wall_time: f64,
    cells: Vec<ManifestCell>,
}

/// Progress callback: (finished cells, total cells, last cell description).
pub type ProgressFn<'a> = dyn FnMut(usize, usize, &str) + 'a;

/// Runs the whole grid, checkpointing each cell under
/// `output_dir/checkpoints/` and writing `results.csv` and `manifest.json`.
/// Finished cells (matching checkpoints) are reused, so interrupted runs
/// resume where they stopped. Cell failures are recorded in the manifest and
/// do not abort the remaining cells.
pub fn run_grid(config: &GridConfig, mut progress: Option<&mut ProgressFn>) -> Result<GridOutcome> {
    config.validate()?;
    let t0 = Instant::now();
    let out_dir = &config.output_dir;
    let ckpt_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;

    let cells = config.cells();
    let mut manifest_cells = Vec::with_capacity(cells.len());
    let mut all_rows: Vec<Vec<String>> = Vec::with_capacity(cells.len());
    let mut resumed = 0usize;
    let mut failed = 0usize;

    for (index, setting) in cells.iter().enumerate() {
        let ckpt_path = ckpt_dir.join(format!("cell_{index:04}.json"));
        let cached: Option<Checkpoint> = fs::read_to_string(&ckpt_path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .filter(|c: &Checkpoint| &c.setting == setting);

        let desc = format!(
            "{} n={} {} {}",
            setting.model,
            setting.n,
            setting.reliability.as_str(),
            dist_label(&setting.dist)
        );
        let (rows, wall, was_resumed, sim_failures, error) = match cached {
            Some(c) => (c.rows, c.wall_time, true, c.simulation_failures, None),
            None => {
                let cell_t0 = Instant::now();
                match run_cell(setting) {
                    Ok(metrics) => {
                        let rows = cell_rows(&metrics);
                        let wall = cell_t0.elapsed().as_secs_f64();
                        let ckpt = Checkpoint {
                            setting: setting.clone(),
                            rows: rows.clone(),
                            wall_time: wall,
                            simulation_failures: metrics.simulation_failures,
                        };
                        fs::write(&ckpt_path, serde_json::to_string_pretty(&ckpt)?)?;
                        (rows, wall, false, metrics.simulation_failures, None)
                    }
                    Err(e) => {
                        (Vec::new(), cell_t0.elapsed().as_secs_f64(), false, 0, Some(e.to_string()))
                    }
                }
            }
        };
        resumed += usize::from(was_resumed);
        failed += usize::from(error.is_some());
        manifest_cells.push(ManifestCell {
            index,
            model: setting.model,
            n: setting.n,
            reliability: setting.reliability,
            dist: setting.dist,
            seed: setting.seed,
            wall_time: wall,
            resumed: was_resumed,
            simulation_failures: sim_failures,
            error,
        });
        all_rows.push(rows);
        if let Some(cb) = progress.as_deref_mut() {
            cb(index + 1, cells.len(), &desc);
        }
    }

    let results_path = out_dir.join("results.csv");
    let mut file = fs::File::create(&results_path)?;
    writeln!(file, "{RESULTS_HEADER}")?;
    for rows in &all_rows {
        for row in rows {
            writeln!(file, "{row}")?;
        }
    }
    file.flush()?;

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: config.master_seed,
        replications: config.replications,
        estimators: config.estimators.clone(),
        bootstrap_t: config.bootstrap_t,
        total_wall_time: t0.elapsed().as_secs_f64(),
        cells: manifest_cells,
    };
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;

    Ok(GridOutcome {
        results_path,
        manifest_path,
        cells_total: cells.len(),
        cells_resumed: resumed,
        cells_failed: failed,
    })
}

// ---------------------------------------------------------------------------


#[cfg(test)]
mod scratch_diag {
    use super::*;
    use crate::estimators::FitOptions;
    use crate::model::presets;

    #[test]
    fn diagnose_ml_rejections_at_tf_high_n15() {
        let spec = presets::two_factor();
        let truth = presets::two_factor_truth(Reliability::High);
        let dist = DistributionSpec::normal();
        for r in 0..200u64 {
            let data_seed = crate::seeds::mix(707, r);
            let data = crate::datagen::simulate(&spec, &truth, 15, &dist, data_seed).unwrap();
            let opts = FitOptions {
                seed: crate::seeds::mix(data_seed, ESTIMATOR_SEED_TAG),
                ..FitOptions::default()
            };
            match crate::estimators::fit(&spec, &data, Estimator::Ml, &opts) {
                Ok(f) if f.acceptable => {}
                Ok(f) => {
                    println!(
                        "rep {r}: rejected ({}), converged={}, iters={}, max SE={:.3}, loglik={:.3}",
                        f.rejection_reason.as_str(),
                        f.converged,
                        f.iterations,
                        f.se.amax(),
                        f.loglik
                    );
                    println!("  se = {:?}", f.se.as_slice().iter().map(|s| (s * 1000.0).round() / 1000.0).collect::<Vec<_>>());
                println!("  scr = {:?}", f.se_screen.as_slice().iter().map(|s| (s * 1000.0).round() / 1000.0).collect::<Vec<_>>());
                    println!("  theta = {:?}", f.theta_hat.as_slice().iter().map(|s| (s * 1000.0).round() / 1000.0).collect::<Vec<_>>());
                }
                Err(e) => println!("rep {r}: error {e}"),
            }
        }
    }
}
