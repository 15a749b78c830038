//! Seeded Monte Carlo scenarios.
//!
//! Replication `r` draws from its own ChaCha8 stream (scenario seed, stream
//! `r`), so results do not depend on how replications are scheduled.
//! Moments are reduced in replication order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{normal_kl_variances, normal_l2_variances, normal_ml_variances};
use crate::error::{Error, Result};
use crate::minl2::{fit_min_l2, WeightFunction};
use crate::ml::{fit_ml_mvn, fit_ml_normal};
use crate::model::{lower_indices, MvnParams, NormalModel, NormalParams};
use crate::numerics::{QuadratureSpec, SolverConfig};
use crate::robustkl::{fit_mvn_robust, fit_robust_kl, LocalFitSpec, MvnLocalFitSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TrueModel {
    Normal(NormalParams),
    Mvn { mu: Vec<f64>, covariance: Vec<Vec<f64>> },
}

impl TrueModel {
    fn dim(&self) -> usize {
        match self {
            TrueModel::Normal(_) => 1,
            TrueModel::Mvn { mu, .. } => mu.len(),
        }
    }

    fn mvn_params(&self) -> Result<Option<MvnParams>> {
        match self {
            TrueModel::Normal(_) => Ok(None),
            TrueModel::Mvn { mu, covariance } => {
                let p = mu.len();
                if covariance.len() != p || covariance.iter().any(|r| r.len() != p) {
                    return Err(Error::InvalidSpec(format!("covariance must be {p}x{p}")));
                }
                let sigma = DMatrix::from_fn(p, p, |i, j| covariance[i][j]);
                MvnParams::from_covariance(DVector::from_vec(mu.clone()), &sigma)
                    .map(Some)
                    .map_err(|e| Error::InvalidSpec(format!("true covariance: {e}")))
            }
        }
    }

    /// Parameter vector in reporting order: `(μ, σ)`, or `μ` then the lower
    /// triangle of `Σ` row by row.
    fn truth(&self) -> Vec<f64> {
        match self {
            TrueModel::Normal(p) => p.to_vec(),
            TrueModel::Mvn { mu, covariance } => {
                let mut v = mu.clone();
                v.extend(lower_indices(mu.len()).map(|(i, j)| covariance[i][j]));
                v
            }
        }
    }

    fn parameter_names(&self) -> Vec<String> {
        match self {
            TrueModel::Normal(_) => vec!["mu".into(), "sigma".into()],
            TrueModel::Mvn { mu, .. } => {
                let p = mu.len();
                let mut v: Vec<String> = (1..=p).map(|i| format!("mu{i}")).collect();
                v.extend(lower_indices(p).map(|(i, j)| format!("sigma{}{}", i + 1, j + 1)));
                v
            }
        }
    }
}

/// Distribution that replaces contaminated observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Contaminant {
    /// Point mass (every coordinate set to `location`).
    Point { location: f64 },
    /// Independent `N(mean, sd²)` coordinates.
    Normal { mean: f64, sd: f64 },
}

impl Contaminant {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Contaminant::Point { location } => location,
            Contaminant::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Contaminant::Point { location } => location.is_finite(),
            Contaminant::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("invalid contaminant {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contamination {
    pub epsilon: f64,
    pub contaminant: Contaminant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Estimator {
    Ml,
    L2Constant,
    /// Exponential weight centred at the median with MAD scale.
    L2ExpDelta { delta: f64 },
    Kl { k: f64 },
    MvnKl { h: f64 },
}

impl Estimator {
    pub fn label(&self) -> String {
        match *self {
            Estimator::Ml => "ml".into(),
            Estimator::L2Constant => "l2_constant".into(),
            Estimator::L2ExpDelta { delta } => format!("l2_exp_delta(delta={delta})"),
            Estimator::Kl { k } => format!("kl(k={k})"),
            Estimator::MvnKl { h } => format!("mvn_kl(h={h})"),
        }
    }

    fn validate(&self, model: &TrueModel) -> Result<()> {
        let univariate = matches!(model, TrueModel::Normal(_));
        match *self {
            Estimator::Ml => Ok(()),
            Estimator::L2Constant if univariate => Ok(()),
            Estimator::L2ExpDelta { delta } if univariate => {
                if (0.0..1.0).contains(&delta) {
                    Ok(())
                } else {
                    Err(Error::InvalidSpec(format!("delta must lie in [0, 1), got {delta}")))
                }
            }
            Estimator::Kl { k } if univariate => positive("k", k),
            Estimator::MvnKl { h } if !univariate => positive("h", h),
            _ => Err(Error::InvalidSpec(format!(
                "estimator {} does not apply to this model",
                self.label()
            ))),
        }
    }

    /// `n · var` predicted at a clean normal model.
    fn theoretical(&self, model: &TrueModel) -> Option<Vec<f64>> {
        let TrueModel::Normal(p) = model else {
            return None;
        };
        let v = match *self {
            Estimator::Ml => normal_ml_variances(p.sigma),
            Estimator::L2Constant => normal_l2_variances(p.sigma, None),
            Estimator::L2ExpDelta { delta } => normal_l2_variances(p.sigma, Some(delta)),
            Estimator::Kl { k } => normal_kl_variances(p.sigma, k),
            Estimator::MvnKl { .. } => return None,
        }
        .ok()?;
        Some(vec![v.0, v.1])
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("{name} must be positive, got {v}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub true_model: TrueModel,
    pub contamination: Option<Contamination>,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::InvalidSpec(format!("n must be at least 10, got {}", self.n)));
        }
        if self.reps == 0 {
            return Err(Error::InvalidSpec("reps must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidSpec("no estimators requested".into()));
        }
        if self.true_model.dim() == 0 {
            return Err(Error::InvalidSpec("model dimension must be positive".into()));
        }
        if let TrueModel::Normal(p) = &self.true_model {
            NormalParams::new(p.mu, p.sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        }
        self.true_model.mvn_params()?;
        if let Some(c) = &self.contamination {
            check_epsilon(c.epsilon).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            c.contaminant.validate()?;
        }
        for e in &self.estimators {
            e.validate(&self.true_model)?;
        }
        Ok(())
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if (0.0..0.5).contains(&epsilon) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("epsilon must lie in [0, 0.5), got {epsilon}")))
    }
}

/// Replaces each point independently with probability `epsilon` by a draw from
/// the contaminant.
pub fn contaminate<R: Rng + ?Sized>(
    sample: &[f64],
    epsilon: f64,
    contaminant: &Contaminant,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_epsilon(epsilon)?;
    Ok(sample
        .iter()
        .map(|&x| {
            if rng.random::<f64>() < epsilon {
                contaminant.draw(rng)
            } else {
                x
            }
        })
        .collect())
}

fn contaminate_rows<R: Rng + ?Sized>(rows: &mut [Vec<f64>], c: &Contamination, rng: &mut R) {
    for row in rows.iter_mut() {
        if rng.random::<f64>() < c.epsilon {
            for v in row.iter_mut() {
                *v = c.contaminant.draw(rng);
            }
        }
    }
}

/// Generator for replication `rep`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Estimates from every estimator on one replication; `None` marks a failed fit.
pub fn run_replication(spec: &ScenarioSpec, rep: usize) -> Result<Vec<Option<Vec<f64>>>> {
    let mut rng = replication_rng(spec.seed, rep as u64);
    let cfg = SolverConfig::default();
    let quad = QuadratureSpec::default();
    match &spec.true_model {
        TrueModel::Normal(p) => {
            let clean: Vec<f64> = (0..spec.n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    p.mu + p.sigma * z
                })
                .collect();
            let data = match &spec.contamination {
                Some(c) => contaminate(&clean, c.epsilon, &c.contaminant, &mut rng)?,
                None => clean,
            };
            Ok(spec
                .estimators
                .iter()
                .map(|e| fit_univariate(e, &data, &cfg, quad))
                .collect())
        }
        TrueModel::Mvn { .. } => {
            let params = spec.true_model.mvn_params()?.expect("multivariate model");
            let p = params.dim();
            let mut rows: Vec<Vec<f64>> = (0..spec.n)
                .map(|_| {
                    let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
                    (params.mu() + params.cholesky() * z).as_slice().to_vec()
                })
                .collect();
            if let Some(c) = &spec.contamination {
                contaminate_rows(&mut rows, c, &mut rng);
            }
            Ok(spec
                .estimators
                .iter()
                .map(|e| fit_multivariate(e, &rows, &cfg))
                .collect())
        }
    }
}

fn fit_univariate(e: &Estimator, data: &[f64], cfg: &SolverConfig, quad: QuadratureSpec) -> Option<Vec<f64>> {
    let fit = match *e {
        Estimator::Ml => fit_ml_normal(data),
        Estimator::L2Constant => fit_min_l2(data, &NormalModel, &WeightFunction::Constant, None, cfg, quad),
        Estimator::L2ExpDelta { delta } => WeightFunction::exp_delta_from_data(delta, data)
            .and_then(|w| fit_min_l2(data, &NormalModel, &w, None, cfg, quad)),
        Estimator::Kl { k } => fit_robust_kl(data, &LocalFitSpec::new(k), cfg),
        Estimator::MvnKl { .. } => return None,
    }
    .ok()?;
    (fit.converged && fit.theta.iter().all(|v| v.is_finite())).then_some(fit.theta)
}

fn fit_multivariate(e: &Estimator, rows: &[Vec<f64>], cfg: &SolverConfig) -> Option<Vec<f64>> {
    let params = match *e {
        Estimator::Ml => fit_ml_mvn(rows).ok()?,
        Estimator::MvnKl { h } => {
            let fit = fit_mvn_robust(rows, &MvnLocalFitSpec::new(h), cfg).ok()?;
            if !fit.converged {
                return None;
            }
            fit.params
        }
        _ => return None,
    };
    let cov = params.covariance();
    let mut v = params.mu().as_slice().to_vec();
    v.extend(lower_indices(params.dim()).map(|(i, j)| cov[(i, j)]));
    Some(v)
}

/// Per-replication estimates, indexed `[rep][estimator]`.
pub fn run_replications(spec: &ScenarioSpec, parallel: bool) -> Result<Vec<Vec<Option<Vec<f64>>>>> {
    spec.validate()?;
    if parallel {
        (0..spec.reps).into_par_iter().map(|r| run_replication(spec, r)).collect()
    } else {
        (0..spec.reps).map(|r| run_replication(spec, r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub label: String,
    pub parameters: Vec<String>,
    pub successes: usize,
    pub failures: usize,
    pub mean_estimate: Vec<f64>,
    pub bias: Vec<f64>,
    /// `n` times the across-replication variance (denominator `reps − 1`).
    pub n_variance: Vec<f64>,
    /// Asymptotic `n · var` at a clean normal model.
    pub theoretical_n_variance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub scenario: ScenarioSpec,
    pub estimators: Vec<EstimatorSummary>,
    /// Set when any estimator failed on more than 1% of replications.
    pub failed: bool,
}

/// Runs the scenario with replications spread over the rayon pool.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<SimulationReport> {
    run_scenario_with(spec, true)
}

pub fn run_scenario_with(spec: &ScenarioSpec, parallel: bool) -> Result<SimulationReport> {
    let results = run_replications(spec, parallel)?;
    Ok(summarize(spec, &results))
}

/// Aggregates per-replication estimates in replication order.
pub fn summarize(spec: &ScenarioSpec, results: &[Vec<Option<Vec<f64>>>]) -> SimulationReport {
    let truth = spec.true_model.truth();
    let d = truth.len();
    let clean = spec.contamination.is_none_or(|c| c.epsilon == 0.0);
    let estimators: Vec<EstimatorSummary> = spec
        .estimators
        .iter()
        .enumerate()
        .map(|(e, est)| {
            let ok: Vec<&Vec<f64>> = results.iter().filter_map(|r| r[e].as_ref()).collect();
            let m = ok.len() as f64;
            let mut mean = vec![f64::NAN; d];
            let mut var = vec![f64::NAN; d];
            if !ok.is_empty() {
                for k in 0..d {
                    mean[k] = ok.iter().map(|v| v[k]).sum::<f64>() / m;
                }
            }
            if ok.len() > 1 {
                for k in 0..d {
                    var[k] = ok.iter().map(|v| (v[k] - mean[k]).powi(2)).sum::<f64>() / (m - 1.0)
                        * spec.n as f64;
                }
            }
            EstimatorSummary {
                estimator: *est,
                label: est.label(),
                parameters: spec.true_model.parameter_names(),
                successes: ok.len(),
                failures: results.len() - ok.len(),
                bias: mean.iter().zip(&truth).map(|(a, b)| a - b).collect(),
                mean_estimate: mean,
                n_variance: var,
                theoretical_n_variance: if clean { est.theoretical(&spec.true_model) } else { None },
            }
        })
        .collect();
    let failed = estimators
        .iter()
        .any(|s| s.failures as f64 > 0.01 * spec.reps as f64);
    SimulationReport {
        scenario: spec.clone(),
        estimators,
        failed,
    }
}
