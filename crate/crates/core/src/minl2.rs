//! Minimum weighted L2 estimation.
//!
//! The estimator minimises
//! `Q_n(θ) = ∫ w f_θ² dx − (2/n) Σ w(x_i) f_θ(x_i)`,
//! an estimate of `∫ w (f_θ − f)² dx` up to a θ-free term, by solving the
//! estimating equation
//! `V_n(θ) = (1/n) Σ w(x_i) f_θ(x_i) u_θ(x_i) − ∫ w f_θ² u_θ dx = 0`,
//! so that `∇Q_n = −2 V_n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::asymptotics::sandwich;
use crate::error::{ensure_finite, Error, Result};
use crate::fit::FitResult;
use crate::kernel::KernelSpec;
use crate::model::UnivariateModel;
use crate::numerics::{
    integrate_vec, mad_scale, median, newton_solve, GaussianFactor, QuadratureSpec, ScaleHint,
    SolverConfig,
};

/// A nonnegative weight function `w(x)` for the L2 criterion.
pub trait Weight: Send + Sync {
    fn evaluate(&self, x: f64) -> f64;

    /// Gaussian shape of the weight, if it has one; used to place quadrature nodes.
    fn envelope(&self) -> Option<GaussianFactor>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum WeightFunction {
    /// `w ≡ 1`.
    Constant,
    /// `w(x) = K_h(x0 − x)`.
    KernelLocal { x0: f64, kernel: KernelSpec },
    /// `w(x) = exp{½ δ (x − μ̃)² / σ̃²}`.
    ExpDelta {
        delta: f64,
        mu_tilde: f64,
        sigma_tilde: f64,
    },
}

impl WeightFunction {
    pub fn kernel_local(x0: f64, kernel: KernelSpec) -> Result<Self> {
        ensure_finite("x0", &[x0])?;
        Ok(WeightFunction::KernelLocal { x0, kernel })
    }

    /// `δ` must lie in `[0, 1)`; `δ = 0` is the constant weight.
    pub fn exp_delta(delta: f64, mu_tilde: f64, sigma_tilde: f64) -> Result<Self> {
        ensure_finite("weight parameters", &[delta, mu_tilde, sigma_tilde])?;
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::InvalidInput(format!("delta must lie in [0, 1), got {delta}")));
        }
        if sigma_tilde <= 0.0 {
            return Err(Error::DegenerateData(format!(
                "preliminary scale must be positive, got {sigma_tilde}"
            )));
        }
        Ok(WeightFunction::ExpDelta {
            delta,
            mu_tilde,
            sigma_tilde,
        })
    }

    /// Exponential weight centred on the sample median with the MAD scale.
    pub fn exp_delta_from_data(delta: f64, data: &[f64]) -> Result<Self> {
        Self::exp_delta(delta, median(data)?, mad_scale(data)?)
    }
}

impl Weight for WeightFunction {
    fn evaluate(&self, x: f64) -> f64 {
        match *self {
            WeightFunction::Constant => 1.0,
            WeightFunction::KernelLocal { x0, kernel } => kernel.evaluate(x0 - x),
            WeightFunction::ExpDelta {
                delta,
                mu_tilde,
                sigma_tilde,
            } => {
                let z = (x - mu_tilde) / sigma_tilde;
                (0.5 * delta * z * z).exp()
            }
        }
    }

    fn envelope(&self) -> Option<GaussianFactor> {
        match *self {
            WeightFunction::Constant => None,
            WeightFunction::KernelLocal { x0, kernel } => Some(kernel.envelope(x0)),
            WeightFunction::ExpDelta {
                delta,
                mu_tilde,
                sigma_tilde,
            } => Some(GaussianFactor::new(mu_tilde, -delta / (sigma_tilde * sigma_tilde))),
        }
    }
}

/// Envelope of `w^a · f_θ^b · extra`.
pub(crate) fn weighted_hint<M, W>(
    model: &M,
    theta: &[f64],
    w: &W,
    w_power: f64,
    f_power: f64,
) -> Result<ScaleHint>
where
    M: UnivariateModel + ?Sized,
    W: Weight + ?Sized,
{
    let mut factors = vec![model.envelope(theta)?.pow(f_power)];
    if let Some(e) = w.envelope() {
        factors.push(e.pow(w_power));
    }
    ScaleHint::from_factors(&factors)
}

fn check_inputs<M: UnivariateModel + ?Sized>(model: &M, theta: &[f64], data: &[f64]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidInput("data must be non-empty".into()));
    }
    ensure_finite("data", data)?;
    if theta.len() != model.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.param_dim(),
            found: theta.len(),
        });
    }
    Ok(())
}

/// `Q_n(θ) = ∫ w f_θ² dx − (2/n) Σ w(x_i) f_θ(x_i)`.
pub fn q_objective<M, W>(
    theta: &[f64],
    data: &[f64],
    w: &W,
    model: &M,
    quad: QuadratureSpec,
) -> Result<f64>
where
    M: UnivariateModel + ?Sized,
    W: Weight + ?Sized,
{
    check_inputs(model, theta, data)?;
    let hint = weighted_hint(model, theta, w, 1.0, 2.0)?;
    let integral = integrate_vec(
        1,
        |x| {
            let f = model.density(&x, theta)?;
            Ok(DVector::from_element(1, w.evaluate(x) * f * f))
        },
        hint,
        quad,
    )?[0];
    let mut sum = 0.0;
    for x in data {
        sum += w.evaluate(*x) * model.density(x, theta)?;
    }
    Ok(integral - 2.0 * sum / data.len() as f64)
}

/// `V_n(θ) = ∫ w f_θ u_θ (dF_n − f_θ dx)`.
pub fn v_score<M, W>(
    theta: &[f64],
    data: &[f64],
    w: &W,
    model: &M,
    quad: QuadratureSpec,
) -> Result<DVector<f64>>
where
    M: UnivariateModel + ?Sized,
    W: Weight + ?Sized,
{
    check_inputs(model, theta, data)?;
    let d = model.param_dim();
    let hint = weighted_hint(model, theta, w, 1.0, 2.0)?;
    let integral = integrate_vec(
        d,
        |x| {
            let f = model.density(&x, theta)?;
            Ok(model.score(&x, theta)? * (w.evaluate(x) * f * f))
        },
        hint,
        quad,
    )?;
    let mut empirical = DVector::zeros(d);
    for x in data {
        let f = model.density(x, theta)?;
        empirical.axpy(w.evaluate(*x) * f, &model.score(x, theta)?, 1.0);
    }
    Ok(empirical / data.len() as f64 - integral)
}

/// Jacobian of [`v_score`]:
/// `(1/n) Σ w f (uu' + u*)(x_i) − ∫ w f² (2uu' + u*) dx`.
pub fn v_jacobian<M, W>(
    theta: &[f64],
    data: &[f64],
    w: &W,
    model: &M,
    quad: QuadratureSpec,
) -> Result<DMatrix<f64>>
where
    M: UnivariateModel + ?Sized,
    W: Weight + ?Sized,
{
    check_inputs(model, theta, data)?;
    let d = model.param_dim();
    let hint = weighted_hint(model, theta, w, 1.0, 2.0)?;
    let integral = integrate_vec(
        d * d,
        |x| {
            let f = model.density(&x, theta)?;
            let u = model.score(&x, theta)?;
            let m = (&u * u.transpose()) * 2.0 + model.score_deriv(&x, theta)?;
            Ok(DVector::from_column_slice((m * (w.evaluate(x) * f * f)).as_slice()))
        },
        hint,
        quad,
    )?;
    let mut empirical = DMatrix::zeros(d, d);
    for x in data {
        let f = model.density(x, theta)?;
        let u = model.score(x, theta)?;
        let m = &u * u.transpose() + model.score_deriv(x, theta)?;
        empirical += m * (w.evaluate(*x) * f);
    }
    Ok(empirical / data.len() as f64 - DMatrix::from_column_slice(d, d, integral.as_slice()))
}

/// Minimum weighted L2 fit: the root of `V_n` reached by damped Newton from
/// `init`, or from the model's robust start when `init` is `None`.
///
/// Reaching `max_iter` is reported through `converged = false`; hard solver
/// failures are errors.
pub fn fit_min_l2<M, W>(
    data: &[f64],
    model: &M,
    w: &W,
    init: Option<&[f64]>,
    cfg: &SolverConfig,
    quad: QuadratureSpec,
) -> Result<FitResult>
where
    M: UnivariateModel + ?Sized,
    W: Weight + ?Sized,
{
    let d = model.param_dim();
    if data.len() < d + 1 {
        return Err(Error::InvalidInput(format!(
            "need at least {} observations, got {}",
            d + 1,
            data.len()
        )));
    }
    ensure_finite("data", data)?;
    if data.iter().all(|x| *x == data[0]) {
        return Err(Error::DegenerateData("all observations are equal".into()));
    }
    let start = match init {
        Some(t) => t.to_vec(),
        None => model.robust_start(data)?,
    };
    let out = newton_solve(
        |t| v_score(t, data, w, model, quad),
        |t| v_jacobian(t, data, w, model, quad),
        &start,
        cfg,
    )?;
    let theta = out.theta.as_slice().to_vec();
    let sandwich = plug_in_sandwich(&theta, data, w, model, quad).ok();
    Ok(FitResult {
        theta,
        iterations: out.iterations,
        converged: out.converged,
        score_norm: out.residual,
        n: data.len(),
        sandwich,
    })
}

/// Empirical `Ĵ = −∂V_n/∂θ` and `M̂ = cov_n{w f u}` at θ, combined into the sandwich.
pub fn plug_in_sandwich<M, W>(
    theta: &[f64],
    data: &[f64],
    w: &W,
    model: &M,
    quad: QuadratureSpec,
) -> Result<DMatrix<f64>>
where
    M: UnivariateModel + ?Sized,
    W: Weight + ?Sized,
{
    let j = -v_jacobian(theta, data, w, model, quad)?;
    let psi = data
        .iter()
        .map(|x| Ok(model.score(x, theta)? * (w.evaluate(*x) * model.density(x, theta)?)))
        .collect::<Result<Vec<_>>>()?;
    sandwich(&j, &empirical_covariance(&psi))
}

pub(crate) fn empirical_covariance(rows: &[DVector<f64>]) -> DMatrix<f64> {
    let d = rows.first().map_or(0, |r| r.len());
    let n = rows.len() as f64;
    let mean = rows.iter().fold(DVector::zeros(d), |acc, r| acc + r) / n;
    rows.iter().fold(DMatrix::zeros(d, d), |acc, r| {
        let c = r - &mean;
        acc + &c * c.transpose()
    }) / n
}
