//! Localized Kullback–Leibler fitting (local kernel-smoothed likelihood).
//!
//! Around a centre `x0`, the local likelihood
//! `L_n(θ) = Σ K_h(x_i − x0) log f(x_i, θ) − n ∫ K_h(t − x0) f(t, θ) dt`
//! is maximised. Placing `x0` at a robust location estimate and choosing
//! `h = k·σ̃` for a moderate `k` yields a robust estimate of θ; a large `h`
//! recovers ordinary maximum likelihood.
//!
//! For the normal model with a normal kernel the integral is a normal density
//! in closed form, which gives the univariate criterion [`criterion_normal`] and
//! its multivariate analogue [`criterion_mvn`].

use nalgebra::{DMatrix, DVector};

use crate::asymptotics::sandwich;
use crate::error::{ensure_finite, Error, Result};
use crate::fit::FitResult;
use crate::kernel::KernelSpec;
use crate::minl2::empirical_covariance;
use crate::model::{
    lower_indices, std_normal_pdf, MvnModel, MvnParams, NormalModel, ParametricModel,
    UnivariateModel,
};
use crate::numerics::{
    integrate_vec, mad_scale, median, newton_solve, QuadratureSpec, ScaleHint, SolverConfig,
};

/// Localization settings for a univariate robust fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFitSpec {
    /// Kernel centre; defaults to the preliminary location `μ̃`.
    pub x0: Option<f64>,
    /// Bandwidth multiple: `h = k·σ̃`.
    pub k: f64,
    /// Preliminary `(μ̃, σ̃)`; defaults to (median, MAD).
    pub prelim: Option<(f64, f64)>,
}

impl LocalFitSpec {
    pub fn new(k: f64) -> Self {
        Self {
            x0: None,
            k,
            prelim: None,
        }
    }

    /// Fills in the defaults from the data.
    pub fn resolve(&self, data: &[f64]) -> Result<Localization> {
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(Error::InvalidInput(format!("k must be positive, got {}", self.k)));
        }
        let (mu_tilde, sigma_tilde) = match self.prelim {
            Some(p) => p,
            None => (median(data)?, mad_scale(data)?),
        };
        ensure_finite("preliminary estimates", &[mu_tilde, sigma_tilde])?;
        if sigma_tilde <= 0.0 {
            return Err(Error::DegenerateData(
                "preliminary scale is zero; cannot set the bandwidth".into(),
            ));
        }
        let x0 = self.x0.unwrap_or(mu_tilde);
        ensure_finite("x0", &[x0])?;
        Ok(Localization {
            x0,
            h: self.k * sigma_tilde,
            mu_tilde,
            sigma_tilde,
        })
    }
}

/// Concrete centre and bandwidth after defaults are applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Localization {
    pub x0: f64,
    pub h: f64,
    pub mu_tilde: f64,
    pub sigma_tilde: f64,
}

fn kernel_weights(kernel: &KernelSpec, x0: f64, data: &[f64]) -> Vec<f64> {
    data.iter().map(|x| kernel.evaluate(x - x0)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn kernel_hint<M: UnivariateModel + ?Sized>(model: &M, theta: &[f64], kernel: &KernelSpec, x0: f64) -> Result<ScaleHint> {
    ScaleHint::from_factors(&[model.envelope(theta)?, kernel.envelope(x0)])
}

/// `L_n(θ) = Σ K_h(x_i − x0) log f(x_i, θ) − n ∫ K_h(t − x0) f(t, θ) dt`.
pub fn local_log_likelihood<M>(
    theta: &[f64],
    x0: f64,
    kernel: &KernelSpec,
    data: &[f64],
    model: &M,
    quad: QuadratureSpec,
) -> Result<f64>
where
    M: UnivariateModel + ?Sized,
{
    if data.is_empty() {
        return Err(Error::InvalidInput("data must be non-empty".into()));
    }
    ensure_finite("data", data)?;
    let mut sum = 0.0;
    for x in data {
        sum += kernel.evaluate(x - x0) * model.log_density(x, theta)?;
    }
    let integral = integrate_vec(
        1,
        |t| Ok(DVector::from_element(1, kernel.evaluate(t - x0) * model.density(&t, theta)?)),
        kernel_hint(model, theta, kernel, x0)?,
        quad,
    )?[0];
    Ok(sum - data.len() as f64 * integral)
}

/// `L_n / n` differentiated: `mean{K_i u_i} − ∫ K_h f u dt`.
pub fn local_likelihood_score<M>(
    theta: &[f64],
    x0: f64,
    kernel: &KernelSpec,
    data: &[f64],
    model: &M,
    quad: QuadratureSpec,
) -> Result<DVector<f64>>
where
    M: UnivariateModel + ?Sized,
{
    let d = model.param_dim();
    let mut acc = DVector::zeros(d);
    for x in data {
        acc.axpy(kernel.evaluate(x - x0), &model.score(x, theta)?, 1.0);
    }
    let integral = integrate_vec(
        d,
        |t| Ok(model.score(&t, theta)? * (kernel.evaluate(t - x0) * model.density(&t, theta)?)),
        kernel_hint(model, theta, kernel, x0)?,
        quad,
    )?;
    Ok(acc / data.len() as f64 - integral)
}

/// Jacobian of [`local_likelihood_score`]: `mean{K_i u*_i} − ∫ K_h f (uu' + u*) dt`.
pub fn local_likelihood_jacobian<M>(
    theta: &[f64],
    x0: f64,
    kernel: &KernelSpec,
    data: &[f64],
    model: &M,
    quad: QuadratureSpec,
) -> Result<DMatrix<f64>>
where
    M: UnivariateModel + ?Sized,
{
    let d = model.param_dim();
    let mut acc = DMatrix::zeros(d, d);
    for x in data {
        acc += model.score_deriv(x, theta)? * kernel.evaluate(x - x0);
    }
    let integral = integrate_vec(
        d * d,
        |t| {
            let u = model.score(&t, theta)?;
            let m = &u * u.transpose() + model.score_deriv(&t, theta)?;
            Ok(DVector::from_column_slice(
                (m * (kernel.evaluate(t - x0) * model.density(&t, theta)?)).as_slice(),
            ))
        },
        kernel_hint(model, theta, kernel, x0)?,
        quad,
    )?;
    Ok(acc / data.len() as f64 - DMatrix::from_column_slice(d, d, integral.as_slice()))
}

/// Plug-in sandwich `Ĵ_h⁻¹ M̂_h Ĵ_h⁻¹` for the local likelihood estimator.
pub fn local_plug_in_sandwich<M>(
    theta: &[f64],
    x0: f64,
    kernel: &KernelSpec,
    data: &[f64],
    model: &M,
    quad: QuadratureSpec,
) -> Result<DMatrix<f64>>
where
    M: UnivariateModel + ?Sized,
{
    let j = -local_likelihood_jacobian(theta, x0, kernel, data, model, quad)?;
    let psi = data
        .iter()
        .map(|x| Ok(model.score(x, theta)? * kernel.evaluate(x - x0)))
        .collect::<Result<Vec<_>>>()?;
    sandwich(&j, &empirical_covariance(&psi))
}

/// Maximises the local likelihood for a general univariate model with Newton
/// steps on its analytic score.
pub fn fit_local_likelihood<M>(
    data: &[f64],
    x0: f64,
    kernel: &KernelSpec,
    model: &M,
    init: Option<&[f64]>,
    cfg: &SolverConfig,
    quad: QuadratureSpec,
) -> Result<FitResult>
where
    M: UnivariateModel + ?Sized,
{
    check_sample(data, model.param_dim())?;
    let start = match init {
        Some(t) => t.to_vec(),
        None => model.robust_start(data)?,
    };
    // Rescale by the mean kernel height so the tolerance does not depend on h.
    let c = mean(&kernel_weights(kernel, x0, data));
    if !(c > 0.0) {
        return Err(Error::DegenerateData("no observation carries kernel weight".into()));
    }
    let out = newton_solve(
        |t| Ok(local_likelihood_score(t, x0, kernel, data, model, quad)? / c),
        |t| Ok(local_likelihood_jacobian(t, x0, kernel, data, model, quad)? / c),
        &start,
        cfg,
    )?;
    let theta = out.theta.as_slice().to_vec();
    let sandwich = local_plug_in_sandwich(&theta, x0, kernel, data, model, quad).ok();
    Ok(FitResult {
        theta,
        iterations: out.iterations,
        converged: out.converged,
        score_norm: out.residual,
        n: data.len(),
        sandwich,
    })
}

fn check_sample(data: &[f64], dim: usize) -> Result<()> {
    if data.len() < dim + 1 {
        return Err(Error::InvalidInput(format!(
            "need at least {} observations, got {}",
            dim + 1,
            data.len()
        )));
    }
    ensure_finite("data", data)?;
    if data.iter().all(|x| *x == data[0]) {
        return Err(Error::DegenerateData("all observations are equal".into()));
    }
    Ok(())
}

/// `∫ K_h(t − x0) [f log(f/f_θ) − (f − f_θ)] dt`, with `f log f → 0` where `f` vanishes.
pub fn localized_kl_distance<M, F>(
    f: F,
    theta: &[f64],
    x0: f64,
    kernel: &KernelSpec,
    model: &M,
    quad: QuadratureSpec,
) -> Result<f64>
where
    M: UnivariateModel + ?Sized,
    F: Fn(f64) -> f64,
{
    let v = integrate_vec(
        1,
        |t| {
            let ft = model.density(&t, theta)?;
            let ft_log = model.log_density(&t, theta)?;
            let ftrue = f(t);
            if !(ftrue >= 0.0) {
                return Err(Error::InvalidInput(format!("true density is negative at {t}")));
            }
            let bracket = if ftrue == 0.0 {
                ft
            } else {
                ftrue * (ftrue.ln() - ft_log) - ftrue + ft
            };
            Ok(DVector::from_element(1, kernel.evaluate(t - x0) * bracket))
        },
        kernel_hint(model, theta, kernel, x0)?,
        quad,
    )?;
    Ok(v[0])
}

/// Normal-model local likelihood criterion, to be minimised over `(μ, σ)`:
///
/// `(1/n) Σ φ((x_i−x0)/h)/h · {log σ + ½(x_i−μ)²/σ²} + φ((x0−μ)/s)/s`,
/// with `s = √(σ² + h²)`.
pub fn criterion_normal(mu: f64, sigma: f64, x0: f64, h: f64, data: &[f64]) -> Result<f64> {
    check_criterion_args(mu, sigma, x0, h, data)?;
    let ls = sigma.ln();
    let sum: f64 = data
        .iter()
        .map(|x| {
            let r = (x - mu) / sigma;
            std_normal_pdf((x - x0) / h) / h * (ls + 0.5 * r * r)
        })
        .sum();
    let s = (sigma * sigma + h * h).sqrt();
    Ok(sum / data.len() as f64 + std_normal_pdf((x0 - mu) / s) / s)
}

fn check_criterion_args(mu: f64, sigma: f64, x0: f64, h: f64, data: &[f64]) -> Result<()> {
    ensure_finite("criterion arguments", &[mu, sigma, x0, h])?;
    if sigma <= 0.0 || h <= 0.0 {
        return Err(Error::InvalidInput("sigma and h must be positive".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("data must be non-empty".into()));
    }
    ensure_finite("data", data)
}

/// Gradient of [`criterion_normal`] in `(μ, σ)`.
pub fn criterion_normal_gradient(mu: f64, sigma: f64, x0: f64, h: f64, data: &[f64]) -> Result<[f64; 2]> {
    check_criterion_args(mu, sigma, x0, h, data)?;
    let s2 = sigma * sigma;
    let (mut gm, mut gs) = (0.0, 0.0);
    for x in data {
        let k = std_normal_pdf((x - x0) / h) / h;
        let r = x - mu;
        gm -= k * r / s2;
        gs += k * (1.0 / sigma - r * r / (s2 * sigma));
    }
    let n = data.len() as f64;
    let s = (s2 + h * h).sqrt();
    let d = x0 - mu;
    let g = std_normal_pdf(d / s) / s;
    gm = gm / n + g * d / (s * s);
    gs = gs / n + g * (-1.0 / s + d * d / (s * s * s)) * sigma / s;
    Ok([gm, gs])
}

/// Central-difference Jacobian of a vector function.
fn fd_jacobian<G>(g: &mut G, theta: &[f64]) -> Result<DMatrix<f64>>
where
    G: FnMut(&[f64]) -> Result<DVector<f64>>,
{
    let d = theta.len();
    let mut out = DMatrix::zeros(d, d);
    let mut tp = theta.to_vec();
    for k in 0..d {
        let step = 1e-6 * (1.0 + theta[k].abs());
        tp[k] = theta[k] + step;
        let up = g(&tp)?;
        tp[k] = theta[k] - step;
        let down = g(&tp)?;
        tp[k] = theta[k];
        out.set_column(k, &((up - down) / (2.0 * step)));
    }
    Ok(out)
}

/// Robust normal fit: minimise [`criterion_normal`] with `x0 = μ̃` (unless given)
/// and `h = k·σ̃`, working in `(μ, log σ)`.
pub fn fit_robust_kl(data: &[f64], spec: &LocalFitSpec, cfg: &SolverConfig) -> Result<FitResult> {
    check_sample(data, 2)?;
    let loc = spec.resolve(data)?;
    let (x0, h) = (loc.x0, loc.h);
    let kernel = KernelSpec::normal(h)?;
    let c = mean(&kernel_weights(&kernel, x0, data));
    if !(c > 0.0) {
        return Err(Error::DegenerateData("no observation carries kernel weight".into()));
    }
    let grad = |eta: &[f64]| -> Result<DVector<f64>> {
        let sigma = eta[1].exp();
        let [gm, gs] = criterion_normal_gradient(eta[0], sigma, x0, h, data)?;
        Ok(DVector::from_vec(vec![gm / c, gs * sigma / c]))
    };
    let start = [loc.mu_tilde, loc.sigma_tilde.ln()];
    let mut grad_for_jac = grad;
    let out = newton_solve(grad, |eta| fd_jacobian(&mut grad_for_jac, eta), &start, cfg)?;
    let theta = vec![out.theta[0], out.theta[1].exp()];
    let sandwich = local_plug_in_sandwich(&theta, x0, &kernel, data, &NormalModel, QuadratureSpec::default()).ok();
    Ok(FitResult {
        theta,
        iterations: out.iterations,
        converged: out.converged,
        score_norm: out.residual,
        n: data.len(),
        sandwich,
    })
}

/// Localization settings for the multivariate fit.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnLocalFitSpec {
    /// Kernel covariance is `h²Σ̃`.
    pub h: f64,
    /// Preliminary `(μ̃, Σ̃)`; defaults to coordinatewise medians and squared MADs.
    pub prelim: Option<(DVector<f64>, DMatrix<f64>)>,
}

impl MvnLocalFitSpec {
    pub fn new(h: f64) -> Self {
        Self { h, prelim: None }
    }

    pub fn resolve(&self, data: &[Vec<f64>]) -> Result<MvnLocalization> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::InvalidInput(format!("h must be positive, got {}", self.h)));
        }
        let (mu, sigma) = match &self.prelim {
            Some((m, s)) => (m.clone(), s.clone()),
            None => {
                let p = sample_dim(data)?;
                let mut mu = DVector::zeros(p);
                let mut diag = DVector::zeros(p);
                for j in 0..p {
                    let col: Vec<f64> = data.iter().map(|x| x[j]).collect();
                    mu[j] = median(&col)?;
                    let s = mad_scale(&col)?;
                    if s <= 0.0 {
                        return Err(Error::DegenerateData(format!(
                            "coordinate {j} has zero median absolute deviation"
                        )));
                    }
                    diag[j] = s * s;
                }
                (mu, DMatrix::from_diagonal(&diag))
            }
        };
        Ok(MvnLocalization {
            prelim: MvnParams::from_covariance(mu, &sigma)?,
            h: self.h,
        })
    }
}

/// Preliminary `(μ̃, Σ̃)` and `h` for [`criterion_mvn`].
#[derive(Debug, Clone, PartialEq)]
pub struct MvnLocalization {
    pub prelim: MvnParams,
    pub h: f64,
}

fn sample_dim(data: &[Vec<f64>]) -> Result<usize> {
    let p = data
        .first()
        .map(|x| x.len())
        .ok_or_else(|| Error::InvalidInput("data must be non-empty".into()))?;
    if p == 0 {
        return Err(Error::InvalidInput("observations must have at least one coordinate".into()));
    }
    for x in data {
        if x.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: x.len(),
            });
        }
        ensure_finite("data", x)?;
    }
    Ok(p)
}

impl MvnLocalization {
    /// Unnormalised kernel heights `exp{−½ q_i/h²}/(h^p |Σ̃|^½)`.
    fn weights(&self, data: &[Vec<f64>]) -> Vec<f64> {
        let p = self.prelim.dim() as f64;
        let l = self.prelim.cholesky();
        let norm = self.h.powf(p) * (0.5 * self.prelim.log_det()).exp();
        data.iter()
            .map(|x| {
                let r = DVector::from_column_slice(x) - self.prelim.mu();
                let z = l.solve_lower_triangular(&r).expect("positive diagonal");
                (-0.5 * z.norm_squared() / (self.h * self.h)).exp() / norm
            })
            .collect()
    }

    /// `A = h²Σ̃ + Σ`.
    fn smoothed(&self, sigma: &DMatrix<f64>) -> DMatrix<f64> {
        self.prelim.covariance() * (self.h * self.h) + sigma
    }
}

/// Multivariate local likelihood criterion, minimised over `(μ, Σ)`:
///
/// `(1/n) Σ_i w_i {½ log|Σ| + ½(x_i−μ)'Σ⁻¹(x_i−μ)} + exp{−½ d'A⁻¹d}/|A|^½`,
/// with `w_i = exp{−½(x_i−μ̃)'Σ̃⁻¹(x_i−μ̃)/h²}/(h^p|Σ̃|^½)`, `A = h²Σ̃ + Σ`, `d = μ − μ̃`.
pub fn criterion_mvn(mu: &DVector<f64>, sigma: &DMatrix<f64>, loc: &MvnLocalization, data: &[Vec<f64>]) -> Result<f64> {
    let params = MvnParams::from_covariance(mu.clone(), sigma)?;
    criterion_mvn_params(&params, loc, data)
}

fn criterion_mvn_params(params: &MvnParams, loc: &MvnLocalization, data: &[Vec<f64>]) -> Result<f64> {
    let p = sample_dim(data)?;
    if p != params.dim() || p != loc.prelim.dim() {
        return Err(Error::DimensionMismatch {
            expected: loc.prelim.dim(),
            found: p,
        });
    }
    let weights = loc.weights(data);
    let half_logdet = 0.5 * params.log_det();
    let l = params.cholesky();
    let mut sum = 0.0;
    for (x, w) in data.iter().zip(&weights) {
        let r = DVector::from_column_slice(x) - params.mu();
        let z = l.solve_lower_triangular(&r).expect("positive diagonal");
        sum += w * (half_logdet + 0.5 * z.norm_squared());
    }
    let (quad, logdet_a) = smoothed_quadratic(params, loc)?;
    Ok(sum / data.len() as f64 + (-0.5 * quad - 0.5 * logdet_a).exp())
}

/// `(d'A⁻¹d, log|A|)`.
fn smoothed_quadratic(params: &MvnParams, loc: &MvnLocalization) -> Result<(f64, f64)> {
    let a = loc.smoothed(&params.covariance());
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::SingularMatrix { name: "h^2 Sigma_tilde + Sigma".into() })?;
    let d = params.mu() - loc.prelim.mu();
    let z = chol.l().solve_lower_triangular(&d).expect("positive diagonal");
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok((z.norm_squared(), logdet))
}

/// Gradient of the criterion in the unconstrained `(μ, log-Cholesky)` coordinates.
fn criterion_mvn_gradient(theta: &[f64], loc: &MvnLocalization, data: &[Vec<f64>], weights: &[f64]) -> Result<DVector<f64>> {
    let p = loc.prelim.dim();
    let model = MvnModel::new(p)?;
    let params = MvnParams::from_unconstrained(p, theta)?;
    let mut grad = DVector::zeros(theta.len());
    for (x, w) in data.iter().zip(weights) {
        grad.axpy(-w, &model.score(x, theta)?, 1.0);
    }
    grad /= data.len() as f64;

    let a = loc.smoothed(&params.covariance());
    let ainv = a
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix { name: "h^2 Sigma_tilde + Sigma".into() })?;
    let (quad, logdet_a) = smoothed_quadratic(&params, loc)?;
    let g = (-0.5 * quad - 0.5 * logdet_a).exp();
    let d = params.mu() - loc.prelim.mu();
    let ad = &ainv * &d;
    for i in 0..p {
        grad[i] -= g * ad[i];
    }
    // dg/dΣ as a symmetric matrix gradient, then chain through Σ = LL'.
    let g_sigma = (&ad * ad.transpose() - &ainv) * (0.5 * g);
    let l = params.cholesky();
    let g_chol = g_sigma * l * 2.0;
    for (idx, (i, j)) in lower_indices(p).enumerate() {
        let raw = g_chol[(i, j)];
        grad[p + idx] += if i == j { raw * l[(i, i)] } else { raw };
    }
    Ok(grad)
}

/// Result of a multivariate robust fit.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnFitResult {
    pub params: MvnParams,
    pub iterations: usize,
    pub converged: bool,
    pub score_norm: f64,
    pub n: usize,
    /// Plug-in sandwich for the unconstrained `(μ, log-Cholesky)` vector.
    pub sandwich: Option<DMatrix<f64>>,
}

/// Minimises [`criterion_mvn`] over `(μ, Σ)` by damped Newton on the analytic
/// gradient with a finite-difference Jacobian.
pub fn fit_mvn_robust(data: &[Vec<f64>], spec: &MvnLocalFitSpec, cfg: &SolverConfig) -> Result<MvnFitResult> {
    let p = sample_dim(data)?;
    let loc = spec.resolve(data)?;
    if loc.prelim.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: loc.prelim.dim(),
        });
    }
    let dim = p + p * (p + 1) / 2;
    if data.len() < dim + 1 {
        return Err(Error::InvalidInput(format!(
            "need at least {} observations, got {}",
            dim + 1,
            data.len()
        )));
    }
    let weights = loc.weights(data);
    let c = mean(&weights);
    if !(c > 0.0) {
        return Err(Error::DegenerateData("no observation carries kernel weight".into()));
    }
    let grad = |t: &[f64]| Ok(criterion_mvn_gradient(t, &loc, data, &weights)? / c);
    let mut grad_for_jac = grad;
    let start = loc.prelim.to_unconstrained();
    let out = newton_solve(grad, |t| fd_jacobian(&mut grad_for_jac, t), &start, cfg)?;
    let theta = out.theta.as_slice().to_vec();
    let params = MvnParams::from_unconstrained(p, &theta)?;

    let sandwich = (|| {
        let hess = fd_jacobian(&mut grad_for_jac, &theta)? * c;
        let model = MvnModel::new(p)?;
        let psi = data
            .iter()
            .zip(&weights)
            .map(|(x, w)| Ok(model.score(x, &theta)? * *w))
            .collect::<Result<Vec<_>>>()?;
        sandwich(&hess, &empirical_covariance(&psi))
    })()
    .ok();
    Ok(MvnFitResult {
        params,
        iterations: out.iterations,
        converged: out.converged,
        score_norm: out.residual,
        n: data.len(),
        sandwich,
    })
}

/// `√(2π)`: the ratio between the univariate form of [`criterion_mvn`] and
/// [`criterion_normal`] once bandwidths are matched (univariate bandwidth `h·σ̃`).
pub const MVN_TO_UNIVARIATE_FACTOR: f64 = 2.506_628_274_631_000_2;

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use crate::ml::{fit_ml_mvn, fit_ml_normal};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sample(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn sample_mvn(seed: u64, n: usize, p: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..p).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    const GH: QuadratureSpec = QuadratureSpec::GaussHermite { node_count: 80 };

    #[test]
    fn factor_constant() {
        assert!((MVN_TO_UNIVARIATE_FACTOR - (2.0 * PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn integral_term_is_a_convolved_normal() {
        for &(mu, sigma, x0, h) in &[(0.0, 1.0, 0.0, 1.0), (0.4, 1.7, -0.6, 0.3), (2.0, 0.5, 1.0, 5.0)] {
            let kern = KernelSpec::normal(h).unwrap();
            let theta = [mu, sigma];
            // With a single far-away datum the kernel weight underflows to zero.
            let l = local_log_likelihood(&theta, x0, &kern, &[1e6], &NormalModel, GH).unwrap();
            let s = ((sigma * sigma + h * h) as f64).sqrt();
            let closed = std_normal_pdf((x0 - mu) / s) / s;
            assert!((-l - closed).abs() < 1e-9, "{l} vs {closed}");
        }
    }

    #[test]
    fn criterion_is_negated_local_likelihood_plus_constant() {
        let data = sample(1, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let u: [f64; 4] = [
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ];
            let (mu, sigma, x0, h) = (u[0], (0.5 * u[1]).exp(), 0.5 * u[2], (0.5 * u[3]).exp());
            let kern = KernelSpec::normal(h).unwrap();
            let ll = local_log_likelihood(&[mu, sigma], x0, &kern, &data, &NormalModel, GH).unwrap();
            let crit = criterion_normal(mu, sigma, x0, h, &data).unwrap();
            let weights = kernel_weights(&kern, x0, &data);
            let constant = -0.5 * (2.0 * PI).ln() * mean(&weights);
            assert!((crit - (-ll / data.len() as f64 + constant)).abs() < 1e-10);
        }
    }

    #[test]
    fn criterion_single_datum() {
        let v = criterion_normal(0.0, 1.0, 0.0, 1.0, &[0.0]).unwrap();
        let expected = 1.0 / (2.0 * PI).sqrt() / 2f64.sqrt();
        assert!((v - expected).abs() < 1e-15);
        assert!(criterion_normal(0.0, 0.0, 0.0, 1.0, &[0.0]).is_err());
        assert!(criterion_normal(0.0, 1.0, 0.0, -1.0, &[0.0]).is_err());
    }

    #[test]
    fn criterion_gradient_matches_finite_differences() {
        let data = sample(2, 25);
        for &(mu, sigma, x0, h) in &[(0.1, 0.9, 0.0, 2.0), (-0.5, 1.5, 0.3, 0.7)] {
            let g = criterion_normal_gradient(mu, sigma, x0, h, &data).unwrap();
            let e = 1e-6;
            let fm = (criterion_normal(mu + e, sigma, x0, h, &data).unwrap() - criterion_normal(mu - e, sigma, x0, h, &data).unwrap()) / (2.0 * e);
            let fs = (criterion_normal(mu, sigma + e, x0, h, &data).unwrap() - criterion_normal(mu, sigma - e, x0, h, &data).unwrap()) / (2.0 * e);
            assert!((g[0] - fm).abs() < 1e-8 && (g[1] - fs).abs() < 1e-8);
        }
    }

    #[test]
    fn localized_kl_distance_properties() {
        let kern = KernelSpec::normal(1.0).unwrap();
        let same = localized_kl_distance(|t| std_normal_pdf(t), &[0.0, 1.0], 0.0, &kern, &NormalModel, GH).unwrap();
        assert!(same.abs() < 1e-15);
        for (x0, h) in [(0.0, 1.0), (2.0, 0.3), (-1.0, 5.0)] {
            let kern = KernelSpec::normal(h).unwrap();
            let d = localized_kl_distance(|t| std_normal_pdf(t), &[0.1, 1.0], x0, &kern, &NormalModel, GH).unwrap();
            assert!(d > 0.0);
        }
        // dense trapezoid oracle
        let v = localized_kl_distance(|t| std_normal_pdf(t), &[0.5, 1.0], 0.0, &kern, &NormalModel, GH).unwrap();
        let step = 1e-3;
        let oracle: f64 = (0..=40_000)
            .map(|i| {
                let t = -20.0 + step * i as f64;
                let f = std_normal_pdf(t);
                let ft = std_normal_pdf(t - 0.5);
                let wgt = if i == 0 || i == 40_000 { 0.5 } else { 1.0 };
                wgt * step * kern.evaluate(t) * (f * (f / ft).ln() - f + ft)
            })
            .sum();
        assert!((v - oracle).abs() < 1e-8, "{v} vs {oracle}");
        // vanishing true density contributes f_θ
        let zero = localized_kl_distance(|_| 0.0, &[0.0, 1.0], 0.0, &kern, &NormalModel, GH).unwrap();
        assert!((zero - std_normal_pdf(0.0) / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn distance_is_zero_only_at_the_truth() {
        let kern = KernelSpec::normal(1.5).unwrap();
        for i in -3..=3 {
            for j in -3..=3 {
                let theta = [0.2 * i as f64, 1.0 + 0.15 * j as f64];
                let d = localized_kl_distance(|t| std_normal_pdf(t), &theta, 0.2, &kern, &NormalModel, GH).unwrap();
                if i == 0 && j == 0 {
                    assert!(d.abs() < 1e-15);
                } else {
                    assert!(d > 1e-8, "{theta:?}: {d}");
                }
            }
        }
    }

    #[test]
    fn robust_fit_consistency_and_ml_limit() {
        let data = sample(3, 100_000);
        let fit = fit_robust_kl(&data, &LocalFitSpec::new(2.0), &SolverConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.theta[0].abs() < 0.02 && (fit.theta[1] - 1.0).abs() < 0.02);

        let small = sample(4, 500);
        let ml = fit_ml_normal(&small).unwrap();
        let wide = fit_robust_kl(&small, &LocalFitSpec::new(1e3), &SolverConfig::default()).unwrap();
        assert!((wide.theta[0] - ml.theta[0]).abs() < 1e-4 && (wide.theta[1] - ml.theta[1]).abs() < 1e-4);
    }

    #[test]
    fn generic_local_likelihood_matches_normal_fast_path() {
        let data = sample(5, 400);
        let spec = LocalFitSpec::new(2.0);
        let loc = spec.resolve(&data).unwrap();
        let cfg = SolverConfig { grad_tol: 1e-12, ..SolverConfig::default() };
        let fast = fit_robust_kl(&data, &spec, &cfg).unwrap();
        let kern = KernelSpec::normal(loc.h).unwrap();
        let generic = fit_local_likelihood(&data, loc.x0, &kern, &NormalModel, None, &cfg, GH).unwrap();
        assert!((fast.theta[0] - generic.theta[0]).abs() < 1e-8);
        assert!((fast.theta[1] - generic.theta[1]).abs() < 1e-8);
        let (a, b) = (fast.sandwich.unwrap(), generic.sandwich.unwrap());
        assert!((a - b).amax() < 1e-8);

        let ml = fit_ml_normal(&data).unwrap();
        let flat = KernelSpec::normal(1e3).unwrap();
        let g = fit_local_likelihood(&data, loc.x0, &flat, &NormalModel, None, &cfg, GH).unwrap();
        assert!((g.theta[0] - ml.theta[0]).abs() < 1e-4 && (g.theta[1] - ml.theta[1]).abs() < 1e-4);
    }

    #[test]
    fn robust_fit_resists_contamination() {
        let mut data = sample(6, 2000);
        for x in data.iter_mut().step_by(20) {
            *x = 10.0;
        }
        let fit = fit_robust_kl(&data, &LocalFitSpec::new(2.0), &SolverConfig::default()).unwrap();
        let ml = fit_ml_normal(&data).unwrap();
        assert!(fit.theta[1] - 1.0 < ml.theta[1] - 1.0);
    }

    #[test]
    fn affine_equivariance_of_robust_fit() {
        let data = sample(7, 300);
        let cfg = SolverConfig { grad_tol: 1e-12, ..SolverConfig::default() };
        let base = fit_robust_kl(&data, &LocalFitSpec::new(2.0), &cfg).unwrap();
        for &(a, b) in &[(5.0, 3.0), (-2.0, -0.25)] {
            let mapped: Vec<f64> = data.iter().map(|x| a + b * x).collect();
            let fit = fit_robust_kl(&mapped, &LocalFitSpec::new(2.0), &cfg).unwrap();
            assert!((fit.theta[0] - (a + b * base.theta[0])).abs() < 1e-8);
            assert!((fit.theta[1] - b.abs() * base.theta[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn bandwidth_monotonically_approaches_ml() {
        let data = sample(8, 1000);
        let ml = fit_ml_normal(&data).unwrap();
        let mut last = f64::INFINITY;
        for k in [1.0, 2.0, 3.0, 1e3] {
            let fit = fit_robust_kl(&data, &LocalFitSpec::new(k), &SolverConfig::default()).unwrap();
            let dist = ((fit.theta[0] - ml.theta[0]).powi(2) + (fit.theta[1] - ml.theta[1]).powi(2)).sqrt();
            assert!(dist <= last + 1e-12, "k={k}: {dist} > {last}");
            last = dist;
        }
    }

    #[test]
    fn robust_fit_rejects_zero_scale() {
        let data = [1.0, 1.0, 1.0, 1.0, 2.0];
        assert!(matches!(
            fit_robust_kl(&data, &LocalFitSpec::new(2.0), &SolverConfig::default()),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn mvn_criterion_examples() {
        for p in 1..=3 {
            let loc = MvnLocalFitSpec {
                h: 1.0,
                prelim: Some((DVector::zeros(p), DMatrix::identity(p, p))),
            }
            .resolve(&[vec![0.0; p]])
            .unwrap();
            let v = criterion_mvn(&DVector::zeros(p), &DMatrix::identity(p, p), &loc, &[vec![0.0; p]]).unwrap();
            assert!((v - 2f64.powf(-(p as f64) / 2.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn mvn_criterion_reduces_to_univariate() {
        let data = sample(9, 40);
        let rows: Vec<Vec<f64>> = data.iter().map(|x| vec![*x]).collect();
        let (mt, st) = (0.1, 1.3);
        let h = 1.7;
        let loc = MvnLocalFitSpec {
            h,
            prelim: Some((DVector::from_element(1, mt), DMatrix::from_element(1, 1, st * st))),
        }
        .resolve(&rows)
        .unwrap();
        for &(mu, sigma) in &[(0.0, 1.0), (0.3, 0.7), (-1.0, 2.0)] {
            let a = criterion_mvn(&DVector::from_element(1, mu), &DMatrix::from_element(1, 1, sigma * sigma), &loc, &rows).unwrap();
            let b = criterion_normal(mu, sigma, mt, h * st, &data).unwrap();
            assert!((a - MVN_TO_UNIVARIATE_FACTOR * b).abs() < 1e-10);
        }
    }

    #[test]
    fn mvn_gradient_matches_finite_differences() {
        let rows = sample_mvn(10, 30, 2);
        let loc = MvnLocalFitSpec::new(1.5).resolve(&rows).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[1.2, 0.3, 0.3, 0.8]);
        let theta = MvnParams::from_covariance(DVector::from_vec(vec![0.2, -0.1]), &sigma)
            .unwrap()
            .to_unconstrained();
        let weights = loc.weights(&rows);
        let g = criterion_mvn_gradient(&theta, &loc, &rows, &weights).unwrap();
        for k in 0..theta.len() {
            let e = 1e-6;
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += e;
            tm[k] -= e;
            let fp = criterion_mvn_params(&MvnParams::from_unconstrained(2, &tp).unwrap(), &loc, &rows).unwrap();
            let fm = criterion_mvn_params(&MvnParams::from_unconstrained(2, &tm).unwrap(), &loc, &rows).unwrap();
            assert!((g[k] - (fp - fm) / (2.0 * e)).abs() < 1e-8, "component {k}");
        }
    }

    #[test]
    fn mvn_fit_in_one_dimension_matches_univariate() {
        let data = sample(11, 500);
        let rows: Vec<Vec<f64>> = data.iter().map(|x| vec![*x]).collect();
        let cfg = SolverConfig { grad_tol: 1e-12, ..SolverConfig::default() };
        let m = fit_mvn_robust(&rows, &MvnLocalFitSpec::new(2.0), &cfg).unwrap();
        let u = fit_robust_kl(&data, &LocalFitSpec::new(2.0), &cfg).unwrap();
        assert!((m.params.mu()[0] - u.theta[0]).abs() < 1e-6);
        assert!((m.params.covariance()[(0, 0)].sqrt() - u.theta[1]).abs() < 1e-6);
    }

    #[test]
    fn mvn_fit_consistency_and_ml_limit() {
        let rows = sample_mvn(12, 100_000, 2);
        let fit = fit_mvn_robust(&rows, &MvnLocalFitSpec::new(2.0), &SolverConfig::default()).unwrap();
        assert!(fit.converged);
        let cov = fit.params.covariance();
        let err = fit.params.mu().amax().max((cov - DMatrix::<f64>::identity(2, 2)).amax());
        assert!(err < 0.03, "{err}");

        let rows = sample_mvn(13, 400, 2);
        let ml = fit_ml_mvn(&rows).unwrap();
        let wide = fit_mvn_robust(&rows, &MvnLocalFitSpec::new(1e3), &SolverConfig::default()).unwrap();
        assert!((wide.params.mu() - ml.mu()).amax() < 1e-3);
        assert!((wide.params.covariance() - ml.covariance()).amax() < 1e-3);
        assert!(wide.sandwich.is_some());
    }

    #[test]
    fn mvn_fit_resists_contamination() {
        let mut rows = sample_mvn(14, 2000, 2);
        for x in rows.iter_mut().step_by(10) {
            *x = vec![8.0, 8.0];
        }
        let fit = fit_mvn_robust(&rows, &MvnLocalFitSpec::new(2.0), &SolverConfig::default()).unwrap();
        let ml = fit_ml_mvn(&rows).unwrap().covariance();
        let robust = fit.params.covariance();
        for i in 0..2 {
            assert!((robust[(i, i)] - 1.0).abs() < (ml[(i, i)] - 1.0).abs());
        }
    }

    #[test]
    fn mvn_fit_rotates_with_the_data() {
        let rows = sample_mvn(15, 600, 2);
        let angle: f64 = 0.7;
        let u = DMatrix::from_row_slice(2, 2, &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()]);
        let prelim_mu = DVector::from_vec(vec![0.1, -0.05]);
        let prelim_sigma = DMatrix::from_row_slice(2, 2, &[1.1, 0.2, 0.2, 0.9]);
        let cfg = SolverConfig { grad_tol: 1e-12, ..SolverConfig::default() };
        let base = fit_mvn_robust(
            &rows,
            &MvnLocalFitSpec { h: 2.0, prelim: Some((prelim_mu.clone(), prelim_sigma.clone())) },
            &cfg,
        )
        .unwrap();
        let rotated: Vec<Vec<f64>> = rows
            .iter()
            .map(|x| (&u * DVector::from_column_slice(x)).as_slice().to_vec())
            .collect();
        let spec = MvnLocalFitSpec {
            h: 2.0,
            prelim: Some((&u * prelim_mu, &u * prelim_sigma * u.transpose())),
        };
        let fit = fit_mvn_robust(&rotated, &spec, &cfg).unwrap();
        let expected = &u * base.params.covariance() * u.transpose();
        assert!((fit.params.covariance() - expected).amax() < 1e-6);
        assert!((fit.params.mu() - &u * base.params.mu()).amax() < 1e-6);
    }

    #[test]
    fn mvn_rejects_zero_mad_and_ragged_rows() {
        let rows = vec![vec![0.0, 1.0], vec![0.0, 2.0], vec![0.0, 3.0], vec![0.0, 4.0], vec![1.0, 5.0], vec![0.0, 0.0]];
        assert!(matches!(
            fit_mvn_robust(&rows, &MvnLocalFitSpec::new(2.0), &SolverConfig::default()),
            Err(Error::DegenerateData(_))
        ));
        let ragged = vec![vec![0.0, 1.0], vec![0.0]];
        assert!(fit_mvn_robust(&ragged, &MvnLocalFitSpec::new(2.0), &SolverConfig::default()).is_err());
    }
}
