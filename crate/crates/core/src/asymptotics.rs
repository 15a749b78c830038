//! Sandwich asymptotics and influence functions for both estimators.
//!
//! For an M-estimator with estimating function `ψ`, `√n(θ̂ − θ₀)` is
//! asymptotically normal with covariance `J⁻¹MJ⁻¹`, whether or not the true
//! density belongs to the model. The general quadrature routines here work
//! for any [`UnivariateModel`]; the `normal_*` functions are the closed forms
//! for the normal family and serve as an independent check of the quadrature.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, Error, Result};
use crate::kernel::KernelSpec;
use crate::minl2::{weighted_hint, Weight};
use crate::model::UnivariateModel;
use crate::numerics::{integrate_vec, QuadratureSpec, ScaleHint};

/// `J⁻¹ M J⁻¹`, symmetrized.
pub fn sandwich(j: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !j.is_square() || j.shape() != m.shape() {
        return Err(Error::DimensionMismatch {
            expected: j.nrows(),
            found: m.nrows(),
        });
    }
    let jinv = invert(j, "J")?;
    let s = &jinv * m * &jinv.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

fn invert(a: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let singular = || Error::SingularMatrix { name: name.into() };
    if a.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    let inv = a.clone().try_inverse().ok_or_else(singular)?;
    // Reject numerically singular matrices that LU happens to invert.
    let resid = (a * &inv - DMatrix::identity(a.nrows(), a.ncols())).amax();
    if !resid.is_finite() || resid > 1e-6 {
        return Err(singular());
    }
    Ok(inv)
}

/// Asymptotic summary at `theta0` with efficiency relative to the Fisher bound.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticReport {
    pub theta0: Vec<f64>,
    pub j: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub sandwich: DMatrix<f64>,
    pub fisher: DMatrix<f64>,
    /// `diag(fisher⁻¹)_i / diag(sandwich)_i`.
    pub efficiency: Vec<f64>,
}

impl AsymptoticReport {
    pub fn new(theta0: Vec<f64>, j: DMatrix<f64>, m: DMatrix<f64>, fisher: DMatrix<f64>) -> Result<Self> {
        let sandwich = sandwich(&j, &m)?;
        let bound = invert(&fisher, "Fisher information")?;
        let efficiency = (0..sandwich.nrows())
            .map(|i| bound[(i, i)] / sandwich[(i, i)])
            .collect();
        Ok(Self {
            theta0,
            j,
            m,
            sandwich,
            fisher,
            efficiency,
        })
    }
}

fn to_matrix(d: usize, v: DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(d, d, v.as_slice())
}

fn outer_flat(u: &DVector<f64>, scale: f64) -> DVector<f64> {
    DVector::from_column_slice((u * u.transpose() * scale).as_slice())
}

/// Fisher information `∫ f_θ u u' dx`.
pub fn fisher_information<M>(theta: &[f64], model: &M, quad: QuadratureSpec) -> Result<DMatrix<f64>>
where
    M: UnivariateModel + ?Sized,
{
    let d = model.param_dim();
    let hint = ScaleHint::from_factors(&[model.envelope(theta)?])?;
    let v = integrate_vec(
        d * d,
        |x| Ok(outer_flat(&model.score(&x, theta)?, model.density(&x, theta)?)),
        hint,
        quad,
    )?;
    Ok(to_matrix(d, v))
}

/// A true density supplied for off-model calculations.
pub type TrueDensity<'a> = &'a (dyn Fn(f64) -> f64 + Sync);

/// `J = ∫ w f_θ² uu' dx − ∫ w f_θ (uu' + u*)(f − f_θ) dx`; the second term
/// drops out when `f` is omitted (model conditions).
pub fn l2_j<M, W>(
    theta: &[f64],
    w: &W,
    model: &M,
    f: Option<TrueDensity<'_>>,
    quad: QuadratureSpec,
) -> Result<DMatrix<f64>>
where
    M: UnivariateModel + ?Sized,
    W: Weight + ?Sized,
{
    let d = model.param_dim();
    let hint = weighted_hint(model, theta, w, 1.0, 2.0)?;
    let v = integrate_vec(
        d * d,
        |x| {
            let ft = model.density(&x, theta)?;
            let u = model.score(&x, theta)?;
            let uu = &u * u.transpose();
            let wx = w.evaluate(x);
            let mut m = &uu * (wx * ft * ft);
            if let Some(f) = f {
                let gap = f(x) - ft;
                if gap != 0.0 {
                    m -= (uu + model.score_deriv(&x, theta)?) * (wx * ft * gap);
                }
            }
            Ok(DVector::from_column_slice(m.as_slice()))
        },
        hint,
        quad,
    )?;
    Ok(to_matrix(d, v))
}

/// `ξ₀ = ∫ w f_θ f u dx`, which is `∫ w f_θ² u dx` under model conditions.
pub fn l2_xi<M, W>(
    theta: &[f64],
    w: &W,
    model: &M,
    f: Option<TrueDensity<'_>>,
    quad: QuadratureSpec,
) -> Result<DVector<f64>>
where
    M: UnivariateModel + ?Sized,
    W: Weight + ?Sized,
{
    let hint = weighted_hint(model, theta, w, 1.0, 2.0)?;
    integrate_vec(
        model.param_dim(),
        |x| {
            let ft = model.density(&x, theta)?;
            let fx = f.map_or(ft, |f| f(x));
            Ok(model.score(&x, theta)? * (w.evaluate(x) * ft * fx))
        },
        hint,
        quad,
    )
}

/// `M = ∫ w² f_θ² f uu' dx − ξ₀ξ₀'`, the variance of `w f_θ u` under `f`.
pub fn l2_m<M, W>(
    theta: &[f64],
    w: &W,
    model: &M,
    f: Option<TrueDensity<'_>>,
    quad: QuadratureSpec,
) -> Result<DMatrix<f64>>
where
    M: UnivariateModel + ?Sized,
    W: Weight + ?Sized,
{
    let d = model.param_dim();
    let hint = weighted_hint(model, theta, w, 2.0, 3.0)?;
    let second = integrate_vec(
        d * d,
        |x| {
            let ft = model.density(&x, theta)?;
            let fx = f.map_or(ft, |f| f(x));
            let wx = w.evaluate(x);
            Ok(outer_flat(&model.score(&x, theta)?, wx * wx * ft * ft * fx))
        },
        hint,
        quad,
    )?;
    let xi = l2_xi(theta, w, model, f, quad)?;
    Ok(to_matrix(d, second) - &xi * xi.transpose())
}

/// Model-condition report for the weighted L2 estimator.
pub fn l2_report<M, W>(theta0: &[f64], w: &W, model: &M, quad: QuadratureSpec) -> Result<AsymptoticReport>
where
    M: UnivariateModel + ?Sized,
    W: Weight + ?Sized,
{
    AsymptoticReport::new(
        theta0.to_vec(),
        l2_j(theta0, w, model, None, quad)?,
        l2_m(theta0, w, model, None, quad)?,
        fisher_information(theta0, model, quad)?,
    )
}

/// Influence function `J⁻¹{w(x) f(x, θ₀) u(x, θ₀) − ξ₀}` at model conditions.
pub fn l2_influence<M, W>(
    x: f64,
    theta0: &[f64],
    w: &W,
    model: &M,
    quad: QuadratureSpec,
) -> Result<DVector<f64>>
where
    M: UnivariateModel + ?Sized,
    W: Weight + ?Sized,
{
    let curve = L2Influence::new(theta0, w, model, quad)?;
    curve.at(x)
}

/// Influence curve of the L2 estimator with `J⁻¹` and `ξ₀` computed once.
pub struct L2Influence<'a, M: ?Sized, W: ?Sized> {
    theta0: Vec<f64>,
    w: &'a W,
    model: &'a M,
    jinv: DMatrix<f64>,
    xi: DVector<f64>,
}

impl<'a, M, W> L2Influence<'a, M, W>
where
    M: UnivariateModel + ?Sized,
    W: Weight + ?Sized,
{
    pub fn new(theta0: &[f64], w: &'a W, model: &'a M, quad: QuadratureSpec) -> Result<Self> {
        let jinv = invert(&l2_j(theta0, w, model, None, quad)?, "J")?;
        let xi = l2_xi(theta0, w, model, None, quad)?;
        Ok(Self {
            theta0: theta0.to_vec(),
            w,
            model,
            jinv,
            xi,
        })
    }

    pub fn at(&self, x: f64) -> Result<DVector<f64>> {
        ensure_finite("x", &[x])?;
        let t = &self.theta0;
        let psi = self.model.score(&x, t)? * (self.w.evaluate(x) * self.model.density(&x, t)?);
        Ok(&self.jinv * (psi - &self.xi))
    }

    /// `−J⁻¹ξ₀`, the value approached as `|x| → ∞`.
    pub fn tail_limit(&self) -> DVector<f64> {
        -(&self.jinv * &self.xi)
    }
}

/// Model-condition `(J_h, M_h)` for the local likelihood estimator:
/// `J_h = ∫ K_h(t−x0) uu' f_θ dt`, `M_h = ∫ K_h(t−x0)² uu' f_θ dt − ξ₀ξ₀'`.
pub fn kl_jh_mh<M>(
    theta: &[f64],
    x0: f64,
    kernel: &KernelSpec,
    model: &M,
    quad: QuadratureSpec,
) -> Result<(DMatrix<f64>, DMatrix<f64>)>
where
    M: UnivariateModel + ?Sized,
{
    let d = model.param_dim();
    let env = model.envelope(theta)?;
    let kenv = kernel.envelope(x0);
    let j = integrate_vec(
        d * d,
        |t| Ok(outer_flat(&model.score(&t, theta)?, kernel.evaluate(t - x0) * model.density(&t, theta)?)),
        ScaleHint::from_factors(&[env, kenv])?,
        quad,
    )?;
    let second = integrate_vec(
        d * d,
        |t| {
            let k = kernel.evaluate(t - x0);
            Ok(outer_flat(&model.score(&t, theta)?, k * k * model.density(&t, theta)?))
        },
        ScaleHint::from_factors(&[env, kenv.pow(2.0)])?,
        quad,
    )?;
    let xi = kl_xi(theta, x0, kernel, model, quad)?;
    Ok((to_matrix(d, j), to_matrix(d, second) - &xi * xi.transpose()))
}

/// `ξ₀ = ∫ K_h(t−x0) u f_θ dt`.
pub fn kl_xi<M>(theta: &[f64], x0: f64, kernel: &KernelSpec, model: &M, quad: QuadratureSpec) -> Result<DVector<f64>>
where
    M: UnivariateModel + ?Sized,
{
    integrate_vec(
        model.param_dim(),
        |t| Ok(model.score(&t, theta)? * (kernel.evaluate(t - x0) * model.density(&t, theta)?)),
        ScaleHint::from_factors(&[model.envelope(theta)?, kernel.envelope(x0)])?,
        quad,
    )
}

/// Model-condition report for the local likelihood estimator.
pub fn kl_report<M>(
    theta0: &[f64],
    x0: f64,
    kernel: &KernelSpec,
    model: &M,
    quad: QuadratureSpec,
) -> Result<AsymptoticReport>
where
    M: UnivariateModel + ?Sized,
{
    let (j, m) = kl_jh_mh(theta0, x0, kernel, model, quad)?;
    AsymptoticReport::new(theta0.to_vec(), j, m, fisher_information(theta0, model, quad)?)
}

/// Influence function `J_h⁻¹{K_h(x − x0) u(x, θ) − ξ₀}`.
pub fn kl_influence<M>(
    x: f64,
    theta: &[f64],
    x0: f64,
    kernel: &KernelSpec,
    model: &M,
    quad: QuadratureSpec,
) -> Result<DVector<f64>>
where
    M: UnivariateModel + ?Sized,
{
    KlInfluence::new(theta, x0, *kernel, model, quad)?.at(x)
}

/// Influence curve of the local likelihood estimator with `J_h⁻¹`, `ξ₀` cached.
pub struct KlInfluence<'a, M: ?Sized> {
    theta: Vec<f64>,
    x0: f64,
    kernel: KernelSpec,
    model: &'a M,
    jinv: DMatrix<f64>,
    xi: DVector<f64>,
}

impl<'a, M> KlInfluence<'a, M>
where
    M: UnivariateModel + ?Sized,
{
    pub fn new(theta: &[f64], x0: f64, kernel: KernelSpec, model: &'a M, quad: QuadratureSpec) -> Result<Self> {
        let (j, _) = kl_jh_mh(theta, x0, &kernel, model, quad)?;
        Ok(Self {
            theta: theta.to_vec(),
            x0,
            kernel,
            model,
            jinv: invert(&j, "J_h")?,
            xi: kl_xi(theta, x0, &kernel, model, quad)?,
        })
    }

    pub fn at(&self, x: f64) -> Result<DVector<f64>> {
        ensure_finite("x", &[x])?;
        let psi = self.model.score(&x, &self.theta)? * self.kernel.evaluate(x - self.x0);
        Ok(&self.jinv * (psi - &self.xi))
    }

    /// `−J_h⁻¹ξ₀`.
    pub fn tail_limit(&self) -> DVector<f64> {
        -(&self.jinv * &self.xi)
    }
}

/// Diagonal `J` and `M` entries of a normal-model estimator at `θ = (μ, σ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalDiagonal {
    pub j_mu: f64,
    pub j_sigma: f64,
    pub m_mu: f64,
    pub m_sigma: f64,
}

impl NormalDiagonal {
    /// `(M_μ/J_μ², M_σ/J_σ²)`.
    pub fn variances(&self) -> (f64, f64) {
        (
            self.m_mu / (self.j_mu * self.j_mu),
            self.m_sigma / (self.j_sigma * self.j_sigma),
        )
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Closed-form `J`, `M` for the L2 estimator with weight `exp{½δ(x−μ)²/σ²}` at
/// the normal model (`δ = 0` is the constant weight).
pub fn normal_l2_matrices(sigma: f64, delta: Option<f64>) -> Result<NormalDiagonal> {
    check_sigma(sigma)?;
    let delta = delta.unwrap_or(0.0);
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidInput(format!("delta must lie in [0, 1), got {delta}")));
    }
    let cj = 1.0 / (sigma.powi(3) * (2.0 * PI).sqrt());
    let cm = 1.0 / (sigma.powi(4) * 2.0 * PI);
    let a = 2.0 - delta;
    let b = 3.0 - 2.0 * delta;
    Ok(NormalDiagonal {
        j_mu: cj * a.powf(-1.5),
        j_sigma: cj * a.powf(-0.5) * (1.0 - 2.0 / a + 3.0 / (a * a)),
        m_mu: cm * b.powf(-1.5),
        m_sigma: cm * (b.powf(-0.5) * (1.0 - 2.0 / b + 3.0 / (b * b)) - (1.0 - delta).powi(2) / a.powi(3)),
    })
}

/// Constant-weight `J = (σ³√(2π))⁻¹ diag(2^{-3/2}, 3·2^{-5/2})`,
/// `M = (2πσ⁴)⁻¹ diag(3^{-3/2}, 2·3^{-3/2} − 1/8)`.
pub fn normal_l2_constant_matrices(sigma: f64) -> Result<NormalDiagonal> {
    check_sigma(sigma)?;
    let cj = 1.0 / (sigma.powi(3) * (2.0 * PI).sqrt());
    let cm = 1.0 / (sigma.powi(4) * 2.0 * PI);
    Ok(NormalDiagonal {
        j_mu: cj / 2f64.powf(1.5),
        j_sigma: cj * 3.0 / 2f64.powf(2.5),
        m_mu: cm / 3f64.powf(1.5),
        m_sigma: cm * (2.0 / 3f64.powf(1.5) - 0.125),
    })
}

/// Asymptotic variances `(var μ̂, var σ̂)` of the L2 estimator at the normal model.
pub fn normal_l2_variances(sigma: f64, delta: Option<f64>) -> Result<(f64, f64)> {
    Ok(normal_l2_matrices(sigma, delta)?.variances())
}

fn kl_ratios(k: f64) -> Result<(f64, f64)> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::InvalidInput(format!("bandwidth multiple must be positive, got {k}")));
    }
    let r = (1.0 + 1.0 / (k * k)).sqrt();
    let s = (1.0 + 2.0 / (k * k)).sqrt();
    Ok((r, s))
}

/// Closed-form `J_h`, `M_h` diagonals for the local likelihood estimator with a
/// normal kernel centred at `μ`, `h = kσ`. `J_σ` carries the factor `1/R`
/// that the direct integral `∫ K_h u_σ² f_θ dt` produces.
pub fn normal_kl_matrices(sigma: f64, k: f64) -> Result<NormalDiagonal> {
    check_sigma(sigma)?;
    let (r, s) = kl_ratios(k)?;
    let h = k * sigma;
    let cj = 1.0 / (sigma * sigma * (2.0 * PI).sqrt() * h);
    let cm = 1.0 / (sigma * sigma * 2.0 * PI * h * h);
    let (r2, s2) = (r * r, s * s);
    Ok(NormalDiagonal {
        j_mu: cj / (r2 * r),
        j_sigma: cj / r * (1.0 - 2.0 / r2 + 3.0 / (r2 * r2)),
        m_mu: cm / (s2 * s),
        m_sigma: cm * ((1.0 - 2.0 / s2 + 3.0 / (s2 * s2)) / s - (1.0 - 1.0 / r2).powi(2) / r2),
    })
}

/// The same matrices with `J_σ` lacking the `1/R` factor. Kept only to show
/// that this variant disagrees with direct integration.
pub fn normal_kl_matrices_without_r_factor(sigma: f64, k: f64) -> Result<NormalDiagonal> {
    let (r, _) = kl_ratios(k)?;
    let mut d = normal_kl_matrices(sigma, k)?;
    d.j_sigma *= r;
    Ok(d)
}

/// `(κ_μ², κ_σ²)` for the local likelihood estimator with `h = kσ`.
pub fn normal_kl_variances(sigma: f64, k: f64) -> Result<(f64, f64)> {
    Ok(normal_kl_matrices(sigma, k)?.variances())
}

/// `κ_μ² = σ² (1+1/k²)³ / (1+2/k²)^{3/2}`.
pub fn normal_kl_kappa_mu_sq(sigma: f64, k: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let (r, s) = kl_ratios(k)?;
    Ok(sigma * sigma * r.powi(6) / s.powi(3))
}

/// Maximum likelihood bound `(σ², σ²/2)` for the normal.
pub fn normal_ml_variances(sigma: f64) -> Result<(f64, f64)> {
    check_sigma(sigma)?;
    Ok((sigma * sigma, 0.5 * sigma * sigma))
}
