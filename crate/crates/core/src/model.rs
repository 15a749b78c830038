//! Parametric density families with analytic scores and score derivatives.
//!
//! A model evaluates `f_θ(x)`, its log, the score `u_θ = ∂ log f_θ / ∂θ`
//! and the matrix of second derivatives `u*_θ`. Two concrete families ship:
//! the univariate normal in `(μ, σ)` and the multivariate normal, whose
//! scatter matrix is carried by a lower-triangular Cholesky factor with
//! log-transformed diagonal so that every real parameter vector is valid.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::numerics::{mad_scale, median, GaussianFactor};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A regular parametric family of densities `f(x, θ)`.
pub trait ParametricModel: Send + Sync {
    /// Observation type (`f64` for univariate families, `[f64]` for vectors).
    type Obs: ?Sized;

    fn param_dim(&self) -> usize;

    fn log_density(&self, x: &Self::Obs, theta: &[f64]) -> Result<f64>;

    fn density(&self, x: &Self::Obs, theta: &[f64]) -> Result<f64> {
        Ok(self.log_density(x, theta)?.exp())
    }

    /// Gradient of the log density with respect to θ.
    fn score(&self, x: &Self::Obs, theta: &[f64]) -> Result<DVector<f64>>;

    /// Jacobian of [`ParametricModel::score`] with respect to θ.
    fn score_deriv(&self, x: &Self::Obs, theta: &[f64]) -> Result<DMatrix<f64>>;
}

/// Extra structure needed to integrate univariate models over the real line.
pub trait UnivariateModel: ParametricModel<Obs = f64> {
    /// Gaussian envelope of `f_θ` (center and precision) used to place quadrature nodes.
    fn envelope(&self, theta: &[f64]) -> Result<GaussianFactor>;

    /// Robust starting value computed from the data.
    fn robust_start(&self, data: &[f64]) -> Result<Vec<f64>>;
}

/// Location and scale of a univariate normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl NormalParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        ensure_finite("normal parameters", &[mu, sigma])?;
        if sigma <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self { mu, sigma })
    }

    pub fn from_slice(theta: &[f64]) -> Result<Self> {
        if theta.len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: theta.len(),
            });
        }
        Self::new(theta[0], theta[1])
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.mu, self.sigma]
    }
}

/// Score `(∂/∂μ, ∂/∂σ)` of the normal log density.
pub fn normal_score(x: f64, params: NormalParams) -> Result<[f64; 2]> {
    ensure_finite("x", &[x])?;
    let NormalParams { mu, sigma } = NormalParams::new(params.mu, params.sigma)?;
    let r = x - mu;
    let s2 = sigma * sigma;
    Ok([r / s2, -1.0 / sigma + r * r / (s2 * sigma)])
}

/// Second derivatives of the normal log density in `(μ, σ)`.
pub fn normal_score_deriv(x: f64, params: NormalParams) -> Result<[[f64; 2]; 2]> {
    ensure_finite("x", &[x])?;
    let NormalParams { mu, sigma } = NormalParams::new(params.mu, params.sigma)?;
    let r = x - mu;
    let s2 = sigma * sigma;
    let mu_sigma = -2.0 * r / (s2 * sigma);
    Ok([
        [-1.0 / s2, mu_sigma],
        [mu_sigma, 1.0 / s2 - 3.0 * r * r / (s2 * s2)],
    ])
}

pub fn normal_log_density(x: f64, params: NormalParams) -> f64 {
    let z = (x - params.mu) / params.sigma;
    -params.sigma.ln() - 0.5 * LN_2PI - 0.5 * z * z
}

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// The univariate normal family with θ = (μ, σ).
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalModel;

impl ParametricModel for NormalModel {
    type Obs = f64;

    fn param_dim(&self) -> usize {
        2
    }

    fn log_density(&self, x: &f64, theta: &[f64]) -> Result<f64> {
        ensure_finite("x", &[*x])?;
        Ok(normal_log_density(*x, NormalParams::from_slice(theta)?))
    }

    fn score(&self, x: &f64, theta: &[f64]) -> Result<DVector<f64>> {
        let s = normal_score(*x, NormalParams::from_slice(theta)?)?;
        Ok(DVector::from_column_slice(&s))
    }

    fn score_deriv(&self, x: &f64, theta: &[f64]) -> Result<DMatrix<f64>> {
        let h = normal_score_deriv(*x, NormalParams::from_slice(theta)?)?;
        Ok(DMatrix::from_row_slice(2, 2, &[h[0][0], h[0][1], h[1][0], h[1][1]]))
    }
}

impl UnivariateModel for NormalModel {
    fn envelope(&self, theta: &[f64]) -> Result<GaussianFactor> {
        let p = NormalParams::from_slice(theta)?;
        Ok(GaussianFactor::new(p.mu, 1.0 / (p.sigma * p.sigma)))
    }

    fn robust_start(&self, data: &[f64]) -> Result<Vec<f64>> {
        let m = median(data)?;
        let s = mad_scale(data)?;
        if s <= 0.0 {
            return Err(Error::DegenerateData(
                "median absolute deviation is zero; cannot form a robust scale".into(),
            ));
        }
        Ok(vec![m, s])
    }
}

/// Mean vector and covariance matrix of a multivariate normal, stored through
/// the lower-triangular Cholesky factor of the covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnParams {
    mu: DVector<f64>,
    chol: DMatrix<f64>,
}

impl MvnParams {
    pub fn from_covariance(mu: DVector<f64>, sigma: &DMatrix<f64>) -> Result<Self> {
        let p = mu.len();
        if sigma.nrows() != p || sigma.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: sigma.nrows(),
            });
        }
        ensure_finite("mean vector", mu.as_slice())?;
        ensure_finite("covariance matrix", sigma.as_slice())?;
        let sym = (sigma + sigma.transpose()) * 0.5;
        if (&sym - sigma).amax() > 1e-10 * sigma.amax().max(1.0) {
            return Err(Error::InvalidInput("covariance matrix is not symmetric".into()));
        }
        let chol = sym
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("covariance matrix is not positive definite".into()))?;
        Self::from_cholesky(mu, chol.l())
    }

    pub fn from_cholesky(mu: DVector<f64>, chol: DMatrix<f64>) -> Result<Self> {
        let p = mu.len();
        if p == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if chol.nrows() != p || chol.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: chol.nrows(),
            });
        }
        if (0..p).any(|i| !(chol[(i, i)] > 0.0)) {
            return Err(Error::InvalidInput(
                "Cholesky factor needs a strictly positive diagonal".into(),
            ));
        }
        let chol = chol.lower_triangle();
        Ok(Self { mu, chol })
    }

    /// Rebuilds the parameters from `(μ, lower-triangular L with log diagonal)`,
    /// the lower triangle being packed row by row.
    pub fn from_unconstrained(p: usize, theta: &[f64]) -> Result<Self> {
        let expected = mvn_param_dim(p);
        if theta.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: theta.len(),
            });
        }
        ensure_finite("parameter vector", theta)?;
        let mu = DVector::from_column_slice(&theta[..p]);
        let mut chol = DMatrix::zeros(p, p);
        for (idx, (i, j)) in lower_indices(p).enumerate() {
            let v = theta[p + idx];
            chol[(i, j)] = if i == j { v.exp() } else { v };
        }
        Ok(Self { mu, chol })
    }

    pub fn to_unconstrained(&self) -> Vec<f64> {
        let p = self.dim();
        let mut out = self.mu.as_slice().to_vec();
        for (i, j) in lower_indices(p) {
            let v = self.chol[(i, j)];
            out.push(if i == j { v.ln() } else { v });
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.chol[(i, i)].ln()).sum::<f64>()
    }
}

/// Number of unconstrained parameters of a `p`-variate normal.
pub fn mvn_param_dim(p: usize) -> usize {
    p + p * (p + 1) / 2
}

/// Row-major enumeration of the lower triangle `(i, j)` with `j <= i`.
pub fn lower_indices(p: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..p).flat_map(|i| (0..=i).map(move |j| (i, j)))
}

/// `−½ log|Σ| − ½ (x−μ)'Σ⁻¹(x−μ) − (p/2) log 2π`, evaluated through the Cholesky factor.
pub fn mvn_log_density(x: &[f64], params: &MvnParams) -> Result<f64> {
    let p = params.dim();
    if x.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: x.len(),
        });
    }
    ensure_finite("x", x)?;
    let r = DVector::from_column_slice(x) - &params.mu;
    let z = solve_lower(&params.chol, &r);
    Ok(-0.5 * params.log_det() - 0.5 * z.norm_squared() - 0.5 * p as f64 * LN_2PI)
}

fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b)
        .expect("Cholesky factor has a positive diagonal")
}

/// The `p`-variate normal family in the unconstrained `(μ, log-Cholesky)` coordinates.
#[derive(Debug, Clone, Copy)]
pub struct MvnModel {
    dim: usize,
}

impl MvnModel {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Raw derivatives with respect to `(μ, L)` plus the chain-rule scaling to `log L_ii`.
    fn derivatives(
        &self,
        x: &[f64],
        theta: &[f64],
        want_hessian: bool,
    ) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let p = self.dim;
        let params = MvnParams::from_unconstrained(p, theta)?;
        if x.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: x.len(),
            });
        }
        ensure_finite("x", x)?;
        let l = params.cholesky();
        let linv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularMatrix { name: "L".into() })?;
        let r = DVector::from_column_slice(x) - params.mu();
        let z = &linv * r;

        // Parameter slots: μ_k for k < p, then L_ij in lower_indices order.
        enum Slot {
            Mu(usize),
            Chol(usize, usize),
        }
        let slots: Vec<Slot> = (0..p)
            .map(Slot::Mu)
            .chain(lower_indices(p).map(|(i, j)| Slot::Chol(i, j)))
            .collect();
        let dim = slots.len();

        let dz: Vec<DVector<f64>> = slots
            .iter()
            .map(|s| match *s {
                Slot::Mu(k) => -linv.column(k).into_owned(),
                Slot::Chol(i, j) => -linv.column(i) * z[j],
            })
            .collect();

        let mut grad_raw = DVector::zeros(dim);
        let mut scale = DVector::from_element(dim, 1.0);
        for (q, slot) in slots.iter().enumerate() {
            grad_raw[q] = -z.dot(&dz[q]);
            if let Slot::Chol(i, j) = *slot {
                if i == j {
                    grad_raw[q] -= 1.0 / l[(i, i)];
                    scale[q] = l[(i, i)];
                }
            }
        }
        let grad = grad_raw.component_mul(&scale);
        if !want_hessian {
            return Ok((grad, None));
        }

        let mut h_raw = DMatrix::zeros(dim, dim);
        for q in 0..dim {
            for r in q..dim {
                // d²z / dq dr contracted with z
                let z_d2z = match (&slots[q], &slots[r]) {
                    (Slot::Mu(_), Slot::Mu(_)) => 0.0,
                    (Slot::Mu(k), Slot::Chol(i, j)) | (Slot::Chol(i, j), Slot::Mu(k)) => {
                        z.dot(&linv.column(*i)) * linv[(*j, *k)]
                    }
                    (Slot::Chol(i, j), Slot::Chol(k, m)) => {
                        z.dot(&linv.column(*k)) * linv[(*m, *i)] * z[*j]
                            + z.dot(&linv.column(*i)) * linv[(*j, *k)] * z[*m]
                    }
                };
                let mut v = -dz[q].dot(&dz[r]) - z_d2z;
                if q == r {
                    if let Slot::Chol(i, j) = slots[q] {
                        if i == j {
                            v += 1.0 / (l[(i, i)] * l[(i, i)]);
                        }
                    }
                }
                h_raw[(q, r)] = v;
                h_raw[(r, q)] = v;
            }
        }
        let mut hess = DMatrix::from_fn(dim, dim, |a, b| scale[a] * h_raw[(a, b)] * scale[b]);
        for q in 0..dim {
            if matches!(slots[q], Slot::Chol(i, j) if i == j) {
                hess[(q, q)] += scale[q] * grad_raw[q];
            }
        }
        Ok((grad, Some(hess)))
    }
}

impl ParametricModel for MvnModel {
    type Obs = [f64];

    fn param_dim(&self) -> usize {
        mvn_param_dim(self.dim)
    }

    fn log_density(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        mvn_log_density(x, &MvnParams::from_unconstrained(self.dim, theta)?)
    }

    fn score(&self, x: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
        Ok(self.derivatives(x, theta, false)?.0)
    }

    fn score_deriv(&self, x: &[f64], theta: &[f64]) -> Result<DMatrix<f64>> {
        let (_, h) = self.derivatives(x, theta, true)?;
        Ok(h.expect("hessian requested"))
    }
}
