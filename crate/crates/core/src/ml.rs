//! Maximum-likelihood baselines for the normal models.

use nalgebra::{DMatrix, DVector};

use crate::asymptotics::sandwich;
use crate::error::{ensure_finite, Error, Result};
use crate::fit::FitResult;
use crate::minl2::empirical_covariance;
use crate::model::{normal_score, normal_score_deriv, MvnParams, NormalParams};

/// Sample mean and the `1/n` standard deviation, with the plug-in sandwich
/// built from the observed information and the empirical score covariance.
pub fn fit_ml_normal(data: &[f64]) -> Result<FitResult> {
    if data.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 observations, got {}",
            data.len()
        )));
    }
    ensure_finite("data", data)?;
    let n = data.len() as f64;
    let mu = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::DegenerateData("all observations are equal".into()));
    }
    let params = NormalParams::new(mu, var.sqrt())?;
    let mut j = DMatrix::zeros(2, 2);
    let mut scores = Vec::with_capacity(data.len());
    for &x in data {
        let d = normal_score_deriv(x, params)?;
        for a in 0..2 {
            for b in 0..2 {
                j[(a, b)] -= d[a][b] / n;
            }
        }
        scores.push(DVector::from_row_slice(&normal_score(x, params)?));
    }
    let sandwich = sandwich(&j, &empirical_covariance(&scores)).ok();
    Ok(FitResult {
        theta: params.to_vec(),
        iterations: 0,
        converged: true,
        score_norm: 0.0,
        n: data.len(),
        sandwich,
    })
}

/// Sample mean and the `1/n` sample covariance.
pub fn fit_ml_mvn(data: &[Vec<f64>]) -> Result<MvnParams> {
    let p = data
        .first()
        .map(|x| x.len())
        .ok_or_else(|| Error::InvalidInput("data must be non-empty".into()))?;
    if p == 0 {
        return Err(Error::InvalidInput("observations must have at least one coordinate".into()));
    }
    let n = data.len();
    if n <= p {
        return Err(Error::InvalidInput(format!("need more than {p} observations, got {n}")));
    }
    let mut mean = DVector::zeros(p);
    for x in data {
        if x.len() != p {
            return Err(Error::DimensionMismatch { expected: p, found: x.len() });
        }
        ensure_finite("data", x)?;
        mean += DVector::from_column_slice(x);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(p, p);
    for x in data {
        let r = DVector::from_column_slice(x) - &mean;
        cov += &r * r.transpose();
    }
    cov /= n as f64;
    MvnParams::from_covariance(mean, &cov)
        .map_err(|_| Error::DegenerateData("sample covariance is not positive definite".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_example() {
        let fit = fit_ml_normal(&[0.0, 1.0, -1.0]).unwrap();
        assert!(fit.theta[0].abs() < 1e-15);
        assert!((fit.theta[1] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sandwich_is_finite_and_positive() {
        let data: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64 / 10.0).collect();
        let s = fit_ml_normal(&data).unwrap().sandwich.unwrap();
        assert!(s[(0, 0)] > 0.0 && s[(1, 1)] > 0.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(fit_ml_normal(&[1.0]).is_err());
        assert!(matches!(fit_ml_normal(&[2.0, 2.0, 2.0]), Err(Error::DegenerateData(_))));
        assert!(fit_ml_mvn(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).is_err());
    }

    #[test]
    fn mvn_moments() {
        let rows = vec![vec![0.0, 1.0], vec![2.0, 0.0], vec![1.0, 3.0], vec![-1.0, 0.0]];
        let p = fit_ml_mvn(&rows).unwrap();
        assert!((p.mu()[0] - 0.5).abs() < 1e-15 && (p.mu()[1] - 1.0).abs() < 1e-15);
        let c = p.covariance();
        assert!((c[(0, 0)] - 1.25).abs() < 1e-12);
        assert!((c[(0, 1)] - 0.25).abs() < 1e-12);
    }
}
