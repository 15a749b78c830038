use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stopping and damping rules for [`newton_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Convergence threshold on `‖g(θ)‖∞`.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Step shrink factor used by the backtracking line search.
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 200,
            damping: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) || self.max_iter == 0 || !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::InvalidInput(format!("invalid solver configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub theta: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖g‖∞` at the returned point.
    pub residual: f64,
}

const MAX_HALVINGS: usize = 60;

/// Damped Newton iteration for `g(θ) = 0`.
///
/// Each step is shrunk by `cfg.damping` until `‖g‖₂` decreases. When the
/// Jacobian is singular, or the Newton direction cannot reduce `‖g‖`, a
/// steepest-descent step on `½‖g‖²` is tried instead. Evaluation errors at
/// trial points count as a failed trial; at the starting point they are
/// returned to the caller.
pub fn newton_solve<G, J>(mut g: G, mut jac: J, init: &[f64], cfg: &SolverConfig) -> Result<NewtonOutcome>
where
    G: FnMut(&[f64]) -> Result<DVector<f64>>,
    J: FnMut(&[f64]) -> Result<DMatrix<f64>>,
{
    cfg.validate()?;
    let mut theta = DVector::from_column_slice(init);
    let mut gv = g(theta.as_slice())?;
    if gv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver {
            message: "non-finite residual at the starting point".into(),
            last_iterate: theta.as_slice().to_vec(),
        });
    }
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        if gv.amax() < cfg.grad_tol {
            return Ok(NewtonOutcome {
                residual: gv.amax(),
                theta,
                iterations,
                converged: true,
            });
        }
        let jm = jac(theta.as_slice())?;
        let descent = -(jm.transpose() * &gv);
        let newton = jm
            .clone()
            .lu()
            .solve(&(-&gv))
            .filter(|d| d.iter().all(|v| v.is_finite()));

        let mut accepted = None;
        for dir in newton.iter().chain(std::iter::once(&descent)) {
            if let Some(step) = line_search(&mut g, &theta, dir, &gv, cfg.damping) {
                accepted = Some(step);
                break;
            }
        }
        iterations += 1;
        match accepted {
            Some((t, v)) => {
                theta = t;
                gv = v;
            }
            None if newton.is_none() && descent.amax() <= f64::EPSILON * gv.amax() => {
                return Err(Error::Solver {
                    message: "Jacobian is singular and no descent direction exists".into(),
                    last_iterate: theta.as_slice().to_vec(),
                });
            }
            None => break,
        }
    }
    Ok(NewtonOutcome {
        residual: gv.amax(),
        converged: gv.amax() < cfg.grad_tol,
        theta,
        iterations,
    })
}

fn line_search<G>(
    g: &mut G,
    theta: &DVector<f64>,
    dir: &DVector<f64>,
    current: &DVector<f64>,
    damping: f64,
) -> Option<(DVector<f64>, DVector<f64>)>
where
    G: FnMut(&[f64]) -> Result<DVector<f64>>,
{
    let base = current.norm();
    let mut alpha = 1.0;
    for _ in 0..MAX_HALVINGS {
        let trial = theta + dir * alpha;
        if let Ok(v) = g(trial.as_slice()) {
            if v.iter().all(|x| x.is_finite()) && v.norm() < base {
                return Some((trial, v));
            }
        }
        alpha *= damping;
    }
    None
}
