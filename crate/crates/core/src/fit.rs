use nalgebra::DMatrix;

/// Outcome of a fit: the estimate, solver diagnostics and the plug-in
/// sandwich matrix `Ĵ⁻¹M̂Ĵ⁻¹` (the covariance of `√n (θ̂ − θ₀)`).
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm of the estimating equation at `theta`.
    pub score_norm: f64,
    pub n: usize,
    /// `None` when the plug-in `Ĵ` is singular.
    pub sandwich: Option<DMatrix<f64>>,
}

impl FitResult {
    /// `sqrt(diag(sandwich) / n)`.
    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        let s = self.sandwich.as_ref()?;
        let n = self.n as f64;
        Some((0..s.nrows()).map(|i| (s[(i, i)] / n).max(0.0).sqrt()).collect())
    }
}
