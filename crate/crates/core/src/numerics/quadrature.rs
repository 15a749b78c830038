//! Integration over the real line.
//!
//! Every integrand in this crate is a smooth function times a product of
//! Gaussian-shaped factors such as densities and kernels. The
//! caller describes that envelope through a [`ScaleHint`]; Gauss–Hermite
//! nodes are placed on it, and the adaptive rule truncates the real line to
//! `center ± radius · spread`.

use std::collections::{BinaryHeap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::hermite::GaussHermite;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A factor proportional to `exp{−½ · precision · (x − center)²}`.
///
/// Negative precision describes a growing factor such as the exponential
/// weight `exp{½ δ (x − μ̃)² / σ̃²}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFactor {
    pub center: f64,
    pub precision: f64,
}

impl GaussianFactor {
    pub fn new(center: f64, precision: f64) -> Self {
        Self { center, precision }
    }

    /// The factor raised to a power.
    pub fn pow(self, k: f64) -> Self {
        Self::new(self.center, self.precision * k)
    }
}

/// Location and width of the Gaussian envelope of an integrand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleHint {
    pub center: f64,
    pub spread: f64,
}

impl ScaleHint {
    pub fn new(center: f64, spread: f64) -> Self {
        Self { center, spread }
    }

    /// Envelope of a product of Gaussian factors. Fails when the product does
    /// not decay, i.e. the integral over the real line diverges.
    pub fn from_factors(factors: &[GaussianFactor]) -> Result<Self> {
        let precision: f64 = factors.iter().map(|f| f.precision).sum();
        if !(precision > 0.0) || !precision.is_finite() {
            return Err(Error::DivergentIntegral(format!(
                "integrand envelope has non-positive precision {precision}"
            )));
        }
        let center = factors
            .iter()
            .map(|f| f.precision * f.center)
            .sum::<f64>()
            / precision;
        Ok(Self::new(center, precision.sqrt().recip()))
    }
}

/// Choice of quadrature rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum QuadratureSpec {
    GaussHermite {
        node_count: usize,
    },
    AdaptiveTruncated {
        abs_tol: f64,
        rel_tol: f64,
        truncation_radius: f64,
    },
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec::GaussHermite { node_count: 80 }
    }
}

impl QuadratureSpec {
    pub fn gauss_hermite(node_count: usize) -> Self {
        QuadratureSpec::GaussHermite { node_count }
    }

    pub fn adaptive() -> Self {
        QuadratureSpec::AdaptiveTruncated {
            abs_tol: 1e-14,
            rel_tol: 1e-10,
            truncation_radius: 12.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            QuadratureSpec::GaussHermite { node_count } if node_count < 20 => Err(
                Error::InvalidInput(format!("Gauss-Hermite needs at least 20 nodes, got {node_count}")),
            ),
            QuadratureSpec::AdaptiveTruncated {
                abs_tol,
                rel_tol,
                truncation_radius,
            } if !(abs_tol > 0.0 && rel_tol > 0.0 && truncation_radius > 0.0) => Err(
                Error::InvalidInput("adaptive quadrature tolerances and radius must be positive".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// Integrates a scalar function over the real line.
pub fn integrate<F>(mut f: F, hint: ScaleHint, spec: QuadratureSpec) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let v = integrate_vec(1, |x| Ok(DVector::from_element(1, f(x))), hint, spec)?;
    Ok(v[0])
}

/// Integrates a vector-valued function over the real line, component-wise.
pub fn integrate_vec<F>(
    dim: usize,
    mut f: F,
    hint: ScaleHint,
    spec: QuadratureSpec,
) -> Result<DVector<f64>>
where
    F: FnMut(f64) -> Result<DVector<f64>>,
{
    spec.validate()?;
    if !(hint.spread > 0.0) || !hint.spread.is_finite() || !hint.center.is_finite() {
        return Err(Error::InvalidInput(format!(
            "invalid quadrature scale hint {hint:?}"
        )));
    }
    let out = match spec {
        QuadratureSpec::GaussHermite { node_count } => {
            let rule = hermite_rule(node_count)?;
            let scale = std::f64::consts::SQRT_2 * hint.spread;
            let mut acc = DVector::zeros(dim);
            for &(t, w) in rule.iter() {
                let v = f(hint.center + scale * t)?;
                check_dim(dim, &v)?;
                acc.axpy(w * scale, &v, 1.0);
            }
            acc
        }
        QuadratureSpec::AdaptiveTruncated {
            abs_tol,
            rel_tol,
            truncation_radius,
        } => {
            let a = hint.center - truncation_radius * hint.spread;
            let b = hint.center + truncation_radius * hint.spread;
            adaptive_gk(dim, &mut f, a, b, abs_tol, rel_tol)?
        }
    };
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::Quadrature {
            message: "integrand produced non-finite values".into(),
            last_estimate: out.as_slice().to_vec(),
        })
    }
}

fn check_dim(dim: usize, v: &DVector<f64>) -> Result<()> {
    if v.len() == dim {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: dim,
            found: v.len(),
        })
    }
}

/// Nodes `t_i` and weights `w_i · exp(t_i²)` so that `∫ g(t) dt ≈ Σ w_i g(t_i)`.
fn hermite_rule(nodes: usize) -> Result<Arc<Vec<(f64, f64)>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<(f64, f64)>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(rule) = guard.get(&nodes) {
        return Ok(Arc::clone(rule));
    }
    let gh = GaussHermite::new(nodes)
        .map_err(|e| Error::InvalidInput(format!("Gauss-Hermite rule: {e}")))?;
    let mut pairs: Vec<(f64, f64)> = gh
        .iter()
        .map(|&(t, w)| (t, w * (t * t).exp()))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let rule = Arc::new(pairs);
    guard.insert(nodes, Arc::clone(&rule));
    Ok(rule)
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

struct Panel {
    a: f64,
    b: f64,
    value: DVector<f64>,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod_panel<F>(dim: usize, f: &mut F, a: f64, b: f64) -> Result<Panel>
where
    F: FnMut(f64) -> Result<DVector<f64>>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    check_dim(dim, &fc)?;
    let mut kron = &fc * WGK[7];
    let mut gauss = &fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let lo = f(c - x)?;
        let hi = f(c + x)?;
        check_dim(dim, &lo)?;
        check_dim(dim, &hi)?;
        let s = lo + hi;
        kron.axpy(WGK[j], &s, 1.0);
        if j % 2 == 1 {
            gauss.axpy(WG[j / 2], &s, 1.0);
        }
    }
    kron *= h;
    gauss *= h;
    let error = (&kron - &gauss).amax();
    Ok(Panel {
        a,
        b,
        value: kron,
        error,
    })
}

fn adaptive_gk<F>(
    dim: usize,
    f: &mut F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<DVector<f64>>
where
    F: FnMut(f64) -> Result<DVector<f64>>,
{
    const MAX_PANELS: usize = 4000;
    // Start from a uniform split so narrow peaks inside the window are seen.
    const INITIAL: usize = 16;
    let width = (b - a) / INITIAL as f64;
    let mut heap = BinaryHeap::new();
    for i in 0..INITIAL {
        let lo = a + width * i as f64;
        heap.push(kronrod_panel(dim, f, lo, lo + width)?);
    }
    let mut total = heap
        .iter()
        .fold(DVector::zeros(dim), |acc: DVector<f64>, p| acc + &p.value);
    let mut err: f64 = heap.iter().map(|p| p.error).sum();
    loop {
        if err <= abs_tol.max(rel_tol * total.amax()) {
            // Re-sum to shed drift from the running updates.
            return Ok(heap
                .iter()
                .fold(DVector::zeros(dim), |acc: DVector<f64>, p| acc + &p.value));
        }
        if heap.len() >= MAX_PANELS {
            return Err(Error::Quadrature {
                message: format!("error estimate {err:e} after {MAX_PANELS} panels"),
                last_estimate: total.as_slice().to_vec(),
            });
        }
        let worst = heap.pop().expect("heap is non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        let left = kronrod_panel(dim, f, worst.a, mid)?;
        let right = kronrod_panel(dim, f, mid, worst.b)?;
        total += &left.value + &right.value - &worst.value;
        err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
}
