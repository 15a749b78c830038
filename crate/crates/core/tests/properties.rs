use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use robustfit::asymptotics::{kl_report, l2_report, normal_kl_variances, normal_l2_variances};
use robustfit::minl2::Weight;
use robustfit::model::std_normal_pdf;
use robustfit::numerics::{mad_scale, GaussianFactor};
use robustfit::robustkl::{criterion_normal, criterion_mvn, localized_kl_distance, MVN_TO_UNIVARIATE_FACTOR};
use robustfit::{
    fit_min_l2, fit_robust_kl, KernelSpec, LocalFitSpec, MvnLocalFitSpec, NormalModel,
    ParametricModel, QuadratureSpec, SolverConfig, WeightFunction,
};

fn sample(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn tight() -> SolverConfig {
    SolverConfig {
        grad_tol: 1e-12,
        ..SolverConfig::default()
    }
}

struct Scaled<W> {
    factor: f64,
    inner: W,
}

impl<W: Weight> Weight for Scaled<W> {
    fn evaluate(&self, x: f64) -> f64 {
        self.factor * self.inner.evaluate(x)
    }

    fn envelope(&self) -> Option<GaussianFactor> {
        self.inner.envelope()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normal_score_matches_finite_differences(x in -8.0..8.0f64, mu in -3.0..3.0f64, ls in -1.5..1.5f64) {
        let theta = [mu, ls.exp()];
        let u = NormalModel.score(&x, &theta).unwrap();
        for k in 0..2 {
            let e = 1e-6 * (1.0 + theta[k].abs());
            let mut tp = theta;
            let mut tm = theta;
            tp[k] += e;
            tm[k] -= e;
            let fd = (NormalModel.log_density(&x, &tp).unwrap() - NormalModel.log_density(&x, &tm).unwrap()) / (2.0 * e);
            prop_assert!((u[k] - fd).abs() <= 1e-5 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn localized_kl_distance_is_nonnegative(
        mu in -2.0..2.0f64, ls in -1.0..1.0f64, mu2 in -2.0..2.0f64, ls2 in -1.0..1.0f64,
        x0 in -2.0..2.0f64, lh in -1.0..1.5f64,
    ) {
        let kern = KernelSpec::normal(lh.exp()).unwrap();
        let s = ls.exp();
        let d = localized_kl_distance(
            |t| std_normal_pdf((t - mu) / s) / s,
            &[mu2, ls2.exp()],
            x0,
            &kern,
            &NormalModel,
            QuadratureSpec::default(),
        )
        .unwrap();
        prop_assert!(d >= -1e-14);
    }

    #[test]
    fn variances_scale_as_sigma_squared(sigma in 0.1..10.0f64, k in 0.3..8.0f64, delta in 0.0..0.95f64) {
        let (a1, b1) = normal_kl_variances(1.0, k).unwrap();
        let (a, b) = normal_kl_variances(sigma, k).unwrap();
        let s2 = sigma * sigma;
        prop_assert!((a - s2 * a1).abs() <= 1e-10 * a && (b - s2 * b1).abs() <= 1e-10 * b);
        let (a1, b1) = normal_l2_variances(1.0, Some(delta)).unwrap();
        let (a, b) = normal_l2_variances(sigma, Some(delta)).unwrap();
        prop_assert!((a - s2 * a1).abs() <= 1e-10 * a && (b - s2 * b1).abs() <= 1e-10 * b);
    }

    #[test]
    fn mvn_criterion_reduces_to_univariate(
        mu in -1.0..1.0f64, ls in -0.7..0.7f64, mt in -0.5..0.5f64, lst in -0.5..0.5f64, lh in -1.0..1.5f64, seed in 0u64..1000,
    ) {
        let data = sample(seed, 25);
        let rows: Vec<Vec<f64>> = data.iter().map(|x| vec![*x]).collect();
        let (st, h) = (lst.exp(), lh.exp());
        let loc = MvnLocalFitSpec { h, prelim: Some((DVector::from_element(1, mt), DMatrix::from_element(1, 1, st * st))) }
            .resolve(&rows)
            .unwrap();
        let sigma = ls.exp();
        let a = criterion_mvn(&DVector::from_element(1, mu), &DMatrix::from_element(1, 1, sigma * sigma), &loc, &rows).unwrap();
        let b = criterion_normal(mu, sigma, mt, h * st, &data).unwrap();
        prop_assert!((a - MVN_TO_UNIVARIATE_FACTOR * b).abs() <= 1e-10 * (1.0 + a.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn efficiency_bound_holds(k in 0.2..20.0f64, delta in 0.0..0.95f64) {
        let theta = [0.0, 1.0];
        let quad = QuadratureSpec::default();
        let kl = kl_report(&theta, 0.0, &KernelSpec::normal(k).unwrap(), &NormalModel, quad).unwrap();
        let w = WeightFunction::exp_delta(delta, 0.0, 1.0).unwrap();
        let l2 = l2_report(&theta, &w, &NormalModel, quad).unwrap();
        for s in [kl.sandwich, l2.sandwich] {
            prop_assert!(s[(0, 0)] >= 1.0 - 1e-9 && s[(1, 1)] >= 0.5 - 1e-9);
        }
    }

    #[test]
    fn scaling_the_weight_leaves_the_fit_unchanged(factor in 0.01..100.0f64, seed in 0u64..1000) {
        let data = sample(seed, 200);
        let quad = QuadratureSpec::default();
        let base = fit_min_l2(&data, &NormalModel, &WeightFunction::Constant, None, &tight(), quad).unwrap();
        let scaled = Scaled { factor, inner: WeightFunction::Constant };
        let fit = fit_min_l2(&data, &NormalModel, &scaled, None, &tight(), quad).unwrap();
        prop_assert!((fit.theta[0] - base.theta[0]).abs() < 1e-8);
        prop_assert!((fit.theta[1] - base.theta[1]).abs() < 1e-8);
    }

    #[test]
    fn robust_kl_fit_is_affine_equivariant(a in -10.0..10.0f64, b in prop_oneof![-5.0..-0.2f64, 0.2..5.0f64], seed in 0u64..1000) {
        let data = sample(seed, 150);
        let base = fit_robust_kl(&data, &LocalFitSpec::new(2.0), &tight()).unwrap();
        let mapped: Vec<f64> = data.iter().map(|x| a + b * x).collect();
        let fit = fit_robust_kl(&mapped, &LocalFitSpec::new(2.0), &tight()).unwrap();
        let scale = 1.0 + a.abs() + b.abs();
        prop_assert!((fit.theta[0] - (a + b * base.theta[0])).abs() < 1e-8 * scale);
        prop_assert!((fit.theta[1] - b.abs() * base.theta[1]).abs() < 1e-8 * scale);
    }
}

#[test]
fn flat_kernel_weight_recovers_constant_weight_fit() {
    let data = sample(77, 500);
    let quad = QuadratureSpec::default();
    let constant = fit_min_l2(&data, &NormalModel, &WeightFunction::Constant, None, &tight(), quad).unwrap();
    let h = 1e3 * mad_scale(&data).unwrap();
    // A flat kernel is a tiny constant weight; only the fitted value is compared.
    let w = WeightFunction::kernel_local(0.0, KernelSpec::normal(h).unwrap()).unwrap();
    let fit = fit_min_l2(&data, &NormalModel, &w, None, &tight(), quad).unwrap();
    assert!((fit.theta[0] - constant.theta[0]).abs() < 1e-4);
    assert!((fit.theta[1] - constant.theta[1]).abs() < 1e-4);
}
