mod common;

use proptest::prelude::*;
use rand::Rng;

use common::*;
use wustat::decomp::DecompContext;
use wustat::distributions::{make_scenario, xi, DistributionModel, Family};
use wustat::gof::{cvm_normality, lilliefors};
use wustat::normal;
use wustat::rng;
use wustat::{eval_fast, eval_weighted_ustat, tau_from_u, RankStatKind, Sample, UStatSpec};

fn sample_strategy(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5i32..5, 2..=max_n).prop_map(|v| v.into_iter().map(f64::from).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kendall_fast_equals_naive(xs in sample_strategy(10)) {
        let s = Sample::new(xs.clone()).unwrap();
        let spec = UStatSpec::kendall();
        prop_assert_eq!(eval_fast(&s, &spec).unwrap(), naive_u(&spec, &xs));
    }

    #[test]
    fn ap_fast_matches_naive(xs in sample_strategy(10)) {
        let s = Sample::new(xs.clone()).unwrap();
        let spec = UStatSpec::ap();
        let fast = eval_fast(&s, &spec).unwrap();
        prop_assert!((fast - naive_u(&spec, &xs)).abs() < 1e-14);
        prop_assert!((fast - eval_weighted_ustat(&s, &spec).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn rank_statistics_invariant_under_increasing_maps(xs in prop::collection::vec(-3.0f64..3.0, 2..40)) {
        let mapped: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0 * x.exp()).collect();
        for kind in [RankStatKind::Kendall, RankStatKind::Ap] {
            let spec = UStatSpec::rank(kind);
            let a = eval_fast(&Sample::new(xs.clone()).unwrap(), &spec).unwrap();
            let b = eval_fast(&Sample::new(mapped.clone()).unwrap(), &spec).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
            let tau = tau_from_u(kind, a).unwrap();
            prop_assert!((-1.0..=1.0).contains(&tau));
        }
    }

    #[test]
    fn kernel_scaling_is_linear(xs in sample_strategy(8), c in -3.0f64..3.0) {
        let s = Sample::new(xs).unwrap();
        for kind in [RankStatKind::Kendall, RankStatKind::Ap] {
            let base = UStatSpec::rank(kind);
            let u = eval_fast(&s, &base).unwrap();
            let scaled = base.with_kernel_scale(c);
            prop_assert!((eval_fast(&s, &scaled).unwrap() - c * u).abs() < 1e-14);
            prop_assert!((eval_weighted_ustat(&s, &scaled).unwrap() - c * u).abs() < 1e-13);
        }
    }

    #[test]
    fn weight_scaling_is_linear(seed in any::<u64>(), c in -3.0f64..3.0) {
        let mut r = rng::stream(seed, &[]);
        let n = r.random_range(3..7);
        let spec = random_spec(&mut r, n, 2);
        let inner = spec.clone();
        let scaled = UStatSpec::new("scaled", 2, move |t: &[usize], n| c * inner.weight(t, n), {
            let k = spec.clone();
            move |xs: &[f64]| k.kernel(xs)
        }).unwrap();
        let xs = random_sample(&mut r, n, 4);
        let s = Sample::new(xs).unwrap();
        let u = eval_weighted_ustat(&s, &spec).unwrap();
        prop_assert!((eval_weighted_ustat(&s, &scaled).unwrap() - c * u).abs() < 1e-12);
    }

    #[test]
    fn gof_statistics_are_affine_invariant(seed in any::<u64>(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let mut r = rng::stream(seed, &[]);
        let xs: Vec<f64> = (0..60).map(|_| r.random::<f64>() + r.random::<f64>()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let (c1, c2) = (cvm_normality(&xs).unwrap(), cvm_normality(&ys).unwrap());
        let (l1, l2) = (lilliefors(&xs).unwrap(), lilliefors(&ys).unwrap());
        prop_assert!((c1.statistic - c2.statistic).abs() < 1e-10);
        prop_assert!((l1.statistic - l2.statistic).abs() < 1e-10);
    }

    #[test]
    fn xi_power_inequality(a in 1e-6f64..100.0, b in 1e-6f64..100.0, p in 0.01f64..6.0) {
        prop_assert!((a + b).powf(p) <= xi(p).unwrap() * (a.powf(p) + b.powf(p)) * (1.0 + 1e-12));
    }

    #[test]
    fn normal_tail_bounds(x in 0.05f64..30.0) {
        let c = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let e = (-x * x / 2.0).exp();
        let sf = normal::sf(x);
        prop_assert!(c * (1.0 / x - 1.0 / x.powi(3)) * e <= sf * (1.0 + 1e-12));
        prop_assert!(sf <= c / x * e * (1.0 + 1e-12));
        prop_assert!((normal::cdf(x) + normal::sf(x) - 1.0).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn theta_pairs_sum_to_one_for_continuous_laws(m1 in -3.0f64..3.0, m2 in -3.0f64..3.0, t in any::<bool>()) {
        let model = if t {
            DistributionModel::noncentral_t(&[m1, m2], 5.0).unwrap()
        } else {
            DistributionModel::gaussian(&[m1, m2]).unwrap()
        };
        let s = model.theta_pair(1, 2).unwrap() + model.theta_pair(2, 1).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-7, "sum {}", s);
    }

    #[test]
    fn h1_is_centred(seed in any::<u64>()) {
        let mut r = rng::stream(seed, &[]);
        let n = r.random_range(2..6);
        let laws = random_laws(&mut r, n, 3);
        let ctx = DecompContext::new(discrete_model(&laws), random_spec(&mut r, n, 2)).unwrap();
        for (i, (support, probs)) in laws.iter().enumerate() {
            let mean: f64 = support.iter().zip(probs).map(|(&x, p)| p * ctx.h1(i + 1, x).unwrap()).sum();
            prop_assert!(mean.abs() < 1e-12);
        }
    }
}

#[test]
fn sampler_agrees_with_survival() {
    for family in [Family::Gaussian, Family::T5] {
        let model = make_scenario(family, 4, 2.0, 0).unwrap();
        let draws = 40_000u64;
        let mut rows = Vec::new();
        for k in 0..draws {
            rows.push(model.sample_row(&mut rng::stream(5, &[k])));
        }
        for i in 1..=4 {
            for &x in &[-1.0, 0.0, 0.7, 2.5] {
                let p = model.survival(i, x).unwrap();
                let freq = rows.iter().filter(|r| r[i - 1] > x).count() as f64 / draws as f64;
                let se = (p * (1.0 - p) / draws as f64).sqrt();
                assert!((freq - p).abs() < 5.0 * se + 1e-9, "{family} i={i} x={x}: {freq} vs {p}");
            }
        }
    }
}

#[test]
fn iid_kendall_mean_and_variance() {
    // Exact moments of Kendall's statistic under i.i.d. continuous data.
    let n = 12;
    let model = make_scenario(Family::Gaussian, n, 0.0, 0).unwrap();
    let ctx = DecompContext::new(model, UStatSpec::kendall()).unwrap();
    assert!((ctx.expected_value().unwrap() - 0.25).abs() < 1e-12);
    let nf = n as f64;
    let v = ctx.main_term_variance().unwrap();
    assert!((v - (nf + 1.0) / (36.0 * nf * (nf - 1.0))).abs() < 1e-9);
    let exact = (2.0 * nf + 5.0) / (72.0 * nf * (nf - 1.0));
    assert!(v < exact);
}
