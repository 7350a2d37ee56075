//! Composite normality tests: Cramér–von Mises with Stephens' modified
//! statistic and Lilliefors (Kolmogorov–Smirnov with estimated parameters)
//! with the Dallal–Wilkinson p-value approximation.
//!
//! Both published p-value approximations are piecewise and jump upward at
//! some piece boundaries; returned p-values are the running minimum over
//! smaller statistics, so a larger statistic never has a larger p-value.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GofTest {
    Cvm,
    Lilliefors,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub statistic: f64,
    pub p_value: f64,
    pub test: GofTest,
    pub n_obs: usize,
}

pub const CVM_MIN_N: usize = 8;
pub const LILLIEFORS_MIN_N: usize = 5;

/// `Φ` of the standardized order statistics.
fn standardized_cdf(data: &[f64], min_n: usize) -> Result<Vec<f64>> {
    let n = data.len();
    if n < min_n {
        return Err(Error::InvalidInput(format!("need at least {min_n} observations, got {n}")));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("observations must be finite".into()));
    }
    let nf = n as f64;
    let mean = data.iter().sum::<f64>() / nf;
    let var = data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    if !(var > 0.0) {
        return Err(Error::Degenerate("sample has zero variance".into()));
    }
    let sd = var.sqrt();
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted.into_iter().map(|x| normal::cdf((x - mean) / sd)).collect())
}

/// Running minimum of a piecewise-decreasing `raw` at `x`, taking left
/// limits at the given piece boundaries.
fn envelope(raw: impl Fn(f64) -> f64, boundaries: &[f64], x: f64) -> f64 {
    let mut p = raw(x);
    for &b in boundaries {
        if b > 0.0 && b < x {
            p = p.min(raw(b * (1.0 - 1e-12)));
        }
    }
    p.clamp(0.0, 1.0)
}

const CVM_BREAKS: [f64; 4] = [0.0275, 0.051, 0.092, 1.1];

fn cvm_raw_p(ww: f64) -> f64 {
    if ww < CVM_BREAKS[0] {
        1.0 - (-13.953 + 775.5 * ww - 12542.61 * ww * ww).exp()
    } else if ww < CVM_BREAKS[1] {
        1.0 - (-5.903 + 179.546 * ww - 1515.29 * ww * ww).exp()
    } else if ww < CVM_BREAKS[2] {
        (0.886 - 31.62 * ww + 10.897 * ww * ww).exp()
    } else if ww < CVM_BREAKS[3] {
        (1.111 - 34.242 * ww + 12.832 * ww * ww).exp()
    } else {
        7.37e-10
    }
}

/// p-value for the Cramér–von Mises statistic `w` at sample size `n`.
pub fn cvm_p_value(w: f64, n: usize) -> f64 {
    let factor = 1.0 + 0.5 / n as f64;
    envelope(cvm_raw_p, &CVM_BREAKS, w * factor)
}

/// Cramér–von Mises test of composite normality.
pub fn cvm_normality(data: &[f64]) -> Result<GofResult> {
    let p = standardized_cdf(data, CVM_MIN_N)?;
    let w = cvm_statistic(&p);
    Ok(GofResult {
        statistic: w,
        p_value: cvm_p_value(w, data.len()),
        test: GofTest::Cvm,
        n_obs: data.len(),
    })
}

fn cvm_statistic(p: &[f64]) -> f64 {
    let nf = p.len() as f64;
    let mut w = 1.0 / (12.0 * nf);
    for (i, &pi) in p.iter().enumerate() {
        let d = pi - (2.0 * i as f64 + 1.0) / (2.0 * nf);
        w += d * d;
    }
    w
}

fn lilliefors_statistic(p: &[f64]) -> f64 {
    let nf = p.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        let plus = (i as f64 + 1.0) / nf - pi;
        let minus = pi - i as f64 / nf;
        d = d.max(plus).max(minus);
    }
    d
}

fn dallal_wilkinson(d: f64, n: usize) -> f64 {
    let (kd, nd) = if n <= 100 {
        (d, n as f64)
    } else {
        (d * (n as f64 / 100.0).powf(0.49), 100.0)
    };
    (-7.01256 * kd * kd * (nd + 2.78019) + 2.99587 * kd * (nd + 2.78019).sqrt() - 0.122119 + 0.974598 / nd.sqrt()
        + 1.67997 / nd)
        .exp()
}

fn kk_factor(n: usize) -> f64 {
    let r = (n as f64).sqrt();
    r - 0.01 + 0.85 / r
}

fn lilliefors_raw_p(d: f64, n: usize) -> f64 {
    let p = dallal_wilkinson(d, n);
    if p <= 0.1 {
        return p;
    }
    let kk = kk_factor(n) * d;
    let p = if kk <= 0.302 {
        1.0
    } else if kk <= 0.5 {
        2.76773 - 19.828315 * kk + 80.709644 * kk.powi(2) - 138.55152 * kk.powi(3) + 81.218052 * kk.powi(4)
    } else if kk <= 0.9 {
        -4.901232 + 40.662806 * kk - 97.490286 * kk.powi(2) + 94.029866 * kk.powi(3) - 32.355711 * kk.powi(4)
    } else if kk <= 1.31 {
        6.198765 - 19.558097 * kk + 23.186922 * kk.powi(2) - 12.234627 * kk.powi(3) + 2.423045 * kk.powi(4)
    } else {
        0.0
    };
    p.clamp(0.0, 1.0)
}

/// Statistic at which the Dallal–Wilkinson approximation falls to 0.1.
fn dallal_wilkinson_switch(n: usize) -> f64 {
    let (mut lo, mut hi) = (0.25 / kk_factor(n), 1.0);
    if dallal_wilkinson(lo, n) <= 0.1 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dallal_wilkinson(mid, n) > 0.1 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// p-value for the Lilliefors statistic `d` at sample size `n`.
pub fn lilliefors_p_value(d: f64, n: usize) -> f64 {
    let f = kk_factor(n);
    let breaks = [
        0.302 / f,
        0.5 / f,
        0.9 / f,
        1.31 / f,
        dallal_wilkinson_switch(n),
    ];
    envelope(|x| lilliefors_raw_p(x, n), &breaks, d)
}

/// Lilliefors test of composite normality.
pub fn lilliefors(data: &[f64]) -> Result<GofResult> {
    let p = standardized_cdf(data, LILLIEFORS_MIN_N)?;
    let d = lilliefors_statistic(&p);
    Ok(GofResult {
        statistic: d,
        p_value: lilliefors_p_value(d, data.len()),
        test: GofTest::Lilliefors,
        n_obs: data.len(),
    })
}

/// Runs `test` on `data`.
pub fn normality_test(test: GofTest, data: &[f64]) -> Result<GofResult> {
    match test {
        GofTest::Cvm => cvm_normality(data),
        GofTest::Lilliefors => lilliefors(data),
    }
}

/// Monte Carlo p-value from `sims` null samples of the same size drawn
/// from stream `(seed, [k])`: `(1 + #{T_k >= T_obs}) / (sims + 1)`.
pub fn monte_carlo_p_value(test: GofTest, data: &[f64], sims: usize, seed: u64) -> Result<GofResult> {
    let observed = normality_test(test, data)?;
    let n = data.len();
    let exceed: usize = (0..sims as u64)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |buf, k| {
                let mut r = rng::stream(seed, &[k]);
                for x in buf.iter_mut() {
                    *x = r.sample(StandardNormal);
                }
                let p = standardized_cdf(buf, 2).expect("null samples are non-degenerate");
                let t = match test {
                    GofTest::Cvm => cvm_statistic(&p),
                    GofTest::Lilliefors => lilliefors_statistic(&p),
                };
                usize::from(t >= observed.statistic)
            },
        )
        .sum();
    Ok(GofResult {
        p_value: (1 + exceed) as f64 / (sims + 1) as f64,
        ..observed
    })
}

/// Default number of null simulations for [`monte_carlo_p_value`].
pub const MC_P_VALUE_SIMS: usize = 100_000;

#[cfg(test)]
mod tests {
    use super::*;

    fn quantile_data(n: usize) -> Vec<f64> {
        (1..=n).map(|i| normal::quantile((i as f64 - 0.5) / n as f64)).collect()
    }

    #[test]
    fn exact_quantiles_fit() {
        let data = quantile_data(100);
        assert!(cvm_normality(&data).unwrap().p_value > 0.5);
        assert!(lilliefors(&data).unwrap().p_value > 0.5);
    }

    #[test]
    fn exponential_data_rejected() {
        let mut r = rng::stream(4, &[]);
        let data: Vec<f64> = (0..200).map(|_| -(1.0 - r.random::<f64>()).ln()).collect();
        assert!(cvm_normality(&data).unwrap().p_value < 0.01);
        assert!(lilliefors(&data).unwrap().p_value < 0.01);
    }

    #[test]
    fn degenerate_and_short_inputs() {
        assert!(matches!(cvm_normality(&[1.0; 10]), Err(Error::Degenerate(_))));
        assert!(matches!(lilliefors(&[1.0, 2.0, 3.0]), Err(Error::InvalidInput(_))));
        assert!(matches!(cvm_normality(&[1.0, 2.0, 3.0, 4.0, 5.0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn p_values_are_monotone() {
        for n in [10usize, 50, 100, 500] {
            let mut last = f64::INFINITY;
            for k in 0..20_000 {
                let w = k as f64 * 1e-4;
                let p = cvm_p_value(w, n);
                assert!(p <= last && (0.0..=1.0).contains(&p), "cvm n={n} w={w}");
                last = p;
            }
            let mut last = f64::INFINITY;
            for k in 0..20_000 {
                let d = k as f64 * 2.5e-5;
                let p = lilliefors_p_value(d, n);
                assert!(p <= last && (0.0..=1.0).contains(&p), "lilliefors n={n} d={d}");
                last = p;
            }
        }
    }

    #[test]
    fn reference_values() {
        // Reference values computed with the same published formulas.
        assert!((cvm_p_value(0.05 / 1.005, 100) - (1.0 - (-5.903 + 179.546 * 0.05 - 1515.29 * 0.0025f64).exp())).abs() < 1e-12);
        let d = 0.1;
        let want = dallal_wilkinson(d, 100);
        assert!(want < 0.1);
        assert!((lilliefors_p_value(d, 100) - want).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_fallback_agrees_roughly() {
        let mut r = rng::stream(8, &[]);
        let data: Vec<f64> = (0..60).map(|_| r.sample::<f64, _>(StandardNormal) + 0.3 * r.random::<f64>()).collect();
        for test in [GofTest::Cvm, GofTest::Lilliefors] {
            let approx = normality_test(test, &data).unwrap().p_value;
            let mc = monte_carlo_p_value(test, &data, 20_000, 3).unwrap().p_value;
            assert!((approx - mc).abs() < 0.05, "{test:?}: {approx} vs {mc}");
        }
    }
}
