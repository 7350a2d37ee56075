#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use wustat::distributions::DistributionModel;
use wustat::rng::{self, StreamRng};
use wustat::UStatSpec;

pub type Law = (Vec<f64>, Vec<f64>);

const GRID: [f64; 7] = [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];

pub fn rng_for(tag: u64, case: u64) -> StreamRng {
    rng::stream(tag, &[case])
}

/// Independent discrete laws on a small shared grid, so values tie across
/// coordinates.
pub fn random_laws(r: &mut StreamRng, n: usize, max_support: usize) -> Vec<Law> {
    (0..n)
        .map(|_| {
            let size = r.random_range(1..=max_support);
            let mut support: Vec<f64> = Vec::new();
            while support.len() < size {
                let v = GRID[r.random_range(0..GRID.len())];
                if !support.contains(&v) {
                    support.push(v);
                }
            }
            let raw: Vec<f64> = (0..size).map(|_| r.random_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            (support, raw.iter().map(|p| p / total).collect())
        })
        .collect()
}

pub fn discrete_model(laws: &[Law]) -> DistributionModel {
    DistributionModel::discrete(laws.to_vec()).unwrap()
}

/// A spec with a random weight table over ordered tuples and one of a few
/// asymmetric kernels with random coefficients.
pub fn random_spec(r: &mut StreamRng, n: usize, m: usize) -> UStatSpec {
    let table: Arc<Vec<f64>> = Arc::new(
        (0..n.pow(m as u32))
            .map(|_| if r.random_bool(0.2) { 0.0 } else { r.random_range(-1.0..2.0) })
            .collect(),
    );
    let c: [f64; 3] = [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(0.5..2.0)];
    let family = r.random_range(0..3);
    let weight = move |idx: &[usize], n: usize| {
        let k = idx.iter().fold(0, |acc, &i| acc * n + (i - 1));
        table[k]
    };
    let kernel = move |xs: &[f64]| match family {
        0 => c[0] * f64::from(u8::from(xs[1] > xs[0])) + c[1] * xs[0] * xs[xs.len() - 1],
        1 => (c[2] * xs.iter().enumerate().map(|(k, x)| (k + 1) as f64 * x).sum::<f64>()).sin() + c[1] * xs[0] * xs[0],
        _ => c[0] * xs.iter().cloned().fold(f64::MIN, f64::max) - c[1] * (xs[0] - xs[1]).abs(),
    };
    UStatSpec::new(format!("random-{family}"), m, weight, kernel).unwrap()
}

/// All ordered tuples of distinct 1-based indices.
pub fn ordered_tuples(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(n: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in 1..=n {
            if !cur.contains(&i) {
                cur.push(i);
                rec(n, m, cur, out);
                cur.pop();
            }
        }
    }
    rec(n, m, &mut cur, &mut out);
    out
}

/// Direct evaluation of `(n-m)!/n! Σ a(t) h(x_t)`.
pub fn naive_u(spec: &UStatSpec, xs: &[f64]) -> f64 {
    let n = xs.len();
    let m = spec.degree();
    let tuples = ordered_tuples(n, m);
    let mut total = 0.0;
    for t in &tuples {
        let args: Vec<f64> = t.iter().map(|&i| xs[i - 1]).collect();
        total += spec.weight(t, n) * spec.kernel(&args);
    }
    total / tuples.len() as f64
}

/// Every point of the product support with its probability.
pub fn joint_support(laws: &[Law]) -> Vec<(Vec<f64>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for (support, probs) in laws {
        let mut next = Vec::with_capacity(out.len() * support.len());
        for (xs, p) in &out {
            for (v, q) in support.iter().zip(probs) {
                let mut ys = xs.clone();
                ys.push(*v);
                next.push((ys, p * q));
            }
        }
        out = next;
    }
    out
}

pub fn random_sample(r: &mut StreamRng, n: usize, levels: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(0..levels) as f64).collect()
}
