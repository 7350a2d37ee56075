//! Average weights `A_{K,q}(n)`, heterogeneity measures `M_1`, `M_2` and
//! finite-n condition reports.

use serde::{Deserialize, Serialize};

use crate::decomp::DecompContext;
use crate::error::{check_work, Error, Result};
use crate::ustat::{for_each_ordered_tuple, Compensated, UStatSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the number of index families.
    ExactCardinality,
    /// Divide by `n^{q + K(m - q)}`.
    #[default]
    PowerOfN,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub n: usize,
    pub k: usize,
    pub q: usize,
    pub value: f64,
    pub normalization: Normalization,
    /// Unnormalized sum of `|a(t_1) ⋯ a(t_K)|`.
    pub total: f64,
    /// Number of index families `card{(I_n^m)_{≥q}^{⊗K}}`.
    pub cardinality: f64,
}

fn power_of_n(n: usize, m: usize, k: usize, q: usize) -> f64 {
    (n as f64).powi((q + k * (m - q)) as i32)
}

fn check_kq(spec: &UStatSpec, n: usize, k: usize, q: usize) -> Result<()> {
    let m = spec.degree();
    if k < 2 {
        return Err(Error::InvalidInput(format!("K must be at least 2, got {k}")));
    }
    if q > m {
        return Err(Error::InvalidInput(format!("q = {q} exceeds degree {m}")));
    }
    if n < m {
        return Err(Error::InvalidInput(format!("n = {n} is smaller than degree {m}")));
    }
    Ok(())
}

fn summarize(n: usize, m: usize, k: usize, q: usize, total: f64, cardinality: f64, normalization: Normalization) -> WeightSummary {
    let value = match normalization {
        Normalization::PowerOfN => total / power_of_n(n, m, k, q),
        Normalization::ExactCardinality => {
            if cardinality == 0.0 {
                0.0
            } else {
                total / cardinality
            }
        }
    };
    WeightSummary {
        n,
        k,
        q,
        value,
        normalization,
        total,
        cardinality,
    }
}

/// `A_{K,q}(n)`. Degree-2 specs use exact `O(n²)` pair formulas; other
/// degrees enumerate, guarded by `n^{q+K(m-q)} <= 1e8`.
pub fn average_weight(spec: &UStatSpec, n: usize, k: usize, q: usize, normalization: Normalization) -> Result<WeightSummary> {
    check_kq(spec, n, k, q)?;
    if spec.degree() == 2 {
        let (total, card) = pair_sums(spec, n, k, q);
        return Ok(summarize(n, 2, k, q, total, card, normalization));
    }
    average_weight_enumerated(spec, n, k, q, normalization)
}

/// Degree-2 sums. With `T_ij = |a(i,j)| + |a(j,i)|` and `S_i = Σ_j T_ij`:
/// `q = 0` gives `(Σ|a|)^K`, `q = 1` gives `Σ_i S_i^K - Σ_{i<j} T_ij^K`
/// (families on one pair are counted at both of its indices), `q = 2`
/// gives `Σ_{i<j} T_ij^K`.
fn pair_sums(spec: &UStatSpec, n: usize, k: usize, q: usize) -> (f64, f64) {
    let kk = k as i32;
    let mut abs_total = Compensated::default();
    let mut s = vec![0.0; n + 1];
    let mut pair_pow = Compensated::default();
    for i in 1..=n {
        for j in (i + 1)..=n {
            let a_ij = spec.weight(&[i, j], n).abs();
            let a_ji = spec.weight(&[j, i], n).abs();
            let t = a_ij + a_ji;
            abs_total.add(t);
            s[i] += t;
            s[j] += t;
            pair_pow.add(t.powi(kk));
        }
    }
    let nf = n as f64;
    let pairs = nf * (nf - 1.0) / 2.0;
    let two_k = 2f64.powi(kk);
    match q {
        0 => (abs_total.total().powi(kk), (nf * (nf - 1.0)).powi(kk)),
        1 => {
            let mut acc = Compensated::default();
            for &si in &s[1..] {
                acc.add(si.powi(kk));
            }
            acc.add(-pair_pow.total());
            let card = nf * (2.0 * (nf - 1.0)).powi(kk) - pairs * two_k;
            (acc.total(), card)
        }
        _ => (pair_pow.total(), pairs * two_k),
    }
}

/// `A_{K,q}(n)` by enumerating `(I_n^m)_{≥q}^{⊗K}` with pruning on the
/// running intersection, so work is proportional to the cardinality.
pub fn average_weight_enumerated(
    spec: &UStatSpec,
    n: usize,
    k: usize,
    q: usize,
    normalization: Normalization,
) -> Result<WeightSummary> {
    check_kq(spec, n, k, q)?;
    let m = spec.degree();
    check_work("average weight enumeration", power_of_n(n, m, k, q))?;
    let mut state = Enumeration {
        spec,
        n,
        m,
        k,
        q,
        tuple: vec![0; m],
        used: vec![false; n + 1],
        total: Compensated::default(),
        count: 0.0,
    };
    let mut first = Vec::with_capacity(m);
    for_each_ordered_tuple(n, m, &[], |t| first.push(t.to_vec()));
    for t in &first {
        let a = spec.weight(t, n).abs();
        let mut set = t.clone();
        set.sort_unstable();
        state.next_tuple(1, &set, a);
    }
    Ok(summarize(n, m, k, q, state.total.total(), state.count, normalization))
}

struct Enumeration<'a> {
    spec: &'a UStatSpec,
    n: usize,
    m: usize,
    k: usize,
    q: usize,
    tuple: Vec<usize>,
    used: Vec<bool>,
    total: Compensated,
    count: f64,
}

impl Enumeration<'_> {
    /// Chooses tuple number `level` (0-based) given the intersection `set`
    /// of the previous tuples and their weight product.
    fn next_tuple(&mut self, level: usize, set: &[usize], product: f64) {
        if level == self.k {
            self.total.add(product);
            self.count += 1.0;
            return;
        }
        self.fill(level, 0, 0, set, product);
    }

    fn fill(&mut self, level: usize, pos: usize, hits: usize, set: &[usize], product: f64) {
        let (m, q, n) = (self.m, self.q, self.n);
        if pos == m {
            let a = self.spec.weight(&self.tuple, n).abs();
            let next: Vec<usize> = set.iter().copied().filter(|i| self.tuple.contains(i)).collect();
            // Distinctness applies within a tuple only; free the indices for the next one.
            let saved = self.tuple.clone();
            for &i in &saved {
                self.used[i] = false;
            }
            self.next_tuple(level + 1, &next, product * a);
            for &i in &saved {
                self.used[i] = true;
            }
            self.tuple.copy_from_slice(&saved);
            return;
        }
        let needed = q.saturating_sub(hits);
        let forced = needed == m - pos;
        for i in 1..=n {
            if self.used[i] {
                continue;
            }
            let in_set = set.binary_search(&i).is_ok();
            if forced && !in_set {
                continue;
            }
            self.used[i] = true;
            self.tuple[pos] = i;
            self.fill(level, pos + 1, hits + usize::from(in_set), set, product);
            self.used[i] = false;
        }
    }
}

/// Harmonic number `φ(k) = Σ_{j=1}^k 1/j`.
pub fn harmonic(k: usize) -> f64 {
    let mut acc = Compensated::default();
    for j in 1..=k {
        acc.add(1.0 / j as f64);
    }
    acc.total()
}

/// Closed form of `A_{2,2}(n)` for the AP weight (power-of-n normalization):
/// `Σ_{i=2}^n 1/(i-1)`.
pub fn ap_a22_closed_form(n: usize) -> f64 {
    harmonic(n.saturating_sub(1))
}

/// Triple sum of the AP weight-difference products
/// `{1(j<i)/(i-1) - 1(j>i)/(j-1)}{1(k<i)/(i-1) - 1(k>i)/(k-1)}`
/// with `0/0 := 0`; equals `(n-1) + φ(n-1)`.
pub fn sum_weight_identity(n: usize) -> f64 {
    let d = |i: usize, j: usize| -> f64 {
        if j < i {
            1.0 / (i - 1) as f64
        } else if j > i {
            -1.0 / (j - 1) as f64
        } else {
            0.0
        }
    };
    let mut acc = Compensated::default();
    for i in 1..=n {
        let mut row = Compensated::default();
        for j in 1..=n {
            row.add(d(i, j));
        }
        // Σ_j Σ_k d(i,j) d(i,k) = (Σ_j d(i,j))²
        let r = row.total();
        acc.add(r * r);
    }
    acc.total()
}

/// `M_1 = max θ - min θ` over all index tuples.
pub fn m1(ctx: &DecompContext) -> Result<f64> {
    let n = ctx.n();
    let m = ctx.spec().degree();
    check_work("theta scan", (n as f64).powi(m as i32))?;
    let mut tuples = Vec::new();
    for_each_ordered_tuple(n, m, &[], |t| tuples.push(t.to_vec()));
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for t in &tuples {
        let th = ctx.theta(t)?;
        lo = lo.min(th);
        hi = hi.max(th);
    }
    Ok(hi - lo)
}

/// Largest `n` for the `M_2` scan.
pub const M2_MAX_N: usize = 200;

/// `M_2` for degree-2 specs.
///
/// Tuples `r = π_p(c; u)` and `s = π_q(c; w)` share only `c`, and `k = π_p(c; u')`
/// shares only `c` with `s`. Since `h(r)` and `h(s)` are independent given
/// `X_c`, `E h(r) h(s) = E_c[f^(p)_u(X_c) f^(q)_w(X_c)] =: G(u)`, and the
/// maximum of `|G(u) - G(u')|` is `max_u G - min_u G` over `u ∉ {c, w}`.
pub fn m2(ctx: &DecompContext) -> Result<f64> {
    let n = ctx.n();
    if ctx.spec().degree() != 2 {
        return Err(Error::Unsupported(format!(
            "M2 is implemented for degree 2 only (got degree {})",
            ctx.spec().degree()
        )));
    }
    if n > M2_MAX_N {
        return Err(Error::Size {
            what: "M2 scan".into(),
            work: n as f64,
            limit: M2_MAX_N as f64,
        });
    }
    if n < 3 {
        return Ok(0.0);
    }
    let mut best = 0.0f64;
    for c in 1..=n {
        let rule = ctx.model().marginal(c).probability_rule()?;
        // phi[p][u][node] = f^(p+1)_u(x_node)
        let mut phi = vec![vec![Vec::new(); n + 1]; 2];
        for (p, table) in phi.iter_mut().enumerate() {
            for (u, row) in table.iter_mut().enumerate().skip(1) {
                if u == c {
                    continue;
                }
                *row = rule
                    .iter()
                    .map(|&(x, _)| ctx.f_l(p + 1, x, &[u]))
                    .collect::<Result<Vec<f64>>>()?;
            }
        }
        for p in 0..2 {
            for q in 0..2 {
                for w in 1..=n {
                    if w == c {
                        continue;
                    }
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for u in 1..=n {
                        if u == c || u == w {
                            continue;
                        }
                        let mut g = Compensated::default();
                        for (node, &(_, wt)) in rule.iter().enumerate() {
                            g.add(wt * phi[p][u][node] * phi[q][w][node]);
                        }
                        let g = g.total();
                        lo = lo.min(g);
                        hi = hi.max(g);
                    }
                    if hi >= lo {
                        best = best.max(hi - lo);
                    }
                }
            }
        }
    }
    Ok(best)
}

/// `(M_1, M_2)`.
pub fn heterogeneity_measures(ctx: &DecompContext) -> Result<(f64, f64)> {
    Ok((m1(ctx)?, m2(ctx)?))
}

/// Finite-n ingredients of the asymptotic-normality and bootstrap conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    pub n: usize,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "M1")]
    pub m1: f64,
    #[serde(rename = "M2")]
    pub m2: f64,
    #[serde(rename = "A22")]
    pub a22: f64,
    #[serde(rename = "A31")]
    pub a31: f64,
    #[serde(rename = "A21")]
    pub a21: f64,
    #[serde(rename = "V")]
    pub v: f64,
    pub sigma2: f64,
    /// `n⁻² V⁻¹ A_{2,2} M^{1/2}`.
    pub ratio13: f64,
    /// `n⁻² V^{-3/2} A_{3,1} M^{3/4}`.
    pub ratio14: f64,
    /// `n⁻¹ σ⁻² A_{2,1} (M_1² + M_2 + n⁻¹)`.
    pub ratio_boot: f64,
}

/// `max E h⁴` over index tuples; 1 for indicator kernels.
pub fn fourth_moment_bound(ctx: &DecompContext) -> Result<f64> {
    if ctx.spec().is_rank_indicator() {
        return Ok(1.0);
    }
    let n = ctx.n();
    let m = ctx.spec().degree();
    check_work("fourth moment scan", (n as f64).powi(m as i32))?;
    let mut tuples = Vec::new();
    for_each_ordered_tuple(n, m, &[], |t| tuples.push(t.to_vec()));
    let spec = ctx.spec();
    let mut best = 0.0f64;
    for t in &tuples {
        let v = ctx.model().expect(t, &mut |xs| spec.kernel(xs).powi(4), 1e-10)?;
        best = best.max(v);
    }
    Ok(best)
}

/// Assembles the condition ratios at the context's `n`. `sigma2` is the
/// variance used to standardize `U_n` (typically `Var U_n`).
pub fn condition_report(ctx: &DecompContext, sigma2: f64) -> Result<HeterogeneityReport> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidInput(format!("sigma2 must be positive, got {sigma2}")));
    }
    let n = ctx.n();
    let v = ctx.main_term_variance()?;
    // Quadrature noise keeps V slightly above zero for constant kernels.
    if v <= 1e-20 {
        return Err(Error::Degenerate("main-term variance V(n) is zero".into()));
    }
    let spec = ctx.spec();
    let m = fourth_moment_bound(ctx)?;
    let a22 = average_weight(spec, n, 2, 2.min(spec.degree()), Normalization::PowerOfN)?.value;
    let a31 = average_weight(spec, n, 3, 1, Normalization::PowerOfN)?.value;
    let a21 = average_weight(spec, n, 2, 1, Normalization::PowerOfN)?.value;
    let (m1v, m2v) = heterogeneity_measures(ctx)?;
    let nf = n as f64;
    Ok(HeterogeneityReport {
        n,
        m,
        m1: m1v,
        m2: m2v,
        a22,
        a31,
        a21,
        v,
        sigma2,
        ratio13: a22 * m.sqrt() / (nf * nf * v),
        ratio14: a31 * m.powf(0.75) / (nf * nf * v.powf(1.5)),
        ratio_boot: a21 * (m1v * m1v + m2v + 1.0 / nf) / (nf * sigma2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{make_scenario, DistributionModel, Family};
    use crate::normal;

    fn ones(m: usize) -> UStatSpec {
        UStatSpec::new("ones", m, |_: &[usize], _| 1.0, |_: &[f64]| 1.0).unwrap()
    }

    #[test]
    fn examples() {
        let ap = average_weight(&UStatSpec::ap(), 4, 2, 2, Normalization::PowerOfN).unwrap();
        assert!((ap.value - 11.0 / 6.0).abs() < 1e-15);
        let ken = average_weight(&UStatSpec::kendall(), 4, 2, 2, Normalization::PowerOfN).unwrap();
        assert_eq!(ken.value, 3.0 / 8.0);
        let one = average_weight(&ones(2), 4, 2, 2, Normalization::PowerOfN).unwrap();
        assert_eq!(one.value, 1.5);
    }

    #[test]
    fn pair_formulas_match_enumeration() {
        for spec in [UStatSpec::kendall(), UStatSpec::ap(), ones(2)] {
            for n in 2..=7 {
                for (k, q) in [(2, 0), (2, 1), (2, 2), (3, 0), (3, 1), (3, 2), (4, 1)] {
                    let a = average_weight(&spec, n, k, q, Normalization::ExactCardinality).unwrap();
                    let b = average_weight_enumerated(&spec, n, k, q, Normalization::ExactCardinality).unwrap();
                    assert_eq!(a.cardinality, b.cardinality, "card n={n} K={k} q={q}");
                    assert!((a.total - b.total).abs() <= 1e-12 * b.total.max(1.0), "n={n} K={k} q={q}");
                }
            }
        }
    }

    #[test]
    fn normalization_factor() {
        let spec = UStatSpec::new("w3", 3, |t: &[usize], _| (t[0] * t[1]) as f64 / (1 + t[2]) as f64, |_: &[f64]| 1.0).unwrap();
        for (k, q) in [(2, 1), (2, 2), (3, 1)] {
            let a = average_weight(&spec, 5, k, q, Normalization::ExactCardinality).unwrap();
            let b = average_weight(&spec, 5, k, q, Normalization::PowerOfN).unwrap();
            let lhs = a.value * a.cardinality;
            let rhs = b.value * 5f64.powi((q + k * (3 - q)) as i32);
            assert!((lhs - rhs).abs() < 1e-9 * rhs);
        }
    }

    #[test]
    fn ap_closed_form_and_sum_weight() {
        for n in 2..=40 {
            let a = average_weight(&UStatSpec::ap(), n, 2, 2, Normalization::PowerOfN).unwrap();
            assert!((a.value - ap_a22_closed_form(n)).abs() < 1e-12);
        }
        assert_eq!(sum_weight_identity(2), 2.0);
        assert!((sum_weight_identity(4) - 29.0 / 6.0).abs() < 1e-14);
        assert!((sum_weight_identity(10) - 11.828_968_253_968_254).abs() < 1e-12);
    }

    #[test]
    fn heterogeneity_examples() {
        let iid = DecompContext::new(make_scenario(Family::Gaussian, 6, 0.0, 0).unwrap(), UStatSpec::kendall()).unwrap();
        assert_eq!(heterogeneity_measures(&iid).unwrap(), (0.0, 0.0));
        let two = DecompContext::new(DistributionModel::gaussian(&[0.0, 2.0]).unwrap(), UStatSpec::kendall()).unwrap();
        let (m1v, m2v) = heterogeneity_measures(&two).unwrap();
        let want = normal::cdf(2f64.sqrt()) - normal::cdf(-(2f64.sqrt()));
        assert!((m1v - want).abs() < 1e-14);
        assert!((m1v - 0.842_70).abs() < 1e-5);
        assert_eq!(m2v, 0.0);
    }

    #[test]
    fn report_for_iid_kendall() {
        let n = 30;
        let ctx = DecompContext::new(make_scenario(Family::Gaussian, n, 0.0, 0).unwrap(), UStatSpec::kendall()).unwrap();
        let var = (2.0 * n as f64 + 5.0) / (72.0 * n as f64 * (n as f64 - 1.0));
        let r = condition_report(&ctx, var).unwrap();
        assert_eq!(r.m, 1.0);
        assert!(r.ratio13 > 0.0 && r.ratio13.is_finite());
        let v = crate::decomp::iid_kendall_main_term_variance(n);
        assert!((r.v - v).abs() < 1e-9);
        let a22 = (n * (n - 1) / 2) as f64 / (n * n) as f64;
        assert!((r.ratio13 - a22 / ((n * n) as f64 * v)).abs() < 1e-6 * r.ratio13);
        let flat = DecompContext::new(make_scenario(Family::Gaussian, 4, 0.0, 0).unwrap(), UStatSpec::constant(1.0, 2)).unwrap();
        assert!(matches!(condition_report(&flat, 1.0), Err(Error::Degenerate(_))));
    }
}
