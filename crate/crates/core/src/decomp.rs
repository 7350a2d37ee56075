//! Hoeffding decomposition of a weighted U-statistic under independent,
//! non-identically distributed observations:
//! `U_n - E U_n = n⁻¹ Σ h_{1,i}(X_i) + U_n(a, h_2)`.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::distributions::{DistributionModel, ThetaTable, EXPECT_TOL};
use crate::error::{check_work, Error, Result};
use crate::ustat::{eval_slice, for_each_ordered_tuple, ordered_tuple_count, Compensated, Sample, UStatSpec};

/// How `h_{1,i}` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum H1Route {
    /// Closed form for degree-2 rank statistics on continuous models,
    /// the generic tuple sum otherwise.
    #[default]
    Auto,
    /// Always the tuple sum over `I_{n-1}^{m-1}(-i)`.
    Generic,
}

/// Model, spec and evaluation settings for decomposition quantities.
#[derive(Debug)]
pub struct DecompContext {
    model: DistributionModel,
    spec: UStatSpec,
    route: H1Route,
    tol: f64,
    thetas: OnceLock<ThetaTable>,
}

/// Per-call cache of `θ` and `f^(l)` values.
#[derive(Default)]
struct Memo {
    theta: HashMap<Vec<usize>, f64>,
    f: HashMap<(usize, Vec<usize>, u64), f64>,
}

impl DecompContext {
    pub fn new(model: DistributionModel, spec: UStatSpec) -> Result<Self> {
        if spec.degree() > model.n() {
            return Err(Error::InvalidInput(format!(
                "degree {} exceeds n = {}",
                spec.degree(),
                model.n()
            )));
        }
        Ok(Self {
            model,
            spec,
            route: H1Route::Auto,
            tol: EXPECT_TOL,
            thetas: OnceLock::new(),
        })
    }

    pub fn with_route(mut self, route: H1Route) -> Self {
        self.route = route;
        self
    }

    /// Absolute tolerance for quadrature expectations.
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn model(&self) -> &DistributionModel {
        &self.model
    }

    pub fn spec(&self) -> &UStatSpec {
        &self.spec
    }

    fn closed_form(&self) -> bool {
        self.route == H1Route::Auto && self.spec.rank_kind().is_some() && self.model.is_continuous()
    }

    fn theta_table(&self) -> Result<&ThetaTable> {
        if let Some(t) = self.thetas.get() {
            return Ok(t);
        }
        let table = self.model.pairwise_theta()?;
        Ok(self.thetas.get_or_init(|| table))
    }

    fn check_indices(&self, indices: &[usize], len: usize) -> Result<()> {
        if indices.len() != len {
            return Err(Error::InvalidInput(format!("expected {len} indices, got {}", indices.len())));
        }
        for (k, &i) in indices.iter().enumerate() {
            if i == 0 || i > self.n() {
                return Err(Error::InvalidInput(format!("index {i} outside 1..={}", self.n())));
            }
            if indices[..k].contains(&i) {
                return Err(Error::InvalidInput(format!("repeated index {i}")));
            }
        }
        Ok(())
    }

    /// `θ(i_1, …, i_m) = E h(X_{i_1}, …, X_{i_m})`.
    pub fn theta(&self, indices: &[usize]) -> Result<f64> {
        self.check_indices(indices, self.spec.degree())?;
        self.theta_unchecked(indices)
    }

    fn theta_unchecked(&self, indices: &[usize]) -> Result<f64> {
        if self.spec.rank_kind().is_some() {
            let (i, j) = (indices[0], indices[1]);
            let v = if self.model.is_continuous() && self.thetas.get().is_some() {
                self.theta_table()?.get(i, j)
            } else {
                self.model.theta_pair(i, j)?
            };
            return Ok(self.spec.kernel_scale() * v);
        }
        let spec = &self.spec;
        self.model.expect(indices, &mut |xs| spec.kernel(xs), self.tol)
    }

    fn theta_memo(&self, indices: &[usize], memo: &mut Memo) -> Result<f64> {
        if let Some(&v) = memo.theta.get(indices) {
            return Ok(v);
        }
        let v = self.theta_unchecked(indices)?;
        memo.theta.insert(indices.to_vec(), v);
        Ok(v)
    }

    /// `f^(l)(x)`: the kernel with `x` inserted at 1-based position `l` and the
    /// other `m-1` arguments integrated over `P_{i_1} × … × P_{i_{m-1}}`.
    pub fn f_l(&self, l: usize, x: f64, others: &[usize]) -> Result<f64> {
        let m = self.spec.degree();
        if l == 0 || l > m {
            return Err(Error::InvalidInput(format!("position {l} outside 1..={m}")));
        }
        self.check_indices(others, m - 1)?;
        self.f_unchecked(l, x, others)
    }

    fn f_unchecked(&self, l: usize, x: f64, others: &[usize]) -> Result<f64> {
        if self.spec.rank_kind().is_some() {
            let law = self.model.marginal(others[0]);
            let v = if l == 1 { law.survival(x)? } else { law.cdf_below(x)? };
            return Ok(self.spec.kernel_scale() * v);
        }
        let spec = &self.spec;
        let m = spec.degree();
        let mut args = vec![0.0; m];
        self.model.expect(
            others,
            &mut |ys| {
                let mut k = 0;
                for (pos, slot) in args.iter_mut().enumerate() {
                    if pos + 1 == l {
                        *slot = x;
                    } else {
                        *slot = ys[k];
                        k += 1;
                    }
                }
                spec.kernel(&args)
            },
            self.tol,
        )
    }

    fn f_memo(&self, l: usize, x: f64, others: &[usize], memo: &mut Memo) -> Result<f64> {
        let key = (l, others.to_vec(), x.to_bits());
        if let Some(&v) = memo.f.get(&key) {
            return Ok(v);
        }
        let v = self.f_unchecked(l, x, others)?;
        memo.f.insert(key, v);
        Ok(v)
    }

    /// First-order projection `h_{1,i}(x)`, 1-based `i`.
    pub fn h1(&self, i: usize, x: f64) -> Result<f64> {
        self.check_indices(&[i], 1)?;
        if self.closed_form() {
            return self.h1_closed(i, x);
        }
        self.h1_generic(i, x, &mut Memo::default())
    }

    /// `(1/(n-1)) Σ_j {a(i,j) - a(j,i)} {S_j(x) - θ(i,j)}`.
    fn h1_closed(&self, i: usize, x: f64) -> Result<f64> {
        let n = self.n();
        let table = self.theta_table()?;
        let mut acc = 0.0;
        for j in 1..=n {
            if j == i {
                continue;
            }
            let w = self.spec.weight(&[i, j], n) - self.spec.weight(&[j, i], n);
            if w != 0.0 {
                acc += w * (self.model.marginal(j).survival(x)? - table.get(i, j));
            }
        }
        Ok(self.spec.kernel_scale() * acc / (n as f64 - 1.0))
    }

    fn h1_generic(&self, i: usize, x: f64, memo: &mut Memo) -> Result<f64> {
        let n = self.n();
        let m = self.spec.degree();
        check_work(
            "generic h1 tuple sum",
            m as f64 * ((n - 1) as f64).powi(m as i32 - 1),
        )?;
        let mut tuples = Vec::new();
        for_each_ordered_tuple(n, m - 1, &[i], |t| tuples.push(t.to_vec()));
        let mut acc = Compensated::default();
        let mut full = vec![0usize; m];
        for t in &tuples {
            for l in 1..=m {
                insert_at(&mut full, l, i, t);
                let a = self.spec.weight(&full, n);
                if a == 0.0 {
                    continue;
                }
                let f = self.f_memo(l, x, t, memo)?;
                let th = self.theta_memo(&full, memo)?;
                acc.add(a * (f - th));
            }
        }
        Ok(acc.total() / ordered_tuple_count(n - 1, m - 1))
    }

    /// `h_{1,i}(x_i)` for every position of `xs`.
    pub fn h1_at(&self, xs: &[f64]) -> Result<Vec<f64>> {
        if xs.len() != self.n() {
            return Err(Error::InvalidInput(format!(
                "expected {} values, got {}",
                self.n(),
                xs.len()
            )));
        }
        if self.closed_form() {
            return xs.iter().enumerate().map(|(k, &x)| self.h1_closed(k + 1, x)).collect();
        }
        let mut memo = Memo::default();
        xs.iter()
            .enumerate()
            .map(|(k, &x)| self.h1_generic(k + 1, x, &mut memo))
            .collect()
    }

    /// Completely degenerate remainder kernel `h_2`.
    pub fn h2(&self, indices: &[usize], xs: &[f64]) -> Result<f64> {
        let m = self.spec.degree();
        self.check_indices(indices, m)?;
        if xs.len() != m {
            return Err(Error::InvalidInput(format!("expected {m} values, got {}", xs.len())));
        }
        self.h2_memo(indices, xs, &mut Memo::default())
    }

    fn h2_memo(&self, indices: &[usize], xs: &[f64], memo: &mut Memo) -> Result<f64> {
        let m = indices.len();
        let mut v = self.spec.kernel(xs);
        let mut rest = Vec::with_capacity(m - 1);
        for l in 1..=m {
            rest.clear();
            rest.extend(indices.iter().enumerate().filter(|(k, _)| k + 1 != l).map(|(_, &i)| i));
            v -= self.f_memo(l, xs[l - 1], &rest, memo)?;
        }
        Ok(v + (m as f64 - 1.0) * self.theta_memo(indices, memo)?)
    }

    /// `E U_n = ((n-m)!/n!) Σ a(i_1..i_m) θ(i_1..i_m)`.
    pub fn expected_value(&self) -> Result<f64> {
        let n = self.n();
        let m = self.spec.degree();
        check_work("expected value enumeration", (n as f64).powi(m as i32))?;
        let mut memo = Memo::default();
        self.expected_value_memo(&mut memo)
    }

    fn expected_value_memo(&self, memo: &mut Memo) -> Result<f64> {
        let n = self.n();
        let m = self.spec.degree();
        let mut tuples = Vec::new();
        for_each_ordered_tuple(n, m, &[], |t| tuples.push(t.to_vec()));
        let mut acc = Compensated::default();
        for t in &tuples {
            let a = self.spec.weight(t, n);
            if a != 0.0 {
                acc.add(a * self.theta_memo(t, memo)?);
            }
        }
        Ok(acc.total() / ordered_tuple_count(n, m))
    }

    /// Remainder statistic `U_n(a, h_2)` on `xs`.
    pub fn remainder(&self, xs: &[f64]) -> Result<f64> {
        self.remainder_memo(xs, &mut Memo::default())
    }

    fn remainder_memo(&self, xs: &[f64], memo: &mut Memo) -> Result<f64> {
        let n = self.n();
        let m = self.spec.degree();
        if xs.len() != n {
            return Err(Error::InvalidInput(format!("expected {n} values, got {}", xs.len())));
        }
        check_work("remainder enumeration", (n as f64).powi(m as i32))?;
        let mut tuples = Vec::new();
        for_each_ordered_tuple(n, m, &[], |t| tuples.push(t.to_vec()));
        let mut acc = Compensated::default();
        let mut args = vec![0.0; m];
        for t in &tuples {
            let a = self.spec.weight(t, n);
            if a == 0.0 {
                continue;
            }
            for (slot, &i) in args.iter_mut().zip(t) {
                *slot = xs[i - 1];
            }
            acc.add(a * self.h2_memo(t, &args, memo)?);
        }
        Ok(acc.total() / ordered_tuple_count(n, m))
    }

    /// `|U_n - E U_n - n⁻¹ Σ h_{1,i}(X_i) - U_n(a, h_2)|` on one sample.
    pub fn decomposition_residual(&self, sample: &Sample) -> Result<f64> {
        let xs = sample.values();
        if xs.len() != self.n() {
            return Err(Error::InvalidInput(format!(
                "sample has {} values, model has {}",
                xs.len(),
                self.n()
            )));
        }
        let mut memo = Memo::default();
        let u = eval_slice(xs, &self.spec)?;
        let eu = self.expected_value_memo(&mut memo)?;
        let main = if self.closed_form() {
            self.h1_at(xs)?.iter().sum::<f64>()
        } else {
            let mut acc = 0.0;
            for (k, &x) in xs.iter().enumerate() {
                acc += self.h1_generic(k + 1, x, &mut memo)?;
            }
            acc
        } / self.n() as f64;
        let rem = self.remainder_memo(xs, &mut memo)?;
        Ok((u - eu - main - rem).abs())
    }

    /// `V(n) = n⁻² Σ_i Var h_{1,i}(X_i)`.
    pub fn main_term_variance(&self) -> Result<f64> {
        let n = self.n();
        let tol = if self.model.is_continuous() { 1e-9 } else { self.tol };
        let mut total = 0.0;
        for i in 1..=n {
            let law = self.model.marginal(i);
            let mut failure = None;
            let mut h = |x: f64| match self.h1(i, x) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            };
            let m2 = law.expect(|x| h(x).powi(2), tol)?;
            let m1 = law.expect(&mut h, tol)?;
            if let Some(e) = failure {
                return Err(e);
            }
            total += m2 - m1 * m1;
        }
        Ok(total.max(0.0) / (n * n) as f64)
    }
}

/// Writes `π_l(i; t)` into `out`: `i` inserted at 1-based position `l`.
fn insert_at(out: &mut [usize], l: usize, i: usize, t: &[usize]) {
    let mut k = 0;
    for (pos, slot) in out.iter_mut().enumerate() {
        if pos + 1 == l {
            *slot = i;
        } else {
            *slot = t[k];
            k += 1;
        }
    }
}

/// `V(n)` of Kendall's statistic under i.i.d. continuous data:
/// `Σ_i (2i-n-1)² / (12 n² (n-1)²) = (n+1) / (36 n (n-1))`.
pub fn iid_kendall_main_term_variance(n: usize) -> f64 {
    let nf = n as f64;
    (nf + 1.0) / (36.0 * nf * (nf - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{make_scenario, Family, Marginal};
    use crate::normal;

    fn gaussian_ctx(means: &[f64], spec: UStatSpec) -> DecompContext {
        DecompContext::new(DistributionModel::gaussian(means).unwrap(), spec).unwrap()
    }

    #[test]
    fn theta_examples() {
        let ctx = gaussian_ctx(&[0.0; 3], UStatSpec::kendall());
        assert_eq!(ctx.theta(&[1, 2]).unwrap(), 0.5);
        let ctx = gaussian_ctx(&[0.0, 2.0], UStatSpec::kendall());
        assert!((ctx.theta(&[1, 2]).unwrap() - normal::cdf(2.0 / 2f64.sqrt())).abs() < 1e-15);
        let d = DistributionModel::discrete(vec![
            (vec![0.0, 1.0], vec![0.5; 2]),
            (vec![0.0, 1.0, 2.0], vec![1.0 / 3.0; 3]),
        ])
        .unwrap();
        let ctx = DecompContext::new(d, UStatSpec::kendall()).unwrap();
        assert!((ctx.theta(&[1, 2]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(ctx.theta(&[1, 1]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn f_l_examples() {
        let ctx = gaussian_ctx(&[0.0, 0.0], UStatSpec::kendall());
        assert_eq!(ctx.f_l(1, 0.0, &[2]).unwrap(), 0.5);
        assert!((ctx.f_l(2, 1.959_964, &[1]).unwrap() - 0.975).abs() < 1e-7);
        let d = DistributionModel::new(vec![
            Marginal::uniform_on(&[0.0]).unwrap(),
            Marginal::uniform_on(&[1.0, 2.0, 3.0]).unwrap(),
        ])
        .unwrap();
        let ctx = DecompContext::new(d, UStatSpec::kendall()).unwrap();
        assert!((ctx.f_l(1, 1.5, &[2]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn h1_iid_closed_form() {
        let n = 7;
        let ctx = gaussian_ctx(&vec![0.3; n], UStatSpec::kendall());
        for x in [-1.0, 0.0, 0.4, 2.0] {
            assert!(ctx.h1(4, x).unwrap().abs() < 1e-15);
            for i in 1..=n {
                let s = normal::sf(x - 0.3);
                let want = (2.0 * i as f64 - n as f64 - 1.0) / (n as f64 - 1.0) * (s - 0.5);
                assert!((ctx.h1(i, x).unwrap() - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn closed_form_matches_generic_route() {
        let model = make_scenario(Family::Gaussian, 5, 1.5, 0).unwrap();
        for spec in [UStatSpec::kendall(), UStatSpec::ap()] {
            let closed = DecompContext::new(model.clone(), spec.clone()).unwrap();
            let generic = DecompContext::new(model.clone(), spec).unwrap().with_route(H1Route::Generic);
            for i in 1..=5 {
                for x in [-0.5, 0.7, 1.9] {
                    let a = closed.h1(i, x).unwrap();
                    let b = generic.h1(i, x).unwrap();
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn h2_examples() {
        let ctx = gaussian_ctx(&[0.0, 0.0], UStatSpec::kendall());
        assert!((ctx.h2(&[1, 2], &[0.0, 0.0]).unwrap() + 0.5).abs() < 1e-15);
        let model = DistributionModel::discrete(vec![(vec![0.0, 1.0], vec![0.3, 0.7]); 3]).unwrap();
        let ctx = DecompContext::new(model, UStatSpec::constant(2.5, 3)).unwrap();
        assert!(ctx.h2(&[3, 1, 2], &[0.0, 1.0, 1.0]).unwrap().abs() < 1e-15);
        assert!(ctx.h1(2, 1.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn residual_gaussian_ap() {
        let model = make_scenario(Family::Gaussian, 6, 2.0, 0).unwrap();
        let ctx = DecompContext::new(model, UStatSpec::ap()).unwrap();
        let s = Sample::new(vec![0.3, 2.2, -0.4, 1.1, 0.9, -1.5]).unwrap();
        assert!(ctx.decomposition_residual(&s).unwrap() < 1e-7);
    }

    #[test]
    fn main_term_variance_iid_kendall() {
        for n in [3usize, 6, 11] {
            let ctx = gaussian_ctx(&vec![0.0; n], UStatSpec::kendall());
            let v = ctx.main_term_variance().unwrap();
            let direct: f64 = (1..=n)
                .map(|i| (2.0 * i as f64 - n as f64 - 1.0).powi(2))
                .sum::<f64>()
                / (12.0 * (n * n) as f64 * ((n - 1) * (n - 1)) as f64);
            assert!((v - direct).abs() < 1e-10, "{v} vs {direct}");
            assert!((direct - iid_kendall_main_term_variance(n)).abs() < 1e-15);
        }
        let ctx = gaussian_ctx(&[0.0; 4], UStatSpec::constant(1.0, 2));
        assert!(ctx.main_term_variance().unwrap() < 1e-20);
    }
}
