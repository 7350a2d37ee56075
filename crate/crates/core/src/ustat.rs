//! Weighted U-statistics of arbitrary degree.
//!
//! A statistic of degree `m` on `X_1, …, X_n` is
//!
//! ```text
//! U_n = (n-m)!/n! · Σ a(i_1, …, i_m) · h(X_{i_1}, …, X_{i_m})
//! ```
//!
//! where the sum runs over ordered tuples of distinct indices. Neither the
//! weight `a` nor the kernel `h` needs to be symmetric. Indices handed to weight
//! functions are **1-based**, and weights also receive the sample size `n`
//! since they may depend on it.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_work, Error, Result};
use crate::fenwick::Fenwick;

/// An ordered, finite sample `X_1, …, X_n`. Position carries meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample(Vec<f64>);

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "sample needs at least 2 observations, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite observation at position {}",
                pos + 1
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Sample {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Sample::new(values)
    }
}

/// The two rank statistics with dedicated fast evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankStatKind {
    /// `a(i,j) = 1(j<i)`, `h(x,y) = 1(y>x)`.
    Kendall,
    /// `a(i,j) = n·1(j<i)/(i-1)`, `h(x,y) = 1(y>x)`.
    Ap,
}

impl RankStatKind {
    pub fn name(self) -> &'static str {
        match self {
            RankStatKind::Kendall => "kendall",
            RankStatKind::Ap => "ap",
        }
    }

    /// Weight of the ordered pair `(i, j)` (1-based).
    pub fn weight(self, i: usize, j: usize, n: usize) -> f64 {
        if j >= i {
            return 0.0;
        }
        match self {
            RankStatKind::Kendall => 1.0,
            RankStatKind::Ap => n as f64 / (i - 1) as f64,
        }
    }
}

impl fmt::Display for RankStatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RankStatKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kendall" | "ken" => Ok(RankStatKind::Kendall),
            "ap" => Ok(RankStatKind::Ap),
            other => Err(Error::InvalidInput(format!("unknown statistic '{other}'"))),
        }
    }
}

pub type WeightFn = dyn Fn(&[usize], usize) -> f64 + Send + Sync;
pub type KernelFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Degree, weight and kernel of a weighted U-statistic.
#[derive(Clone)]
pub struct UStatSpec {
    name: String,
    degree: usize,
    weight: Arc<WeightFn>,
    kernel: Arc<KernelFn>,
    rank: Option<RankStatKind>,
    kernel_scale: f64,
}

impl fmt::Debug for UStatSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UStatSpec")
            .field("name", &self.name)
            .field("degree", &self.degree)
            .field("rank", &self.rank)
            .field("kernel_scale", &self.kernel_scale)
            .finish_non_exhaustive()
    }
}

impl UStatSpec {
    /// Builds a spec from arbitrary weight and kernel functions.
    ///
    /// `weight` receives the 1-based index tuple and `n`; `kernel` receives
    /// the `m` observations in tuple order.
    pub fn new<W, K>(name: impl Into<String>, degree: usize, weight: W, kernel: K) -> Result<Self>
    where
        W: Fn(&[usize], usize) -> f64 + Send + Sync + 'static,
        K: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if degree == 0 {
            return Err(Error::InvalidInput("degree must be at least 1".into()));
        }
        Ok(Self {
            name: name.into(),
            degree,
            weight: Arc::new(weight),
            kernel: Arc::new(kernel),
            rank: None,
            kernel_scale: 1.0,
        })
    }

    pub fn rank(kind: RankStatKind) -> Self {
        Self {
            name: kind.name().to_string(),
            degree: 2,
            weight: Arc::new(move |idx: &[usize], n| kind.weight(idx[0], idx[1], n)),
            kernel: Arc::new(|xs: &[f64]| if xs[1] > xs[0] { 1.0 } else { 0.0 }),
            rank: Some(kind),
            kernel_scale: 1.0,
        }
    }

    pub fn kendall() -> Self {
        Self::rank(RankStatKind::Kendall)
    }

    pub fn ap() -> Self {
        Self::rank(RankStatKind::Ap)
    }

    /// Kernel identically equal to `c`, weight identically one.
    pub fn constant(c: f64, degree: usize) -> Self {
        Self {
            name: format!("constant({c})"),
            degree,
            weight: Arc::new(|_: &[usize], _| 1.0),
            kernel: Arc::new(move |_: &[f64]| c),
            rank: None,
            kernel_scale: 1.0,
        }
    }

    /// Same weights, kernel multiplied by `c`. Rank fast paths are kept.
    pub fn with_kernel_scale(&self, c: f64) -> Self {
        let inner = Arc::clone(&self.kernel);
        Self {
            name: format!("{}*{c}", self.name),
            degree: self.degree,
            weight: Arc::clone(&self.weight),
            kernel: Arc::new(move |xs: &[f64]| c * inner(xs)),
            rank: self.rank,
            kernel_scale: self.kernel_scale * c,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn weight(&self, idx: &[usize], n: usize) -> f64 {
        (self.weight)(idx, n)
    }

    #[inline]
    pub fn kernel(&self, xs: &[f64]) -> f64 {
        (self.kernel)(xs)
    }

    pub fn rank_kind(&self) -> Option<RankStatKind> {
        self.rank
    }

    pub fn kernel_scale(&self) -> f64 {
        self.kernel_scale
    }

    /// True when the kernel is exactly `1(y > x)` with a rank weight.
    pub fn is_rank_indicator(&self) -> bool {
        self.rank.is_some() && self.kernel_scale == 1.0
    }
}

/// `n! / (n-m)!`, the number of ordered `m`-tuples of distinct indices.
pub fn ordered_tuple_count(n: usize, m: usize) -> f64 {
    (0..m).map(|k| (n - k) as f64).product()
}

/// Calls `f` on every ordered `m`-tuple of distinct 1-based indices in
/// `1..=n` avoiding `exclude`, in lexicographic order.
pub(crate) fn for_each_ordered_tuple<F: FnMut(&[usize])>(n: usize, m: usize, exclude: &[usize], mut f: F) {
    let mut used = vec![false; n + 1];
    for &e in exclude {
        used[e] = true;
    }
    let mut tuple = Vec::with_capacity(m);
    fn rec<F: FnMut(&[usize])>(n: usize, m: usize, used: &mut [bool], tuple: &mut Vec<usize>, f: &mut F) {
        if tuple.len() == m {
            f(tuple);
            return;
        }
        for i in 1..=n {
            if !used[i] {
                used[i] = true;
                tuple.push(i);
                rec(n, m, used, tuple, f);
                tuple.pop();
                used[i] = false;
            }
        }
    }
    rec(n, m, &mut used, &mut tuple, &mut f);
}

/// Kahan–Babuška accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn total(self) -> f64 {
        self.sum + self.carry
    }
}

/// Evaluates a weighted U-statistic by enumerating all ordered tuples.
///
/// Guarded by `n^m <= 1e8`.
pub fn eval_weighted_ustat(sample: &Sample, spec: &UStatSpec) -> Result<f64> {
    eval_slice(sample.values(), spec)
}

pub(crate) fn eval_slice(xs: &[f64], spec: &UStatSpec) -> Result<f64> {
    let n = xs.len();
    let m = spec.degree();
    if m > n {
        return Err(Error::InvalidInput(format!(
            "degree {m} exceeds sample size {n}"
        )));
    }
    check_work("weighted U-statistic enumeration", (n as f64).powi(m as i32))?;
    let mut acc = Compensated::default();
    let mut args = vec![0.0; m];
    for_each_ordered_tuple(n, m, &[], |idx| {
        let w = spec.weight(idx, n);
        if w != 0.0 {
            for (slot, &i) in args.iter_mut().zip(idx) {
                *slot = xs[i - 1];
            }
            acc.add(w * spec.kernel(&args));
        }
    });
    Ok(acc.total() / ordered_tuple_count(n, m))
}

/// Dense ranks (ties share a rank) and the number of distinct levels.
pub fn dense_ranks(values: &[f64]) -> (Vec<u32>, usize) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u32; values.len()];
    let mut level = 0u32;
    for (k, &idx) in order.iter().enumerate() {
        if k > 0 && values[idx] != values[order[k - 1]] {
            level += 1;
        }
        ranks[idx] = level;
    }
    let levels = if values.is_empty() { 0 } else { level as usize + 1 };
    (ranks, levels)
}

/// Rank statistic evaluated on a rank sequence; `tree` is scratch space.
///
/// For each position `i` the count `c_i = #{j < i : r_j > r_i}` comes from
/// a prefix query, giving `O(n log n)` overall.
pub(crate) fn rank_stat_from_ranks(kind: RankStatKind, ranks: &[u32], levels: usize, tree: &mut Fenwick) -> f64 {
    let n = ranks.len();
    tree.reset(levels);
    let mut total = 0.0;
    let mut discordant = 0u64;
    for (pos, &r) in ranks.iter().enumerate() {
        let not_greater = if pos == 0 { 0 } else { tree.prefix(r as usize) };
        let above = pos as u32 - not_greater;
        match kind {
            RankStatKind::Kendall => discordant += above as u64,
            RankStatKind::Ap => {
                if pos > 0 {
                    total += above as f64 / pos as f64;
                }
            }
        }
        tree.add(r as usize);
    }
    match kind {
        RankStatKind::Kendall => discordant as f64 / (n as f64 * (n as f64 - 1.0)),
        RankStatKind::Ap => total / (n as f64 - 1.0),
    }
}

fn rank_stat(kind: RankStatKind, sample: &Sample) -> f64 {
    let (ranks, levels) = dense_ranks(sample.values());
    let mut tree = Fenwick::new(levels);
    rank_stat_from_ranks(kind, &ranks, levels, &mut tree)
}

/// Kendall statistic `U = (τ + 1)/4`, computed by inversion counting.
pub fn kendall_u(sample: &Sample) -> Result<f64> {
    Ok(rank_stat(RankStatKind::Kendall, sample))
}

/// AP correlation statistic `U = (τ_AP + 1)/2`, computed with a Fenwick tree over prefixes.
pub fn ap_u(sample: &Sample) -> Result<f64> {
    Ok(rank_stat(RankStatKind::Ap, sample))
}

/// Evaluates `spec` on `sample`, using the fast evaluator for rank statistics.
pub fn eval_fast(sample: &Sample, spec: &UStatSpec) -> Result<f64> {
    match spec.rank_kind() {
        Some(kind) => Ok(spec.kernel_scale() * rank_stat(kind, sample)),
        None => eval_weighted_ustat(sample, spec),
    }
}

/// Maps `U` back to the correlation scale: `4u - 1` (Kendall) or `2u - 1` (AP).
pub fn tau_from_u(kind: RankStatKind, u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Range(format!("U = {u} is outside [0, 1]")));
    }
    Ok(match kind {
        RankStatKind::Kendall => 4.0 * u - 1.0,
        RankStatKind::Ap => 2.0 * u - 1.0,
    })
}
