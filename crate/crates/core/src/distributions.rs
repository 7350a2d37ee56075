//! Triangular-array data models: independent, non-identically distributed
//! marginals `P_1, …, P_n` from a Gaussian location family, a noncentral-t
//! family, or finite discrete laws.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::normal;
use crate::quadrature::{real_line_rule, Quadrature};
use crate::rng;

/// Tolerance for survival functions computed by quadrature.
pub const SURVIVAL_TOL: f64 = 1e-9;
/// Tolerance for pairwise `θ(i, j)` computed by quadrature.
pub const THETA_TOL: f64 = 1e-8;
/// Panels of the fixed rule behind [`Marginal::probability_rule`].
pub const RULE_PANELS: usize = 64;
/// Tolerance for one-coordinate expectations.
pub const EXPECT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    GaussianLocation,
    TLocation,
    Discrete,
}

/// Scenario families of the simulation design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    #[serde(alias = "t")]
    T5,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::T5 => "t5",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "t5" | "t" => Ok(Family::T5),
            other => Err(Error::InvalidInput(format!("unknown family '{other}'"))),
        }
    }
}

/// One marginal law `P_i`.
#[derive(Debug, Clone)]
pub enum Marginal {
    Gaussian {
        mean: f64,
        scale: f64,
    },
    /// `scale · (Z + ncp) / sqrt(V / df)` with `V ~ χ²_df`.
    NoncentralT {
        ncp: f64,
        df: f64,
        scale: f64,
        chi2: ChiSquared<f64>,
    },
    /// Finite law with strictly increasing support.
    Discrete {
        support: Vec<f64>,
        probs: Vec<f64>,
    },
}

fn chi2_density(v: f64, df: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let half = 0.5 * df;
    ((half - 1.0) * v.ln() - 0.5 * v - half * std::f64::consts::LN_2 - ln_gamma(half)).exp()
}

/// `E g(s)` with `s = sqrt(V/df)`, `V ~ χ²_df`, where `g` varies on the scale
/// `s ~ 1/|z|`. For large `|z|` the integral runs over `y = |z| s` so the
/// quadrature sees the narrow region near `s = 0`.
fn chi_mixture<G: Fn(f64) -> f64>(z: f64, df: f64, g: G) -> Result<f64> {
    let q = Quadrature::with_tol(SURVIVAL_TOL);
    let a = z.abs();
    let est = if a <= 1.0 {
        q.integrate_upper(|v| g((v / df).sqrt()) * chi2_density(v, df), 0.0)?
    } else {
        q.integrate_upper(
            |y| {
                let s = y / a;
                g(s) * chi2_density(df * s * s, df) * 2.0 * df * s / a
            },
            0.0,
        )?
    };
    Ok(est.value)
}

impl Marginal {
    pub fn gaussian(mean: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !mean.is_finite() || !scale.is_finite() {
            return Err(Error::InvalidInput(format!(
                "Gaussian marginal needs finite mean and positive scale (got {mean}, {scale})"
            )));
        }
        Ok(Marginal::Gaussian { mean, scale })
    }

    pub fn noncentral_t(ncp: f64, df: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !(df > 0.0) || !ncp.is_finite() {
            return Err(Error::InvalidInput(format!(
                "noncentral t needs positive df and scale (got df={df}, scale={scale})"
            )));
        }
        let chi2 = ChiSquared::new(df).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(Marginal::NoncentralT { ncp, df, scale, chi2 })
    }

    /// Builds a finite law; support points are sorted and merged.
    pub fn discrete(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::InvalidInput(
                "discrete marginal needs matching, non-empty support and probabilities".into(),
            ));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) || support.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("probabilities must be non-negative and support finite".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("probabilities sum to {total}, not 1")));
        }
        let mut pairs: Vec<(f64, f64)> = support.into_iter().zip(probs).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut probs: Vec<f64> = Vec::with_capacity(pairs.len());
        for (s, p) in pairs {
            if support.last() == Some(&s) {
                *probs.last_mut().unwrap() += p;
            } else {
                support.push(s);
                probs.push(p);
            }
        }
        Ok(Marginal::Discrete { support, probs })
    }

    /// Uniform law on the given points.
    pub fn uniform_on(points: &[f64]) -> Result<Self> {
        let p = 1.0 / points.len() as f64;
        Self::discrete(points.to_vec(), vec![p; points.len()])
    }

    pub fn is_continuous(&self) -> bool {
        !matches!(self, Marginal::Discrete { .. })
    }

    /// `P(X > x)`.
    pub fn survival(&self, x: f64) -> Result<f64> {
        match self {
            Marginal::Gaussian { mean, scale } => Ok(normal::sf((x - mean) / scale)),
            Marginal::NoncentralT { ncp, df, scale, .. } => {
                let z = x / scale;
                Ok(chi_mixture(z, *df, |s| normal::cdf(ncp - z * s))?.clamp(0.0, 1.0))
            }
            Marginal::Discrete { support, probs } => Ok(support
                .iter()
                .zip(probs)
                .filter(|(s, _)| **s > x)
                .map(|(_, p)| p)
                .sum()),
        }
    }

    /// `P(X < x)`.
    pub fn cdf_below(&self, x: f64) -> Result<f64> {
        match self {
            Marginal::Discrete { support, probs } => Ok(support
                .iter()
                .zip(probs)
                .filter(|(s, _)| **s < x)
                .map(|(_, p)| p)
                .sum()),
            _ => Ok(1.0 - self.survival(x)?),
        }
    }

    /// Lebesgue density (continuous families only).
    pub fn density(&self, x: f64) -> Result<f64> {
        match self {
            Marginal::Gaussian { mean, scale } => Ok(normal::pdf((x - mean) / scale) / scale),
            Marginal::NoncentralT { ncp, df, scale, .. } => {
                let z = x / scale;
                Ok(chi_mixture(z, *df, |s| s * normal::pdf(z * s - ncp))?.max(0.0) / scale)
            }
            Marginal::Discrete { .. } => Err(Error::Unsupported("density of a discrete law".into())),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Marginal::Gaussian { mean, .. } => *mean,
            Marginal::NoncentralT { ncp, df, scale, .. } => {
                if *df <= 1.0 {
                    return f64::NAN;
                }
                scale * ncp * (df / 2.0).sqrt() * (ln_gamma((df - 1.0) / 2.0) - ln_gamma(df / 2.0)).exp()
            }
            Marginal::Discrete { support, probs } => support.iter().zip(probs).map(|(s, p)| s * p).sum(),
        }
    }

    pub fn std_dev(&self) -> f64 {
        match self {
            Marginal::Gaussian { scale, .. } => *scale,
            Marginal::NoncentralT { ncp, df, scale, .. } => {
                if *df <= 2.0 {
                    return f64::NAN;
                }
                let m = self.mean() / scale;
                scale * (df * (1.0 + ncp * ncp) / (df - 2.0) - m * m).sqrt()
            }
            Marginal::Discrete { support, probs } => {
                let m = self.mean();
                support
                    .iter()
                    .zip(probs)
                    .map(|(s, p)| p * (s - m) * (s - m))
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }

    /// Location used to centre quadrature maps.
    fn center(&self) -> f64 {
        match self {
            Marginal::Gaussian { mean, .. } => *mean,
            Marginal::NoncentralT { ncp, scale, .. } => ncp * scale,
            Marginal::Discrete { .. } => 0.0,
        }
    }

    /// `E g(X)` by exact summation or quadrature at `tol`.
    pub fn expect<G: FnMut(f64) -> f64>(&self, mut g: G, tol: f64) -> Result<f64> {
        match self {
            Marginal::Gaussian { mean, scale } => {
                let q = Quadrature::with_tol(tol);
                Ok(q.integrate_real_line(|z| g(mean + scale * z) * normal::pdf(z), 0.0)?.value)
            }
            Marginal::NoncentralT { .. } => {
                let q = Quadrature::with_tol(tol);
                let mut failure = None;
                let est = q.integrate_real_line(
                    |x| match self.density(x) {
                        Ok(d) if d > 0.0 => g(x) * d,
                        Ok(_) => 0.0,
                        Err(e) => {
                            failure.get_or_insert(e);
                            0.0
                        }
                    },
                    self.center(),
                )?;
                match failure {
                    Some(e) => Err(e),
                    None => Ok(est.value),
                }
            }
            Marginal::Discrete { support, probs } => Ok(support.iter().zip(probs).map(|(&s, &p)| p * g(s)).sum()),
        }
    }

    /// Nodes and probability weights approximating `P_i`: the support for
    /// discrete laws, a fixed composite rule times the density otherwise.
    pub fn probability_rule(&self) -> Result<Vec<(f64, f64)>> {
        match self {
            Marginal::Discrete { support, probs } => Ok(support.iter().copied().zip(probs.iter().copied()).collect()),
            _ => real_line_rule(self.center(), self.std_dev(), RULE_PANELS)
                .into_iter()
                .map(|(x, w)| Ok((x, w * self.density(x)?)))
                .collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Marginal::Gaussian { mean, scale } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + scale * z
            }
            Marginal::NoncentralT { ncp, df, scale, chi2 } => {
                let z: f64 = rng.sample(StandardNormal);
                let v = chi2.sample(rng);
                scale * (z + ncp) / (v / df).sqrt()
            }
            Marginal::Discrete { support, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (s, p) in support.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *s;
                    }
                }
                *support.last().unwrap()
            }
        }
    }
}

/// Independent marginals `P_1, …, P_n` of one triangular-array row.
#[derive(Debug, Clone)]
pub struct DistributionModel {
    family: ModelFamily,
    marginals: Vec<Marginal>,
}

impl DistributionModel {
    pub fn new(marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.len() < 2 {
            return Err(Error::InvalidInput("a model needs at least 2 marginals".into()));
        }
        let family = match &marginals[0] {
            Marginal::Gaussian { .. } => ModelFamily::GaussianLocation,
            Marginal::NoncentralT { .. } => ModelFamily::TLocation,
            Marginal::Discrete { .. } => ModelFamily::Discrete,
        };
        let consistent = marginals.iter().all(|m| {
            matches!(
                (family, m),
                (ModelFamily::GaussianLocation, Marginal::Gaussian { .. })
                    | (ModelFamily::TLocation, Marginal::NoncentralT { .. })
                    | (ModelFamily::Discrete, Marginal::Discrete { .. })
            )
        });
        if !consistent {
            return Err(Error::InvalidInput("all marginals must belong to one family".into()));
        }
        Ok(Self { family, marginals })
    }

    /// Unit-variance Gaussians with the given means.
    pub fn gaussian(means: &[f64]) -> Result<Self> {
        Self::new(means.iter().map(|&m| Marginal::gaussian(m, 1.0)).collect::<Result<_>>()?)
    }

    pub fn gaussian_with_scales(means: &[f64], scales: &[f64]) -> Result<Self> {
        if means.len() != scales.len() {
            return Err(Error::InvalidInput("means and scales differ in length".into()));
        }
        Self::new(
            means
                .iter()
                .zip(scales)
                .map(|(&m, &s)| Marginal::gaussian(m, s))
                .collect::<Result<_>>()?,
        )
    }

    /// Unit-scale noncentral t laws with the given noncentralities.
    pub fn noncentral_t(ncps: &[f64], df: f64) -> Result<Self> {
        Self::new(ncps.iter().map(|&c| Marginal::noncentral_t(c, df, 1.0)).collect::<Result<_>>()?)
    }

    pub fn discrete(laws: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        Self::new(
            laws.into_iter()
                .map(|(s, p)| Marginal::discrete(s, p))
                .collect::<Result<_>>()?,
        )
    }

    pub fn n(&self) -> usize {
        self.marginals.len()
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn is_continuous(&self) -> bool {
        self.family != ModelFamily::Discrete
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    /// Marginal `P_i`, 1-based.
    pub fn marginal(&self, i: usize) -> &Marginal {
        &self.marginals[i - 1]
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.n() {
            return Err(Error::InvalidInput(format!("index {i} outside 1..={}", self.n())));
        }
        Ok(())
    }

    /// `S_i(x) = P(X_i > x)`, 1-based `i`.
    pub fn survival(&self, i: usize, x: f64) -> Result<f64> {
        self.check_index(i)?;
        self.marginal(i).survival(x)
    }

    /// Draws one row `X_1, …, X_n` into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.marginals.iter().map(|m| m.sample(rng)));
    }

    pub fn sample_row<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n());
        self.sample_into(rng, &mut out);
        out
    }

    /// `E g(X_{i_1}, …, X_{i_k})` under the product measure.
    ///
    /// Exact for discrete models; nested quadrature (at most two
    /// coordinates) for continuous ones.
    pub fn expect(&self, indices: &[usize], g: &mut dyn FnMut(&[f64]) -> f64, tol: f64) -> Result<f64> {
        for &i in indices {
            self.check_index(i)?;
        }
        let mut buf = vec![0.0; indices.len()];
        if self.family == ModelFamily::Discrete {
            return Ok(self.discrete_expect(indices, 0, &mut buf, g));
        }
        match indices.len() {
            0 => Ok(g(&buf)),
            1 => self.marginal(indices[0]).expect(
                |x| {
                    buf[0] = x;
                    g(&buf)
                },
                tol,
            ),
            2 => {
                let inner_law = self.marginal(indices[1]);
                let mut failure = None;
                let value = self.marginal(indices[0]).expect(
                    |x| {
                        let r = inner_law.expect(
                            |y| {
                                let pair = [x, y];
                                g(&pair)
                            },
                            tol * 0.1,
                        );
                        match r {
                            Ok(v) => v,
                            Err(e) => {
                                failure.get_or_insert(e);
                                0.0
                            }
                        }
                    },
                    tol,
                )?;
                match failure {
                    Some(e) => Err(e),
                    None => Ok(value),
                }
            }
            k => Err(Error::Unsupported(format!(
                "continuous expectations over {k} coordinates (at most 2)"
            ))),
        }
    }

    fn discrete_expect(&self, indices: &[usize], depth: usize, buf: &mut [f64], g: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
        if depth == indices.len() {
            return g(buf);
        }
        let Marginal::Discrete { support, probs } = self.marginal(indices[depth]) else {
            unreachable!("discrete model holds discrete marginals")
        };
        let mut acc = 0.0;
        for (&s, &p) in support.iter().zip(probs) {
            buf[depth] = s;
            acc += p * self.discrete_expect(indices, depth + 1, buf, g);
        }
        acc
    }

    /// `θ(i, j) = P(X_j > X_i)`, 1-based, `i != j`.
    pub fn theta_pair(&self, i: usize, j: usize) -> Result<f64> {
        self.check_index(i)?;
        self.check_index(j)?;
        match (self.marginal(i), self.marginal(j)) {
            (Marginal::Gaussian { mean: mi, scale: si }, Marginal::Gaussian { mean: mj, scale: sj }) => {
                Ok(normal::cdf((mj - mi) / (si * si + sj * sj).sqrt()))
            }
            (
                Marginal::NoncentralT { ncp: ci, df: di, scale: si, .. },
                Marginal::NoncentralT { ncp: cj, df: dj, scale: sj, .. },
            ) => {
                // X = scale·(Z + ncp)/s with s = sqrt(V/df); conditioning on both
                // chi-square draws leaves a Gaussian comparison.
                let q = Quadrature::with_tol(THETA_TOL);
                let mut failure = None;
                let outer = q.integrate_upper(
                    |vi| {
                        let fi = chi2_density(vi, *di);
                        if fi == 0.0 {
                            return 0.0;
                        }
                        let ti = (vi / di).sqrt();
                        let inner = Quadrature::with_tol(THETA_TOL * 0.1).integrate_upper(
                            |vj| {
                                let tj = (vj / dj).sqrt();
                                let num = cj * sj * ti - ci * si * tj;
                                let den = ((sj * ti).powi(2) + (si * tj).powi(2)).sqrt();
                                normal::cdf(num / den) * chi2_density(vj, *dj)
                            },
                            0.0,
                        );
                        match inner {
                            Ok(e) => e.value * fi,
                            Err(e) => {
                                failure.get_or_insert(e);
                                0.0
                            }
                        }
                    },
                    0.0,
                )?;
                match failure {
                    Some(e) => Err(e),
                    None => Ok(outer.value.clamp(0.0, 1.0)),
                }
            }
            (Marginal::Discrete { support, probs }, law_j @ Marginal::Discrete { .. }) => {
                let mut acc = 0.0;
                for (&x, &p) in support.iter().zip(probs) {
                    acc += p * law_j.survival(x)?;
                }
                Ok(acc)
            }
            _ => unreachable!("models hold a single family"),
        }
    }

    /// Table of `θ(i, j) = P(X_j > X_i)` for all pairs.
    pub fn pairwise_theta(&self) -> Result<ThetaTable> {
        let n = self.n();
        if n > 5000 {
            return Err(Error::Size {
                what: "pairwise theta table".into(),
                work: (n * n) as f64,
                limit: 5000.0 * 5000.0,
            });
        }
        let mut data = vec![0.0; n * n];
        for i in 1..=n {
            for j in 1..=n {
                let v = if i == j {
                    if self.is_continuous() {
                        0.5
                    } else {
                        self.theta_pair(i, i)?
                    }
                } else if self.is_continuous() && j < i {
                    1.0 - data[(j - 1) * n + (i - 1)]
                } else {
                    self.theta_pair(i, j)?
                };
                data[(i - 1) * n + (j - 1)] = v;
            }
        }
        Ok(ThetaTable { n, data })
    }
}

/// Dense `n × n` table of `θ(i, j)`, indexed 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaTable {
    n: usize,
    data: Vec<f64>,
}

impl ThetaTable {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i - 1) * self.n + (j - 1)]
    }
}

/// Scenario row: parameters equally spaced from `rn` (index 1) down to 0
/// (index n), unit scales; the t family uses 5 degrees of freedom.
pub fn make_scenario(family: Family, n: usize, rn: f64, seed: u64) -> Result<DistributionModel> {
    let _ = seed;
    if n < 2 {
        return Err(Error::InvalidInput(format!("n must be at least 2, got {n}")));
    }
    if !(rn >= 0.0) || !rn.is_finite() {
        return Err(Error::Range(format!("R_n must be a finite non-negative number, got {rn}")));
    }
    let params: Vec<f64> = (0..n)
        .map(|k| rn * (n - 1 - k) as f64 / (n - 1) as f64)
        .collect();
    match family {
        Family::Gaussian => DistributionModel::gaussian(&params),
        Family::T5 => DistributionModel::noncentral_t(&params, 5.0),
    }
}

/// JSON scenario block for a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBlock {
    pub family: Family,
    pub n: usize,
    #[serde(alias = "Rn")]
    pub rn: f64,
    #[serde(default = "default_df")]
    pub df: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_df() -> f64 {
    5.0
}

impl ScenarioBlock {
    pub fn build(&self) -> Result<DistributionModel> {
        match self.family {
            Family::Gaussian => make_scenario(Family::Gaussian, self.n, self.rn, self.seed),
            Family::T5 => {
                let model = make_scenario(Family::T5, self.n, self.rn, self.seed)?;
                if self.df == 5.0 {
                    return Ok(model);
                }
                let ncps: Vec<f64> = model
                    .marginals()
                    .iter()
                    .map(|m| match m {
                        Marginal::NoncentralT { ncp, .. } => *ncp,
                        _ => unreachable!(),
                    })
                    .collect();
                DistributionModel::noncentral_t(&ncps, self.df)
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scenario block serializes")
    }
}

/// Draws a row of `model` from stream `(seed, [row])`.
pub fn sample_row_seeded(model: &DistributionModel, seed: u64, row: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, &[row]);
    model.sample_row(&mut r)
}

/// `ξ(p) = 1(p <= 1) + 2^{p-1} 1(p > 1)`.
pub fn xi(p: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::Range(format!("xi requires p > 0, got {p}")));
    }
    Ok(if p <= 1.0 { 1.0 } else { 2f64.powf(p - 1.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailRegime {
    /// Polynomial envelopes `c1 t^{-b1} <= F(t) <= c2 t^{-b2}`.
    Heavy,
    /// Exponential envelopes `c1 exp(-b1 t^λ) <= F(t) <= c2 exp(-b2 t^λ)`.
    Light,
}

/// Caller-supplied tail constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailParams {
    pub regime: TailRegime,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
    pub t0: f64,
    pub lambda: f64,
    /// Check the lower tail `F_j(-t)` instead of the upper tail `F_j^c(t)`.
    #[serde(default)]
    pub lower_tail: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionMargin {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied_at_n: bool,
}

impl ConditionMargin {
    fn new(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            satisfied_at_n: lhs < rhs,
        }
    }
}

/// Numerical check of the tail envelopes at probe points `t >= t0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub probes: usize,
    pub marginal_violations: usize,
    /// `None` when the law of `X_j - X_i` is not available in closed form.
    pub difference_violations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailDiagnostics {
    pub n: usize,
    pub r_n: f64,
    pub rho_n: f64,
    pub params: TailParams,
    pub k3: f64,
    pub k4: f64,
    pub kendall: ConditionMargin,
    pub ap: ConditionMargin,
    pub envelope: EnvelopeCheck,
}

/// `K_3` and `K_4` of the light-tail condition.
pub fn tail_constants(p: &TailParams) -> Result<(f64, f64)> {
    let inv = 1.0 / p.lambda;
    let xi_inv = xi(inv)?;
    let k4 = xi_inv * (p.b1 / p.b2).powf(inv);
    let log_term = -(p.c1 / (2.0 * p.c2)).ln() / p.b2;
    if log_term < 0.0 {
        return Err(Error::InvalidInput(format!(
            "K3 needs c1 <= 2 c2 (got c1={}, c2={})",
            p.c1, p.c2
        )));
    }
    let k3 = p.t0 + (log_term + p.b1 / p.b2 * p.t0.powf(p.lambda)).powf(inv) + xi_inv * log_term.powf(inv);
    Ok((k3, k4))
}

/// Largest `R_n` allowed by the simplified light-tail rate for Kendall's
/// statistic with unit scales: `[log n / (3 b1 {3 + ξ(λ)(1+K4)^λ})]^{1/λ}`.
pub fn light_tail_rn_threshold(n: usize, b1: f64, lambda: f64, k4: f64) -> Result<f64> {
    let denom = 3.0 * b1 * (3.0 + xi(lambda)? * (1.0 + k4).powf(lambda));
    Ok(((n as f64).ln() / denom).powf(1.0 / lambda))
}

/// `R_n = max_{i≠j} |(μ_i - μ_j)/σ_i|` and `ρ_n = max_{i≠j} σ_i/σ_j`.
pub fn spread_and_scale_ratio(model: &DistributionModel) -> (f64, f64) {
    let mus: Vec<f64> = model.marginals().iter().map(Marginal::mean).collect();
    let sds: Vec<f64> = model.marginals().iter().map(Marginal::std_dev).collect();
    let mut r = 0.0f64;
    let mut rho = 1.0f64;
    for i in 0..mus.len() {
        for j in 0..mus.len() {
            if i != j {
                r = r.max(((mus[i] - mus[j]) / sds[i]).abs());
                rho = rho.max(sds[i] / sds[j]);
            }
        }
    }
    (r, rho)
}

fn envelope(p: &TailParams, t: f64, b: f64) -> f64 {
    match p.regime {
        TailRegime::Heavy => t.powf(-b),
        TailRegime::Light => (-b * t.powf(p.lambda)).exp(),
    }
}

/// Finite-n tail diagnostics for the location-scale model.
pub fn tail_diagnostics(model: &DistributionModel, p: TailParams) -> Result<TailDiagnostics> {
    if !(p.b1 > p.b2 && p.b2 > 0.0) {
        return Err(Error::InvalidInput(format!("need b1 > b2 > 0 (got {}, {})", p.b1, p.b2)));
    }
    if !(p.lambda > 0.0 && p.c1 > 0.0 && p.c2 > 0.0 && p.t0 > 0.0) {
        return Err(Error::InvalidInput("lambda, c1, c2 and t0 must be positive".into()));
    }
    let n = model.n();
    let (r_n, rho_n) = spread_and_scale_ratio(model);
    let (k3, k4) = tail_constants(&p)?;
    let nf = n as f64;
    let (kendall, ap) = match p.regime {
        TailRegime::Heavy => {
            let lhs = r_n.powf((3.0 * p.b1 * p.b2 + p.b1 * p.b1) / p.b2) * rho_n.powf(p.b1);
            let rhs = nf.cbrt();
            (
                ConditionMargin::new(lhs, rhs),
                ConditionMargin::new(lhs, rhs / nf.ln().powi(2)),
            )
        }
        TailRegime::Light => {
            let lhs = 3.0 * p.b1 * r_n.powf(p.lambda)
                + p.b1 * (r_n + k3 * rho_n + k4 * rho_n * r_n).powf(p.lambda);
            let rhs = nf.ln() / 3.0;
            (
                ConditionMargin::new(lhs, rhs),
                ConditionMargin::new(lhs, rhs - 2.0 * nf.ln().ln()),
            )
        }
    };

    let probes: Vec<f64> = (0..=20).map(|k| p.t0 * (1.0 + 0.25 * k as f64)).collect();
    let mut marginal_violations = 0;
    for law in model.marginals() {
        let (mu, sd) = (law.mean(), law.std_dev());
        for &t in &probes {
            let f = if p.lower_tail {
                law.cdf_below(mu - sd * t)?
            } else {
                law.survival(mu + sd * t)?
            };
            if f < p.c1 * envelope(&p, t, p.b1) || f > p.c2 * envelope(&p, t, p.b2) {
                marginal_violations += 1;
            }
        }
    }
    let difference_violations = if model.family() == ModelFamily::GaussianLocation {
        // X_j - X_i is Gaussian, so its standardized survival is Φ^c for every pair.
        let mut v = 0;
        for &t in &probes {
            let f = normal::sf(t);
            if f < p.c1 * envelope(&p, t, p.b1) || f > p.c2 * envelope(&p, t, p.b2) {
                v += 1;
            }
        }
        Some(v * n * (n - 1))
    } else {
        None
    };

    Ok(TailDiagnostics {
        n,
        r_n,
        rho_n,
        params: p,
        k3,
        k4,
        kendall,
        ap,
        envelope: EnvelopeCheck {
            probes: probes.len(),
            marginal_violations,
            difference_violations,
        },
    })
}
