//! Linear bandit problem model: arms, the hidden parameter, gaps, direction
//! sets, reward sampling and the two confidence-width formulas.

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, norm2, sub, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// `Normal(0, sigma^2)`.
    #[default]
    Gaussian,
    /// `Uniform(-sigma, sigma)`.
    UniformBounded,
}

/// Default bound on `||theta*||` used by the regularized confidence width.
pub const DEFAULT_THETA_NORM_BOUND: f64 = 2.0;

/// A finite-armed linear bandit with known noise scale.
///
/// The best arm must be unique; construction fails otherwise.
#[derive(Clone, Debug)]
pub struct ProblemInstance<T> {
    arms: Vec<Vec<T>>,
    theta_star: Vec<T>,
    sigma: T,
    noise_model: NoiseModel,
    delta: T,
    max_arm_norm: T,
    theta_norm_bound: T,
    best_arm: usize,
    values: Vec<T>,
}

impl<T: Scalar> ProblemInstance<T> {
    pub fn new(
        arms: Vec<Vec<T>>,
        theta_star: Vec<T>,
        sigma: T,
        noise_model: NoiseModel,
        delta: T,
    ) -> Result<Self> {
        if arms.is_empty() {
            return Err(Error::InvalidInstance("arm set is empty".into()));
        }
        let d = theta_star.len();
        if d == 0 {
            return Err(Error::InvalidInstance(
                "dimension must be at least 1".into(),
            ));
        }
        for (i, a) in arms.iter().enumerate() {
            if a.len() != d {
                return Err(Error::InvalidInstance(format!(
                    "arm {i} has dimension {}, expected {d}",
                    a.len()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInstance(format!(
                    "arm {i} has non-finite entries"
                )));
            }
        }
        for i in 0..arms.len() {
            for j in (i + 1)..arms.len() {
                if arms[i] == arms[j] {
                    return Err(Error::InvalidInstance(format!("arms {i} and {j} coincide")));
                }
            }
        }
        if !(sigma >= T::zero()) {
            return Err(Error::InvalidInstance("sigma must be non-negative".into()));
        }
        if !(delta > T::zero() && delta < T::one()) {
            return Err(Error::InvalidInstance("delta must lie in (0, 1)".into()));
        }
        let values: Vec<T> = arms.iter().map(|a| dot(a, &theta_star)).collect();
        let best_arm = argmax_first(&values);
        if values
            .iter()
            .enumerate()
            .any(|(i, &v)| i != best_arm && !(values[best_arm] - v > T::zero()))
        {
            return Err(Error::InvalidInstance("best arm is not unique".into()));
        }
        let max_arm_norm = arms.iter().map(|a| norm2(a)).fold(T::zero(), T::max);
        let theta_norm_bound = T::lit(DEFAULT_THETA_NORM_BOUND).max(norm2(&theta_star));
        Ok(Self {
            arms,
            theta_star,
            sigma,
            noise_model,
            delta,
            max_arm_norm,
            theta_norm_bound,
            best_arm,
            values,
        })
    }

    /// Overrides the `||theta*||` bound used by the regularized width.
    pub fn with_theta_norm_bound(mut self, bound: T) -> Result<Self> {
        if bound < norm2(&self.theta_star) {
            return Err(Error::InvalidInstance(
                "theta_norm_bound is smaller than ||theta*||".into(),
            ));
        }
        self.theta_norm_bound = bound;
        Ok(self)
    }

    pub fn arms(&self) -> &[Vec<T>] {
        &self.arms
    }

    pub fn arm(&self, i: usize) -> &[T] {
        &self.arms[i]
    }

    pub fn theta_star(&self) -> &[T] {
        &self.theta_star
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn noise_model(&self) -> NoiseModel {
        self.noise_model
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    /// `L = max_x ||x||`.
    pub fn max_arm_norm(&self) -> T {
        self.max_arm_norm
    }

    pub fn theta_norm_bound(&self) -> T {
        self.theta_norm_bound
    }

    /// Index of `x* = argmax_x x^T theta*`.
    pub fn best_arm(&self) -> usize {
        self.best_arm
    }

    /// Expected reward `x_i^T theta*`.
    pub fn value(&self, i: usize) -> T {
        self.values[i]
    }

    /// `(x_i - x_j)^T theta*`.
    pub fn gap(&self, i: usize, j: usize) -> T {
        let d: Vec<T> = sub(&self.arms[i], &self.arms[j]);
        dot(&d, &self.theta_star)
    }

    /// Smallest gap between the best arm and any other arm; `+inf` when `K = 1`.
    pub fn delta_min(&self) -> T {
        (0..self.num_arms())
            .filter(|&j| j != self.best_arm)
            .map(|j| self.gap(self.best_arm, j))
            .fold(T::infinity(), T::min)
    }

    /// `Pi(theta)`: best arm for an arbitrary parameter, lowest index on ties.
    pub fn greedy_arm(&self, theta: &[T]) -> usize {
        let v: Vec<T> = self.arms.iter().map(|a| dot(a, theta)).collect();
        argmax_first(&v)
    }

    /// `Pi(theta)` restricted to a subset of arm indices.
    pub fn greedy_arm_among(&self, theta: &[T], candidates: &[usize]) -> usize {
        let mut best = candidates[0];
        let mut best_v = dot(&self.arms[best], theta);
        for &i in &candidates[1..] {
            let v = dot(&self.arms[i], theta);
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        best
    }
}

/// Index of the first maximum.
pub(crate) fn argmax_first<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the first minimum.
pub(crate) fn argmin_first<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Ordered arm-index pairs `(i, j)`, each standing for `y = x_i - x_j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectionSet {
    pairs: Vec<(usize, usize)>,
    star_only: bool,
}

impl DirectionSet {
    /// All ordered pairs over `arms` in lexicographic order.
    pub fn among(arms: &[usize]) -> Self {
        let mut sorted = arms.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut pairs = Vec::with_capacity(sorted.len() * sorted.len().saturating_sub(1));
        for &i in &sorted {
            for &j in &sorted {
                if i != j {
                    pairs.push((i, j));
                }
            }
        }
        Self {
            pairs,
            star_only: false,
        }
    }

    /// Pairs `(anchor, j)` for every `j != anchor` among `0..k`.
    pub fn anchored(anchor: usize, k: usize) -> Self {
        Self {
            pairs: (0..k)
                .filter(|&j| j != anchor)
                .map(|j| (anchor, j))
                .collect(),
            star_only: true,
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn is_star_only(&self) -> bool {
        self.star_only
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn vectors<T: Scalar>(&self, instance: &ProblemInstance<T>) -> Vec<Vec<T>> {
        self.pairs
            .iter()
            .map(|&(i, j)| sub(instance.arm(i), instance.arm(j)))
            .collect()
    }

    /// One representative per `{y, -y}` pair. Quadratic forms cannot tell the
    /// two apart, so solvers only need these.
    pub fn unsigned_vectors<T: Scalar>(&self, instance: &ProblemInstance<T>) -> Vec<Vec<T>> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for &(i, j) in &self.pairs {
            let key = (i.min(j), i.max(j));
            if seen.insert(key) {
                out.push(sub(instance.arm(i), instance.arm(j)));
            }
        }
        out
    }

    pub fn gaps<T: Scalar>(&self, instance: &ProblemInstance<T>) -> Vec<T> {
        self.pairs
            .iter()
            .map(|&(i, j)| instance.gap(i, j))
            .collect()
    }
}

/// Full direction set `Y` (`star_only = false`) or the set `Y*` anchored at
/// the best arm.
pub fn build_directions<T: Scalar>(instance: &ProblemInstance<T>, star_only: bool) -> DirectionSet {
    let k = instance.num_arms();
    if star_only {
        // Uniqueness of the best arm is enforced by the instance constructor.
        DirectionSet::anchored(instance.best_arm(), k)
    } else {
        DirectionSet::among(&(0..k).collect::<Vec<_>>())
    }
}

/// Seeded reward stream. ChaCha8 keyed by a 64-bit seed.
#[derive(Clone, Debug)]
pub struct RewardSampler {
    rng: ChaCha8Rng,
}

impl RewardSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn noise<T: Scalar>(&mut self, model: NoiseModel, sigma: T) -> T {
        if sigma == T::zero() {
            return T::zero();
        }
        let unit: f64 = match model {
            NoiseModel::Gaussian => StandardNormal.sample(&mut self.rng),
            NoiseModel::UniformBounded => Uniform::new_inclusive(-1.0, 1.0)
                .expect("valid uniform range")
                .sample(&mut self.rng),
        };
        sigma * T::lit(unit)
    }
}

/// `r(x) = x^T theta* + eps`.
pub fn sample_reward<T: Scalar>(
    instance: &ProblemInstance<T>,
    sampler: &mut RewardSampler,
    arm: usize,
) -> T {
    instance.value(arm) + sampler.noise(instance.noise_model(), instance.sigma())
}

/// Constants of the fixed-design and regularized confidence bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceParams<T> {
    pub sigma: T,
    /// `2 sigma sqrt(2)`.
    pub c: T,
    /// `6 / pi^2`.
    pub c_prime: T,
    pub delta: T,
    pub eta: T,
    pub theta_norm_bound: T,
}

impl<T: Scalar> ConfidenceParams<T> {
    pub fn new(sigma: T, delta: T) -> Self {
        Self {
            sigma,
            c: T::lit(2.0) * sigma * T::lit(2.0).sqrt(),
            c_prime: T::lit(6.0 / (PI * PI)),
            delta,
            eta: T::one(),
            theta_norm_bound: T::lit(DEFAULT_THETA_NORM_BOUND),
        }
    }

    pub fn for_instance(instance: &ProblemInstance<T>) -> Self {
        let mut p = Self::new(instance.sigma(), instance.delta());
        p.theta_norm_bound = instance.theta_norm_bound();
        p
    }

    pub fn with_eta(mut self, eta: T) -> Self {
        self.eta = eta;
        self
    }

    /// `log(c' n^2 K^2 / delta)`.
    pub fn log_term(&self, n: u64, k: usize) -> Result<T> {
        let n = T::lit(n as f64);
        let k = T::from_count(k);
        let arg = self.c_prime * n * n * k * k / self.delta;
        if !(arg > T::one()) {
            return Err(Error::LogArgument(arg.to_f64_lossy()));
        }
        Ok(arg.ln())
    }

    /// `c sqrt(log(c' n^2 K^2 / delta))`: the width per unit of `||y||_{A^-1}`.
    pub fn fixed_width_factor(&self, n: u64, k: usize) -> Result<T> {
        Ok(self.c * self.log_term(n, k)?.sqrt())
    }

    /// `sigma sqrt(d log((1 + n L^2 / eta) / delta)) + sqrt(eta) S`.
    pub fn adaptive_width_factor(&self, n: u64, d: usize, max_arm_norm: T) -> Result<T> {
        if !(self.eta > T::zero()) {
            return Err(Error::InvalidArgument(
                "regularizer eta must be positive".into(),
            ));
        }
        let n = T::lit(n as f64);
        let inner = (T::one() + n * max_arm_norm * max_arm_norm / self.eta) / self.delta;
        Ok(self.sigma * (T::from_count(d) * inner.ln()).sqrt()
            + self.eta.sqrt() * self.theta_norm_bound)
    }
}

/// Fixed-sequence confidence width `c ||y||_{A^-1} sqrt(log(c' n^2 K^2/delta))`.
pub fn width_fixed<T: Scalar>(
    params: &ConfidenceParams<T>,
    norm: T,
    n: u64,
    k: usize,
) -> Result<T> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "step count must be at least 1".into(),
        ));
    }
    if !(norm >= T::zero()) {
        return Err(Error::InvalidArgument("norm must be non-negative".into()));
    }
    Ok(norm * params.fixed_width_factor(n, k)?)
}

/// Width valid for adaptive sequences with ridge regularizer `eta`.
pub fn width_adaptive<T: Scalar>(
    params: &ConfidenceParams<T>,
    norm_reg: T,
    n: u64,
    d: usize,
    max_arm_norm: T,
) -> Result<T> {
    Ok(norm_reg * params.adaptive_width_factor(n, d, max_arm_norm)?)
}

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("row {}: '{f}': {e}", line + 1),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Arm-set file: one arm per row, comma separated coordinates, no header.
pub fn load_arms_csv<T: Scalar>(path: &Path) -> Result<Vec<Vec<T>>> {
    let rows = read_rows(path)?;
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "no arms".into(),
        });
    }
    Ok(rows
        .into_iter()
        .map(|r| r.into_iter().map(T::lit).collect())
        .collect())
}

/// Parameter file: a single row of coordinates.
pub fn load_theta_csv<T: Scalar>(path: &Path) -> Result<Vec<T>> {
    let rows = read_rows(path)?;
    match rows.as_slice() {
        [row] => Ok(row.iter().copied().map(T::lit).collect()),
        _ => Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("expected exactly one row, found {}", rows.len()),
        }),
    }
}
