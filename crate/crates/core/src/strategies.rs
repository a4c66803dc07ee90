//! Allocation strategies and stopping rules: the oracle, the static G and XY
//! allocations, the phased XY-adaptive algorithm and the fully adaptive
//! baseline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::design::{
    round_design, solve_design, ArmGram, Design, DesignState, SolverOptions, Targets,
};
use crate::error::{Error, Result};
use crate::linalg::{span_rank, Matrix};
use crate::problem::{
    argmax_first, build_directions, sample_reward, ConfidenceParams, ProblemInstance, RewardSampler,
};
use crate::scalar::{dot, sub, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Oracle,
    G,
    Xy,
    XyAdaptive,
    FullyAdaptive,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Oracle,
        Strategy::G,
        Strategy::Xy,
        Strategy::XyAdaptive,
        Strategy::FullyAdaptive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Oracle => "oracle",
            Strategy::G => "g",
            Strategy::Xy => "xy",
            Strategy::XyAdaptive => "xy-adaptive",
            Strategy::FullyAdaptive => "fully-adaptive",
        }
    }

    /// Whether the pull sequence ignores rewards.
    pub fn is_static(self) -> bool {
        matches!(self, Strategy::G | Strategy::Xy)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy '{s}'")))
    }
}

/// How static allocations pick the next arm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    /// Incremental greedy selection.
    #[default]
    Greedy,
    /// Continuous relaxation followed by efficient rounding.
    Round,
}

/// Starting matrix for greedy scoring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// `A0 = I`, no pulls.
    #[default]
    Identity,
    /// Pull each arm of a spanning basis once.
    BasisPulls,
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub solver: Solver,
    pub init: Init,
    pub check_every: u64,
    pub max_budget: u64,
    pub alpha: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            solver: Solver::Greedy,
            init: Init::Identity,
            check_every: 10,
            max_budget: 10_000_000,
            alpha: 0.1,
        }
    }
}

/// One completed phase of the XY-adaptive algorithm.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseRecord {
    pub index: usize,
    /// Pulls made in the phase, including initialization pulls.
    pub length: u64,
    /// `max_{y in Y_j} y^T A^-1 y` at the end of the phase.
    pub rho: f64,
    /// `alpha rho_{j-1} / n_{j-1}`, the bound `rho / length` fell below.
    pub threshold: f64,
    pub directions: usize,
    /// Arms kept after the phase's discard step.
    pub survivors: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub strategy: Strategy,
    pub seed: u64,
    pub budget: u64,
    pub returned_arm: usize,
    pub correct: bool,
    /// The budget cap was hit before the stopping rule fired.
    pub undecided: bool,
    pub pulls: Vec<u64>,
    /// Stop tests happen every `check_every` pulls, so `budget` may exceed
    /// the first qualifying step by up to `check_every - 1`.
    pub check_every: u64,
    /// For static allocations: `n rho(x_n) / rho* - 1` at the final step.
    pub beta: Option<f64>,
    pub phases: Vec<PhaseRecord>,
}

impl RunResult {
    fn trivial(strategy: Strategy, seed: u64, k: usize) -> Self {
        Self {
            strategy,
            seed,
            budget: 0,
            returned_arm: 0,
            correct: true,
            undecided: false,
            pulls: vec![0; k],
            check_every: 1,
            beta: None,
            phases: Vec::new(),
        }
    }
}

/// `Some(x)` when one arm `x` satisfies
/// `width_fixed(||x - x'||_{A^-1}, n, K) <= (x - x')^T theta_hat` for every
/// other arm.
pub fn check_stop<T: Scalar>(
    state: &DesignState<T>,
    instance: &ProblemInstance<T>,
    params: &ConfidenceParams<T>,
) -> Result<Option<usize>> {
    let k = instance.num_arms();
    if k == 1 {
        return Ok(Some(0));
    }
    let inv = state.inverse().ok_or_else(|| Error::Singular {
        dim: state.dim(),
        deficiency: state.dim() - state.matrix().rank(),
    })?;
    let theta = state.ols()?;
    let factor = params.fixed_width_factor(state.n(), k)?;
    let values: Vec<T> = instance.arms().iter().map(|x| dot(x, &theta)).collect();
    'outer: for x in 0..k {
        for xp in 0..k {
            if xp == x {
                continue;
            }
            let y = sub(instance.arm(x), instance.arm(xp));
            let width = factor * inv.quad_form(&y).max(T::zero()).sqrt();
            if width > values[x] - values[xp] {
                continue 'outer;
            }
        }
        return Ok(Some(x));
    }
    Ok(None)
}

/// Arms of `candidates` not dominated by another candidate:
/// `x` is dropped when some `x'` has `width_fixed(||x' - x||, n, K) < (x' - x)^T theta_hat`.
pub fn discard<T: Scalar>(
    state: &DesignState<T>,
    instance: &ProblemInstance<T>,
    params: &ConfidenceParams<T>,
    candidates: &[usize],
) -> Result<Vec<usize>> {
    let inv = state.inverse().ok_or_else(|| Error::Singular {
        dim: state.dim(),
        deficiency: state.dim() - state.matrix().rank(),
    })?;
    let theta = state.ols()?;
    let factor = params.fixed_width_factor(state.n(), instance.num_arms())?;
    let values: Vec<T> = instance.arms().iter().map(|x| dot(x, &theta)).collect();
    Ok(candidates
        .iter()
        .copied()
        .filter(|&x| {
            !candidates.iter().any(|&xp| {
                xp != x && {
                    let y = sub(instance.arm(xp), instance.arm(x));
                    factor * inv.quad_form(&y).max(T::zero()).sqrt() < values[xp] - values[x]
                }
            })
        })
        .collect())
}

/// Same rule evaluated from a Gram cache and precomputed `x^T theta_hat`.
fn discard_gram<T: Scalar>(
    gram: &ArmGram<T>,
    values: &[T],
    factor: T,
    candidates: &[usize],
) -> Vec<usize> {
    candidates
        .iter()
        .copied()
        .filter(|&x| {
            !candidates
                .iter()
                .any(|&xp| xp != x && factor * gram.diff_sq(x, xp).sqrt() < values[xp] - values[x])
        })
        .collect()
}

/// First arms in index order that together span the space.
pub fn spanning_basis<T: Scalar>(arms: &[Vec<T>]) -> Vec<usize> {
    let d = arms.first().map_or(0, Vec::len);
    let mut chosen: Vec<Vec<T>> = Vec::new();
    let mut idx = Vec::new();
    for (i, x) in arms.iter().enumerate() {
        chosen.push(x.clone());
        if span_rank(d, &chosen) == chosen.len() {
            idx.push(i);
            if idx.len() == d {
                break;
            }
        } else {
            chosen.pop();
        }
    }
    idx
}

fn require_spanning<T: Scalar>(instance: &ProblemInstance<T>) -> Result<Vec<usize>> {
    let basis = spanning_basis(instance.arms());
    if basis.len() < instance.dim() {
        return Err(Error::Singular {
            dim: instance.dim(),
            deficiency: instance.dim() - basis.len(),
        });
    }
    Ok(basis)
}

fn outer_sum<T: Scalar>(instance: &ProblemInstance<T>, idx: &[usize]) -> Matrix<T> {
    let mut a = Matrix::zeros(instance.dim());
    for &i in idx {
        a.add_outer(instance.arm(i), T::one());
    }
    a
}

/// Unpenalized `A = sum x x^T`, inverted once the pulls span the space.
struct Estimator<T> {
    a: Matrix<T>,
    gram: Option<ArmGram<T>>,
    arms: Vec<Vec<T>>,
}

impl<T: Scalar> Estimator<T> {
    fn new(instance: &ProblemInstance<T>) -> Self {
        Self {
            a: Matrix::zeros(instance.dim()),
            gram: None,
            arms: instance.arms().to_vec(),
        }
    }

    fn pull(&mut self, arm: usize) -> Result<()> {
        match self.gram.as_mut() {
            Some(g) => g.pull(arm),
            None => {
                self.a.add_outer(&self.arms[arm], T::one());
                Ok(())
            }
        }
    }

    /// Builds the Gram cache on first success.
    fn ready(&mut self) -> Option<&ArmGram<T>> {
        if self.gram.is_none() {
            if let Ok(g) = ArmGram::new(self.arms.clone(), self.a.clone()) {
                self.gram = Some(g);
            }
        }
        self.gram.as_ref()
    }
}

/// Deterministic static pull sequence.
enum Plan<T> {
    Greedy {
        gram: ArmGram<T>,
        targets: Targets<T>,
    },
    Round {
        design: Design<T>,
        support: Vec<usize>,
        have: Vec<u64>,
    },
}

impl<T: Scalar> Plan<T> {
    fn next(&mut self) -> Result<usize> {
        match self {
            Plan::Greedy { gram, targets } => {
                let arm = targets.greedy(gram);
                gram.pull(arm)?;
                Ok(arm)
            }
            Plan::Round {
                design,
                support,
                have,
            } => {
                let m = have.iter().sum::<u64>() + 1;
                let p = support.len() as u64;
                let arm = if m < p {
                    support[(m - 1) as usize]
                } else {
                    let target = round_design(design, m)?;
                    match support.iter().copied().find(|&i| target[i] > have[i]) {
                        Some(i) => i,
                        None => {
                            let w = design.weights();
                            let keys: Vec<T> = support
                                .iter()
                                .map(|&i| T::lit(have[i] as f64) / w[i])
                                .collect();
                            support[crate::problem::argmin_first(&keys)]
                        }
                    }
                };
                have[arm] += 1;
                Ok(arm)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StaticVariant {
    G,
    Xy,
}

impl StaticVariant {
    fn strategy(self) -> Strategy {
        match self {
            StaticVariant::G => Strategy::G,
            StaticVariant::Xy => Strategy::Xy,
        }
    }
}

fn static_targets<T: Scalar>(variant: StaticVariant, k: usize) -> Targets<T> {
    match variant {
        StaticVariant::G => Targets::Arms,
        StaticVariant::Xy => Targets::among(&(0..k).collect::<Vec<_>>()),
    }
}

/// Optimal continuous value `min_lambda max_t ||t||^2_{Lambda^-1}` for the
/// variant's targets; used to report `beta`.
fn static_optimum<T: Scalar>(instance: &ProblemInstance<T>, variant: StaticVariant) -> Result<T> {
    match variant {
        StaticVariant::G => Ok(T::from_count(instance.dim())),
        StaticVariant::Xy => {
            let ys = build_directions(instance, false).unsigned_vectors(instance);
            let sol = solve_design(instance.arms(), &ys, None, SolverOptions::default())?;
            Ok(sol.objective)
        }
    }
}

/// One static run with seed `seed`.
pub fn run_static<T: Scalar>(
    instance: &ProblemInstance<T>,
    params: &ConfidenceParams<T>,
    variant: StaticVariant,
    opts: &RunOptions,
    seed: u64,
) -> Result<RunResult> {
    Ok(run_static_batch(instance, params, variant, opts, &[seed])?.remove(0))
}

/// Runs one static allocation for several seeds at once. The pull sequence
/// does not depend on rewards, so all seeds share it and only the response
/// vectors differ. Results match independent `run_static` calls exactly.
pub fn run_static_batch<T: Scalar>(
    instance: &ProblemInstance<T>,
    params: &ConfidenceParams<T>,
    variant: StaticVariant,
    opts: &RunOptions,
    seeds: &[u64],
) -> Result<Vec<RunResult>> {
    let strategy = variant.strategy();
    let k = instance.num_arms();
    let d = instance.dim();
    if k == 1 {
        return Ok(seeds
            .iter()
            .map(|&s| RunResult::trivial(strategy, s, k))
            .collect());
    }
    if opts.check_every == 0 {
        return Err(Error::InvalidArgument(
            "check_every must be at least 1".into(),
        ));
    }
    let basis = require_spanning(instance)?;
    let init_pulls: Vec<usize> = match opts.init {
        Init::Identity => Vec::new(),
        Init::BasisPulls => basis.clone(),
    };
    let mut plan = match opts.solver {
        Solver::Greedy => {
            let a0 = match opts.init {
                Init::Identity => Matrix::identity(d),
                Init::BasisPulls => outer_sum(instance, &basis),
            };
            Plan::Greedy {
                gram: ArmGram::new(instance.arms().to_vec(), a0)?,
                targets: static_targets(variant, k),
            }
        }
        Solver::Round => {
            let targets: Vec<Vec<T>> = match variant {
                StaticVariant::G => instance.arms().to_vec(),
                StaticVariant::Xy => build_directions(instance, false).unsigned_vectors(instance),
            };
            let sol = solve_design(instance.arms(), &targets, None, SolverOptions::default())?;
            let support = sol.design.support_indices();
            Plan::Round {
                design: sol.design,
                support,
                have: vec![0; k],
            }
        }
    };

    struct Lane<T> {
        seed: u64,
        sampler: RewardSampler,
        b: Vec<T>,
        done: Option<(u64, usize, Vec<u64>)>,
    }
    let mut lanes: Vec<Lane<T>> = seeds
        .iter()
        .map(|&seed| Lane {
            seed,
            sampler: RewardSampler::new(seed),
            b: vec![T::zero(); d],
            done: None,
        })
        .collect();
    let mut est = Estimator::new(instance);
    let mut counts = vec![0u64; k];
    let mut remaining = lanes.len();
    let mut n: u64 = 0;
    let mut init_iter = init_pulls.into_iter();

    while remaining > 0 && n < opts.max_budget {
        let arm = match init_iter.next() {
            Some(a) => a,
            None => plan.next()?,
        };
        n += 1;
        counts[arm] += 1;
        let x = instance.arm(arm);
        for lane in lanes.iter_mut().filter(|l| l.done.is_none()) {
            let r = sample_reward(instance, &mut lane.sampler, arm);
            for (bi, &xi) in lane.b.iter_mut().zip(x) {
                *bi = *bi + xi * r;
            }
        }
        est.pull(arm)?;
        if n % opts.check_every != 0 {
            continue;
        }
        let Some(gram) = est.ready() else { continue };
        let factor = params.fixed_width_factor(n, k)?;
        let inv = gram.inverse();
        // ||x_hat - x'||_{A^-1} depends only on x_hat; cache per candidate.
        let mut norms: Vec<Option<Vec<T>>> = vec![None; k];
        for lane in lanes.iter_mut().filter(|l| l.done.is_none()) {
            let theta = inv.mul_vec(&lane.b);
            let values: Vec<T> = instance.arms().iter().map(|x| dot(x, &theta)).collect();
            let best = argmax_first(&values);
            let row = norms[best]
                .get_or_insert_with(|| (0..k).map(|j| gram.diff_sq(best, j).sqrt()).collect());
            let stops = (0..k).all(|j| j == best || factor * row[j] <= values[best] - values[j]);
            if stops {
                lane.done = Some((n, best, counts.clone()));
                remaining -= 1;
            }
        }
    }

    let rho_opt = static_optimum(instance, variant).ok();
    let beta_at = |pulls: &[u64], budget: u64| -> Option<f64> {
        let rho_opt = rho_opt?;
        let mut a = Matrix::zeros(d);
        for (i, &c) in pulls.iter().enumerate() {
            a.add_outer(instance.arm(i), T::lit(c as f64));
        }
        let gram = ArmGram::new(instance.arms().to_vec(), a).ok()?;
        let rho = static_targets::<T>(variant, k).max_variance(&gram);
        Some((T::lit(budget as f64) * rho / rho_opt - T::one()).to_f64_lossy())
    };

    let final_values = |lane: &Lane<T>, gram: Option<&ArmGram<T>>| -> usize {
        match gram {
            Some(g) => {
                let theta = g.inverse().mul_vec(&lane.b);
                let values: Vec<T> = instance.arms().iter().map(|x| dot(x, &theta)).collect();
                argmax_first(&values)
            }
            None => 0,
        }
    };
    let gram_final = est.ready().cloned();
    Ok(lanes
        .iter()
        .map(|lane| match &lane.done {
            Some((budget, arm, pulls)) => RunResult {
                strategy,
                seed: lane.seed,
                budget: *budget,
                returned_arm: *arm,
                correct: *arm == instance.best_arm(),
                undecided: false,
                pulls: pulls.clone(),
                check_every: opts.check_every,
                beta: beta_at(pulls, *budget),
                phases: Vec::new(),
            },
            None => RunResult {
                strategy,
                seed: lane.seed,
                budget: n,
                returned_arm: final_values(lane, gram_final.as_ref()),
                correct: false,
                undecided: true,
                pulls: counts.clone(),
                check_every: opts.check_every,
                beta: beta_at(&counts, n),
                phases: Vec::new(),
            },
        })
        .collect())
}

/// The oracle: greedy on `Y*` with weights `1 / Delta(y)^2`, stopping at
/// the first `n` where `width_fixed(||y||, n, K) <= Delta(y)` for every
/// `y in Y*`. Consumes no rewards.
pub fn run_oracle<T: Scalar>(
    instance: &ProblemInstance<T>,
    params: &ConfidenceParams<T>,
    opts: &RunOptions,
) -> Result<RunResult> {
    let k = instance.num_arms();
    let d = instance.dim();
    if k == 1 {
        return Ok(RunResult::trivial(Strategy::Oracle, 0, k));
    }
    let basis = require_spanning(instance)?;
    let star = build_directions(instance, true);
    let gaps = star.gaps(instance);
    let weights: Vec<T> = gaps.iter().map(|&g| (g * g).recip()).collect();
    let targets = Targets::Pairs(star.pairs().to_vec(), weights);
    let (a0, init): (Matrix<T>, Vec<usize>) = match opts.init {
        Init::Identity => (Matrix::identity(d), Vec::new()),
        Init::BasisPulls => (outer_sum(instance, &basis), basis.clone()),
    };
    let mut scoring = ArmGram::new(instance.arms().to_vec(), a0)?;
    let mut est = Estimator::new(instance);
    let mut counts = vec![0u64; k];
    let mut n = 0u64;
    let mut init_iter = init.into_iter();
    let mut stopped = false;
    while n < opts.max_budget {
        let arm = match init_iter.next() {
            Some(a) => a,
            None => {
                let a = targets.greedy(&scoring);
                scoring.pull(a)?;
                a
            }
        };
        n += 1;
        counts[arm] += 1;
        est.pull(arm)?;
        if let Some(gram) = est.ready() {
            let factor = params.fixed_width_factor(n, k)?;
            if star
                .pairs()
                .iter()
                .zip(&gaps)
                .all(|(&(i, j), &gap)| factor * gram.diff_sq(i, j).sqrt() <= gap)
            {
                stopped = true;
                break;
            }
        }
    }
    Ok(RunResult {
        strategy: Strategy::Oracle,
        seed: 0,
        budget: n,
        returned_arm: instance.best_arm(),
        correct: stopped,
        undecided: !stopped,
        pulls: counts,
        check_every: 1,
        beta: None,
        phases: Vec::new(),
    })
}

/// The phased XY-adaptive algorithm. Each phase restarts from `A0`, runs
/// greedy XY on the surviving directions until
/// `rho_j / n < alpha rho_{j-1} / n_{j-1}`, then discards arms from the
/// surviving set using only that phase's samples.
///
/// Discarded arms stay discarded. A phase that only targets a few directions
/// leaves the other arms unsampled, so re-testing them from scratch would
/// readmit them and the run would alternate between wide and narrow phases.
pub fn run_xy_adaptive<T: Scalar>(
    instance: &ProblemInstance<T>,
    params: &ConfidenceParams<T>,
    opts: &RunOptions,
    seed: u64,
) -> Result<RunResult> {
    Ok(run_xy_adaptive_batch(instance, params, opts, &[seed])?.remove(0))
}

/// XY-adaptive for several seeds. Within a phase the pull sequence depends
/// only on the surviving set, so seeds sharing a history share one greedy
/// trajectory. Results match independent `run_xy_adaptive` calls exactly.
pub fn run_xy_adaptive_batch<T: Scalar>(
    instance: &ProblemInstance<T>,
    params: &ConfidenceParams<T>,
    opts: &RunOptions,
    seeds: &[u64],
) -> Result<Vec<RunResult>> {
    let k = instance.num_arms();
    let d = instance.dim();
    if k == 1 {
        return Ok(seeds
            .iter()
            .map(|&s| RunResult::trivial(Strategy::XyAdaptive, s, k))
            .collect());
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {}",
            opts.alpha
        )));
    }
    let basis = require_spanning(instance)?;
    let alpha = T::lit(opts.alpha);

    struct Lane<T> {
        slot: usize,
        sampler: RewardSampler,
        b: Vec<T>,
    }
    /// Seeds with an identical history so far.
    struct Group<T> {
        active: Vec<usize>,
        rho_prev: T,
        n_prev: T,
        counts: Vec<u64>,
        total: u64,
        phases: Vec<PhaseRecord>,
        lanes: Vec<Lane<T>>,
    }
    let mut results: Vec<Option<RunResult>> = vec![None; seeds.len()];
    let mut queue = vec![Group {
        active: (0..k).collect(),
        rho_prev: T::one(),
        n_prev: T::from_count(d * (d + 1) + 1),
        counts: vec![0; k],
        total: 0,
        phases: Vec::new(),
        lanes: seeds
            .iter()
            .enumerate()
            .map(|(slot, &s)| Lane {
                slot,
                sampler: RewardSampler::new(s),
                b: vec![T::zero(); d],
            })
            .collect(),
    }];

    while let Some(mut g) = queue.pop() {
        let targets = Targets::among(&g.active);
        let directions = g.active.len() * (g.active.len() - 1) / 2;
        let threshold = alpha * g.rho_prev / g.n_prev;
        for lane in &mut g.lanes {
            lane.b.iter_mut().for_each(|v| *v = T::zero());
        }
        let pull_all = |g: &mut Group<T>, arm: usize| {
            let x = instance.arm(arm);
            for lane in &mut g.lanes {
                let r = sample_reward(instance, &mut lane.sampler, arm);
                for (bi, &xi) in lane.b.iter_mut().zip(x) {
                    *bi = *bi + xi * r;
                }
            }
            g.counts[arm] += 1;
            g.total += 1;
        };
        let a0 = match opts.init {
            Init::Identity => Matrix::identity(d),
            Init::BasisPulls => outer_sum(instance, &basis),
        };
        let mut gram = ArmGram::new(instance.arms().to_vec(), a0)?;
        let mut n = 0u64;
        if opts.init == Init::BasisPulls {
            for &i in &basis {
                if g.total >= opts.max_budget {
                    break;
                }
                pull_all(&mut g, i);
                n += 1;
            }
        }
        let values_of = |gram: &ArmGram<T>, b: &[T]| -> Vec<T> {
            let theta = gram.inverse().mul_vec(b);
            instance.arms().iter().map(|x| dot(x, &theta)).collect()
        };
        let mut rho = T::zero();
        let mut capped = false;
        loop {
            if g.total >= opts.max_budget {
                capped = true;
                break;
            }
            let arm = targets.greedy(&gram);
            pull_all(&mut g, arm);
            gram.pull(arm)?;
            n += 1;
            rho = targets.max_variance(&gram);
            if rho / T::lit(n as f64) < threshold {
                break;
            }
        }
        if capped {
            for lane in &g.lanes {
                let values = values_of(&gram, &lane.b);
                let keys: Vec<T> = g.active.iter().map(|&i| values[i]).collect();
                results[lane.slot] = Some(RunResult {
                    strategy: Strategy::XyAdaptive,
                    seed: seeds[lane.slot],
                    budget: g.total,
                    returned_arm: g.active[argmax_first(&keys)],
                    correct: false,
                    undecided: true,
                    pulls: g.counts.clone(),
                    check_every: 1,
                    beta: None,
                    phases: g.phases.clone(),
                });
            }
            continue;
        }
        let factor = params.fixed_width_factor(n, k)?;
        // Split lanes by their surviving sets, keeping first-seen order.
        let mut splits: Vec<(Vec<usize>, Vec<Lane<T>>)> = Vec::new();
        for lane in g.lanes.drain(..) {
            let values = values_of(&gram, &lane.b);
            let survivors = discard_gram(&gram, &values, factor, &g.active);
            match splits.iter_mut().find(|(s, _)| *s == survivors) {
                Some((_, ls)) => ls.push(lane),
                None => splits.push((survivors, vec![lane])),
            }
        }
        for (survivors, lanes) in splits {
            let mut phases = g.phases.clone();
            phases.push(PhaseRecord {
                index: phases.len() + 1,
                length: n,
                rho: rho.to_f64_lossy(),
                threshold: threshold.to_f64_lossy(),
                directions,
                survivors: survivors.clone(),
            });
            if survivors.len() == 1 {
                let arm = survivors[0];
                for lane in lanes {
                    results[lane.slot] = Some(RunResult {
                        strategy: Strategy::XyAdaptive,
                        seed: seeds[lane.slot],
                        budget: g.total,
                        returned_arm: arm,
                        correct: arm == instance.best_arm(),
                        undecided: false,
                        pulls: g.counts.clone(),
                        check_every: 1,
                        beta: None,
                        phases: phases.clone(),
                    });
                }
            } else {
                queue.push(Group {
                    active: survivors,
                    rho_prev: rho,
                    n_prev: T::lit(n as f64),
                    counts: g.counts.clone(),
                    total: g.total,
                    phases,
                    lanes,
                });
            }
        }
    }
    Ok(results
        .into_iter()
        .map(|r| r.expect("every lane finishes"))
        .collect())
}

/// Fully adaptive XY: one regularized state `eta I + sum x x^T`, greedy on
/// the active directions, and a discard step after every pull using the
/// adaptive width.
pub fn run_fully_adaptive<T: Scalar>(
    instance: &ProblemInstance<T>,
    params: &ConfidenceParams<T>,
    opts: &RunOptions,
    seed: u64,
) -> Result<RunResult> {
    let k = instance.num_arms();
    let d = instance.dim();
    if k == 1 {
        return Ok(RunResult::trivial(Strategy::FullyAdaptive, seed, k));
    }
    if !(params.eta > T::zero()) {
        return Err(Error::InvalidArgument(
            "regularizer eta must be positive".into(),
        ));
    }
    let mut sampler = RewardSampler::new(seed);
    let mut gram = ArmGram::new(
        instance.arms().to_vec(),
        Matrix::scaled_identity(d, params.eta),
    )?;
    let mut b = vec![T::zero(); d];
    let mut active: Vec<usize> = (0..k).collect();
    let mut targets = Targets::among(&active);
    let mut counts = vec![0u64; k];
    let mut n = 0u64;
    let l = instance.max_arm_norm();
    loop {
        let values = {
            let theta = gram.inverse().mul_vec(&b);
            instance
                .arms()
                .iter()
                .map(|x| dot(x, &theta))
                .collect::<Vec<T>>()
        };
        if n > 0 {
            let factor = params.adaptive_width_factor(n, d, l)?;
            let kept = discard_gram(&gram, &values, factor, &active);
            if kept.len() != active.len() {
                active = kept;
                targets = Targets::among(&active);
            }
        }
        if active.len() == 1 || n >= opts.max_budget {
            let decided = active.len() == 1;
            let keys: Vec<T> = active.iter().map(|&i| values[i]).collect();
            let arm = active[argmax_first(&keys)];
            return Ok(RunResult {
                strategy: Strategy::FullyAdaptive,
                seed,
                budget: n,
                returned_arm: arm,
                correct: decided && arm == instance.best_arm(),
                undecided: !decided,
                pulls: counts,
                check_every: 1,
                beta: None,
                phases: Vec::new(),
            });
        }
        let arm = targets.greedy(&gram);
        let r = sample_reward(instance, &mut sampler, arm);
        for (bi, &xi) in b.iter_mut().zip(instance.arm(arm)) {
            *bi = *bi + xi * r;
        }
        gram.pull(arm)?;
        counts[arm] += 1;
        n += 1;
    }
}

/// Dispatches one run. The oracle ignores `seed`.
pub fn run_strategy<T: Scalar>(
    strategy: Strategy,
    instance: &ProblemInstance<T>,
    params: &ConfidenceParams<T>,
    opts: &RunOptions,
    seed: u64,
) -> Result<RunResult> {
    let mut res = match strategy {
        Strategy::Oracle => run_oracle(instance, params, opts)?,
        Strategy::G => run_static(instance, params, StaticVariant::G, opts, seed)?,
        Strategy::Xy => run_static(instance, params, StaticVariant::Xy, opts, seed)?,
        Strategy::XyAdaptive => run_xy_adaptive(instance, params, opts, seed)?,
        Strategy::FullyAdaptive => run_fully_adaptive(instance, params, opts, seed)?,
    };
    res.seed = seed;
    Ok(res)
}
