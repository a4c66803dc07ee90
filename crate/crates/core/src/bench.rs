//! Experiment harness: the canonical-basis-plus-one-arm instance family, seed
//! derivation, parallel sweeps over dimensions and strategies, aggregation
//! and CSV output.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{ConfidenceParams, NoiseModel, ProblemInstance};
use crate::strategies::{
    run_fully_adaptive, run_oracle, run_static_batch, run_xy_adaptive_batch, Init, RunOptions,
    RunResult, Solver, StaticVariant, Strategy,
};

/// Budget cap used when neither the config nor `LINBAI_MAX_BUDGET` sets one.
pub const DEFAULT_MAX_BUDGET: u64 = 10_000_000;
pub const MAX_BUDGET_ENV: &str = "LINBAI_MAX_BUDGET";
pub const DEFAULT_MASTER_SEED: u64 = 20_140_901;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dims: Vec<usize>,
    pub omega: f64,
    pub theta_scale: f64,
    pub delta: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub noise: NoiseModel,
    pub runs_per_cell: usize,
    pub master_seed: u64,
    pub strategies: Vec<Strategy>,
    pub solver: Solver,
    pub init: Init,
    pub check_every: u64,
    /// `None` defers to `LINBAI_MAX_BUDGET`, then to 10^7.
    pub max_budget: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dims: (2..=10).collect(),
            omega: 0.01,
            theta_scale: 2.0,
            delta: 0.05,
            alpha: 0.1,
            sigma: 1.0,
            noise: NoiseModel::Gaussian,
            runs_per_cell: 100,
            master_seed: DEFAULT_MASTER_SEED,
            strategies: Strategy::ALL.to_vec(),
            solver: Solver::Greedy,
            init: Init::Identity,
            check_every: 10,
            max_budget: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dims.is_empty() {
            return bad("dims is empty".into());
        }
        if let Some(&d) = self.dims.iter().find(|&&d| d < 2) {
            return bad(format!("dimension {d} is below 2"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.sigma >= 0.0) {
            return bad(format!("sigma must be non-negative, got {}", self.sigma));
        }
        if !(self.theta_scale > 0.0) {
            return bad(format!(
                "theta_scale must be positive, got {}",
                self.theta_scale
            ));
        }
        if !(self.omega.is_finite() && self.omega.sin().abs() > 0.0 && self.omega.cos() < 1.0) {
            return bad(format!(
                "omega = {} makes the extra arm coincide with e1",
                self.omega
            ));
        }
        if self.check_every == 0 {
            return bad("check_every must be at least 1".into());
        }
        if self.max_budget == Some(0) {
            return bad("max_budget must be positive".into());
        }
        if self.strategies.is_empty() {
            return bad("strategies is empty".into());
        }
        Ok(())
    }

    /// Explicit config value, else `LINBAI_MAX_BUDGET`, else 10^7.
    pub fn effective_max_budget(&self) -> Result<u64> {
        if let Some(b) = self.max_budget {
            return Ok(b);
        }
        env_max_budget().map(|b| b.unwrap_or(DEFAULT_MAX_BUDGET))
    }

    pub fn run_options(&self) -> Result<RunOptions> {
        Ok(RunOptions {
            solver: self.solver,
            init: self.init,
            check_every: self.check_every,
            max_budget: self.effective_max_budget()?,
            alpha: self.alpha,
        })
    }

    pub fn instance(&self, d: usize) -> Result<ProblemInstance<f64>> {
        experiment_instance(
            d,
            self.omega,
            self.theta_scale,
            self.sigma,
            self.noise,
            self.delta,
        )
    }
}

/// Parses `LINBAI_MAX_BUDGET` when set.
pub fn env_max_budget() -> Result<Option<u64>> {
    match std::env::var(MAX_BUDGET_ENV) {
        Ok(v) => {
            let b: u64 = v.trim().parse().map_err(|_| {
                Error::Config(format!("{MAX_BUDGET_ENV}='{v}' is not a positive integer"))
            })?;
            if b == 0 {
                return Err(Error::Config(format!("{MAX_BUDGET_ENV} must be positive")));
            }
            Ok(Some(b))
        }
        Err(_) => Ok(None),
    }
}

/// Canonical basis of `R^d` plus `[cos w, sin w, 0, ...]`, with
/// `theta* = [theta_scale, 0, ...]`.
pub fn experiment_instance(
    d: usize,
    omega: f64,
    theta_scale: f64,
    sigma: f64,
    noise: NoiseModel,
    delta: f64,
) -> Result<ProblemInstance<f64>> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("dimension {d} is below 2")));
    }
    let mut arms: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut extra = vec![0.0; d];
    extra[0] = omega.cos();
    extra[1] = omega.sin();
    arms.push(extra);
    let mut theta = vec![0.0; d];
    theta[0] = theta_scale;
    ProblemInstance::new(arms, theta, sigma, noise, delta)
}

/// Seed of run `run_id` in cell `(strategy, d)`: FNV-1a over the bytes of
/// `master_seed` (little endian), the strategy name, a zero byte, `d` and
/// `run_id` (both as little-endian u64), passed through the splitmix64
/// finalizer. Frozen: changing it changes every experiment.
pub fn run_seed(master_seed: u64, strategy: Strategy, d: usize, run_id: usize) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(&master_seed.to_le_bytes());
    eat(strategy.name().as_bytes());
    eat(&[0]);
    eat(&(d as u64).to_le_bytes());
    eat(&(run_id as u64).to_le_bytes());
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One `runs.csv` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub strategy: Strategy,
    pub d: usize,
    pub run_id: usize,
    pub seed: u64,
    pub budget: u64,
    pub returned_arm: usize,
    pub correct: bool,
}

/// One `pulls.csv` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PullRow {
    pub strategy: Strategy,
    pub d: usize,
    pub run_id: usize,
    pub arm_index: usize,
    pub pull_count: u64,
}

/// One `summary.csv` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub d: usize,
    pub mean_budget: f64,
    pub std_budget: f64,
    pub accuracy: f64,
}

pub const RUNS_HEADER: [&str; 7] = [
    "strategy",
    "d",
    "run_id",
    "seed",
    "budget",
    "returned_arm",
    "correct",
];
pub const PULLS_HEADER: [&str; 5] = ["strategy", "d", "run_id", "arm_index", "pull_count"];
pub const SUMMARY_HEADER: [&str; 5] = ["strategy", "d", "mean_budget", "std_budget", "accuracy"];

/// One run together with its cell coordinates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub strategy: Strategy,
    pub d: usize,
    pub run_id: usize,
    pub result: RunResult,
}

impl RunRecord {
    pub fn row(&self) -> RunRow {
        RunRow {
            strategy: self.strategy,
            d: self.d,
            run_id: self.run_id,
            seed: self.result.seed,
            budget: self.result.budget,
            returned_arm: self.result.returned_arm,
            correct: self.result.correct,
        }
    }

    pub fn pull_rows(&self) -> impl Iterator<Item = PullRow> + '_ {
        self.result
            .pulls
            .iter()
            .enumerate()
            .map(move |(arm_index, &pull_count)| PullRow {
                strategy: self.strategy,
                d: self.d,
                run_id: self.run_id,
                arm_index,
                pull_count,
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub strategy: Strategy,
    pub d: usize,
    pub runs: usize,
    pub mean_budget: f64,
    /// Sample standard deviation; 0 for a single run and for the oracle.
    pub std_budget: f64,
    pub accuracy: f64,
    pub mean_pulls: Vec<f64>,
    /// Runs that hit the budget cap. They count at `max_budget` and as
    /// incorrect.
    pub undecided: usize,
}

impl CellSummary {
    pub fn row(&self) -> SummaryRow {
        SummaryRow {
            strategy: self.strategy,
            d: self.d,
            mean_budget: self.mean_budget,
            std_budget: self.std_budget,
            accuracy: self.accuracy,
        }
    }
}

/// Aggregates runs of one cell; the order of `runs` does not matter beyond
/// floating point summation, which is done in `run_id` order.
pub fn summarize(strategy: Strategy, d: usize, runs: &[&RunRecord]) -> CellSummary {
    let mut sorted: Vec<&RunRecord> = runs.to_vec();
    sorted.sort_by_key(|r| r.run_id);
    let n = sorted.len();
    let budgets: Vec<f64> = sorted.iter().map(|r| r.result.budget as f64).collect();
    let mean = if n == 0 {
        0.0
    } else {
        budgets.iter().sum::<f64>() / n as f64
    };
    let std = if n < 2 {
        0.0
    } else {
        (budgets.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    let k = sorted.first().map_or(0, |r| r.result.pulls.len());
    let mut mean_pulls = vec![0.0; k];
    for r in &sorted {
        for (m, &c) in mean_pulls.iter_mut().zip(&r.result.pulls) {
            *m += c as f64;
        }
    }
    if n > 0 {
        mean_pulls.iter_mut().for_each(|m| *m /= n as f64);
    }
    CellSummary {
        strategy,
        d,
        runs: n,
        mean_budget: mean,
        std_budget: std,
        accuracy: if n == 0 {
            0.0
        } else {
            sorted.iter().filter(|r| r.result.correct).count() as f64 / n as f64
        },
        mean_pulls,
        undecided: sorted.iter().filter(|r| r.result.undecided).count(),
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    /// Sorted by `(strategy, d, run_id)`.
    pub runs: Vec<RunRecord>,
    /// Sorted by `(strategy, d)`.
    pub summary: Vec<CellSummary>,
}

impl ExperimentOutput {
    pub fn cell(&self, strategy: Strategy, d: usize) -> Option<&CellSummary> {
        self.summary
            .iter()
            .find(|c| c.strategy == strategy && c.d == d)
    }

    pub fn cell_runs(&self, strategy: Strategy, d: usize) -> impl Iterator<Item = &RunRecord> {
        self.runs
            .iter()
            .filter(move |r| r.strategy == strategy && r.d == d)
    }
}

/// A unit of parallel work: a whole batched cell or a single run.
enum Task {
    Oracle { d: usize },
    Batch { strategy: Strategy, d: usize },
    Single { d: usize, run_id: usize },
}

/// Runs every `(strategy, d)` cell of `config`. The oracle is computed once
/// per dimension and copied to every run id, so its budget has zero
/// variance. G, XY and XY-adaptive cells run as reward-independent batches;
/// fully adaptive runs are scheduled individually. `jobs = None` uses the
/// global rayon pool.
pub fn run_experiment(config: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentOutput> {
    config.validate()?;
    let opts = config.run_options()?;
    let mut strategies = config.strategies.clone();
    strategies.sort();
    strategies.dedup();
    let mut dims = config.dims.clone();
    dims.sort_unstable();
    dims.dedup();
    let instances: Vec<(usize, ProblemInstance<f64>)> = dims
        .iter()
        .map(|&d| config.instance(d).map(|i| (d, i)))
        .collect::<Result<_>>()?;
    let lookup = |d: usize| {
        &instances
            .iter()
            .find(|(dd, _)| *dd == d)
            .expect("instance built")
            .1
    };
    let runs = config.runs_per_cell;

    let mut tasks = Vec::new();
    for &s in &strategies {
        for &d in &dims {
            if runs == 0 {
                continue;
            }
            match s {
                Strategy::Oracle => tasks.push(Task::Oracle { d }),
                Strategy::FullyAdaptive => {
                    tasks.extend((0..runs).map(|run_id| Task::Single { d, run_id }))
                }
                _ => tasks.push(Task::Batch { strategy: s, d }),
            }
        }
    }

    let seeds = |s: Strategy, d: usize| -> Vec<u64> {
        (0..runs)
            .map(|r| run_seed(config.master_seed, s, d, r))
            .collect()
    };
    let exec = |task: &Task| -> Result<Vec<RunRecord>> {
        match *task {
            Task::Oracle { d } => {
                let inst = lookup(d);
                let params = ConfidenceParams::for_instance(inst);
                let base = run_oracle(inst, &params, &opts)?;
                Ok(seeds(Strategy::Oracle, d)
                    .into_iter()
                    .enumerate()
                    .map(|(run_id, seed)| RunRecord {
                        strategy: Strategy::Oracle,
                        d,
                        run_id,
                        result: RunResult {
                            seed,
                            ..base.clone()
                        },
                    })
                    .collect())
            }
            Task::Batch { strategy, d } => {
                let inst = lookup(d);
                let params = ConfidenceParams::for_instance(inst);
                let s = seeds(strategy, d);
                let results = match strategy {
                    Strategy::G => run_static_batch(inst, &params, StaticVariant::G, &opts, &s)?,
                    Strategy::Xy => run_static_batch(inst, &params, StaticVariant::Xy, &opts, &s)?,
                    Strategy::XyAdaptive => run_xy_adaptive_batch(inst, &params, &opts, &s)?,
                    _ => unreachable!("only batched strategies reach here"),
                };
                Ok(results
                    .into_iter()
                    .enumerate()
                    .map(|(run_id, result)| RunRecord {
                        strategy,
                        d,
                        run_id,
                        result,
                    })
                    .collect())
            }
            Task::Single { d, run_id } => {
                let inst = lookup(d);
                let params = ConfidenceParams::for_instance(inst);
                let seed = run_seed(config.master_seed, Strategy::FullyAdaptive, d, run_id);
                let result = run_fully_adaptive(inst, &params, &opts, seed)?;
                Ok(vec![RunRecord {
                    strategy: Strategy::FullyAdaptive,
                    d,
                    run_id,
                    result,
                }])
            }
        }
    };
    let run_all = || -> Result<Vec<Vec<RunRecord>>> { tasks.par_iter().map(exec).collect() };
    let nested = match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run_all)?,
        None => run_all()?,
    };
    let mut all: Vec<RunRecord> = nested.into_iter().flatten().collect();
    all.sort_by_key(|r| (r.strategy, r.d, r.run_id));

    let mut summary = Vec::new();
    for &s in &strategies {
        for &d in &dims {
            let cell: Vec<&RunRecord> =
                all.iter().filter(|r| r.strategy == s && r.d == d).collect();
            let c = summarize(s, d, &cell);
            if c.undecided > 0 {
                log::warn!(
                    "{s} d={d}: {} of {} runs hit the budget cap of {}",
                    c.undecided,
                    c.runs,
                    opts.max_budget
                );
            }
            summary.push(c);
        }
    }
    Ok(ExperimentOutput { runs: all, summary })
}

/// Writes `rows` under an exact header; UTF-8, LF line endings. An empty
/// slice yields a header-only file.
pub fn write_csv<R: Serialize>(rows: &[R], header: &[&str], path: &Path) -> Result<()> {
    let wrap = |source: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(wrap)?;
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.serialize(r).map_err(wrap)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads rows written by [`write_csv`], checking the header.
pub fn read_csv<R: for<'de> Deserialize<'de>>(header: &[&str], path: &Path) -> Result<Vec<R>> {
    let wrap = |source: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    let found: Vec<String> = r
        .headers()
        .map_err(wrap)?
        .iter()
        .map(str::to_owned)
        .collect();
    if found != header {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("header {found:?}, expected {header:?}"),
        });
    }
    r.deserialize().map(|row| row.map_err(wrap)).collect()
}

pub fn write_runs(runs: &[RunRecord], out: &Path) -> Result<(PathBuf, PathBuf)> {
    ensure_dir(out)?;
    let rows: Vec<RunRow> = runs.iter().map(RunRecord::row).collect();
    let pulls: Vec<PullRow> = runs.iter().flat_map(RunRecord::pull_rows).collect();
    let rp = out.join("runs.csv");
    let pp = out.join("pulls.csv");
    write_csv(&rows, &RUNS_HEADER, &rp)?;
    write_csv(&pulls, &PULLS_HEADER, &pp)?;
    Ok((rp, pp))
}

/// Writes `runs.csv`, `pulls.csv` and `summary.csv` into `out`.
pub fn write_outputs(output: &ExperimentOutput, out: &Path) -> Result<[PathBuf; 3]> {
    let (rp, pp) = write_runs(&output.runs, out)?;
    let sp = out.join("summary.csv");
    let rows: Vec<SummaryRow> = output.summary.iter().map(CellSummary::row).collect();
    write_csv(&rows, &SUMMARY_HEADER, &sp)?;
    Ok([rp, pp, sp])
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}
