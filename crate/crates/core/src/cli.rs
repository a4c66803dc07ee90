//! Command line front end for the `linbai` binary.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::{self, ExperimentConfig, RunRecord};
use crate::complexity;
use crate::design::{
    kw_gap, round_design, solve_design, Design, DesignReport, GreedySelector, SolverOptions,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::problem::{
    load_arms_csv, load_theta_csv, ConfidenceParams, NoiseModel, ProblemInstance,
};
use crate::strategies::{run_strategy, Strategy};

#[derive(Debug, Parser)]
#[command(
    name = "linbai",
    version,
    about = "Best-arm identification in linear bandits"
)]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    /// Run seed for `run`; overrides `master_seed` for `experiment`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    /// The arms themselves (G-allocation).
    Arms,
    /// All pairwise arm differences (XY-allocation).
    Directions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// Frank-Wolfe relaxation, then rounding to `n` pulls.
    Fw,
    /// `n` incremental greedy pulls from `A0 = I`.
    Greedy,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute an allocation over a fixed arm set and print it as JSON.
    Design {
        /// Arm matrix, one arm per row, no header.
        #[arg(long)]
        arms: PathBuf,
        #[arg(long, value_enum)]
        target: TargetArg,
        #[arg(long, value_enum, default_value = "fw")]
        method: MethodArg,
        /// Number of pulls to allocate.
        #[arg(long, default_value_t = 100)]
        n: u64,
        /// Relative tolerance of the continuous solver.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Print sample complexity quantities of an instance as JSON.
    Complexity {
        #[arg(long)]
        arms: PathBuf,
        /// True parameter, a single row, no header.
        #[arg(long)]
        theta: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// One run of a strategy per configured dimension.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        out: PathBuf,
    },
    /// The full (strategy, dimension) sweep; writes runs, pulls and summary CSVs.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; all cores by default.
        #[arg(long)]
        jobs: Option<usize>,
    },
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    let mut stdout = std::io::stdout().lock();
    match execute(&cli, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("linbai: {e}");
            1
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Design {
            arms,
            target,
            method,
            n,
            tol,
        } => {
            let arms: Vec<Vec<f64>> = load_arms_csv(arms)?;
            let report = design_report(&arms, *target, *method, *n, *tol)?;
            print_json(out, &report)
        }
        Command::Complexity {
            arms,
            theta,
            delta,
            sigma,
            tol,
        } => {
            let arms: Vec<Vec<f64>> = load_arms_csv(arms)?;
            let theta: Vec<f64> = load_theta_csv(theta)?;
            let inst = ProblemInstance::new(arms, theta, *sigma, NoiseModel::Gaussian, *delta)?;
            let params = ConfidenceParams::for_instance(&inst);
            let opts = SolverOptions {
                tol: *tol,
                ..SolverOptions::default()
            };
            print_json(out, &complexity::report(&inst, &params, opts)?)
        }
        Command::Run {
            config,
            strategy,
            out: dir,
        } => {
            let cfg = load_config(config.as_ref())?;
            let opts = cfg.run_options()?;
            let seed = cli.seed.unwrap_or(0);
            let mut dims = cfg.dims.clone();
            dims.sort_unstable();
            dims.dedup();
            let mut records = Vec::new();
            for d in dims {
                let inst = cfg.instance(d)?;
                let params = ConfidenceParams::for_instance(&inst);
                let result = run_strategy(*strategy, &inst, &params, &opts, seed)?;
                log::info!(
                    "{strategy} d={d}: budget {} arm {}",
                    result.budget,
                    result.returned_arm
                );
                for p in &result.phases {
                    log::info!(
                        "  phase {}: length {}, rho {:.4e}, threshold {:.4e}, {} directions, survivors {:?}",
                        p.index,
                        p.length,
                        p.rho,
                        p.threshold,
                        p.directions,
                        p.survivors
                    );
                }
                records.push(RunRecord {
                    strategy: *strategy,
                    d,
                    run_id: 0,
                    result,
                });
            }
            let (rp, pp) = bench::write_runs(&records, dir)?;
            print_paths(out, &[rp, pp])
        }
        Command::Experiment {
            config,
            out: dir,
            jobs,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(s) = cli.seed {
                cfg.master_seed = s;
            }
            let output = bench::run_experiment(&cfg, *jobs)?;
            for c in &output.summary {
                log::info!(
                    "{} d={}: mean budget {:.1}, accuracy {:.3}",
                    c.strategy,
                    c.d,
                    c.mean_budget,
                    c.accuracy
                );
            }
            let paths = bench::write_outputs(&output, dir)?;
            print_paths(out, &paths)
        }
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Solves the allocation requested by the `design` command.
pub fn design_report(
    arms: &[Vec<f64>],
    target: TargetArg,
    method: MethodArg,
    n: u64,
    tol: f64,
) -> Result<DesignReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tol must be positive, got {tol}"
        )));
    }
    let targets: Vec<Vec<f64>> = match target {
        TargetArg::Arms => arms.to_vec(),
        TargetArg::Directions => {
            let mut t = Vec::new();
            for i in 0..arms.len() {
                for j in i + 1..arms.len() {
                    t.push(arms[i].iter().zip(&arms[j]).map(|(a, b)| a - b).collect());
                }
            }
            if t.is_empty() {
                return Err(Error::InvalidArgument(
                    "directions need at least two arms".into(),
                ));
            }
            t
        }
    };
    let (design, counts, certified) = match method {
        MethodArg::Fw => {
            let sol = solve_design(
                arms,
                &targets,
                None,
                SolverOptions {
                    tol,
                    ..SolverOptions::default()
                },
            )?;
            let counts = if n == 0 {
                vec![0; arms.len()]
            } else {
                round_design(&sol.design, n)?
            };
            (sol.design, counts, sol.certified)
        }
        MethodArg::Greedy => {
            if n == 0 {
                return Err(Error::InvalidArgument("greedy needs n >= 1".into()));
            }
            let d = arms.first().map_or(0, Vec::len);
            let mut sel =
                GreedySelector::new(arms.to_vec(), targets.clone(), None, Matrix::identity(d))?;
            let mut counts = vec![0u64; arms.len()];
            for _ in 0..n {
                let x = sel.select();
                sel.update(x)?;
                counts[x] += 1;
            }
            (Design::from_counts(arms, &counts)?, counts, false)
        }
    };
    Ok(DesignReport {
        method: match method {
            MethodArg::Fw => "fw",
            MethodArg::Greedy => "greedy",
        }
        .into(),
        target: match target {
            TargetArg::Arms => "arms",
            TargetArg::Directions => "directions",
        }
        .into(),
        objective: design.objective(&targets, None)?,
        kw_gap: kw_gap(&design, arms)?,
        support: design.support(),
        weights: design.weights().to_vec(),
        counts,
        certified,
    })
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    writeln!(out, "{text}").map_err(stdout_err)
}

fn print_paths(out: &mut dyn Write, paths: &[PathBuf]) -> Result<()> {
    for p in paths {
        writeln!(out, "{}", p.display()).map_err(stdout_err)?;
    }
    Ok(())
}

fn stdout_err(source: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source,
    }
}
