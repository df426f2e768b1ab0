//! Batch command-line surface for the matrix mechanism toolkit.
//!
//! Outputs are CSV with `#` comment headers (machine- and plot-friendly);
//! every run echoes its full configuration as the first comment line, and
//! the same seed always reproduces byte-identical output.
//!
//! Exit codes: 0 success, 1 domain error (the message names the failing
//! operation's error), 2 usage error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::Cholesky;

use matmech::{
    all_predicate_queries, all_range_queries, auto_augment, decomposed_strategy, estimate_counts,
    gaussian_mechanism, haar_equivalence_check, identity_strategy, io, l2_optimal_profile,
    laplace_mechanism, least_squares_oracle, matrix_mechanism, min_error_descent, min_sensitivity,
    monte_carlo_error, range_sweep_errors, svb_optimal_strategy, svb_sensitivity,
    thm10_growth_check, total_error, wavelet_strategy, workload_reduce, CountVector, GrowthKind,
    OptimizeResult, OptimizerOptions, PrivacyParams, QueryMatrix, Strategy, StrategyFamily,
};

#[derive(Parser)]
#[command(
    name = "matmech",
    version,
    about = "Answer workloads of linear counting queries under differential privacy",
    long_about = None
)]
struct Cli {
    /// Worker threads for Monte Carlo verification (results do not depend
    /// on the thread count).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a workload matrix (`ranges` | `predicates` | `identity` | `file:<path>`).
    Workload {
        #[arg(long)]
        kind: String,
        /// Domain size n.
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a strategy matrix (`identity` | `hier` | `wavelet` |
    /// `hier-decomposed` | `wavelet-decomposed` | `file:<path>`).
    Strategy {
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact per-query mean squared errors of a strategy on a workload.
    Analyze {
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        workload: String,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search for a strategy fitting a workload and print an objective
    /// table for every candidate method.
    Optimize {
        #[arg(long)]
        workload: String,
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// Which method's strategy to write to --out:
        /// svb | l2 | descent | minsens | augment.
        #[arg(long, default_value = "descent")]
        method: String,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value_t = 4)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stack `delta * I` under a rank-deficient workload instead of
        /// failing (never done silently).
        #[arg(long)]
        regularize: Option<f64>,
        /// File to write the selected method's strategy matrix to.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer a workload with noisy values through a strategy.
    Answer {
        #[arg(long, default_value = "identity")]
        workload: String,
        #[arg(long, default_value = "identity")]
        strategy: String,
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// Count vector file (matrix format with one column).
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        /// Switches to the Gaussian mechanism on the workload itself.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Independent verification: mc | lsq | haar | growth.
    Verify {
        #[arg(long)]
        check: String,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 1_000_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep total/max error across domain sizes (one CSV row per
    /// n x strategy x workload).
    Bench {
        /// Comma-separated domain sizes, e.g. 16,32,64.
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
        n_list: Vec<usize>,
        /// Comma-separated strategy kinds.
        #[arg(long, value_delimiter = ',', default_value = "identity,hier,wavelet")]
        strategies: Vec<String>,
        #[arg(long, default_value = "ranges")]
        workload: String,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Usage(String),
    Domain(matmech::Error),
    /// A verification check ran to completion and failed.
    CheckFailed,
}

impl From<matmech::Error> for CliError {
    fn from(e: matmech::Error) -> Self {
        CliError::Domain(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Domain(matmech::Error::Io(e))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .ok();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        // a downstream pipe closing early (e.g. `matmech ... | head`) is not
        // an error worth reporting
        Err(CliError::Domain(matmech::Error::Io(e)))
            if e.kind() == std::io::ErrorKind::BrokenPipe =>
        {
            ExitCode::SUCCESS
        }
        Err(CliError::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(CliError::CheckFailed) => {
            eprintln!("error: verification check failed");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn out_opt(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!(" --out {}", p.display()),
        None => String::new(),
    }
}

fn build_workload(kind: &str, n: usize) -> Result<QueryMatrix, CliError> {
    match kind {
        "ranges" => Ok(all_range_queries(n)?),
        "predicates" => Ok(all_predicate_queries(n)?),
        "identity" => Ok(identity_strategy(n)?),
        k => {
            if let Some(path) = k.strip_prefix("file:") {
                Ok(io::load_matrix(Path::new(path))?)
            } else {
                Err(CliError::Usage(format!(
                    "unknown workload kind '{kind}'; expected ranges | predicates | identity | file:<path>"
                )))
            }
        }
    }
}

fn build_strategy_matrix(kind: &str, n: usize) -> Result<QueryMatrix, CliError> {
    match kind {
        "identity" => Ok(identity_strategy(n)?),
        "hier" => Ok(matmech::hierarchical_strategy(n)?),
        "wavelet" => Ok(wavelet_strategy(n)?),
        "hier-decomposed" => Ok(decomposed_strategy(StrategyFamily::Hier, n)?),
        "wavelet-decomposed" => Ok(decomposed_strategy(StrategyFamily::Wavelet, n)?),
        k => {
            if let Some(path) = k.strip_prefix("file:") {
                Ok(io::load_matrix(Path::new(path))?)
            } else {
                Err(CliError::Usage(format!(
                    "unknown strategy kind '{kind}'; expected identity | hier | wavelet | \
                     hier-decomposed | wavelet-decomposed | file:<path>"
                )))
            }
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let threads = cli.threads;
    match &cli.command {
        Command::Workload { kind, n, out } => {
            let w = build_workload(kind, *n)?;
            let mut sink = open_out(out)?;
            let header = format!(
                "matmech workload --kind {kind} --n {n} --threads {threads}{}",
                out_opt(out)
            );
            io::write_matrix(&mut sink, &w, &[header])?;
            Ok(())
        }
        Command::Strategy { kind, n, out } => {
            let s = build_strategy_matrix(kind, *n)?;
            let mut sink = open_out(out)?;
            let header = format!(
                "matmech strategy --kind {kind} --n {n} --threads {threads}{}",
                out_opt(out)
            );
            io::write_matrix(&mut sink, &s, &[header])?;
            Ok(())
        }
        Command::Analyze {
            strategy,
            workload,
            n,
            epsilon,
            out,
        } => {
            let a = Strategy::new(build_strategy_matrix(strategy, *n)?)?;
            let w = build_workload(workload, *n)?;
            let report = total_error(&a, &w, *epsilon)?;
            let mut sink = open_out(out)?;
            writeln!(
                sink,
                "# matmech analyze --strategy {strategy} --workload {workload} --n {n} \
                 --epsilon {epsilon} --threads {threads}{}",
                out_opt(out)
            )?;
            writeln!(sink, "query_index,exact_mse")?;
            for (i, e) in report.per_query.iter().enumerate() {
                writeln!(sink, "{i},{e}")?;
            }
            writeln!(sink, "# total,max,sensitivity,l2_bound,svb_sensitivity")?;
            writeln!(
                sink,
                "# {},{},{},{},{}",
                report.total,
                report.max,
                a.sensitivity(),
                a.l2_bound(),
                svb_sensitivity(&a)
            )?;
            Ok(())
        }
        Command::Optimize {
            workload,
            n,
            method,
            iters,
            restarts,
            seed,
            regularize,
            out,
        } => cmd_optimize(
            workload,
            *n,
            method,
            *iters,
            *restarts,
            *seed,
            *regularize,
            out,
            threads,
        ),
        Command::Answer {
            workload,
            strategy,
            n,
            data,
            epsilon,
            delta,
            seed,
            out,
        } => cmd_answer(
            workload, strategy, *n, data, *epsilon, *delta, *seed, out, threads,
        ),
        Command::Verify {
            check,
            n,
            trials,
            seed,
            epsilon,
            out,
        } => cmd_verify(check, *n, *trials, *seed, *epsilon, out, threads),
        Command::Bench {
            n_list,
            strategies,
            workload,
            epsilon,
            out,
        } => cmd_bench(n_list, strategies, workload, *epsilon, out, threads),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_optimize(
    workload: &str,
    n: usize,
    method: &str,
    iters: usize,
    restarts: usize,
    seed: u64,
    regularize: Option<f64>,
    out: &Option<PathBuf>,
    threads: usize,
) -> Result<(), CliError> {
    let mut w = build_workload(workload, n)?;
    if let Some(delta) = regularize {
        if delta.is_nan() || delta <= 0.0 {
            return Err(CliError::Usage("--regularize must be positive".into()));
        }
        let mut rows: Vec<Vec<f64>> = (0..w.rows())
            .map(|i| (0..w.cols()).map(|j| w.entry(i, j)).collect())
            .collect();
        for i in 0..w.cols() {
            let mut r = vec![0.0; w.cols()];
            r[i] = delta;
            rows.push(r);
        }
        w = QueryMatrix::from_rows(&rows)?.with_label(format!("{}+reg", w.label()));
    }

    let opts = OptimizerOptions {
        max_iters: iters,
        restarts,
        seed,
        ..OptimizerOptions::default()
    };

    let reduced = Strategy::new(workload_reduce(&w)?)?;
    let identity = Strategy::new(identity_strategy(w.cols())?)?;
    let svb = svb_optimal_strategy(&w)?;
    let l2 = l2_optimal_profile(&w, &opts)?;
    let descent = min_error_descent(&w, &opts)?;
    let minsens = min_sensitivity(&reduced, &opts)?;
    let augmented = auto_augment(&reduced)?;

    let as_result = |s: &Strategy, name: &str| -> Result<OptimizeResult, CliError> {
        Ok(OptimizeResult {
            objective: total_error(s, &w, 1.0)?.total,
            strategy: s.clone(),
            trace_log: Vec::new(),
            method: name.to_string(),
            converged: true,
        })
    };
    let table: Vec<OptimizeResult> = vec![
        as_result(&identity, "baseline-identity")?,
        as_result(&reduced, "baseline-workload")?,
        svb,
        l2,
        descent,
        as_result(&minsens, "minsens")?,
        as_result(&augmented, "augment")?,
    ];

    let chosen = match method {
        "svb" => 2,
        "l2" => 3,
        "descent" => 4,
        "minsens" => 5,
        "augment" => 6,
        other => {
            return Err(CliError::Usage(format!(
                "unknown method '{other}'; expected svb | l2 | descent | minsens | augment"
            )))
        }
    };

    let reg = regularize
        .map(|d| format!(" --regularize {d}"))
        .unwrap_or_default();
    println!(
        "# matmech optimize --workload {workload} --n {n} --method {method} --iters {iters} \
         --restarts {restarts} --seed {seed} --threads {threads}{reg}{}",
        out_opt(out)
    );
    println!("method,objective_eps1,sensitivity,l2_bound,converged");
    for r in &table {
        println!(
            "{},{},{},{},{}",
            r.method,
            r.objective,
            r.strategy.sensitivity(),
            r.strategy.l2_bound(),
            r.converged
        );
    }
    if let Some(path) = out {
        let mut sink = BufWriter::new(File::create(path)?);
        let header = format!(
            "matmech optimize --workload {workload} --n {n} --method {method} strategy matrix"
        );
        io::write_matrix(&mut sink, table[chosen].strategy.matrix(), &[header])?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_answer(
    workload: &str,
    strategy: &str,
    n: usize,
    data: &Path,
    epsilon: f64,
    delta: Option<f64>,
    seed: u64,
    out: &Option<PathBuf>,
    threads: usize,
) -> Result<(), CliError> {
    let w = build_workload(workload, n)?;
    let x = io::load_vector(data)?;
    if x.len() != w.cols() {
        return Err(CliError::Domain(matmech::Error::DimensionMismatch {
            expected: w.cols(),
            got: x.len(),
        }));
    }
    let delta_flag = delta.map(|d| format!(" --delta {d}")).unwrap_or_default();
    let header = format!(
        "matmech answer --workload {workload} --strategy {strategy} --n {n} --data {} \
         --epsilon {epsilon}{delta_flag} --seed {seed} --threads {threads}{}",
        data.display(),
        out_opt(out)
    );

    let answer = match delta {
        Some(d) => {
            // the Gaussian mechanism answers the workload directly
            let p = PrivacyParams::approximate(epsilon, d)?;
            gaussian_mechanism(&w, &x, &p, seed)?
        }
        None => {
            let a = Strategy::new(build_strategy_matrix(strategy, n)?)?;
            let p = PrivacyParams::pure(epsilon)?;
            matrix_mechanism(&w, &a, &x, &p, seed)?
        }
    };

    let mut sink = open_out(out)?;
    writeln!(sink, "# {header}")?;
    writeln!(
        sink,
        "# strategy_id={} noise_scale={}",
        answer.strategy_id(),
        answer.noise_scale()
    )?;
    writeln!(sink, "query_index,noisy_value")?;
    for (i, v) in answer.values().iter().enumerate() {
        writeln!(sink, "{i},{v}")?;
    }
    Ok(())
}

fn cmd_verify(
    check: &str,
    n: usize,
    trials: usize,
    seed: u64,
    epsilon: f64,
    out: &Option<PathBuf>,
    threads: usize,
) -> Result<(), CliError> {
    let mut sink = open_out(out)?;
    writeln!(
        sink,
        "# matmech verify --check {check} --n {n} --trials {trials} --seed {seed} \
         --epsilon {epsilon} --threads {threads}{}",
        out_opt(out)
    )?;
    let mut all_ok = true;
    match check {
        "mc" => {
            writeln!(sink, "case,max_rel_err,limit,pass")?;
            let x = CountVector::new((0..n).map(|i| (i + 1) as f64).collect())?;
            let cases: Vec<(&str, QueryMatrix, Strategy)> = vec![
                (
                    "identity-on-identity",
                    identity_strategy(n)?,
                    Strategy::new(identity_strategy(n)?)?,
                ),
                (
                    "hier-on-identity",
                    identity_strategy(n)?,
                    Strategy::new(matmech::hierarchical_strategy(n)?)?,
                ),
                (
                    "wavelet-on-ranges",
                    all_range_queries(n)?,
                    Strategy::new(wavelet_strategy(n)?)?,
                ),
            ];
            for (name, w, a) in cases {
                let report = monte_carlo_error(&w, &a, &x, epsilon, trials, seed)?;
                let ok = report.max_rel_err < 0.02;
                all_ok &= ok;
                writeln!(sink, "{name},{},0.02,{ok}", report.max_rel_err)?;
            }
        }
        "lsq" => {
            writeln!(sink, "case,max_abs_deviation,limit,pass")?;
            // all-ranges is full column rank at every n, so the check is not
            // restricted to power-of-two domains
            let a_matrix = all_range_queries(n)?;
            let a = Strategy::new(a_matrix.clone())?;
            let x = CountVector::new((0..n).map(|i| ((i * 7) % 5) as f64).collect())?;
            let p = PrivacyParams::pure(epsilon)?;
            let mut worst = 0.0_f64;
            for t in 0..20 {
                let y = laplace_mechanism(a.matrix(), &x, &p, seed.wrapping_add(t))?;
                let via_pinv = estimate_counts(&a, &y)?;
                let via_oracle = least_squares_oracle(&a_matrix, y.values())?;
                for (g, w) in via_oracle.iter().zip(via_pinv.iter()) {
                    worst = worst.max((g - w).abs());
                }
            }
            let ok = worst < 1e-8;
            all_ok &= ok;
            writeln!(sink, "normal-equations-vs-pseudo-inverse,{worst},1e-8,{ok}")?;
        }
        "haar" => {
            writeln!(sink, "case,max_rel_err,limit,pass")?;
            let report = haar_equivalence_check(n, epsilon, trials, seed)?;
            let ok = report.max_rel_err < 0.03;
            all_ok &= ok;
            writeln!(sink, "haar-covariance,{},0.03,{ok}", report.max_rel_err)?;
        }
        "growth" => {
            writeln!(sink, "kind,n,max_error,total_error,normalized")?;
            let mut grid = Vec::new();
            let mut size = 16usize;
            while size <= n.max(16) {
                grid.push(size);
                size *= 2;
            }
            for kind in [GrowthKind::Hier, GrowthKind::Wavelet, GrowthKind::Identity] {
                let table = thm10_growth_check(kind, &grid)?;
                for row in &table.rows {
                    writeln!(
                        sink,
                        "{},{},{},{},{}",
                        kind.name(),
                        row.n,
                        row.max_error,
                        row.total_error,
                        row.normalized
                    )?;
                }
                let ok = match kind {
                    GrowthKind::Identity => table.rows.iter().all(|r| r.normalized == 1.0),
                    _ => table.band_ratio < 2.0,
                };
                all_ok &= ok;
                writeln!(
                    sink,
                    "# {} band_ratio={} pass={ok}",
                    kind.name(),
                    table.band_ratio
                )?;
            }
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown check '{other}'; expected mc | lsq | haar | growth"
            )))
        }
    }
    writeln!(sink, "# overall: {}", if all_ok { "PASS" } else { "FAIL" })?;
    if all_ok {
        Ok(())
    } else {
        Err(CliError::CheckFailed)
    }
}

fn cmd_bench(
    n_list: &[usize],
    strategies: &[String],
    workload: &str,
    epsilon: f64,
    out: &Option<PathBuf>,
    threads: usize,
) -> Result<(), CliError> {
    let mut sink = open_out(out)?;
    writeln!(
        sink,
        "# matmech bench --n-list {} --strategies {} --workload {workload} \
         --epsilon {epsilon} --threads {threads}{}",
        n_list
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(","),
        strategies.join(","),
        out_opt(out)
    )?;
    writeln!(sink, "n,strategy,workload,total_error,max_error")?;
    for &n in n_list {
        for kind in strategies {
            let matrix = build_strategy_matrix(kind, n)?;
            let sens = matrix.l1_sensitivity();
            let gram = matrix.as_inner().transpose() * matrix.as_inner();
            let chol = Cholesky::new(gram).ok_or(matmech::Error::RankDeficient {
                rank: 0,
                cols: matrix.cols(),
            })?;
            let profile = chol.inverse();
            let (total, max) = if workload == "ranges" {
                let (max, total) = range_sweep_errors(&profile, sens, epsilon);
                (total, max)
            } else {
                let w = build_workload(workload, n)?;
                let a = Strategy::new(matrix.clone())?;
                let report = total_error(&a, &w, epsilon)?;
                (report.total, report.max)
            };
            writeln!(sink, "{n},{kind},{workload},{total},{max}")?;
        }
    }
    Ok(())
}
