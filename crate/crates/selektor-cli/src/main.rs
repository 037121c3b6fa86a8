//! `selektor`: selective inference after model selection from the command
//! line. Subcommands cover the file-drawer cutoff, selective z/t tests for
//! a selected regression coefficient, inference after the lasso, the
//! splitting-vs-carving simulation, the tradeoff sweep, aggregate error
//! checks, and the worked-example gallery.
//!
//! Exit codes: 0 success, 2 precondition errors (bad inputs or flags),
//! 3 numerical failures (samplers, brackets, degenerate tilts).

mod io;

use clap::{Parser, Subcommand};
use selektor_core::harness::{
    aggregate_error_check, example_gallery, file_drawer_cutoff, nominal_conditional_error,
    run_carving_experiment, tradeoff_sweep, AggregateConfig, AggregateKind, CarvingConfig,
    GalleryExample,
};
use selektor_core::lasso::{lambda_mc, lasso_fit, lasso_selection_region};
use selektor_core::regression::{
    selected_t_test, selected_z_test, RegressionError, RegressionProblem, SelectedTestConfig,
    SigmaSpec,
};
use selektor_core::samplers::ChainConfig;
use selektor_core::saturated::{saturated_z_test, SaturatedConfig, SaturatedError};
use selektor_core::umpu::TestOutcome;
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "selektor", version, about = "Selective inference engine")]
struct Cli {
    /// Cap worker threads for replicate-level parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Selective cutoff for the two-sided file-drawer problem.
    Filedrawer {
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        alpha: f64,
    },
    /// Selective z-test (known sigma) for one coefficient of a selected
    /// regression model.
    Ztest {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        sigma: f64,
        /// Use the exact saturated-model test instead of the sampled
        /// selected-model test.
        #[arg(long)]
        saturated: bool,
        #[arg(long, default_value_t = 0.0)]
        null_value: f64,
        #[arg(long)]
        no_ci: bool,
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Selective t-test (unknown sigma) for one coefficient of a selected
    /// regression model.
    Ttest {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value_t = 0.0)]
        null_value: f64,
        /// Also invert the test into an interval over the coefficient
        /// (one chain per bisection step: slow).
        #[arg(long)]
        ci: bool,
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Fit the lasso, build its selection region, and test every active
    /// coefficient selectively.
    LassoInfer {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        response: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        /// Pick lambda as 2 E||X' eps||_inf by Monte Carlo.
        #[arg(long)]
        lambda_mc: bool,
        #[arg(long, default_value_t = 2000)]
        lambda_mc_draws: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = true)]
        condition_signs: std::primitive::bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Data-splitting versus data-carving simulation for one configuration.
    CarveSim {
        #[arg(long)]
        config: PathBuf,
        /// Write the CSV table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Selection-inference tradeoff sweep over first-stage sizes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated n1 grid.
        #[arg(long)]
        n1: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Long-run aggregate error checks.
    Aggregate {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        config: PathBuf,
    },
    /// Worked-example reproductions as JSON artifacts.
    Gallery {
        #[arg(long, value_enum)]
        which: WhichArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(clap::Args)]
struct ProblemArgs {
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    response: PathBuf,
    /// Selected model: comma-separated 1-based column indices.
    #[arg(long)]
    model: String,
    /// Target coefficient: 1-based column index, must be in the model.
    #[arg(long)]
    target: usize,
    /// Selection region JSON file; omitted means no selection.
    #[arg(long)]
    region: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(clap::Args)]
struct ChainArgs {
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    #[arg(long, default_value_t = 5)]
    thin: usize,
    #[arg(long, default_value_t = 20000)]
    n_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, clap::ValueEnum)]
enum KindArg {
    Discipline,
    Fcr,
    Fwer,
}

#[derive(Clone, clap::ValueEnum)]
enum WhichArg {
    Ex2,
    Ex3,
    Ex4,
}

/// Failure category, mapped to the documented exit codes.
enum Failure {
    Precondition(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> ExitCode {
        match self {
            Failure::Precondition(_) => ExitCode::from(2),
            Failure::Numerical(_) => ExitCode::from(3),
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Precondition(m) | Failure::Numerical(m) => m,
        }
    }
}

fn pre<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Precondition(e.to_string())
}

fn classify_regression(e: RegressionError) -> Failure {
    match e {
        RegressionError::Sampler(_)
        | RegressionError::Umpu(_)
        | RegressionError::TruncGauss(_)
        | RegressionError::ExpFam(_) => Failure::Numerical(e.to_string()),
        _ => Failure::Precondition(e.to_string()),
    }
}

fn classify_saturated(e: SaturatedError) -> Failure {
    match e {
        SaturatedError::BracketNotFound { .. } | SaturatedError::TruncGauss(_) => {
            Failure::Numerical(e.to_string())
        }
        SaturatedError::Regression(inner) => classify_regression(inner),
        _ => Failure::Precondition(e.to_string()),
    }
}

#[derive(Serialize)]
struct TestReport {
    p_value: f64,
    ci: Option<(Option<f64>, Option<f64>)>,
    decision: bool,
    alpha: f64,
    diagnostics: DiagnosticsReport,
}

#[derive(Serialize)]
struct DiagnosticsReport {
    ess: f64,
    k1_residual: f64,
    k2_residual: f64,
    seed: u64,
    flags: Vec<String>,
}

impl TestReport {
    fn from_outcome(outcome: &TestOutcome, alpha: f64) -> Self {
        let finite = |v: f64| if v.is_finite() { Some(v) } else { None };
        TestReport {
            p_value: outcome.p_equal_tailed,
            ci: outcome.ci.map(|(lo, hi)| (finite(lo), finite(hi))),
            decision: outcome.reject,
            alpha,
            diagnostics: DiagnosticsReport {
                ess: if outcome.diagnostics.ess.is_finite() {
                    outcome.diagnostics.ess
                } else {
                    -1.0
                },
                k1_residual: outcome.diagnostics.k1_residual,
                k2_residual: outcome.diagnostics.k2_residual,
                seed: outcome.diagnostics.seed,
                flags: outcome
                    .diagnostics
                    .flags
                    .iter()
                    .map(|f| format!("{f:?}"))
                    .collect(),
            },
        }
    }
}

fn env_seed() -> Option<u64> {
    std::env::var("SELEKTOR_SEED").ok()?.parse().ok()
}

fn effective_seed(cli_seed: u64) -> u64 {
    env_seed().unwrap_or(cli_seed)
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serialize"));
}

fn build_problem(
    args: &ProblemArgs,
    sigma: SigmaSpec,
) -> Result<(RegressionProblem, selektor_core::SelectionRegion), Failure> {
    let x = io::read_design(&args.design).map_err(pre)?;
    let y = io::read_response(&args.response).map_err(pre)?;
    if y.len() != x.rows() {
        return Err(Failure::Precondition(format!(
            "design has {} rows but response has {}",
            x.rows(),
            y.len()
        )));
    }
    let model = io::parse_indices(&args.model).map_err(pre)?;
    if args.target == 0 {
        return Err(Failure::Precondition("target is 1-based".into()));
    }
    let target = args.target - 1;
    if model.iter().any(|&j| j >= x.cols()) || target >= x.cols() {
        return Err(Failure::Precondition(
            "model/target index exceeds design width".into(),
        ));
    }
    let n = x.rows();
    let region = match &args.region {
        Some(path) => io::read_region(path, n).map_err(pre)?,
        None => selektor_core::SelectionRegion::full(n),
    };
    Ok((
        RegressionProblem {
            x,
            y,
            model,
            target,
            sigma,
        },
        region,
    ))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Filedrawer { threshold, alpha } => {
            if !(alpha > 0.0 && alpha < 1.0) || threshold < 0.0 {
                return Err(Failure::Precondition(
                    "need alpha in (0,1) and threshold >= 0".into(),
                ));
            }
            #[derive(Serialize)]
            struct Out {
                threshold: f64,
                alpha: f64,
                cutoff: f64,
                nominal_cutoff: f64,
                nominal_conditional_error: f64,
            }
            let nominal = selektor_core::truncgauss::inverse_ln_sf((alpha / 2.0).ln());
            print_json(&Out {
                threshold,
                alpha,
                cutoff: file_drawer_cutoff(threshold, alpha),
                nominal_cutoff: nominal,
                nominal_conditional_error: nominal_conditional_error(threshold, nominal),
            });
            Ok(())
        }
        Command::Ztest {
            problem,
            sigma,
            saturated,
            null_value,
            no_ci,
            chain,
        } => {
            if !(sigma > 0.0) {
                return Err(Failure::Precondition("sigma must be positive".into()));
            }
            let alpha = problem.alpha;
            let (prob, region) = build_problem(&problem, SigmaSpec::Known(sigma))?;
            let seed = effective_seed(chain.seed);
            let outcome = if saturated {
                let cfg = SaturatedConfig {
                    null_value,
                    compute_ci: !no_ci,
                    umau: false,
                    seed,
                };
                saturated_z_test(&prob, &region, alpha, &cfg).map_err(classify_saturated)?
            } else {
                let cfg = SelectedTestConfig {
                    chain: ChainConfig {
                        burn_in: chain.burn_in,
                        thin: chain.thin,
                        n_samples: chain.n_samples,
                        seed,
                    },
                    null_value,
                    compute_ci: !no_ci,
                    umau_ci: false,
                };
                selected_z_test(&prob, &region, alpha, &cfg).map_err(classify_regression)?
            };
            print_json(&TestReport::from_outcome(&outcome, alpha));
            Ok(())
        }
        Command::Ttest {
            problem,
            null_value,
            ci,
            chain,
        } => {
            let alpha = problem.alpha;
            let (prob, region) = build_problem(&problem, SigmaSpec::Unknown)?;
            let cfg = SelectedTestConfig {
                chain: ChainConfig {
                    burn_in: chain.burn_in,
                    thin: chain.thin,
                    n_samples: chain.n_samples,
                    seed: effective_seed(chain.seed),
                },
                null_value,
                compute_ci: ci,
                umau_ci: false,
            };
            let outcome =
                selected_t_test(&prob, &region, alpha, &cfg).map_err(classify_regression)?;
            print_json(&TestReport::from_outcome(&outcome, alpha));
            Ok(())
        }
        Command::LassoInfer {
            design,
            response,
            lambda,
            lambda_mc: use_mc,
            lambda_mc_draws,
            alpha,
            sigma,
            condition_signs,
            seed,
        } => {
            let x = io::read_design(&design).map_err(pre)?;
            let y = io::read_response(&response).map_err(pre)?;
            if y.len() != x.rows() {
                return Err(Failure::Precondition("design/response rows differ".into()));
            }
            let seed = effective_seed(seed);
            let lam = match (lambda, use_mc) {
                (Some(l), false) => l,
                (None, true) => lambda_mc(&x, sigma, lambda_mc_draws, seed),
                _ => {
                    return Err(Failure::Precondition(
                        "give exactly one of --lambda or --lambda-mc".into(),
                    ))
                }
            };
            let fit = lasso_fit(&x, &y, lam, 1e-10, 200_000)
                .map_err(|e| Failure::Numerical(e.to_string()))?;
            #[derive(Serialize)]
            struct VarReport {
                column: usize,
                beta_lasso: f64,
                report: TestReport,
            }
            #[derive(Serialize)]
            struct Out {
                lambda: f64,
                active: Vec<usize>,
                signs: Vec<f64>,
                kkt_residual: f64,
                no_question_selected: bool,
                tests: Vec<VarReport>,
            }
            let mut out = Out {
                lambda: lam,
                active: fit.active.iter().map(|j| j + 1).collect(),
                signs: fit.signs.clone(),
                kkt_residual: fit.kkt_residual,
                no_question_selected: fit.active.is_empty(),
                tests: Vec::new(),
            };
            if !fit.active.is_empty() {
                let region = if condition_signs {
                    lasso_selection_region(&x, lam, &fit.active, &fit.signs)
                        .map_err(|e| Failure::Numerical(e.to_string()))?
                } else {
                    selektor_core::lasso::lasso_selection_region_signfree(&x, lam, &fit.active)
                        .map_err(|e| Failure::Numerical(e.to_string()))?
                };
                for &j in &fit.active {
                    let prob = RegressionProblem {
                        x: x.clone(),
                        y: y.clone(),
                        model: fit.active.clone(),
                        target: j,
                        sigma: SigmaSpec::Known(sigma),
                    };
                    let cfg = SaturatedConfig {
                        null_value: 0.0,
                        compute_ci: true,
                        umau: false,
                        seed,
                    };
                    let outcome = saturated_z_test(&prob, &region, alpha, &cfg)
                        .map_err(classify_saturated)?;
                    out.tests.push(VarReport {
                        column: j + 1,
                        beta_lasso: fit.beta_hat[j],
                        report: TestReport::from_outcome(&outcome, alpha),
                    });
                }
            }
            print_json(&out);
            Ok(())
        }
        Command::CarveSim { config, out } => {
            let text = std::fs::read_to_string(&config).map_err(pre)?;
            let mut cfg: CarvingConfig = serde_json::from_str(&text).map_err(pre)?;
            if let Some(s) = env_seed() {
                cfg.seed = s;
            }
            let table = run_carving_experiment(&cfg).map_err(|e| Failure::Numerical(e.to_string()))?;
            let csv = table.to_csv();
            match out {
                Some(path) => std::fs::write(path, csv).map_err(pre)?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Sweep { config, n1, out } => {
            let text = std::fs::read_to_string(&config).map_err(pre)?;
            let mut cfg: CarvingConfig = serde_json::from_str(&text).map_err(pre)?;
            if let Some(s) = env_seed() {
                cfg.seed = s;
            }
            let grid: Vec<usize> = n1
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| Failure::Precondition("bad --n1 list".into()))?;
            let points =
                tradeoff_sweep(&cfg, &grid).map_err(|e| Failure::Numerical(e.to_string()))?;
            let mut csv = String::from("mode,n1,p_screen,power,power_se,product\n");
            for p in &points {
                csv.push_str(&format!(
                    "{:?},{},{},{},{},{}\n",
                    p.mode, p.n1, p.p_screen, p.power, p.power_se, p.product
                ));
            }
            match out {
                Some(path) => std::fs::write(path, csv).map_err(pre)?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Aggregate { kind, config } => {
            let text = std::fs::read_to_string(&config).map_err(pre)?;
            let mut cfg: AggregateConfig = serde_json::from_str(&text).map_err(pre)?;
            if let Some(s) = env_seed() {
                cfg.seed = s;
            }
            let kind = match kind {
                KindArg::Discipline => AggregateKind::Discipline,
                KindArg::Fcr => AggregateKind::Fcr,
                KindArg::Fwer => AggregateKind::Fwer,
            };
            let report =
                aggregate_error_check(kind, &cfg).map_err(|e| Failure::Numerical(e.to_string()))?;
            print_json(&report);
            Ok(())
        }
        Command::Gallery { which, seed } => {
            let which = match which {
                WhichArg::Ex2 => GalleryExample::Ex2,
                WhichArg::Ex3 => GalleryExample::Ex3,
                WhichArg::Ex4 => GalleryExample::Ex4,
            };
            let artifact = example_gallery(which, effective_seed(seed))
                .map_err(|e| Failure::Numerical(e.to_string()))?;
            print_json(&artifact);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            failure.code()
        }
    }
}
