use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lotus_core::{FullAdam, LotusOptimizer, Optimizer};
use lotus_harness::bench::{account_table, bench_svd, format_account_table, format_svd_table};
use lotus_harness::config::{ExperimentConfig, MomentName, PolicyName, ProjectionName, UpdateRuleName};
use lotus_harness::experiment::{compare_policies, mlp_train_with, run_experiment, RunOutcome, RunStatus};
use lotus_harness::trace::{emit_trace, encode, TraceFormat};
use lotus_harness::{HarnessError, ProblemKind, ToleranceRule};

/// Exit code for bad flags or configuration.
const USAGE_EXIT: u8 = 64;
const ERROR_EXIT: u8 = 1;

#[derive(Parser)]
#[command(
    name = "lotus",
    version,
    about = "Low-rank optimizer experiments with adaptive subspace switching"
)]
struct Cli {
    /// TOML file with experiment settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its trace.
    Run(Common),
    /// Run several switching policies on the same problem and seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Policies to compare.
        #[arg(long, value_delimiter = ',', default_value = "avg,fixed")]
        policies: Vec<PolicyName>,
        /// Run policies on separate threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Train the teacher-student MLP.
    Mlp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<u64>,
        /// Comma-separated layer widths, input first.
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<usize>>,
        /// Use dense Adam instead of the low-rank optimizer.
        #[arg(long)]
        full_adam: bool,
    },
    /// Print the gradient and optimizer-state scalar counts.
    Account {
        /// Shapes as ROWSxCOLS.
        #[arg(long, value_delimiter = ',', default_values_t = [String::from("64x64"), String::from("2048x2048")])]
        shape: Vec<String>,
        /// Ranks; defaults to a quarter of the shorter side of each shape.
        #[arg(long, value_delimiter = ',')]
        rank: Vec<usize>,
    },
    /// Time randomized against exact projector construction.
    BenchSvd {
        #[arg(long, value_delimiter = ',', default_value = "512")]
        size: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        rank: usize,
        #[arg(long, default_value_t = 3)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Default)]
struct Common {
    #[arg(long)]
    problem: Option<ProblemArg>,
    #[arg(long)]
    policy: Option<PolicyName>,
    /// Switch threshold γ of the adaptive policies.
    #[arg(long)]
    gamma: Option<f64>,
    /// Steps between switch checks.
    #[arg(long)]
    eta: Option<u64>,
    /// Minimum steps between switches.
    #[arg(long)]
    t_min: Option<u64>,
    /// Switch interval of the fixed policy.
    #[arg(long)]
    interval: Option<u64>,
    /// Projector rank.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Step budget.
    #[arg(long)]
    max_steps: Option<u64>,
    /// Gradient tolerance ε.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    tolerance_rule: Option<ToleranceRule>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Multiplier on the lifted low-rank update.
    #[arg(long)]
    scale: Option<f64>,
    /// Rotation per step of the stream's active subspace, in radians.
    #[arg(long)]
    drift: Option<f64>,
    /// Standard deviation of the stream's gradient noise.
    #[arg(long)]
    noise: Option<f64>,
    /// Parameter rows.
    #[arg(long)]
    rows: Option<usize>,
    /// Parameter columns.
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    update_rule: Option<UpdateRuleName>,
    #[arg(long)]
    moments: Option<MomentName>,
    #[arg(long)]
    projection: Option<ProjectionName>,
    /// Record per-step wall time (makes traces run-dependent).
    #[arg(long)]
    timing: bool,
    /// Trace destination; a directory for `compare`. Stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<TraceFormat>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ProblemArg {
    Stream,
    Quadratic,
    Logistic,
    Mlp,
}

impl Common {
    fn apply(&self, c: &mut ExperimentConfig) {
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag.clone() { c.$field = v; })*
            };
        }
        set!(policy => policy, gamma => gamma, eta => eta, t_min => t_min, interval => interval,
             rank => rank, seed => seed, max_steps => max_steps, eps => eps,
             tolerance_rule => tolerance_rule, scale => scale,
             drift => drift_rate, noise => noise_std, rows => rows, cols => cols,
             update_rule => update_rule, moments => moments, projection => projection, format => format);
        if let Some(p) = self.problem {
            c.problem = match p {
                ProblemArg::Stream => ProblemKind::DriftingStream,
                ProblemArg::Quadratic => ProblemKind::Quadratic,
                ProblemArg::Logistic => ProblemKind::Logistic,
                ProblemArg::Mlp => ProblemKind::Mlp,
            };
        }
        if self.lr.is_some() {
            c.learning_rate = self.lr;
        }
        c.timing |= self.timing;
    }
}

fn load_config(path: Option<&Path>, common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut c = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    common.apply(&mut c);
    for w in c.validate()? {
        eprintln!("warning: {w}");
    }
    Ok(c)
}

fn write_trace(outcome: &RunOutcome, out: Option<&Path>, format: TraceFormat) -> Result<(), HarnessError> {
    match out {
        Some(path) => emit_trace(&outcome.trace, path, format),
        None => {
            let text = encode(&outcome.trace, format);
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|source| HarnessError::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

fn summarize(label: &str, o: &RunOutcome) {
    let status = match &o.status {
        RunStatus::Converged { step } => format!("converged at step {step}"),
        RunStatus::BudgetExhausted => "step budget exhausted".into(),
        RunStatus::NumericalFailure { step, message } => format!("numerical failure at step {step}: {message}"),
    };
    eprintln!(
        "{label}: {status}; switches {} projector builds {} final loss {:.6e} wall {:.1} ms",
        o.switches,
        o.projector_builds,
        o.final_loss().unwrap_or(f64::NAN),
        o.wall_time_us as f64 / 1e3
    );
}

fn parse_shape(s: &str) -> Result<(usize, usize), HarnessError> {
    let bad = || HarnessError::Config(format!("shape {s:?} is not ROWSxCOLS"));
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let shape = (
        r.trim().parse().map_err(|_| bad())?,
        c.trim().parse().map_err(|_| bad())?,
    );
    if shape.0 == 0 || shape.1 == 0 {
        return Err(bad());
    }
    Ok(shape)
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

fn execute(cli: Cli) -> Result<u8, HarnessError> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Run(common) => {
            let c = load_config(config, &common)?;
            let outcome = run_experiment(&c.problem_spec(), &c.hyperparams(), &c.run_options())?;
            write_trace(&outcome, common.out.as_deref(), c.format)?;
            summarize("run", &outcome);
            Ok(outcome.status.exit_code())
        }
        Command::Compare {
            common,
            policies,
            parallel,
        } => {
            let c = load_config(config, &common)?;
            let switches: Vec<_> = policies.iter().map(|&p| c.switch_config(p)).collect();
            let report = compare_policies(
                &c.problem_spec(),
                &c.hyperparams(),
                &switches,
                &c.run_options(),
                parallel,
            )?;
            print!("{}", report.table());
            if let Some(dir) = &common.out {
                std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
                    path: dir.clone(),
                    source,
                })?;
                let ext = match c.format {
                    TraceFormat::Csv => "csv",
                    TraceFormat::Json => "json",
                };
                for (i, r) in report.results.iter().enumerate() {
                    let path = dir.join(format!("{i}-{}.{ext}", slug(&r.label)));
                    emit_trace(&r.outcome.trace, &path, c.format)?;
                }
            }
            let statuses = report.results.iter().map(|r| r.outcome.status.exit_code());
            Ok(statuses.fold(0, |acc, code| if code == 3 || acc == 3 { 3 } else { acc.max(code) }))
        }
        Command::Mlp {
            common,
            epochs,
            widths,
            full_adam,
        } => {
            let mut c = load_config(config, &common)?;
            c.problem = ProblemKind::Mlp;
            if let Some(w) = widths {
                c.widths = w;
            }
            if let Some(e) = epochs {
                c.epochs = e;
            }
            let hp = c.hyperparams();
            let mut optimizer: Box<dyn Optimizer> = if full_adam {
                Box::new(FullAdam::from_hyperparams(&hp))
            } else {
                Box::new(LotusOptimizer::new(hp)?)
            };
            let outcome = mlp_train_with(&c.problem_spec(), optimizer.as_mut(), c.epochs, &c.run_options())?;
            write_trace(&outcome.run, common.out.as_deref(), c.format)?;
            for (e, (acc, loss)) in outcome.test_accuracy.iter().zip(&outcome.test_loss).enumerate() {
                eprintln!("epoch {:>4}: held-out loss {loss:.6e} accuracy {acc:.4}", e + 1);
            }
            eprintln!("final train loss {:.6e}", outcome.final_train_loss);
            summarize(&optimizer.name(), &outcome.run);
            // finishing the epoch budget is the normal end of training
            Ok(match outcome.run.status {
                RunStatus::NumericalFailure { .. } => 3,
                _ => 0,
            })
        }
        Command::Account { shape, rank } => {
            let shapes = shape.iter().map(|s| parse_shape(s)).collect::<Result<Vec<_>, _>>()?;
            let reports = if rank.is_empty() {
                shapes
                    .iter()
                    .flat_map(|&s| account_table(&[s], &[(s.0.min(s.1) / 4).max(1)]))
                    .collect()
            } else {
                account_table(&shapes, &rank)
            };
            print!("{}", format_account_table(&reports));
            Ok(0)
        }
        Command::BenchSvd { size, rank, runs, seed } => {
            let rows = size
                .iter()
                .map(|&n| bench_svd(n, n, rank, runs.max(1), seed))
                .collect::<Result<Vec<_>, _>>()?;
            print!("{}", format_svd_table(&rows));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE_EXIT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                HarnessError::Config(_) | HarnessError::Toml { .. } => USAGE_EXIT,
                HarnessError::Core(ref c) if matches!(c, lotus_core::LotusError::InvalidConfig(_)) => USAGE_EXIT,
                _ => ERROR_EXIT,
            };
            ExitCode::from(code)
        }
    }
}
