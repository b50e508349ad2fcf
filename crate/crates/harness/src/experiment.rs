//! Training loop, tolerance rules and policy comparisons.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use lotus_core::{
    DenseMatrix, FullAdam, LotusError, LotusHyperparams, LotusOptimizer, Optimizer, PolicyKind, SwitchConfig,
};

use crate::error::{HarnessError, Result};
use crate::mlp::TeacherStudent;
use crate::problem::{Objective, ProblemKind, ProblemSpec};
use crate::trace::{RunTrace, TraceRecord};

pub const DEFAULT_TOLERANCE_WINDOW: usize = 50;
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// How `G_t = |g_t|²` is turned into a stopping decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceRule {
    /// Mean of `G_t` over the last `window` steps falls below `ε`.
    Windowed,
    /// `Σ_{s<=t} G_s <= ε`, read literally. Nondecreasing, so it either
    /// holds from the first step or never.
    Cumulative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub max_steps: u64,
    pub tolerance: f64,
    pub rule: ToleranceRule,
    pub window: usize,
    /// Store per-step wall time in the trace. Off by default so traces are
    /// byte-identical across runs.
    pub record_timing: bool,
    /// Abort when the loss exceeds this value.
    pub divergence_limit: Option<f64>,
}

impl RunOptions {
    pub fn new(max_steps: u64, tolerance: f64) -> Self {
        Self {
            max_steps,
            tolerance,
            rule: ToleranceRule::Windowed,
            window: DEFAULT_TOLERANCE_WINDOW,
            record_timing: false,
            divergence_limit: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(HarnessError::Config("max_steps must be >= 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(HarnessError::Config(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.window == 0 {
            return Err(HarnessError::Config("tolerance window must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Converged { step: u64 },
    BudgetExhausted,
    NumericalFailure { step: u64, message: String },
}

impl RunStatus {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunStatus::Converged { .. } => 0,
            RunStatus::BudgetExhausted => 2,
            RunStatus::NumericalFailure { .. } => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: RunTrace,
    pub status: RunStatus,
    pub switches: u64,
    pub projector_builds: u64,
    pub wall_time_us: u64,
    pub final_params: Vec<DenseMatrix>,
}

impl RunOutcome {
    /// `N`, the step at which the tolerance was met.
    pub fn steps_to_tolerance(&self) -> Option<u64> {
        match self.status {
            RunStatus::Converged { step } => Some(step),
            _ => None,
        }
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.trace.last().map(|r| r.loss)
    }
}

fn is_numerical(e: &LotusError) -> bool {
    matches!(
        e,
        LotusError::NonFinite { .. }
            | LotusError::NonFiniteGradient { .. }
            | LotusError::SvdNotConverged { .. }
            | LotusError::RankDeficient { .. }
    )
}

struct Tolerance {
    rule: ToleranceRule,
    eps: f64,
    window: usize,
    recent: VecDeque<f64>,
    total: f64,
}

impl Tolerance {
    fn new(opts: &RunOptions) -> Self {
        Self {
            rule: opts.rule,
            eps: opts.tolerance,
            window: opts.window,
            recent: VecDeque::with_capacity(opts.window),
            total: 0.0,
        }
    }

    fn push(&mut self, g: f64) -> bool {
        match self.rule {
            ToleranceRule::Cumulative => {
                self.total += g;
                self.total <= self.eps
            }
            ToleranceRule::Windowed => {
                if self.recent.len() == self.window {
                    self.recent.pop_front();
                }
                self.recent.push_back(g);
                self.recent.len() == self.window && self.recent.iter().sum::<f64>() / (self.window as f64) < self.eps
            }
        }
    }
}

/// Runs `optimizer` on `objective` from its initial parameters.
///
/// `after_step` sees the step number and the updated parameters; the MLP
/// driver uses it for held-out evaluation.
pub fn drive(
    objective: &dyn Objective,
    optimizer: &mut dyn Optimizer,
    opts: &RunOptions,
    after_step: &mut dyn FnMut(u64, &[DenseMatrix]) -> Result<()>,
) -> Result<RunOutcome> {
    opts.validate()?;
    let started = Instant::now();
    let mut params = objective.initial_params();
    let mut trace = RunTrace::default();
    let mut tolerance = Tolerance::new(opts);
    let mut switches = 0;
    let mut status = RunStatus::BudgetExhausted;
    for t in 1..=opts.max_steps {
        let eval = objective.evaluate(&params, t)?;
        let limit = opts.divergence_limit.unwrap_or(f64::INFINITY);
        if !eval.loss.is_finite() || eval.loss > limit {
            status = RunStatus::NumericalFailure {
                step: t,
                message: format!("loss {} exceeds divergence limit {limit:e}", eval.loss),
            };
            break;
        }
        let clock = Instant::now();
        let report = match optimizer.step(&mut params, &eval.grads, t) {
            Ok(r) => r,
            Err(e) if is_numerical(&e) => {
                status = RunStatus::NumericalFailure {
                    step: t,
                    message: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let elapsed = clock.elapsed().as_micros() as u64;
        let switched = report.switches();
        switches += switched;
        trace.records.push(TraceRecord {
            step: t,
            loss: eval.loss,
            grad_norm: eval.grad_norm_sq.sqrt(),
            criterion_value: report.criterion(),
            switched: switched > 0,
            step_wall_time_us: if opts.record_timing { elapsed } else { 0 },
            cumulative_switches: switches,
        });
        after_step(t, &params)?;
        if tolerance.push(eval.grad_norm_sq) {
            status = RunStatus::Converged { step: t };
            break;
        }
    }
    Ok(RunOutcome {
        trace,
        status,
        switches,
        projector_builds: optimizer.projector_builds(),
        wall_time_us: started.elapsed().as_micros() as u64,
        final_params: params,
    })
}

/// Lotus on `problem` with hyperparameters `hp`.
pub fn run_experiment(problem: &ProblemSpec, hp: &LotusHyperparams, opts: &RunOptions) -> Result<RunOutcome> {
    let objective = problem.build()?;
    let mut optimizer = LotusOptimizer::new(*hp)?;
    drive(objective.as_ref(), &mut optimizer, opts, &mut |_, _| Ok(()))
}

/// Dense Adam with the learning rate and betas of `hp`.
pub fn run_full_adam(problem: &ProblemSpec, hp: &LotusHyperparams, opts: &RunOptions) -> Result<RunOutcome> {
    let objective = problem.build()?;
    let mut optimizer = FullAdam::from_hyperparams(hp);
    drive(objective.as_ref(), &mut optimizer, opts, &mut |_, _| Ok(()))
}

pub fn policy_label(cfg: &SwitchConfig) -> String {
    match cfg.kind {
        PolicyKind::AvgDisplacement => format!("avg(gamma={},eta={},t_min={})", cfg.gamma, cfg.verify_gap, cfg.t_min),
        PolicyKind::PathEfficiency => format!("rho(gamma={},eta={},t_min={})", cfg.gamma, cfg.verify_gap, cfg.t_min),
        PolicyKind::FixedInterval => format!("fixed({})", cfg.fixed_interval),
    }
}

#[derive(Debug, Clone)]
pub struct PolicyResult {
    pub label: String,
    pub policy: SwitchConfig,
    pub outcome: RunOutcome,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub problem: ProblemKind,
    pub results: Vec<PolicyResult>,
}

impl ComparisonReport {
    /// One line per policy: label, N, switches, projector builds, wall time.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<36} {:>10} {:>9} {:>9} {:>12} {:>14}\n",
            "policy", "N", "switches", "builds", "wall_ms", "final_loss"
        );
        for r in &self.results {
            let n = r
                .outcome
                .steps_to_tolerance()
                .map_or_else(|| "-".to_string(), |n| n.to_string());
            out.push_str(&format!(
                "{:<36} {:>10} {:>9} {:>9} {:>12.1} {:>14.6e}\n",
                r.label,
                n,
                r.outcome.switches,
                r.outcome.projector_builds,
                r.outcome.wall_time_us as f64 / 1e3,
                r.outcome.final_loss().unwrap_or(f64::NAN),
            ));
        }
        out
    }
}

/// Runs every policy on the same problem instance with the same seeds, so
/// the gradient noise and projector sketches are shared across policies.
/// With `parallel` the runs execute on separate threads; results do not
/// depend on it.
pub fn compare_policies(
    problem: &ProblemSpec,
    hp_base: &LotusHyperparams,
    policies: &[SwitchConfig],
    opts: &RunOptions,
    parallel: bool,
) -> Result<ComparisonReport> {
    if policies.len() < 2 {
        return Err(HarnessError::Config(format!(
            "need at least two policies, got {}",
            policies.len()
        )));
    }
    opts.validate()?;
    let objective = problem.build()?;
    let objective: &dyn Objective = objective.as_ref();
    let run_one = |policy: &SwitchConfig| -> Result<PolicyResult> {
        let hp = LotusHyperparams {
            switch: *policy,
            ..*hp_base
        };
        let mut optimizer = LotusOptimizer::new(hp)?;
        let outcome = drive(objective, &mut optimizer, opts, &mut |_, _| Ok(()))?;
        Ok(PolicyResult {
            label: policy_label(policy),
            policy: *policy,
            outcome,
        })
    };
    let results = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = policies.iter().map(|p| s.spawn(move || run_one(p))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("policy run panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        policies.iter().map(run_one).collect::<Result<Vec<_>>>()?
    };
    Ok(ComparisonReport {
        problem: problem.kind,
        results,
    })
}

#[derive(Debug, Clone)]
pub struct MlpOutcome {
    pub run: RunOutcome,
    /// Held-out accuracy after each completed epoch.
    pub test_accuracy: Vec<f64>,
    /// Held-out cross-entropy after each completed epoch.
    pub test_loss: Vec<f64>,
    /// Cross-entropy on the whole training set at the end.
    pub final_train_loss: f64,
}

/// Trains the teacher-student MLP with `optimizer` for `epochs` epochs.
/// The epoch budget replaces `opts.max_steps`, the gradient tolerance is
/// ignored, and the divergence detector is always on.
pub fn mlp_train_with(
    spec: &ProblemSpec,
    optimizer: &mut dyn Optimizer,
    epochs: u64,
    opts: &RunOptions,
) -> Result<MlpOutcome> {
    if spec.kind != ProblemKind::Mlp {
        return Err(HarnessError::Config(format!(
            "mlp_train needs an mlp problem, got {:?}",
            spec.kind
        )));
    }
    spec.validate()?;
    let d = &spec.dims;
    let task = TeacherStudent::new(
        &d.widths,
        d.teacher_hidden,
        d.train_samples,
        d.test_samples,
        d.batch_size,
        spec.seed,
    )?;
    let per_epoch = task.steps_per_epoch();
    let opts = RunOptions {
        max_steps: epochs * per_epoch,
        tolerance: f64::MIN_POSITIVE,
        rule: ToleranceRule::Windowed,
        divergence_limit: Some(opts.divergence_limit.unwrap_or(DIVERGENCE_LIMIT)),
        ..opts.clone()
    };
    let mut test_accuracy = Vec::new();
    let mut test_loss = Vec::new();
    let run = drive(&task, optimizer, &opts, &mut |t, params| {
        if t % per_epoch == 0 {
            test_accuracy.push(task.test_accuracy(params)?);
            test_loss.push(task.test_loss(params)?);
        }
        Ok(())
    })?;
    let final_train_loss = task.train_loss(&run.final_params)?;
    Ok(MlpOutcome {
        run,
        test_accuracy,
        test_loss,
        final_train_loss,
    })
}

pub fn mlp_train(spec: &ProblemSpec, hp: &LotusHyperparams, epochs: u64, opts: &RunOptions) -> Result<MlpOutcome> {
    let mut optimizer = LotusOptimizer::new(*hp)?;
    mlp_train_with(spec, &mut optimizer, epochs, opts)
}
