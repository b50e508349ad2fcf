//! Flat TOML experiment configuration.
//!
//! Every key is optional and unknown keys are rejected. Command-line flags
//! override file values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use lotus_core::linalg::RngState;
use lotus_core::subspace::{ProjectionMethod, ProjectorConfig};
use lotus_core::{LotusHyperparams, MomentPolicy, PolicyKind, SwitchConfig, UpdateRule};

use crate::error::{HarnessError, Result};
use crate::experiment::{RunOptions, ToleranceRule, DEFAULT_TOLERANCE_WINDOW};
use crate::problem::{Dims, ProblemKind, ProblemSpec};
use crate::trace::TraceFormat;

/// Stream of the optimizer's randomness, kept apart from the problem's.
const OPTIMIZER_STREAM: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Avg,
    Rho,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRuleName {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MomentName {
    Reset,
    Project,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionName {
    Randomized,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub rows: usize,
    pub cols: usize,
    pub subspace_rank: usize,
    pub condition: f64,
    pub drift_rate: f64,
    pub noise_std: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub widths: Vec<usize>,
    pub teacher_hidden: usize,
    pub batch_size: usize,
    pub epochs: u64,
    pub seed: u64,

    pub rank: usize,
    /// Problem-specific default when absent.
    pub learning_rate: Option<f64>,
    pub scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub update_rule: UpdateRuleName,
    pub moments: MomentName,
    pub projection: ProjectionName,
    pub oversample: usize,
    pub power_iters: usize,

    pub policy: PolicyName,
    pub gamma: f64,
    pub eta: u64,
    pub t_min: u64,
    pub interval: u64,
    /// Gradient window for the `rho` policy; defaults to `eta`.
    pub window: Option<usize>,

    pub max_steps: u64,
    pub eps: f64,
    pub tolerance_rule: ToleranceRule,
    pub tolerance_window: usize,
    pub timing: bool,
    pub format: TraceFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let dims = Dims::default();
        let switch = SwitchConfig::default();
        let hp = LotusHyperparams::default();
        Self {
            problem: ProblemKind::DriftingStream,
            rows: dims.rows,
            cols: dims.cols,
            subspace_rank: dims.subspace_rank,
            condition: dims.condition,
            drift_rate: 0.01,
            noise_std: 0.01,
            train_samples: dims.train_samples,
            test_samples: dims.test_samples,
            widths: dims.widths,
            teacher_hidden: dims.teacher_hidden,
            batch_size: dims.batch_size,
            epochs: 10,
            seed: 0,
            rank: hp.rank,
            learning_rate: None,
            scale: hp.scale,
            beta1: hp.beta1,
            beta2: hp.beta2,
            adam_eps: hp.eps,
            update_rule: UpdateRuleName::Adam,
            moments: MomentName::Reset,
            projection: ProjectionName::Randomized,
            oversample: hp.projection.range.oversample,
            power_iters: hp.projection.range.power_iters,
            policy: PolicyName::Avg,
            gamma: switch.gamma,
            eta: switch.verify_gap,
            t_min: switch.t_min,
            interval: 500,
            window: None,
            max_steps: 20_000,
            eps: 1.0,
            tolerance_rule: ToleranceRule::Windowed,
            tolerance_window: DEFAULT_TOLERANCE_WINDOW,
            timing: false,
            format: TraceFormat::Csv,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| HarnessError::Toml {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    pub fn problem_spec(&self) -> ProblemSpec {
        ProblemSpec {
            kind: self.problem,
            dims: Dims {
                rows: self.rows,
                cols: self.cols,
                subspace_rank: self.subspace_rank,
                condition: self.condition,
                train_samples: self.train_samples,
                test_samples: self.test_samples,
                widths: self.widths.clone(),
                teacher_hidden: self.teacher_hidden,
                batch_size: self.batch_size,
            },
            drift_rate: self.drift_rate,
            noise_std: self.noise_std,
            seed: RngState::new(self.seed),
        }
    }

    pub fn switch_config(&self, policy: PolicyName) -> SwitchConfig {
        SwitchConfig {
            kind: match policy {
                PolicyName::Avg => PolicyKind::AvgDisplacement,
                PolicyName::Rho => PolicyKind::PathEfficiency,
                PolicyName::Fixed => PolicyKind::FixedInterval,
            },
            gamma: self.gamma,
            verify_gap: self.eta,
            t_min: self.t_min,
            fixed_interval: self.interval,
            window_len: self.window,
        }
    }

    pub fn hyperparams(&self) -> LotusHyperparams {
        let mut projection = ProjectorConfig {
            method: match self.projection {
                ProjectionName::Randomized => ProjectionMethod::Randomized,
                ProjectionName::Exact => ProjectionMethod::Exact,
            },
            ..ProjectorConfig::default()
        };
        projection.range.oversample = self.oversample;
        projection.range.power_iters = self.power_iters;
        LotusHyperparams {
            learning_rate: self
                .learning_rate
                .unwrap_or_else(|| self.problem.default_learning_rate()),
            rank: self.rank,
            scale: self.scale,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            switch: self.switch_config(self.policy),
            projection,
            update_rule: match self.update_rule {
                UpdateRuleName::Adam => UpdateRule::Adam,
                UpdateRuleName::Sgd => UpdateRule::ProjectedSgd,
            },
            moments: match self.moments {
                MomentName::Reset => MomentPolicy::Reset,
                MomentName::Project => MomentPolicy::Project,
            },
            rng: RngState::new(self.seed).fork(OPTIMIZER_STREAM),
        }
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            rule: self.tolerance_rule,
            window: self.tolerance_window,
            record_timing: self.timing,
            ..RunOptions::new(self.max_steps, self.eps)
        }
    }

    /// Checks everything that can be checked without running. Returns
    /// warnings for values outside the recommended ranges.
    pub fn validate(&self) -> Result<Vec<String>> {
        self.problem_spec().validate()?;
        self.run_options().validate()?;
        Ok(self.hyperparams().validate()?)
    }
}
