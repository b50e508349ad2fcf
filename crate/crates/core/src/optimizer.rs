//! The low-rank Adam optimizer with adaptive subspace switching.
//!
//! Each weight matrix keeps its Adam moments in the compressed shape of its
//! current projector. A step projects the gradient, records it with the
//! displacement tracker, updates the moments, applies the lifted update, and
//! finally asks the policy whether to rebuild the projector from the current
//! gradient.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{LotusError, Result, Shape};
use crate::linalg::{DenseMatrix, RngState};
use crate::policy::{should_switch, DisplacementTracker, PolicyKind, SwitchConfig};
use crate::subspace::{compute_projector, Projector, ProjectorConfig, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Adam on the compressed gradient.
    Adam,
    /// Plain projected gradient descent: moments disabled.
    ProjectedSgd,
}

/// What happens to the compressed moments when the subspace changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentPolicy {
    /// Zero both moments and restart bias correction.
    Reset,
    /// Carry moments through the change of basis `Q_newᵀ Q_old`; the second
    /// moment uses the element-wise squared transition so it stays nonnegative.
    Project,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LotusHyperparams {
    pub learning_rate: f64,
    pub rank: usize,
    /// Multiplier on the lifted update.
    pub scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub switch: SwitchConfig,
    pub projection: ProjectorConfig,
    pub update_rule: UpdateRule,
    pub moments: MomentPolicy,
    pub rng: RngState,
}

impl Default for LotusHyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            rank: 8,
            scale: 0.25,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            switch: SwitchConfig::default(),
            projection: ProjectorConfig::default(),
            update_rule: UpdateRule::Adam,
            moments: MomentPolicy::Reset,
            rng: RngState::new(0),
        }
    }
}

impl LotusHyperparams {
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |msg: String| Err(LotusError::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.rank == 0 {
            return bad("rank must be positive".into());
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad(format!("scale must be positive, got {}", self.scale));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        self.switch.validate()
    }
}

/// Per-step record for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: u64,
    pub criterion: f64,
    pub switched: bool,
    /// A switch was due but the new projector could not be built.
    pub switch_skipped: bool,
    /// The projected gradient was exactly zero and was not recorded.
    pub unrecorded: bool,
    /// The path-efficiency window cancelled to zero.
    pub degenerate: bool,
    pub projector_builds: u64,
    pub elapsed_us: u64,
}

/// Optimizer state for one weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOptState {
    projector: Projector,
    tracker: DisplacementTracker,
    m1: DenseMatrix,
    m2: DenseMatrix,
    adam_step: u64,
    switch_count: u64,
    weight_shape: Shape,
    rank: usize,
    rng: RngState,
}

fn check_gradient(g: &DenseMatrix) -> Result<()> {
    g.check_finite().map_err(|e| match e {
        LotusError::NonFinite { row, col, value } => LotusError::NonFiniteGradient { row, col, value },
        other => other,
    })
}

fn tracker_window(cfg: &SwitchConfig) -> Option<usize> {
    (cfg.kind == PolicyKind::PathEfficiency).then(|| cfg.window())
}

impl LayerOptState {
    /// Builds the first projector from `first_grad` and starts the tracker
    /// (`T = 1`). Rank is capped at the shorter weight dimension.
    pub fn init(weight_shape: Shape, first_grad: &DenseMatrix, hp: &LotusHyperparams, step: u64) -> Result<Self> {
        if first_grad.shape() != weight_shape {
            return Err(LotusError::DimensionMismatch {
                op: "init_layer",
                left: weight_shape,
                right: first_grad.shape(),
            });
        }
        check_gradient(first_grad)?;
        let rank = hp.rank.min(weight_shape.0.min(weight_shape.1));
        let projector = compute_projector(first_grad, rank, hp.rng.fork(0), &hp.projection, step)?;
        let mut tracker = DisplacementTracker::new(tracker_window(&hp.switch), weight_shape);
        tracker.reset(&projector.project(first_grad)?, step)?;
        let (cr, cc) = projector.compressed_shape(weight_shape);
        Ok(Self {
            projector,
            tracker,
            m1: DenseMatrix::zeros(cr, cc),
            m2: DenseMatrix::zeros(cr, cc),
            adam_step: 0,
            switch_count: 0,
            weight_shape,
            rank,
            rng: hp.rng,
        })
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn tracker(&self) -> &DisplacementTracker {
        &self.tracker
    }

    pub fn first_moment(&self) -> &DenseMatrix {
        &self.m1
    }

    pub fn second_moment(&self) -> &DenseMatrix {
        &self.m2
    }

    pub fn adam_step(&self) -> u64 {
        self.adam_step
    }

    pub fn switch_count(&self) -> u64 {
        self.switch_count
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Projector constructions so far, including initialization.
    pub fn projector_builds(&self) -> u64 {
        self.switch_count + 1
    }

    /// One optimizer step at global step `t`. On error nothing is mutated.
    pub fn step(
        &mut self,
        weight: &mut DenseMatrix,
        g_full: &DenseMatrix,
        hp: &LotusHyperparams,
        t: u64,
    ) -> Result<StepDiagnostics> {
        let started = Instant::now();
        if weight.shape() != self.weight_shape || g_full.shape() != self.weight_shape {
            return Err(LotusError::DimensionMismatch {
                op: "step",
                left: weight.shape(),
                right: g_full.shape(),
            });
        }
        check_gradient(g_full)?;

        let g_low = self.projector.project(g_full)?;
        let unrecorded = match self.tracker.record_step(&g_low, g_full) {
            Ok(()) => false,
            Err(LotusError::ZeroGradient) => true,
            Err(e) => return Err(e),
        };

        let update = match hp.update_rule {
            UpdateRule::Adam => self.adam_update(&g_low, hp),
            UpdateRule::ProjectedSgd => g_low,
        };
        let lifted = self.projector.project_back(&update)?;
        weight.add_scaled(-hp.learning_rate * hp.scale, &lifted)?;

        let decision = should_switch(&self.tracker, &self.projector, &hp.switch, t)?;
        let mut switched = false;
        let mut switch_skipped = false;
        if decision.switch {
            match self.rebuild(g_full, hp, t) {
                Ok(()) => switched = true,
                Err(LotusError::ZeroGradient) => switch_skipped = true,
                Err(e) => return Err(e),
            }
        }

        Ok(StepDiagnostics {
            step: t,
            criterion: decision.criterion,
            switched,
            switch_skipped,
            unrecorded,
            degenerate: decision.degenerate,
            projector_builds: self.projector_builds(),
            elapsed_us: started.elapsed().as_micros() as u64,
        })
    }

    fn adam_update(&mut self, g_low: &DenseMatrix, hp: &LotusHyperparams) -> DenseMatrix {
        self.adam_step += 1;
        adam_moments(&mut self.m1, &mut self.m2, g_low, hp.beta1, hp.beta2);
        adam_direction(&self.m1, &self.m2, self.adam_step, hp.beta1, hp.beta2, hp.eps)
    }

    fn rebuild(&mut self, g_full: &DenseMatrix, hp: &LotusHyperparams, t: u64) -> Result<()> {
        let builds = self.projector_builds();
        let next = compute_projector(g_full, self.rank, self.rng.fork(builds), &hp.projection, t)?;
        let g_low = next.project(g_full)?;
        let mut tracker = self.tracker.clone();
        tracker.reset(&g_low, t)?;

        match hp.moments {
            MomentPolicy::Reset => {
                self.m1 = DenseMatrix::zeros(self.m1.rows(), self.m1.cols());
                self.m2 = DenseMatrix::zeros(self.m2.rows(), self.m2.cols());
                self.adam_step = 0;
            }
            MomentPolicy::Project => {
                // transition[i][j] = <q_new_i, q_old_j>
                let transition = next.basis().t_matmul(self.projector.basis())?;
                let squared = transition.map(|v| v * v);
                match next.side() {
                    Side::Left => {
                        self.m1 = transition.matmul(&self.m1)?;
                        self.m2 = squared.matmul(&self.m2)?;
                    }
                    Side::Right => {
                        self.m1 = self.m1.matmul_t(&transition)?;
                        self.m2 = self.m2.matmul_t(&squared)?;
                    }
                }
            }
        }
        self.projector = next;
        self.tracker = tracker;
        self.switch_count += 1;
        Ok(())
    }
}

/// `m1 ← β₁m1 + (1−β₁)g`, `m2 ← β₂m2 + (1−β₂)g²`.
fn adam_moments(m1: &mut DenseMatrix, m2: &mut DenseMatrix, g: &DenseMatrix, beta1: f64, beta2: f64) {
    let g = g.as_slice();
    for (m, &gi) in m1.as_mut_slice().iter_mut().zip(g) {
        *m = beta1 * *m + (1.0 - beta1) * gi;
    }
    for (v, &gi) in m2.as_mut_slice().iter_mut().zip(g) {
        *v = beta2 * *v + (1.0 - beta2) * gi * gi;
    }
}

/// Bias-corrected `m̂1 / (√m̂2 + eps)`.
fn adam_direction(m1: &DenseMatrix, m2: &DenseMatrix, t: u64, beta1: f64, beta2: f64, eps: f64) -> DenseMatrix {
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    let data = m1
        .as_slice()
        .iter()
        .zip(m2.as_slice())
        .map(|(&m, &v)| (m / c1) / ((v / c2).sqrt() + eps))
        .collect();
    DenseMatrix::new(m1.rows(), m1.cols(), data).expect("finite moments")
}

/// Dense Adam state for parameters that are not projected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m1: DenseMatrix,
    m2: DenseMatrix,
    step: u64,
}

impl AdamState {
    pub fn new(shape: Shape) -> Self {
        Self {
            m1: DenseMatrix::zeros(shape.0, shape.1),
            m2: DenseMatrix::zeros(shape.0, shape.1),
            step: 0,
        }
    }

    pub fn step(
        &mut self,
        weight: &mut DenseMatrix,
        grad: &DenseMatrix,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Result<()> {
        if grad.shape() != self.m1.shape() || weight.shape() != self.m1.shape() {
            return Err(LotusError::DimensionMismatch {
                op: "adam step",
                left: self.m1.shape(),
                right: grad.shape(),
            });
        }
        check_gradient(grad)?;
        self.step += 1;
        adam_moments(&mut self.m1, &mut self.m2, grad, beta1, beta2);
        let dir = adam_direction(&self.m1, &self.m2, self.step, beta1, beta2, eps);
        weight.add_scaled(-lr, &dir)
    }
}

/// Aggregate of one optimizer step over all parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerStepReport {
    /// Per projected layer, in parameter order.
    pub layers: Vec<StepDiagnostics>,
}

impl OptimizerStepReport {
    pub fn switches(&self) -> u64 {
        self.layers.iter().filter(|d| d.switched).count() as u64
    }

    /// Criterion of the first projected layer, or 0 when there is none.
    pub fn criterion(&self) -> f64 {
        self.layers.first().map_or(0.0, |d| d.criterion)
    }
}

/// A multi-parameter optimizer driven by a training loop.
pub trait Optimizer {
    fn step(&mut self, params: &mut [DenseMatrix], grads: &[DenseMatrix], t: u64) -> Result<OptimizerStepReport>;

    fn name(&self) -> String;

    /// Projector constructions so far across all layers.
    fn projector_builds(&self) -> u64 {
        0
    }
}

/// Plain Adam on every parameter.
#[derive(Debug, Clone)]
pub struct FullAdam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    states: Vec<AdamState>,
}

impl FullAdam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            states: Vec::new(),
        }
    }

    pub fn from_hyperparams(hp: &LotusHyperparams) -> Self {
        Self::new(hp.learning_rate, hp.beta1, hp.beta2, hp.eps)
    }
}

fn check_param_grads(params: &[DenseMatrix], grads: &[DenseMatrix]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(LotusError::DimensionMismatch {
            op: "optimizer step (parameter count)",
            left: (params.len(), 1),
            right: (grads.len(), 1),
        });
    }
    for g in grads {
        check_gradient(g)?;
    }
    Ok(())
}

impl Optimizer for FullAdam {
    fn step(&mut self, params: &mut [DenseMatrix], grads: &[DenseMatrix], _t: u64) -> Result<OptimizerStepReport> {
        check_param_grads(params, grads)?;
        if self.states.is_empty() {
            self.states = params.iter().map(|p| AdamState::new(p.shape())).collect();
        }
        for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.states) {
            s.step(p, g, self.lr, self.beta1, self.beta2, self.eps)?;
        }
        Ok(OptimizerStepReport::default())
    }

    fn name(&self) -> String {
        "full-adam".into()
    }
}

#[derive(Debug, Clone)]
enum ParamSlot {
    Pending,
    Projected(Box<LayerOptState>),
    Dense(AdamState),
}

/// Low-rank optimizer over a list of parameters. Matrices whose shorter side
/// exceeds 1 are projected; vectors (biases) get dense Adam with the same
/// hyperparameters and no scale factor.
#[derive(Debug, Clone)]
pub struct LotusOptimizer {
    hp: LotusHyperparams,
    slots: Vec<ParamSlot>,
}

impl LotusOptimizer {
    pub fn new(hp: LotusHyperparams) -> Result<Self> {
        hp.validate()?;
        Ok(Self { hp, slots: Vec::new() })
    }

    pub fn hyperparams(&self) -> &LotusHyperparams {
        &self.hp
    }

    /// States of the projected layers (initialized ones only).
    pub fn layer_states(&self) -> impl Iterator<Item = &LayerOptState> {
        self.slots.iter().filter_map(|s| match s {
            ParamSlot::Projected(l) => Some(l.as_ref()),
            _ => None,
        })
    }

    pub fn switch_count(&self) -> u64 {
        self.layer_states().map(LayerOptState::switch_count).sum()
    }
}

impl Optimizer for LotusOptimizer {
    fn step(&mut self, params: &mut [DenseMatrix], grads: &[DenseMatrix], t: u64) -> Result<OptimizerStepReport> {
        check_param_grads(params, grads)?;
        if self.slots.is_empty() {
            self.slots = vec![ParamSlot::Pending; params.len()];
        }
        let mut report = OptimizerStepReport::default();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if let ParamSlot::Pending = self.slots[i] {
                self.slots[i] = if p.rows().min(p.cols()) > 1 {
                    let hp = LotusHyperparams {
                        rng: self.hp.rng.fork(i as u64),
                        ..self.hp
                    };
                    let state = LayerOptState::init(p.shape(), g, &hp, t.saturating_sub(1))?;
                    ParamSlot::Projected(Box::new(state))
                } else {
                    ParamSlot::Dense(AdamState::new(p.shape()))
                };
            }
            match &mut self.slots[i] {
                ParamSlot::Projected(state) => {
                    let hp = LotusHyperparams {
                        rng: self.hp.rng.fork(i as u64),
                        ..self.hp
                    };
                    report.layers.push(state.step(p, g, &hp, t)?);
                }
                ParamSlot::Dense(state) => match self.hp.update_rule {
                    UpdateRule::Adam => {
                        state.step(p, g, self.hp.learning_rate, self.hp.beta1, self.hp.beta2, self.hp.eps)?
                    }
                    UpdateRule::ProjectedSgd => p.add_scaled(-self.hp.learning_rate, g)?,
                },
                ParamSlot::Pending => unreachable!("initialized above"),
            }
        }
        Ok(report)
    }

    fn name(&self) -> String {
        let policy = match self.hp.switch.kind {
            PolicyKind::AvgDisplacement => "avg".to_string(),
            PolicyKind::PathEfficiency => "rho".to_string(),
            PolicyKind::FixedInterval => format!("fixed{}", self.hp.switch.fixed_interval),
        };
        format!("lotus-{policy}-r{}", self.hp.rank)
    }

    fn projector_builds(&self) -> u64 {
        self.layer_states().map(LayerOptState::projector_builds).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccountingMode {
    FullAdam,
    LowRank,
}

/// Scalar counts (not bytes) for gradient plus optimizer state of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountingReport {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub mode: AccountingMode,
    pub gradient: u64,
    pub projector: u64,
    pub moments: u64,
    pub total: u64,
    pub full_adam_total: u64,
    /// `1 - total / full_adam_total`; negative when low rank costs more.
    pub reduction: f64,
}

/// Full Adam: gradient `mn` + two moments `2mn`. Low rank: gradient `mn` +
/// projector `r·min(m,n)` + two compressed moments `2·r·max(m,n)`.
pub fn memory_accounting((rows, cols): Shape, rank: usize, mode: AccountingMode) -> AccountingReport {
    let (m, n, r) = (rows as u64, cols as u64, rank as u64);
    let gradient = m * n;
    let full_adam_total = 3 * m * n;
    let (projector, moments) = match mode {
        AccountingMode::FullAdam => (0, 2 * m * n),
        AccountingMode::LowRank => (r * m.min(n), 2 * r * m.max(n)),
    };
    let total = gradient + projector + moments;
    AccountingReport {
        rows,
        cols,
        rank,
        mode,
        gradient,
        projector,
        moments,
        total,
        full_adam_total,
        reduction: 1.0 - total as f64 / full_adam_total as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RngState;

    fn hp_with(switch: SwitchConfig) -> LotusHyperparams {
        LotusHyperparams {
            switch,
            ..LotusHyperparams::default()
        }
    }

    #[test]
    fn init_shapes_and_counters() {
        let g = RngState::new(1).gaussian_matrix(256, 1024);
        let hp = LotusHyperparams {
            rank: 128,
            ..LotusHyperparams::default()
        };
        let s = LayerOptState::init((256, 1024), &g, &hp, 0).unwrap();
        assert_eq!(s.first_moment().shape(), (128, 1024));
        assert_eq!(s.second_moment().shape(), (128, 1024));
        assert_eq!(s.tracker().steps_in_subspace(), 1);
        assert_eq!(s.switch_count(), 0);
    }

    #[test]
    fn init_full_rank_is_square() {
        let g = RngState::new(1).gaussian_matrix(6, 9);
        let hp = LotusHyperparams {
            rank: 6,
            ..LotusHyperparams::default()
        };
        let s = LayerOptState::init((6, 9), &g, &hp, 0).unwrap();
        assert_eq!(s.projector().basis().shape(), (6, 6));
        assert_eq!(s.first_moment().shape(), (6, 9));
    }

    #[test]
    fn init_errors() {
        let hp = LotusHyperparams::default();
        assert_eq!(
            LayerOptState::init((4, 5), &DenseMatrix::zeros(4, 5), &hp, 0).unwrap_err(),
            LotusError::ZeroGradient
        );
        assert!(LayerOptState::init((4, 6), &DenseMatrix::zeros(4, 5), &hp, 0).is_err());
    }

    #[test]
    fn non_finite_gradient_leaves_state_untouched() {
        let g = RngState::new(2).gaussian_matrix(5, 7);
        let hp = LotusHyperparams {
            rank: 2,
            ..LotusHyperparams::default()
        };
        let mut s = LayerOptState::init((5, 7), &g, &hp, 0).unwrap();
        let mut w = DenseMatrix::zeros(5, 7);
        s.step(&mut w, &g, &hp, 1).unwrap();
        let (before_s, before_w) = (s.clone(), w.clone());
        let mut bad = g.clone();
        bad.set(3, 4, f64::INFINITY);
        assert!(matches!(
            s.step(&mut w, &bad, &hp, 2),
            Err(LotusError::NonFiniteGradient { row: 3, col: 4, .. })
        ));
        assert_eq!(s, before_s);
        assert_eq!(w, before_w);
    }

    #[test]
    fn momentum_free_adam_is_sign_like() {
        let g = RngState::new(3).gaussian_matrix(3, 5);
        let hp = LotusHyperparams {
            rank: 3,
            scale: 1.0,
            beta1: 0.0,
            beta2: 0.0,
            learning_rate: 0.1,
            ..LotusHyperparams::default()
        };
        let mut s = LayerOptState::init((3, 5), &g, &hp, 0).unwrap();
        let mut w = DenseMatrix::zeros(3, 5);
        s.step(&mut w, &g, &hp, 1).unwrap();
        let expect = g.map(|v| -0.1 * v / (v.abs() + hp.eps));
        assert!(w.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn fixed_interval_two_over_ten_steps() {
        let hp = LotusHyperparams {
            rank: 2,
            ..hp_with(SwitchConfig::fixed(2))
        };
        let rng = RngState::new(4);
        let mut w = rng.gaussian_matrix(4, 6);
        let mut s = LayerOptState::init((4, 6), &rng.fork(0).gaussian_matrix(4, 6), &hp, 0).unwrap();
        for t in 1..=10 {
            let g = rng.fork(t).gaussian_matrix(4, 6);
            let d = s.step(&mut w, &g, &hp, t).unwrap();
            assert_eq!(d.switched, t % 2 == 0);
            if d.switched {
                assert!(s.first_moment().is_zero() && s.second_moment().is_zero());
                assert_eq!(s.tracker().steps_in_subspace(), 1);
                assert_eq!(s.projector().created_at_step(), t);
            }
        }
        assert_eq!(s.switch_count(), 5);
        assert_eq!(s.projector_builds(), 6);
    }

    #[test]
    fn projected_moments_survive_identity_switch() {
        let hp = LotusHyperparams {
            rank: 4,
            moments: MomentPolicy::Project,
            ..hp_with(SwitchConfig::fixed(1))
        };
        let rng = RngState::new(5);
        let g0 = rng.gaussian_matrix(4, 6);
        let mut s = LayerOptState::init((4, 6), &g0, &hp, 0).unwrap();
        let mut w = DenseMatrix::zeros(4, 6);
        s.step(&mut w, &g0, &hp, 1).unwrap();
        assert_eq!(s.switch_count(), 1);
        assert!(!s.first_moment().is_zero());
        assert_eq!(s.adam_step(), 1);
    }

    #[test]
    fn second_moment_stays_nonnegative_with_projection() {
        let hp = LotusHyperparams {
            rank: 2,
            moments: MomentPolicy::Project,
            ..hp_with(SwitchConfig::fixed(3))
        };
        let rng = RngState::new(6);
        let mut w = rng.gaussian_matrix(7, 5);
        let mut s = LayerOptState::init((7, 5), &rng.fork(0).gaussian_matrix(7, 5), &hp, 0).unwrap();
        for t in 1..=20 {
            s.step(&mut w, &rng.fork(t).gaussian_matrix(7, 5), &hp, t).unwrap();
            assert!(s.second_moment().as_slice().iter().all(|&v| v >= 0.0));
            assert_eq!(s.first_moment().shape(), (7, 2));
        }
    }

    #[test]
    fn accounting_square_quarter_rank() {
        let r = memory_accounting((1024, 1024), 256, AccountingMode::LowRank);
        assert_eq!(r.total, 1024 * 1024 * 7 / 4);
        assert_eq!(r.full_adam_total, 3 * 1024 * 1024);
        assert!((r.reduction - 5.0 / 12.0).abs() < 1e-15);
        let full = memory_accounting((1024, 1024), 256, AccountingMode::FullAdam);
        assert_eq!(full.total, full.full_adam_total);
        assert_eq!(full.reduction, 0.0);
    }

    #[test]
    fn accounting_is_not_clamped_at_full_rank() {
        let r = memory_accounting((64, 64), 64, AccountingMode::LowRank);
        assert!(r.total > r.full_adam_total);
        assert!(r.reduction < 0.0);
    }

    #[test]
    fn lotus_optimizer_routes_vectors_to_dense_adam() {
        let hp = LotusHyperparams {
            rank: 2,
            ..LotusHyperparams::default()
        };
        let mut opt = LotusOptimizer::new(hp).unwrap();
        let rng = RngState::new(8);
        let mut params = vec![rng.gaussian_matrix(4, 5), rng.fork(1).gaussian_matrix(1, 4)];
        let grads = vec![rng.fork(2).gaussian_matrix(4, 5), rng.fork(3).gaussian_matrix(1, 4)];
        let report = opt.step(&mut params, &grads, 1).unwrap();
        assert_eq!(report.layers.len(), 1);
        assert_eq!(opt.layer_states().count(), 1);
        assert_eq!(opt.projector_builds(), 1);
        assert!(opt.step(&mut params, &grads[..1], 2).is_err());
    }
}
