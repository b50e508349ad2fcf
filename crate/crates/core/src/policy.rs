//! When to switch subspaces.
//!
//! Three rules are available:
//!
//! * [`PolicyKind::AvgDisplacement`]: every `verify_gap` recordings, compare the
//!   current unit low-rank gradient with the one recorded right after the last
//!   switch, `|d_cur - d_init| / T`, and switch when it falls below `gamma`.
//! * [`PolicyKind::PathEfficiency`]: over a sliding window of the last `k`
//!   unit full-rank gradients, `rho = |P Σ ĝ| / |Σ ĝ|`; switch when `rho < gamma`.
//! * [`PolicyKind::FixedInterval`]: switch every `fixed_interval` steps.
//!
//! Both adaptive rules also require `t - t_last >= t_min`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{LotusError, Result};
use crate::linalg::DenseMatrix;
use crate::subspace::Projector;

/// Window sums with a norm below this are treated as fully cancelled.
pub const DEGENERATE_SUM_NORM: f64 = 1e-12;

pub const RECOMMENDED_GAMMA: (f64, f64) = (0.005, 0.02);
pub const RECOMMENDED_VERIFY_GAP: (u64, u64) = (25, 100);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    AvgDisplacement,
    PathEfficiency,
    FixedInterval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchConfig {
    pub kind: PolicyKind,
    /// Threshold γ.
    pub gamma: f64,
    /// Verification gap η.
    pub verify_gap: u64,
    /// Minimum steps between switches.
    pub t_min: u64,
    pub fixed_interval: u64,
    /// Window length k for the path-efficiency ratio; `None` means `verify_gap`.
    pub window_len: Option<usize>,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        Self {
            kind: PolicyKind::AvgDisplacement,
            gamma: 0.01,
            verify_gap: 50,
            t_min: 100,
            fixed_interval: 200,
            window_len: None,
        }
    }
}

impl SwitchConfig {
    pub fn fixed(interval: u64) -> Self {
        Self {
            kind: PolicyKind::FixedInterval,
            fixed_interval: interval,
            ..Self::default()
        }
    }

    pub fn path_efficiency() -> Self {
        Self {
            kind: PolicyKind::PathEfficiency,
            ..Self::default()
        }
    }

    pub fn window(&self) -> usize {
        self.window_len.unwrap_or(self.verify_gap as usize)
    }

    /// Hard errors for unusable values; returns warnings for values outside
    /// the recommended γ and η ranges.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(LotusError::InvalidConfig(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if self.verify_gap == 0 {
            return Err(LotusError::InvalidConfig("verify_gap must be positive".into()));
        }
        if self.kind == PolicyKind::FixedInterval && self.fixed_interval == 0 {
            return Err(LotusError::InvalidConfig("fixed_interval must be positive".into()));
        }
        if self.window() == 0 {
            return Err(LotusError::InvalidConfig("window_len must be positive".into()));
        }
        let mut warnings = Vec::new();
        if self.kind != PolicyKind::FixedInterval {
            let (lo, hi) = RECOMMENDED_GAMMA;
            if self.gamma < lo || self.gamma > hi {
                warnings.push(format!("gamma {} outside recommended [{lo}, {hi}]", self.gamma));
            }
            let (lo, hi) = RECOMMENDED_VERIFY_GAP;
            if self.verify_gap < lo || self.verify_gap > hi {
                warnings.push(format!(
                    "verify_gap {} outside recommended [{lo}, {hi}]",
                    self.verify_gap
                ));
            }
        }
        Ok(warnings)
    }
}

/// Flattened `g / |g|_F`.
pub fn normalize(g: &DenseMatrix) -> Result<Vec<f64>> {
    let norm = g.frobenius_norm();
    if norm == 0.0 {
        return Err(LotusError::ZeroGradient);
    }
    if !norm.is_finite() {
        g.check_finite()?;
    }
    Ok(g.as_slice().iter().map(|v| v / norm).collect())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Sliding window of unit full-rank gradients with a running sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GradientWindow {
    capacity: usize,
    shape: (usize, usize),
    entries: VecDeque<Vec<f64>>,
    sum: Vec<f64>,
    evictions: usize,
}

impl GradientWindow {
    fn new(capacity: usize, shape: (usize, usize)) -> Self {
        Self {
            capacity,
            shape,
            entries: VecDeque::with_capacity(capacity),
            sum: vec![0.0; shape.0 * shape.1],
            evictions: 0,
        }
    }

    fn push(&mut self, unit: Vec<f64>) {
        if self.entries.len() == self.capacity {
            let old = self.entries.pop_front().expect("full window");
            self.sum.iter_mut().zip(&old).for_each(|(s, o)| *s -= o);
            self.evictions += 1;
        }
        self.sum.iter_mut().zip(&unit).for_each(|(s, u)| *s += u);
        self.entries.push_back(unit);
        // re-sum once per full turnover so add/subtract drift stays bounded
        if self.evictions >= self.capacity {
            self.evictions = 0;
            self.sum.iter_mut().for_each(|s| *s = 0.0);
            for e in &self.entries {
                self.sum.iter_mut().zip(e).for_each(|(s, u)| *s += u);
            }
        }
    }

    fn clear(&mut self) {
        self.entries.clear();
        self.sum.iter_mut().for_each(|s| *s = 0.0);
        self.evictions = 0;
    }
}

/// Running switching state for one layer.
///
/// Uninitialized until [`DisplacementTracker::reset`] is called with the first
/// projected gradient of a subspace; `T` then starts at 1 and every
/// [`DisplacementTracker::record_step`] adds one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementTracker {
    d_init: Vec<f64>,
    d_cur: Vec<f64>,
    steps: u64,
    last_switch_step: u64,
    window: Option<GradientWindow>,
}

impl DisplacementTracker {
    /// `window_len = Some(k)` keeps the last `k` unit full-rank gradients of
    /// shape `full_shape`, needed only by the path-efficiency rule.
    pub fn new(window_len: Option<usize>, full_shape: (usize, usize)) -> Self {
        Self {
            d_init: Vec::new(),
            d_cur: Vec::new(),
            steps: 0,
            last_switch_step: 0,
            window: window_len.map(|k| GradientWindow::new(k, full_shape)),
        }
    }

    /// Starts a new subspace: `d_init = normalize(g_low)`, `T = 1`, window
    /// cleared, `t_last = step`.
    pub fn reset(&mut self, g_low: &DenseMatrix, step: u64) -> Result<()> {
        let unit = normalize(g_low)?;
        self.d_cur = unit.clone();
        self.d_init = unit;
        self.steps = 1;
        self.last_switch_step = step;
        if let Some(w) = self.window.as_mut() {
            w.clear();
        }
        Ok(())
    }

    pub fn is_initialized(&self) -> bool {
        self.steps >= 1
    }

    /// `T`.
    pub fn steps_in_subspace(&self) -> u64 {
        self.steps
    }

    /// `t_last`.
    pub fn last_switch_step(&self) -> u64 {
        self.last_switch_step
    }

    pub fn d_init(&self) -> &[f64] {
        &self.d_init
    }

    pub fn d_cur(&self) -> &[f64] {
        &self.d_cur
    }

    pub fn window_len(&self) -> Option<usize> {
        self.window.as_ref().map(|w| w.entries.len())
    }

    /// Running sum of the unit full-rank gradients in the window.
    pub fn window_sum(&self) -> Option<&[f64]> {
        self.window.as_ref().map(|w| w.sum.as_slice())
    }

    /// Records one projected gradient (and its full-rank source for the
    /// window). Nothing is mutated on error.
    pub fn record_step(&mut self, g_low: &DenseMatrix, g_full: &DenseMatrix) -> Result<()> {
        if !self.is_initialized() {
            return Err(LotusError::NotInitialized);
        }
        if g_low.len() != self.d_init.len() {
            return Err(LotusError::DimensionMismatch {
                op: "record_step",
                left: (self.d_init.len(), 1),
                right: g_low.shape(),
            });
        }
        let unit = normalize(g_low)?;
        let full_unit = match &self.window {
            Some(w) => {
                if g_full.shape() != w.shape {
                    return Err(LotusError::DimensionMismatch {
                        op: "record_step window",
                        left: w.shape,
                        right: g_full.shape(),
                    });
                }
                Some(normalize(g_full)?)
            }
            None => None,
        };
        self.d_cur = unit;
        self.steps += 1;
        if let (Some(w), Some(u)) = (self.window.as_mut(), full_unit) {
            w.push(u);
        }
        Ok(())
    }

    /// `|d_cur - d_init| / T`, always within `[0, 2/T]`.
    pub fn avg_unit_displacement(&self) -> Result<f64> {
        if !self.is_initialized() {
            return Err(LotusError::NotInitialized);
        }
        Ok(distance(&self.d_cur, &self.d_init) / self.steps as f64)
    }

    /// Path-efficiency ratio of the current window against `projector`.
    pub fn path_efficiency(&self, projector: &Projector) -> Result<PathEfficiency> {
        let w = self
            .window
            .as_ref()
            .filter(|w| !w.entries.is_empty())
            .ok_or_else(|| LotusError::InvalidConfig("path efficiency needs a non-empty gradient window".into()))?;
        let sum = DenseMatrix::new(w.shape.0, w.shape.1, w.sum.clone())?;
        let denom = sum.frobenius_norm();
        if denom <= DEGENERATE_SUM_NORM {
            return Ok(PathEfficiency {
                rho: 0.0,
                degenerate: true,
            });
        }
        let numer = projector.apply(&sum)?.frobenius_norm();
        Ok(PathEfficiency {
            rho: numer / denom,
            degenerate: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEfficiency {
    pub rho: f64,
    /// The window sum cancelled to (numerically) zero; `rho` is reported as 0.
    pub degenerate: bool,
}

/// Outcome of a switching check, with the clause-level breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchDecision {
    pub switch: bool,
    /// `|d̄|`, `rho`, or steps since the last switch, depending on the policy.
    pub criterion: f64,
    /// `T mod η == 0` (always true for the fixed interval).
    pub cadence_ok: bool,
    /// Criterion below γ, or interval reached.
    pub threshold_ok: bool,
    /// `t - t_last >= T_min` (interval clause for the fixed policy).
    pub min_gap_ok: bool,
    pub degenerate: bool,
}

/// Pure function of `(tracker, projector, config, t)`.
pub fn should_switch(
    tracker: &DisplacementTracker,
    projector: &Projector,
    config: &SwitchConfig,
    t: u64,
) -> Result<SwitchDecision> {
    if !tracker.is_initialized() {
        return Err(LotusError::NotInitialized);
    }
    let since = t.saturating_sub(tracker.last_switch_step);
    let cadence_ok = tracker.steps.is_multiple_of(config.verify_gap);
    let min_gap_ok = since >= config.t_min;
    let decision = match config.kind {
        PolicyKind::AvgDisplacement => {
            let criterion = tracker.avg_unit_displacement()?;
            let threshold_ok = criterion < config.gamma;
            SwitchDecision {
                switch: cadence_ok && threshold_ok && min_gap_ok,
                criterion,
                cadence_ok,
                threshold_ok,
                min_gap_ok,
                degenerate: false,
            }
        }
        PolicyKind::PathEfficiency => {
            let (criterion, degenerate) = match tracker.window_len() {
                Some(n) if n > 0 => {
                    let pe = tracker.path_efficiency(projector)?;
                    (pe.rho, pe.degenerate)
                }
                // nothing recorded since the switch yet: the subspace is fresh
                _ => (1.0, false),
            };
            let threshold_ok = criterion < config.gamma;
            SwitchDecision {
                switch: cadence_ok && threshold_ok && min_gap_ok,
                criterion,
                cadence_ok,
                threshold_ok,
                min_gap_ok,
                degenerate,
            }
        }
        PolicyKind::FixedInterval => {
            let due = since >= config.fixed_interval;
            SwitchDecision {
                switch: due,
                criterion: since as f64,
                cadence_ok: true,
                threshold_ok: due,
                min_gap_ok: due,
                degenerate: false,
            }
        }
    };
    Ok(decision)
}
