//! Numerical check of the one-step projected descent bound.
//!
//! For an `L`-smooth loss, a projected step `w⁺ = w - α P g` with
//! `ρ = |P g| / |g|` satisfies
//! `L(w⁺) <= L(w) - α ρ² |g|² + ½ α² L |g|²`.

use lotus_core::linalg::RngState;
use lotus_core::{LayerOptState, LotusHyperparams, SwitchConfig, UpdateRule};

use crate::error::Result;
use crate::problem::{Objective as _, Quadratic};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentCheckConfig {
    pub dim: usize,
    pub rank: usize,
    pub steps: u64,
    /// Projector rebuild interval.
    pub switch_interval: u64,
    pub condition: f64,
    /// Additive slack allowed on the right-hand side.
    pub slack: f64,
}

impl Default for DescentCheckConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            rank: 8,
            steps: 500,
            switch_interval: 25,
            condition: 10.0,
            slack: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentCheck {
    pub steps: u64,
    pub violations: u64,
    /// Largest `lhs - rhs` seen, before slack. Nonpositive when the bound
    /// holds exactly.
    pub worst_margin: f64,
    pub min_rho: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Plain projected descent on a seeded quadratic with `α = ρ²/L` chosen per
/// step from the measured `ρ`, checking the bound at every step.
pub fn descent_bound_check(cfg: &DescentCheckConfig, seed: u64) -> Result<DescentCheck> {
    let rng = RngState::new(seed);
    let q = Quadratic::new(cfg.dim, cfg.dim, cfg.condition, 0.0, rng)?;
    let smooth = q.smoothness();
    let mut hp = LotusHyperparams {
        rank: cfg.rank,
        scale: 1.0,
        update_rule: UpdateRule::ProjectedSgd,
        switch: SwitchConfig::fixed(cfg.switch_interval),
        rng: rng.fork(7),
        ..LotusHyperparams::default()
    };
    let mut w = q.initial_params().remove(0);
    let g0 = q.gradient(&w)?;
    let mut state = LayerOptState::init(w.shape(), &g0, &hp, 0)?;
    let initial_loss = q.loss(&w)?;
    let mut report = DescentCheck {
        steps: 0,
        violations: 0,
        worst_margin: f64::NEG_INFINITY,
        min_rho: f64::INFINITY,
        initial_loss,
        final_loss: initial_loss,
    };
    for t in 1..=cfg.steps {
        let g = q.gradient(&w)?;
        let g_sq = g.frobenius_norm_sq();
        let rho = (state.projector().apply(&g)?.frobenius_norm_sq() / g_sq).sqrt();
        let alpha = rho * rho / smooth;
        hp.learning_rate = alpha;
        let before = q.loss(&w)?;
        state.step(&mut w, &g, &hp, t)?;
        let after = q.loss(&w)?;
        let rhs = before - alpha * rho * rho * g_sq + 0.5 * alpha * alpha * smooth * g_sq;
        let margin = after - rhs;
        if margin > cfg.slack {
            report.violations += 1;
        }
        report.worst_margin = report.worst_margin.max(margin);
        report.min_rho = report.min_rho.min(rho);
        report.steps = t;
        report.final_loss = after;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_holds_and_loss_falls() {
        let cfg = DescentCheckConfig {
            steps: 60,
            ..DescentCheckConfig::default()
        };
        let r = descent_bound_check(&cfg, 3).unwrap();
        assert_eq!(r.steps, 60);
        assert_eq!(r.violations, 0);
        assert!(r.final_loss < r.initial_loss);
        assert!(r.min_rho > 0.0 && r.min_rho <= 1.0 + 1e-12);
    }
}
