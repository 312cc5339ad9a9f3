//! Constraint handling for the encoder objective.
//!
//! A handler turns the constrained quantity `d` (distortion, or prediction
//! loss for the fair classifier) and its budget into an additive penalty and
//! its derivative `∂/∂d`. Handlers are looked up by name in
//! [`constraint_registry`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::registry::Registry;

/// Growth schedule `ρ_t = min(ρ_max, ρ_0 · γ^⌊t/τ⌋)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltySchedule {
    pub rho0: f64,
    pub growth: f64,
    pub rho_max: f64,
    /// Iterations per growth step. `None` means `max(1, T/20)`.
    pub step_every: Option<usize>,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self {
            rho0: 1.0,
            growth: 1.5,
            rho_max: 1e4,
            step_every: None,
        }
    }
}

impl PenaltySchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho0 > 0.0) || !self.rho0.is_finite() {
            return Err(invalid(format!("penalty.rho0 must be positive, got {}", self.rho0)));
        }
        if !(self.growth >= 1.0) || !self.growth.is_finite() {
            return Err(invalid(format!("penalty.growth must be at least 1, got {}", self.growth)));
        }
        if !(self.rho_max >= self.rho0) {
            return Err(invalid(format!("penalty.rho_max must be at least rho0, got {}", self.rho_max)));
        }
        if self.step_every == Some(0) {
            return Err(invalid("penalty.step_every must be positive"));
        }
        Ok(())
    }

    /// Fixes `τ` for a run of `iterations` steps.
    pub fn resolved(mut self, iterations: usize) -> Self {
        if self.step_every.is_none() {
            self.step_every = Some((iterations / 20).max(1));
        }
        self
    }

    pub fn rho(&self, t: usize) -> f64 {
        let tau = self.step_every.unwrap_or(1).max(1);
        let steps = (t / tau) as i32;
        (self.rho0 * self.growth.powi(steps)).min(self.rho_max)
    }
}

/// `−adv_loss + ρ·(max{0, d − D})²`.
pub fn encoder_objective_penalty(adv_loss: f64, distortion: f64, budget: f64, rho: f64) -> f64 {
    let v = (distortion - budget).max(0.0);
    -adv_loss + rho * v * v
}

/// `−adv_loss + (ρ/2)·r² − λ·r` with residual `r = d + δ − D`, together with
/// the multiplier after the update `λ ← λ − ρ·r`.
pub fn encoder_objective_auglag(
    adv_loss: f64,
    distortion: f64,
    budget: f64,
    rho: f64,
    lambda: f64,
    slack: f64,
) -> (f64, f64) {
    let r = distortion + slack - budget;
    (-adv_loss + 0.5 * rho * r * r - lambda * r, lambda - rho * r)
}

/// Slack minimizing the augmented objective for fixed `d`, `λ`, `ρ`.
pub fn optimal_slack(distortion: f64, budget: f64, rho: f64, lambda: f64) -> f64 {
    (budget - distortion + lambda / rho).max(0.0)
}

pub trait ConstraintHandler: Send + Sync {
    fn name(&self) -> &'static str;

    /// Penalty value and its derivative with respect to `d` at iteration `t`.
    fn penalty(&self, value: f64, budget: f64, t: usize) -> (f64, f64);

    /// Whether [`after_step`](Self::after_step) needs the post-step value.
    fn wants_post_step(&self) -> bool {
        false
    }

    /// Observes the constrained quantity after the encoder update.
    fn after_step(&mut self, _value: f64, _budget: f64, _t: usize) {}

    fn rho(&self, t: usize) -> f64;

    fn multiplier(&self) -> f64 {
        0.0
    }
}

/// `ρ_t·(max{0, d − D})²`.
#[derive(Debug, Clone)]
pub struct SquaredPenalty {
    pub schedule: PenaltySchedule,
}

impl ConstraintHandler for SquaredPenalty {
    fn name(&self) -> &'static str {
        "penalty"
    }

    fn penalty(&self, value: f64, budget: f64, t: usize) -> (f64, f64) {
        let rho = self.schedule.rho(t);
        let v = (value - budget).max(0.0);
        (rho * v * v, 2.0 * rho * v)
    }

    fn rho(&self, t: usize) -> f64 {
        self.schedule.rho(t)
    }
}

/// `ρ_t·max{0, d − D}`, the unsquared violation.
#[derive(Debug, Clone)]
pub struct LinearPenalty {
    pub schedule: PenaltySchedule,
}

impl ConstraintHandler for LinearPenalty {
    fn name(&self) -> &'static str {
        "linear-penalty"
    }

    fn penalty(&self, value: f64, budget: f64, t: usize) -> (f64, f64) {
        let rho = self.schedule.rho(t);
        if value > budget {
            (rho * (value - budget), rho)
        } else {
            (0.0, 0.0)
        }
    }

    fn rho(&self, t: usize) -> f64 {
        self.schedule.rho(t)
    }
}

/// Augmented Lagrangian with a slack variable for the inequality. The slack
/// is held fixed when differentiating, and `λ ≤ 0` throughout.
#[derive(Debug, Clone)]
pub struct AugmentedLagrangian {
    pub schedule: PenaltySchedule,
    pub lambda: f64,
}

impl ConstraintHandler for AugmentedLagrangian {
    fn name(&self) -> &'static str {
        "augmented-lagrangian"
    }

    fn penalty(&self, value: f64, budget: f64, t: usize) -> (f64, f64) {
        let rho = self.schedule.rho(t);
        let delta = optimal_slack(value, budget, rho, self.lambda);
        let (loss, _) = encoder_objective_auglag(0.0, value, budget, rho, self.lambda, delta);
        let r = value + delta - budget;
        (loss, rho * r - self.lambda)
    }

    fn wants_post_step(&self) -> bool {
        true
    }

    fn after_step(&mut self, value: f64, budget: f64, t: usize) {
        let rho = self.schedule.rho(t);
        let delta = optimal_slack(value, budget, rho, self.lambda);
        self.lambda = encoder_objective_auglag(0.0, value, budget, rho, self.lambda, delta).1;
    }

    fn rho(&self, t: usize) -> f64 {
        self.schedule.rho(t)
    }

    fn multiplier(&self) -> f64 {
        self.lambda
    }
}

/// Registered handlers: `penalty`, `linear-penalty`, `augmented-lagrangian`.
pub fn constraint_registry() -> Registry<PenaltySchedule, dyn ConstraintHandler> {
    let mut r: Registry<PenaltySchedule, dyn ConstraintHandler> = Registry::new("constraint method");
    r.register("penalty", |s| Box::new(SquaredPenalty { schedule: *s }));
    r.register("linear-penalty", |s| Box::new(LinearPenalty { schedule: *s }));
    r.register("augmented-lagrangian", |s| {
        Box::new(AugmentedLagrangian {
            schedule: *s,
            lambda: 0.0,
        })
    });
    r
}
