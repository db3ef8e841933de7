//! Bouncing ball with an impulsive actuator at impacts.
//!
//! State `x = (height, velocity)`, input `u ≥ 0` added to the rebound
//! velocity. The goal is the energy level `W = γh` of a ball dropped from
//! height `h`.

use std::f64::consts::PI;

use crate::cost::{CostSpec, TargetSet};
use crate::error::{Error, Result};
use crate::horizon::PredictionHorizon;
use crate::plant::{ConstraintSet, Feedback, FlowFeedback, HybridPlant};
use crate::solution::Vector;
use crate::verify::Axis;

use super::Bundle;

/// Physical and tuning parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BouncingBallParams {
    /// Gravitational acceleration `γ`.
    pub gamma: f64,
    /// Restitution coefficient `λ`.
    pub lambda: f64,
    /// Target apex height `h`.
    pub height: f64,
    /// Weight `θ` of the velocity-dependent factor in `V`.
    pub theta: f64,
    /// Upper bound of the input box used by the optimizer.
    pub u_max: f64,
}

impl Default for BouncingBallParams {
    fn default() -> Self {
        Self { gamma: 9.81, lambda: 0.9, height: 3.0, theta: 0.1, u_max: 20.0 }
    }
}

impl BouncingBallParams {
    /// Exclusive upper bound `(2/π)(1 - λ⁴)/(1 + λ⁴)` on `θ`.
    pub fn theta_bound(&self) -> f64 {
        let l4 = self.lambda.powi(4);
        2.0 / PI * (1.0 - l4) / (1.0 + l4)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParams(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::InvalidParams(format!("lambda must lie in (0, 1), got {}", self.lambda)));
        }
        if !(self.height >= 0.0) {
            return Err(Error::InvalidParams(format!("height must be nonnegative, got {}", self.height)));
        }
        if !(self.theta > 0.0 && self.theta < self.theta_bound()) {
            return Err(Error::InvalidParams(format!(
                "theta must lie in (0, {:.4}), got {}",
                self.theta_bound(),
                self.theta
            )));
        }
        if !(self.u_max > 0.0) {
            return Err(Error::InvalidParams("u_max must be positive".into()));
        }
        Ok(())
    }

    /// Target energy `c* = γh`.
    pub fn c_star(&self) -> f64 {
        self.gamma * self.height
    }

    /// Impact speed `√(2γh)` of a ball on the target energy level.
    pub fn target_speed(&self) -> f64 {
        (2.0 * self.c_star()).sqrt()
    }

    /// Mechanical energy `W(x) = γ x₁ + x₂²/2`.
    pub fn energy(&self, x: &Vector) -> f64 {
        self.gamma * x[0] + 0.5 * x[1] * x[1]
    }

    /// Time until the next impact from `x` with `x₁ ≥ 0`.
    pub fn time_to_impact(&self, x: &Vector) -> f64 {
        (x[1] + (x[1] * x[1] + 2.0 * self.gamma * x[0].max(0.0)).sqrt()) / self.gamma
    }

    /// Ballistic flow for `t` seconds.
    pub fn ballistic(&self, x: &Vector, t: f64) -> Vector {
        Vector::from_row_slice(&[x[0] + x[1] * t - 0.5 * self.gamma * t * t, x[1] - self.gamma * t])
    }

    /// `Ṽ(x) = (W(x) - γh)²`.
    pub fn vtilde(&self, x: &Vector) -> f64 {
        (self.energy(x) - self.c_star()).powi(2)
    }

    /// `V(x) = (1 + θ arctan x₂) Ṽ(x)`.
    pub fn terminal_cost(&self, x: &Vector) -> f64 {
        (1.0 + self.theta * x[1].atan()) * self.vtilde(x)
    }

    /// `L_C(x) = θγ (W - γh)² / (1 + 2W)`.
    pub fn flow_cost(&self, x: &Vector) -> f64 {
        let w = self.energy(x);
        self.theta * self.gamma * (w - self.c_star()).powi(2) / (1.0 + 2.0 * w)
    }

    /// `L_D(x)`, independent of the input.
    pub fn jump_cost(&self, x: &Vector) -> f64 {
        let s = self.target_speed();
        let x2 = x[1];
        let a = 1.0 - self.theta * PI / 2.0;
        let b = 1.0 + self.theta * PI / 2.0;
        let first = 0.5 * a * self.c_star() * (x2 + s).powi(2);
        if x2 >= -s / self.lambda {
            first
        } else {
            let l2 = self.lambda * self.lambda;
            let second = a * (0.5 * x2 * x2 - self.c_star()).powi(2) - b * (0.5 * l2 * x2 * x2 - self.c_star()).powi(2);
            first.min(second)
        }
    }

    /// Dead-beat jump feedback `κ_D(x) = max{λx₂ + √(2γh), 0}`.
    pub fn kappa_d(&self, x: &Vector) -> f64 {
        (self.lambda * x[1] + self.target_speed()).max(0.0)
    }

    /// Euclidean distance to `𝒜 = {x₁ ≥ 0, W(x) = γh}`, by minimizing
    /// over the velocity parameter of the target arc.
    pub fn distance(&self, x: &Vector) -> f64 {
        let c = self.c_star();
        let g = self.gamma;
        if c <= 0.0 {
            return x.norm();
        }
        let smax = (2.0 * c).sqrt();
        let phi = |s: f64| {
            let h = (c - 0.5 * s * s) / g;
            (x[0] - h).powi(2) + (x[1] - s).powi(2)
        };
        let dphi = |s: f64| 0.5 * s * s * s + (g * x[0] - c + g * g) * s - g * g * x[1];
        const N: usize = 64;
        let grid: Vec<f64> = (0..=N).map(|k| -smax + 2.0 * smax * k as f64 / N as f64).collect();
        let mut best = phi(-smax).min(phi(smax));
        let mut best_k = 0;
        let mut best_grid = f64::INFINITY;
        for (k, &s) in grid.iter().enumerate() {
            let v = phi(s);
            if v < best_grid {
                best_grid = v;
                best_k = k;
            }
        }
        for k in 0..N {
            let (mut a, mut b) = (grid[k], grid[k + 1]);
            let (fa, fb) = (dphi(a), dphi(b));
            if fa == 0.0 {
                best = best.min(phi(a));
            }
            if fa * fb < 0.0 {
                for _ in 0..100 {
                    let m = 0.5 * (a + b);
                    if dphi(a) * dphi(m) <= 0.0 {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                best = best.min(phi(0.5 * (a + b)));
            }
        }
        let (mut a, mut b) = (grid[best_k.saturating_sub(1)], grid[(best_k + 1).min(N)]);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let c1 = b - r * (b - a);
            let c2 = a + r * (b - a);
            if phi(c1) <= phi(c2) {
                b = c2;
            } else {
                a = c1;
            }
        }
        best = best.min(phi(0.5 * (a + b))).min(best_grid);
        best.max(0.0).sqrt()
    }

    pub fn plant(&self) -> Result<HybridPlant> {
        self.validate()?;
        let p = *self;
        let q = *self;
        let plant = HybridPlant::new(
            "bouncing-ball",
            2,
            1,
            move |x, _| Vector::from_row_slice(&[x[1], -p.gamma]),
            move |x, u| Vector::from_row_slice(&[0.0, -q.lambda * x[1] + u[0]]),
            ConstraintSet::new(|x, u| (-x[0]).max(0.0) + (-u[0]).max(0.0)).with_guard(|x, _| -x[0]),
            ConstraintSet::new(|x, u| x[0].abs() + x[1].max(0.0) + (-u[0]).max(0.0)).with_guard(|x, _| x[0]),
        )?
        .with_closed_form(move |x, _, t| p.ballistic(x, t))
        .with_input_bounds(Vector::from_element(1, 0.0), Vector::from_element(1, self.u_max))?;
        Ok(plant)
    }

    pub fn cost(&self) -> CostSpec {
        let (a, b, c) = (*self, *self, *self);
        CostSpec::new(
            move |x, _| a.flow_cost(x),
            move |x, _| b.jump_cost(x),
            move |x| c.terminal_cost(x),
            |x| (-x[0]).max(0.0),
        )
        .with_invariant_flow_cost()
    }

    pub fn feedback(&self) -> Feedback {
        let p = *self;
        Feedback::new(FlowFeedback::Constant(Vector::zeros(1)), move |x| Vector::from_element(1, p.kappa_d(x)))
    }

    pub fn target(&self) -> TargetSet {
        let p = *self;
        TargetSet::new(move |x| p.distance(x))
    }
}

/// Bouncing ball bundle with the default horizon `generic(N=5, delta=0.5)`.
pub fn bouncing_ball(params: BouncingBallParams) -> Result<Bundle> {
    let p = params;
    Ok(Bundle {
        name: "bouncing-ball".into(),
        plant: params.plant()?,
        cost: params.cost(),
        feedback: params.feedback(),
        target: params.target(),
        horizon: PredictionHorizon::generic(5, 0.5)?,
        flow_input: Some(Vector::zeros(1)),
        jump_alphabet: None,
        region: vec![Axis::Interval(0.0, 5.0), Axis::Interval(-10.0, 10.0)],
        jump_region: vec![Axis::Interval(0.0, 0.0), Axis::Interval(-10.0, 0.0)],
        observables: vec![("W".into(), std::sync::Arc::new(move |x: &Vector| p.energy(x)))],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(a: f64, b: f64) -> Vector {
        Vector::from_row_slice(&[a, b])
    }

    #[test]
    fn constants_from_parameters() {
        let p = BouncingBallParams::default();
        assert!((p.c_star() - 29.43).abs() < 1e-12);
        assert!((p.target_speed() - 7.672).abs() < 1e-3);
        assert!((p.theta_bound() - 0.1322).abs() < 1e-4);
    }

    #[test]
    fn rejects_theta_outside_bound() {
        let p = BouncingBallParams { theta: 0.2, ..Default::default() };
        assert!(matches!(p.validate(), Err(Error::InvalidParams(_))));
        let p = BouncingBallParams { lambda: 1.0, ..Default::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn first_impact_from_one_metre() {
        let p = BouncingBallParams::default();
        let t = p.time_to_impact(&v(1.0, -1.0));
        assert!((t - 0.361).abs() < 1e-3);
        let x = p.ballistic(&v(1.0, -1.0), t);
        assert!(x[0].abs() < 1e-12);
    }

    #[test]
    fn dead_beat_feedback_lands_on_target() {
        let p = BouncingBallParams::default();
        let s = p.target_speed();
        assert!((p.kappa_d(&v(0.0, -s)) - (1.0 - p.lambda) * s).abs() < 1e-12);
        assert_eq!(p.kappa_d(&v(0.0, -9.0)), 0.0);
        assert_eq!(p.jump_cost(&v(0.0, -s)), 0.0);
    }

    #[test]
    fn distance_vanishes_on_target_arc() {
        let p = BouncingBallParams::default();
        assert!(p.distance(&v(p.height, 0.0)) < 1e-9);
        assert!(p.distance(&v(0.0, p.target_speed())) < 1e-9);
        let off = p.distance(&v(p.height + 0.5, 0.0));
        assert!((off - 0.5).abs() < 1e-6);
    }

    #[test]
    fn distance_matches_dense_arc_sampling() {
        let p = BouncingBallParams::default();
        let smax = p.target_speed();
        let n = 200_000;
        let oracle = |x: &Vector| {
            (0..=n)
                .map(|k| {
                    let s = -smax + 2.0 * smax * k as f64 / n as f64;
                    let h = (p.c_star() - 0.5 * s * s) / p.gamma;
                    ((x[0] - h).powi(2) + (x[1] - s).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        };
        for x in [v(0.0, 0.0), v(1.0, -1.0), v(3.0, 4.0), v(0.2, 9.0), v(4.5, -8.0), v(0.0, -3.0)] {
            assert!((p.distance(&x) - oracle(&x)).abs() < 1e-6, "{x}");
        }
    }
}
