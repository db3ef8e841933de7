//! Room temperature under an on/off heater.
//!
//! State `x = (q, z)` with heater mode `q ∈ {0, 1}` and temperature `z`.
//! The input `u ∈ {0, 1}` selects flow (`u = 0`) or a mode toggle (`u = 1`).

use std::sync::Arc;

use crate::cost::{CostSpec, TargetSet};
use crate::error::{Error, Result};
use crate::horizon::PredictionHorizon;
use crate::plant::{ConstraintSet, Feedback, FlowFeedback, HybridPlant};
use crate::solution::Vector;
use crate::verify::Axis;

use super::Bundle;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermostatParams {
    /// Outside temperature `z_o`.
    pub z_o: f64,
    /// Heater capacity `z_Δ`.
    pub z_delta: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub a_hot: f64,
    pub a_cold: f64,
    pub a_on: f64,
    pub b_hot: f64,
    pub b_on_hot: f64,
    pub b_ss: f64,
    pub b_on_ss: f64,
    pub b_cold: f64,
}

impl Default for ThermostatParams {
    fn default() -> Self {
        Self {
            z_o: 5.0,
            z_delta: 10.0,
            z_min: 9.0,
            z_max: 11.0,
            a_hot: 1.0,
            a_cold: 1.0,
            a_on: 0.1,
            b_hot: 1.0,
            b_on_hot: 0.1,
            b_ss: 0.1,
            b_on_ss: 0.1,
            b_cold: 1.0,
        }
    }
}

/// Distance from `q` to `{0, 1}`.
fn mode_violation(q: f64) -> f64 {
    q.abs().min((q - 1.0).abs())
}

fn is_on(q: f64) -> bool {
    q > 0.5
}

impl ThermostatParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.z_o,
            self.z_delta,
            self.z_min,
            self.z_max,
            self.a_hot,
            self.a_cold,
            self.a_on,
            self.b_hot,
            self.b_on_hot,
            self.b_ss,
            self.b_on_ss,
            self.b_cold,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("thermostat parameters must be finite".into()));
        }
        if !(self.z_o < self.z_min && self.z_min < self.z_max && self.z_max < self.z_o + self.z_delta) {
            return Err(Error::InvalidParams(format!(
                "need z_o < z_min < z_max < z_o + z_delta, got {} < {} < {} < {}",
                self.z_o,
                self.z_min,
                self.z_max,
                self.z_o + self.z_delta
            )));
        }
        if !(self.a_hot > 0.0 && self.a_hot <= self.z_max - self.z_o) {
            return Err(Error::InvalidParams(format!(
                "a_hot must lie in (0, {}], got {}",
                self.z_max - self.z_o,
                self.a_hot
            )));
        }
        if !(self.a_cold > 0.0) || self.a_on < 0.0 {
            return Err(Error::InvalidParams("need a_cold > 0 and a_on >= 0".into()));
        }
        if !(self.b_hot > 0.0 && self.b_hot <= 1.0) {
            return Err(Error::InvalidParams(format!("b_hot must lie in (0, 1], got {}", self.b_hot)));
        }
        if self.b_on_hot < 0.0 || self.b_ss < 0.0 || self.b_on_ss < 0.0 || self.b_cold < 0.0 {
            return Err(Error::InvalidParams("jump cost weights must be nonnegative".into()));
        }
        Ok(())
    }

    /// Equilibrium temperature of mode `q`.
    pub fn equilibrium(&self, q: f64) -> f64 {
        self.z_o + self.z_delta * q
    }

    pub fn flow_cost(&self, x: &Vector) -> f64 {
        let (q, z) = (x[0], x[1]);
        if z >= self.z_max {
            self.a_hot * (z - self.z_max) + self.a_on * q
        } else if z > self.z_min {
            0.0
        } else {
            self.a_cold * (self.z_min - z)
        }
    }

    pub fn jump_cost(&self, x: &Vector) -> f64 {
        let (q, z) = (x[0], x[1]);
        if z >= self.z_max {
            self.b_hot * (z - self.z_max).powi(2) / 2.0 + self.b_on_hot * (1.0 - q)
        } else if z > self.z_min {
            self.b_ss * (self.z_max - z) * (z - self.z_min) / 2.0 + self.b_on_ss * (1.0 - q)
        } else {
            self.b_cold * (z - self.z_min).powi(2) / 2.0
        }
    }

    pub fn terminal_cost(&self, x: &Vector) -> f64 {
        let (q, z) = (x[0], x[1]);
        if z >= self.z_max {
            (z - self.z_max).powi(2) / 2.0 * (1.0 + q)
        } else if z > self.z_min {
            0.0
        } else {
            (z - self.z_min).powi(2) / 2.0 * (2.0 - q)
        }
    }

    /// `x ∈ C̃`: heater off above `z_min` or on below `z_max`.
    pub fn in_flow_region(&self, x: &Vector) -> bool {
        if is_on(x[0]) {
            x[1] <= self.z_max
        } else {
            x[1] >= self.z_min
        }
    }

    /// `x ∈ D̃`: heater off at or below `z_min` or on at or above `z_max`.
    pub fn in_jump_region(&self, x: &Vector) -> bool {
        if is_on(x[0]) {
            x[1] >= self.z_max
        } else {
            x[1] <= self.z_min
        }
    }

    pub fn plant(&self) -> Result<HybridPlant> {
        self.validate()?;
        let p = *self;
        let flow = move |x: &Vector, _: &Vector| Vector::from_row_slice(&[0.0, -x[1] + p.equilibrium(x[0])]);
        let jump = |x: &Vector, _: &Vector| Vector::from_row_slice(&[1.0 - x[0], x[1]]);
        let closed = move |x: &Vector, _: &Vector, t: f64| {
            let eq = p.equilibrium(x[0]);
            Vector::from_row_slice(&[x[0], eq + (x[1] - eq) * (-t).exp()])
        };
        HybridPlant::new(
            "thermostat",
            2,
            1,
            flow,
            jump,
            ConstraintSet::new(|x, u| mode_violation(x[0]) + u[0].abs()),
            ConstraintSet::new(|x, u| mode_violation(x[0]) + (u[0] - 1.0).abs()),
        )?
        .with_closed_form(closed)
        .with_input_bounds(Vector::zeros(1), Vector::from_element(1, 1.0))
    }

    pub fn cost(&self) -> CostSpec {
        let (a, b, c) = (*self, *self, *self);
        CostSpec::new(
            move |x, _| a.flow_cost(x),
            move |x, _| b.jump_cost(x),
            move |x| c.terminal_cost(x),
            |x| mode_violation(x[0]),
        )
    }

    /// `κ_C = 0` on `C̃` and `1` elsewhere; `κ_D = 1` on `D̃` and `0` elsewhere.
    pub fn feedback(&self) -> Feedback {
        let (a, b, c) = (*self, *self, *self);
        Feedback::new(
            FlowFeedback::State(Arc::new(move |x: &Vector| {
                Vector::from_element(1, if a.in_flow_region(x) { 0.0 } else { 1.0 })
            })),
            move |x| Vector::from_element(1, if b.in_jump_region(x) { 1.0 } else { 0.0 }),
        )
        .with_jump_guard(move |x| if is_on(x[0]) { c.z_max - x[1] } else { x[1] - c.z_min })
    }

    /// `𝒜 = {x : z ∈ [z_min, z_max], q ∈ {0, 1}}`.
    pub fn target(&self) -> TargetSet {
        let p = *self;
        TargetSet::new(move |x| {
            let dz = (p.z_min - x[1]).max(0.0) + (x[1] - p.z_max).max(0.0);
            dz.hypot(mode_violation(x[0]))
        })
    }
}

/// Thermostat bundle with horizon `generic(N=3, delta=1)`.
pub fn thermostat(params: ThermostatParams) -> Result<Bundle> {
    let p = params;
    let region = vec![Axis::Levels(vec![0.0, 1.0]), Axis::Interval(params.z_o, params.z_o + params.z_delta)];
    Ok(Bundle {
        name: "thermostat".into(),
        plant: params.plant()?,
        cost: params.cost(),
        feedback: params.feedback(),
        target: params.target(),
        horizon: PredictionHorizon::generic(3, 1.0)?,
        flow_input: Some(Vector::zeros(1)),
        jump_alphabet: Some(vec![Vector::zeros(1), Vector::from_element(1, 1.0)]),
        region: region.clone(),
        jump_region: region,
        observables: vec![("V".into(), Arc::new(move |x: &Vector| p.terminal_cost(x)))],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(q: f64, z: f64) -> Vector {
        Vector::from_row_slice(&[q, z])
    }

    #[test]
    fn ordering_is_enforced() {
        let p = ThermostatParams { z_min: 12.0, ..Default::default() };
        assert!(matches!(p.validate(), Err(Error::InvalidParams(_))));
        let p = ThermostatParams { a_hot: 7.0, ..Default::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn terminal_cost_vanishes_inside_band() {
        let p = ThermostatParams::default();
        for z in [9.1, 10.0, 10.9] {
            assert_eq!(p.terminal_cost(&x(0.0, z)), 0.0);
            assert_eq!(p.terminal_cost(&x(1.0, z)), 0.0);
        }
    }

    #[test]
    fn jump_toggles_mode_only() {
        let plant = ThermostatParams::default().plant().unwrap();
        let u = Vector::from_element(1, 1.0);
        assert_eq!(plant.jump(&x(0.0, 8.5), &u), x(1.0, 8.5));
        assert!(plant.in_jump_set(&x(0.0, 8.5), &u, 0.0));
        assert!(!plant.in_flow_set(&x(0.0, 8.5), &u, 0.0));
    }

    #[test]
    fn equilibria_are_rest_points() {
        let p = ThermostatParams::default();
        let plant = p.plant().unwrap();
        let u = Vector::zeros(1);
        assert_eq!(plant.flow(&x(0.0, 5.0), &u)[1], 0.0);
        assert_eq!(plant.flow(&x(1.0, 15.0), &u)[1], 0.0);
    }

    #[test]
    fn jump_decrease_matches_closed_form() {
        let p = ThermostatParams::default();
        let plant = p.plant().unwrap();
        let fb = p.feedback();
        for i in 0..=200 {
            let z = 5.0 + 10.0 * i as f64 / 200.0;
            for q in [0.0, 1.0] {
                let xi = x(q, z);
                if !p.in_jump_region(&xi) {
                    continue;
                }
                let dv = p.terminal_cost(&plant.jump(&xi, &fb.kappa_d(&xi))) - p.terminal_cost(&xi);
                let expect = if z >= p.z_max {
                    -(z - p.z_max).powi(2) / 2.0
                } else if z > p.z_min {
                    0.0
                } else {
                    -(z - p.z_min).powi(2) / 2.0
                };
                assert!((dv - expect).abs() < 1e-12, "z = {z}, q = {q}");
            }
        }
    }
}
