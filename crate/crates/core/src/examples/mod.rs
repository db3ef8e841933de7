//! Ready-made plants with costs, feedbacks, targets and horizons.

mod bouncing_ball;
mod sample_hold;
mod thermostat;

use std::fmt;

pub use bouncing_ball::{bouncing_ball, BouncingBallParams};
pub use sample_hold::{sample_hold, SampleHoldParams};
pub use thermostat::{thermostat, ThermostatParams};

use crate::cost::{CostSpec, TargetSet};
use crate::error::{Error, Result};
use crate::horizon::PredictionHorizon;
use crate::plant::{Feedback, HybridPlant, StateScalarFn};
use crate::solution::Vector;
use crate::verify::Axis;

/// Everything needed to simulate, optimize and verify one example.
#[derive(Clone)]
pub struct Bundle {
    pub name: String,
    pub plant: HybridPlant,
    pub cost: CostSpec,
    /// Auxiliary feedback `κ = (κ_C, κ_D)` under which `V` is a CLF.
    pub feedback: Feedback,
    pub target: TargetSet,
    pub horizon: PredictionHorizon,
    /// Flow input held fixed by the optimizer, when the flow map ignores it.
    pub flow_input: Option<Vector>,
    /// Finite set of jump inputs, when the input is discrete.
    pub jump_alphabet: Option<Vec<Vector>>,
    /// Sampling box for flow-side checks.
    pub region: Vec<Axis>,
    /// Sampling box for jump-side checks.
    pub jump_region: Vec<Axis>,
    /// Named scalar functions of the state written next to trajectories.
    pub observables: Vec<(String, StateScalarFn)>,
}

impl fmt::Debug for Bundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Bundle").field("name", &self.name).field("horizon", &self.horizon).finish()
    }
}

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 3] = ["bouncing-ball", "sample-hold", "thermostat"];

/// Bundle with default parameters.
pub fn by_name(name: &str) -> Result<Bundle> {
    match name.replace('_', "-").as_str() {
        "bouncing-ball" => bouncing_ball(BouncingBallParams::default()),
        "sample-hold" => sample_hold(SampleHoldParams::double_integrator()?),
        "thermostat" => thermostat(ThermostatParams::default()),
        other => Err(Error::InvalidParams(format!("unknown plant '{other}', expected one of {}", NAMES.join(", ")))),
    }
}
