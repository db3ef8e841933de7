//! Model predictive control for hybrid dynamical systems.
//!
//! Plants are hybrid systems `(C, f, D, g)` with inputs. Solutions live on
//! hybrid time domains, costs combine flow, jump and terminal terms, and the
//! controller re-solves a finite-horizon optimal control problem over a
//! staircase set of terminal hybrid times.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod error;
pub mod examples;
pub mod horizon;
pub mod integrate;
pub mod mpc;
pub mod ocp;
pub mod plant;
pub mod simulate;
pub mod solution;
pub mod time;
pub mod verify;

pub use cost::{evaluate_cost, running_cost_up_to, CostBreakdown, CostSpec, TargetSet};
pub use error::{Error, Result};
pub use horizon::{ControlHorizon, PredictionHorizon, TriggerPolicy};
pub use plant::{close_loop, validate_solution, ConstraintSet, Feedback, FlowFeedback, HybridPlant};
pub use simulate::{simulate, simulate_closed_loop, InputPolicy, SimOptions, Simulation, Termination};
pub use solution::{FlowArc, SolutionPair, Vector};
pub use time::{HybridTime, HybridTimeDomain};
