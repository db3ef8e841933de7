//! Receding-horizon loop: solve, apply the optimal pair until the control
//! horizon triggers, re-measure, repeat.

use std::fmt;

use crate::error::{Error, Result};
use crate::horizon::ControlHorizon;
use crate::ocp::{OcpProblem, OcpSolution, Residuals};
use crate::simulate::{simulate, InputPolicy, SimOptions};
use crate::solution::{SolutionPair, Vector};
use crate::time::{HybridTime, HybridTimeDomain, TIME_TOL};

/// Checks performed during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AssertLevel {
    Off,
    /// Abort when a re-optimization is infeasible.
    Feasibility,
    /// Also abort when `J*` fails to decrease by the stage cost, up to `tol`.
    FeasibilityAndDescent {
        tol: f64,
    },
}

/// Overall limits of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcBudget {
    pub t_max: f64,
    pub j_max: usize,
    pub max_steps: usize,
}

impl Default for MpcBudget {
    fn default() -> Self {
        Self { t_max: 10.0, j_max: 30, max_steps: 1000 }
    }
}

#[derive(Debug, Clone)]
pub struct MpcConfig {
    /// Plant, cost, prediction horizon and solver settings.
    pub problem: OcpProblem,
    pub control: ControlHorizon,
    pub budget: MpcBudget,
    pub assert_level: AssertLevel,
    /// Seed each re-optimization with the unused tail of the previous one,
    /// extended by the feedback.
    pub warm_start: bool,
}

impl MpcConfig {
    pub fn new(problem: OcpProblem) -> Self {
        Self {
            problem,
            control: ControlHorizon::default(),
            budget: MpcBudget::default(),
            assert_level: AssertLevel::Feasibility,
            warm_start: true,
        }
    }

    pub fn with_control(mut self, control: ControlHorizon) -> Self {
        self.control = control;
        self
    }

    pub fn with_budget(mut self, budget: MpcBudget) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_assert_level(mut self, level: AssertLevel) -> Self {
        self.assert_level = level;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.budget;
        if !(b.t_max >= 0.0) || b.max_steps == 0 {
            return Err(Error::InvalidParams("budget needs t_max >= 0 and max_steps >= 1".into()));
        }
        if let AssertLevel::FeasibilityAndDescent { tol } = self.assert_level {
            if !(tol >= 0.0) {
                return Err(Error::InvalidParams(format!("descent tolerance must be nonnegative, got {tol}")));
            }
        }
        let h = &self.problem.horizon;
        let delta = h.thresholds()[0] / h.max_jumps().max(1) as f64;
        self.control.validate_against(h.max_jumps(), delta)?;
        self.problem.options.validate()
    }
}

/// One optimization of the loop.
#[derive(Debug, Clone)]
pub struct MpcStep {
    /// `(T_i, J_i)`.
    pub time: HybridTime,
    pub state: Vector,
    /// `J*(x(T_i, J_i))`.
    pub value: f64,
    pub residuals: Residuals,
    pub jump_count: usize,
    pub iterations: usize,
    pub evaluations: usize,
    /// Running cost of the applied part of the optimal pair.
    pub stage_cost: f64,
    /// The optimal pair, in its own time frame.
    pub prediction: SolutionPair,
    pub elapsed: std::time::Duration,
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    Budget,
    /// A re-optimization failed with assertions off.
    Infeasible {
        step: usize,
        residual: f64,
    },
}

#[derive(Debug, Clone)]
pub struct MpcTrace {
    /// Closed-loop solution pair.
    pub sol: SolutionPair,
    pub steps: Vec<MpcStep>,
    pub stop: StopReason,
}

impl MpcTrace {
    /// `(T_i, J_i)` of every optimization.
    pub fn optimization_times(&self) -> Vec<HybridTime> {
        self.steps.iter().map(|s| s.time).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.value).collect()
    }
}

/// Earliest point of `dom` at or before `limit` where the budget
/// `(t_left, j_left)` runs out, if any.
fn budget_cut(dom: &HybridTimeDomain, limit: HybridTime, t_left: f64, j_left: usize) -> Option<HybridTime> {
    for j in 0..=limit.j {
        let (s0, s1) = dom.interval(j).unwrap();
        let s1 = if j == limit.j { limit.t } else { s1 };
        if j >= j_left {
            return Some(HybridTime::new(s0, j));
        }
        if s1 >= t_left - TIME_TOL {
            return Some(HybridTime::new(s0.max(t_left).min(s1), j));
        }
    }
    None
}

/// Run the loop from `x0` until the budget is spent.
pub fn run(cfg: &MpcConfig, x0: &Vector) -> Result<MpcTrace> {
    cfg.validate()?;
    let problem = &cfg.problem;
    problem.plant.check_state(x0)?;
    let mut x = x0.clone();
    let mut now = HybridTime::zero();
    let mut trace: Option<SolutionPair> = None;
    let mut steps: Vec<MpcStep> = Vec::new();
    let mut warm: Vec<SolutionPair> = Vec::new();
    let mut stop = StopReason::Budget;

    for i in 0..cfg.budget.max_steps {
        let started = std::time::Instant::now();
        let opt: OcpSolution = match problem.solve_with_warm_starts(&x, &warm) {
            Ok(s) => s,
            Err(Error::Infeasible { residual }) => {
                if i == 0 {
                    return Err(Error::MpcInfeasibleStart { residual });
                }
                if cfg.assert_level == AssertLevel::Off {
                    stop = StopReason::Infeasible { step: i, residual };
                    break;
                }
                return Err(Error::FeasibilityLost { step: i, t: now.t, j: now.j, residual });
            }
            Err(e) => return Err(e),
        };
        let elapsed = started.elapsed();

        if let (AssertLevel::FeasibilityAndDescent { tol }, Some(prev)) = (cfg.assert_level, steps.last()) {
            let excess = opt.cost - (prev.value - prev.stage_cost);
            if excess > tol {
                return Err(Error::DescentViolated { step: i, excess });
            }
        }

        let dom = opt.sol.domain();
        let trigger = cfg.control.trigger_point(&dom);
        if trigger.t + trigger.j as f64 <= TIME_TOL {
            return Err(Error::Solver(format!("optimal pair at step {i} ends at the initial time")));
        }
        let t_left = cfg.budget.t_max - now.t;
        let j_left = cfg.budget.j_max.saturating_sub(now.j);
        let cut = budget_cut(&dom, trigger, t_left, j_left);
        let apply = cut.unwrap_or(trigger);
        let segment = opt.sol.truncate(apply)?;
        let stage_cost = problem.cost.running_cost_up_to(&opt.sol, apply)?;

        trace = Some(match trace {
            None => segment.clone(),
            Some(t) => t.concatenate(&segment, 1e-9)?,
        });
        steps.push(MpcStep {
            time: now,
            state: x.clone(),
            value: opt.cost,
            residuals: opt.residuals,
            jump_count: opt.jump_count,
            iterations: opt.iterations,
            evaluations: opt.evaluations,
            stage_cost,
            prediction: opt.sol.clone(),
            elapsed,
        });
        now = HybridTime::new(now.t + apply.t, now.j + apply.j);
        x = segment.terminal_state().clone();
        if cut.is_some() && (now.t >= cfg.budget.t_max - TIME_TOL || now.j >= cfg.budget.j_max) {
            break;
        }
        warm.clear();
        if cfg.warm_start {
            if let Some(w) = warm_start(problem, &opt.sol, apply) {
                warm.push(w);
            }
        }
    }
    let sol = trace.ok_or_else(|| Error::Solver("no optimization was performed".into()))?;
    Ok(MpcTrace { sol, steps, stop })
}

/// Unused tail of `sol` after `from`, extended by the feedback until it
/// reaches the prediction horizon.
fn warm_start(problem: &OcpProblem, sol: &SolutionPair, from: HybridTime) -> Option<SolutionPair> {
    let tail = sol.suffix(from).ok()?;
    let end = tail.terminal_time();
    let h = &problem.horizon;
    let joined = match &problem.feedback {
        Some(fb) => {
            let opts = SimOptions { t_max: h.max_time(), j_max: h.max_jumps(), ..problem.options.sim.clone() };
            let ext =
                simulate(&problem.plant, tail.terminal_state(), &InputPolicy::Feedback(fb.clone()), &opts).ok()?;
            tail.concatenate(&ext.solution, 1e-9).ok()?
        }
        None => tail,
    };
    let hit = h.reached_from(&joined.domain(), end)?;
    joined.truncate(hit).ok()
}

/// A failed descent check.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentViolation {
    pub step: usize,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentReport {
    pub tol: f64,
    pub checked: usize,
    pub violations: Vec<DescentViolation>,
}

impl DescentReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for DescentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.violations.first() {
            None => write!(f, "descent: {} steps within tolerance {:.1e}", self.checked, self.tol),
            Some(v) => write!(
                f,
                "descent: {} of {} steps violate tolerance {:.1e}; first at step {}: J* = {:.6e} > {:.6e}",
                self.violations.len(),
                self.checked,
                self.tol,
                v.step,
                v.value,
                v.bound
            ),
        }
    }
}

/// Check `J*_{i+1} ≤ J*_i − stage cost_i + tol` along the trace.
pub fn assert_descent(trace: &MpcTrace, tol: f64) -> DescentReport {
    let mut violations = Vec::new();
    for (i, w) in trace.steps.windows(2).enumerate() {
        let bound = w[0].value - w[0].stage_cost + tol;
        if !(w[1].value <= bound) {
            violations.push(DescentViolation { step: i + 1, value: w[1].value, bound });
        }
    }
    DescentReport { tol, checked: trace.steps.len().saturating_sub(1), violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_cut_stops_at_time_limit() {
        let dom = HybridTimeDomain::new(vec![0.0, 1.0, 3.0]).unwrap();
        let end = HybridTime::new(3.0, 1);
        assert_eq!(budget_cut(&dom, end, 2.0, 10), Some(HybridTime::new(2.0, 1)));
        assert_eq!(budget_cut(&dom, end, 5.0, 10), None);
        assert_eq!(budget_cut(&dom, end, 5.0, 1), Some(HybridTime::new(1.0, 1)));
        assert_eq!(budget_cut(&dom, end, 0.5, 10), Some(HybridTime::new(0.5, 0)));
    }
}
