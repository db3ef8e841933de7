//! Stage costs, terminal cost and terminal constraint, target sets, and cost
//! evaluation along solution pairs.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::plant::{ScalarFn, StateScalarFn};
use crate::solution::{hermite, FlowArc, SolutionPair, Vector};
use crate::time::{HybridTime, TIME_TOL};

/// Closed target set `𝒜` given through its distance function.
#[derive(Clone)]
pub struct TargetSet {
    distance: StateScalarFn,
}

impl fmt::Debug for TargetSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("TargetSet")
    }
}

impl TargetSet {
    pub fn new(distance: impl Fn(&Vector) -> f64 + Send + Sync + 'static) -> Self {
        Self { distance: Arc::new(distance) }
    }

    /// `|x|_𝒜`.
    pub fn distance(&self, x: &Vector) -> f64 {
        (self.distance)(x)
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        self.distance(x) <= tol
    }
}

/// Cost functional data `(L_C, L_D, V, X)`.
#[derive(Clone)]
pub struct CostSpec {
    flow_cost: ScalarFn,
    jump_cost: ScalarFn,
    terminal_cost: StateScalarFn,
    terminal_set: StateScalarFn,
    flow_cost_invariant: bool,
    /// Absolute quadrature tolerance per unit of ordinary time.
    pub quad_tol: f64,
    /// Slack for the terminal constraint `x(T, J) ∈ X`.
    pub terminal_tol: f64,
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostSpec")
            .field("flow_cost_invariant", &self.flow_cost_invariant)
            .field("quad_tol", &self.quad_tol)
            .finish()
    }
}

/// Terms of the cost of one solution pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub flow: f64,
    pub jump: f64,
    pub terminal: f64,
    /// Violation of `x(T, J) ∈ X`.
    pub terminal_violation: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.flow + self.jump + self.terminal
    }
}

impl CostSpec {
    /// `terminal_set` returns a nonnegative violation, zero exactly on `X`.
    pub fn new(
        flow_cost: impl Fn(&Vector, &Vector) -> f64 + Send + Sync + 'static,
        jump_cost: impl Fn(&Vector, &Vector) -> f64 + Send + Sync + 'static,
        terminal_cost: impl Fn(&Vector) -> f64 + Send + Sync + 'static,
        terminal_set: impl Fn(&Vector) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            flow_cost: Arc::new(flow_cost),
            jump_cost: Arc::new(jump_cost),
            terminal_cost: Arc::new(terminal_cost),
            terminal_set: Arc::new(terminal_set),
            flow_cost_invariant: false,
            quad_tol: 1e-9,
            terminal_tol: 1e-9,
        }
    }

    /// Declare `L_C` constant along every flow, so each flow contributes
    /// `L_C(x(t_j), u) · (t_{j+1} - t_j)` exactly.
    pub fn with_invariant_flow_cost(mut self) -> Self {
        self.flow_cost_invariant = true;
        self
    }

    pub fn flow_cost_invariant(&self) -> bool {
        self.flow_cost_invariant
    }

    pub fn flow_cost(&self, x: &Vector, u: &Vector) -> f64 {
        (self.flow_cost)(x, u)
    }

    pub fn jump_cost(&self, x: &Vector, u: &Vector) -> f64 {
        (self.jump_cost)(x, u)
    }

    pub fn terminal_cost(&self, x: &Vector) -> f64 {
        (self.terminal_cost)(x)
    }

    pub fn terminal_violation(&self, x: &Vector) -> f64 {
        (self.terminal_set)(x).max(0.0)
    }

    pub fn in_terminal_set(&self, x: &Vector, tol: f64) -> bool {
        self.terminal_violation(x) <= tol
    }

    fn arc_cost(&self, arc: &FlowArc, t_end: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..arc.len().saturating_sub(1) {
            let a = arc.times[i];
            if a >= t_end - TIME_TOL {
                break;
            }
            let b = arc.times[i + 1].min(t_end);
            let h = b - a;
            if h <= 0.0 {
                continue;
            }
            let u = &arc.inputs[i];
            if self.flow_cost_invariant {
                total += self.flow_cost(&arc.states[i], u) * h;
                continue;
            }
            let (xa, da, xb, db) = (&arc.states[i], &arc.derivs[i], &arc.states[i + 1], &arc.derivs[i + 1]);
            let (ta, tb) = (arc.times[i], arc.times[i + 1]);
            let f = |s: f64| self.flow_cost(&hermite(ta, tb, xa, da, xb, db, s).0, u);
            total += integrate(&f, a, b, self.quad_tol * h.max(1e-3));
        }
        total
    }

    /// Flow and jump cost accrued before `ht` (no terminal term).
    pub fn running_cost_up_to(&self, sol: &SolutionPair, ht: HybridTime) -> Result<f64> {
        if !sol.domain().contains(ht) {
            return Err(Error::OutOfDomain { t: ht.t, j: ht.j });
        }
        let mut total = 0.0;
        for (j, arc) in sol.arcs().iter().enumerate().take(ht.j + 1) {
            let t_end = if j == ht.j { ht.t } else { arc.end() };
            total += self.arc_cost(arc, t_end);
        }
        for j in 0..ht.j {
            let (pre, _, v) = sol.jump(j).unwrap();
            total += self.jump_cost(pre, v);
        }
        Ok(total)
    }

    /// All cost terms of `sol`, without checking the terminal constraint.
    pub fn breakdown(&self, sol: &SolutionPair) -> CostBreakdown {
        let flow: f64 = sol.arcs().iter().map(|a| self.arc_cost(a, a.end())).sum();
        let jump: f64 = (0..sol.jump_count())
            .map(|j| {
                let (pre, _, v) = sol.jump(j).unwrap();
                self.jump_cost(pre, v)
            })
            .sum();
        let xt = sol.terminal_state();
        CostBreakdown { flow, jump, terminal: self.terminal_cost(xt), terminal_violation: self.terminal_violation(xt) }
    }

    /// `𝒥(x, u)`; fails when the terminal state is outside `X`.
    pub fn evaluate(&self, sol: &SolutionPair) -> Result<f64> {
        let b = self.breakdown(sol);
        if b.terminal_violation > self.terminal_tol {
            return Err(Error::TerminalConstraint { residual: b.terminal_violation });
        }
        Ok(b.total())
    }
}

/// `𝒥(x, u)` for `spec`.
pub fn evaluate_cost(spec: &CostSpec, sol: &SolutionPair) -> Result<f64> {
    spec.evaluate(sol)
}

/// Running cost of `sol` before `ht`.
pub fn running_cost_up_to(spec: &CostSpec, sol: &SolutionPair, ht: HybridTime) -> Result<f64> {
    spec.running_cost_up_to(sol, ht)
}

const GL4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
];
const GL5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
    (0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

fn gauss(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rule: &[(f64, f64)]) -> f64 {
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    r * rule.iter().map(|(x, w)| w * f(c + r * x)).sum::<f64>()
}

/// Five-point Gauss-Legendre when it agrees with the four-point rule,
/// adaptive Simpson otherwise.
fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let g5 = gauss(f, a, b, &GL5);
    if (g5 - gauss(f, a, b, &GL4)).abs() <= tol {
        return g5;
    }
    adaptive_simpson(f, a, b, tol)
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_matches_closed_forms() {
        let v = adaptive_simpson(&|t: f64| t.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert!((v - 2.0).abs() < 1e-10);
        let v = adaptive_simpson(&|t: f64| (-3.0 * t).exp(), 0.0, 1.0, 1e-12);
        assert!((v - (1.0 - (-3.0f64).exp()) / 3.0).abs() < 1e-11);
    }

    #[test]
    fn gauss_path_is_exact_on_polynomials() {
        let v = integrate(&|t: f64| t.powi(7) - 2.0 * t, 0.0, 2.0, 1e-12);
        assert!((v - (32.0 - 4.0)).abs() < 1e-12);
        let v = integrate(&|t: f64| 1.0 / (1e-3 + t), 0.0, 1.0, 1e-12);
        assert!((v - (1.001f64 / 1e-3).ln()).abs() < 1e-9);
    }

    fn line_arc(n: usize) -> FlowArc {
        // x(t) = t on [0, 1] with derivative 1.
        let v = |a: f64| Vector::from_element(1, a);
        let mut arc = FlowArc::new(0.0, v(0.0), v(1.0), v(0.0));
        for k in 1..=n {
            let t = k as f64 / n as f64;
            arc.push(t, v(t), v(1.0), v(0.0));
        }
        arc
    }

    #[test]
    fn running_cost_integrates_along_dense_output() {
        let spec = CostSpec::new(|x, _| x[0] * x[0], |_, _| 1.0, |x| x[0], |_| 0.0);
        let sol = SolutionPair::new(vec![line_arc(4)], vec![]).unwrap();
        let c = spec.running_cost_up_to(&sol, HybridTime::new(0.5, 0)).unwrap();
        assert!((c - 0.125 / 3.0).abs() < 1e-12);
        let total = spec.evaluate(&sol).unwrap();
        assert!((total - (1.0 / 3.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn terminal_violation_is_an_error() {
        let spec = CostSpec::new(|_, _| 0.0, |_, _| 0.0, |_| 0.0, |x| x[0] - 0.5);
        let sol = SolutionPair::new(vec![line_arc(2)], vec![]).unwrap();
        assert!(matches!(spec.evaluate(&sol), Err(Error::TerminalConstraint { .. })));
    }
}
