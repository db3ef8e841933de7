//! Hybrid plants `H = (C, f, D, g)` with inputs, state feedbacks and
//! solution validation.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::solution::{hermite, SolutionPair, Vector};
use crate::time::{HybridTime, TIME_TOL};

pub type MapFn = Arc<dyn Fn(&Vector, &Vector) -> Vector + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&Vector, &Vector) -> f64 + Send + Sync>;
pub type StateScalarFn = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;
pub type StateMapFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
/// Closed-form flow `(x, u, duration) ↦ x(duration)` for a constant input.
pub type ClosedFormFn = Arc<dyn Fn(&Vector, &Vector, f64) -> Vector + Send + Sync>;

/// A subset of state-input space described by a nonnegative violation
/// function (zero exactly on the set) and an optional signed guard whose
/// sublevel set `{guard ≤ 0}` is used for event detection.
#[derive(Clone)]
pub struct ConstraintSet {
    violation: ScalarFn,
    guard: Option<ScalarFn>,
}

impl ConstraintSet {
    pub fn new(violation: impl Fn(&Vector, &Vector) -> f64 + Send + Sync + 'static) -> Self {
        Self { violation: Arc::new(violation), guard: None }
    }

    pub fn with_guard(mut self, guard: impl Fn(&Vector, &Vector) -> f64 + Send + Sync + 'static) -> Self {
        self.guard = Some(Arc::new(guard));
        self
    }

    pub fn violation(&self, x: &Vector, u: &Vector) -> f64 {
        (self.violation)(x, u).max(0.0)
    }

    pub fn contains(&self, x: &Vector, u: &Vector, tol: f64) -> bool {
        self.violation(x, u) <= tol
    }

    pub fn guard(&self, x: &Vector, u: &Vector) -> Option<f64> {
        self.guard.as_ref().map(|g| g(x, u))
    }

    pub fn has_guard(&self) -> bool {
        self.guard.is_some()
    }
}

impl fmt::Debug for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSet").field("guard", &self.guard.is_some()).finish()
    }
}

/// Hybrid plant with state dimension `n` and input dimension `m`.
#[derive(Clone)]
pub struct HybridPlant {
    name: String,
    state_dim: usize,
    input_dim: usize,
    flow_map: MapFn,
    jump_map: MapFn,
    flow_set: ConstraintSet,
    jump_set: ConstraintSet,
    closed_form: Option<ClosedFormFn>,
    input_bounds: Option<(Vector, Vector)>,
}

impl fmt::Debug for HybridPlant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HybridPlant")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("closed_form", &self.closed_form.is_some())
            .finish()
    }
}

impl HybridPlant {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        input_dim: usize,
        flow_map: impl Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
        jump_map: impl Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
        flow_set: ConstraintSet,
        jump_set: ConstraintSet,
    ) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::InvalidParams("state dimension must be positive".into()));
        }
        Ok(Self {
            name: name.into(),
            state_dim,
            input_dim,
            flow_map: Arc::new(flow_map),
            jump_map: Arc::new(jump_map),
            flow_set,
            jump_set,
            closed_form: None,
            input_bounds: None,
        })
    }

    pub fn with_closed_form(mut self, phi: impl Fn(&Vector, &Vector, f64) -> Vector + Send + Sync + 'static) -> Self {
        self.closed_form = Some(Arc::new(phi));
        self
    }

    /// Same plant, integrated numerically.
    pub fn without_closed_form(mut self) -> Self {
        self.closed_form = None;
        self
    }

    /// Box bounds on the input, used to bound decision variables.
    pub fn with_input_bounds(mut self, lo: Vector, hi: Vector) -> Result<Self> {
        if lo.len() != self.input_dim || hi.len() != self.input_dim {
            return Err(Error::Dimension { expected: self.input_dim, got: lo.len() });
        }
        if lo.iter().zip(hi.iter()).any(|(a, b)| !(a <= b)) {
            return Err(Error::InvalidParams("input bounds need lo <= hi".into()));
        }
        self.input_bounds = Some((lo, hi));
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn input_bounds(&self) -> Option<&(Vector, Vector)> {
        self.input_bounds.as_ref()
    }

    pub fn closed_form(&self) -> Option<&ClosedFormFn> {
        self.closed_form.as_ref()
    }

    pub fn flow(&self, x: &Vector, u: &Vector) -> Vector {
        (self.flow_map)(x, u)
    }

    pub fn jump(&self, x: &Vector, u: &Vector) -> Vector {
        (self.jump_map)(x, u)
    }

    pub fn flow_set(&self) -> &ConstraintSet {
        &self.flow_set
    }

    pub fn jump_set(&self) -> &ConstraintSet {
        &self.jump_set
    }

    pub fn flow_violation(&self, x: &Vector, u: &Vector) -> f64 {
        self.flow_set.violation(x, u)
    }

    pub fn jump_violation(&self, x: &Vector, u: &Vector) -> f64 {
        self.jump_set.violation(x, u)
    }

    pub fn in_flow_set(&self, x: &Vector, u: &Vector, tol: f64) -> bool {
        self.flow_set.contains(x, u, tol)
    }

    pub fn in_jump_set(&self, x: &Vector, u: &Vector, tol: f64) -> bool {
        self.jump_set.contains(x, u, tol)
    }

    /// Whether jumps are triggered by a state guard rather than chosen freely.
    pub fn is_guard_triggered(&self) -> bool {
        self.jump_set.has_guard()
    }

    pub fn check_state(&self, x: &Vector) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::Dimension { expected: self.state_dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("state has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn check_input(&self, u: &Vector) -> Result<()> {
        if u.len() != self.input_dim {
            return Err(Error::Dimension { expected: self.input_dim, got: u.len() });
        }
        Ok(())
    }

    /// Projection of `Π(C ∪ D)` membership residual for a state alone, taking
    /// the best input among the candidates given.
    pub fn state_residual(&self, x: &Vector, candidates: &[Vector]) -> f64 {
        candidates
            .iter()
            .map(|u| self.flow_violation(x, u).min(self.jump_violation(x, u)))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Flow part of a state feedback.
#[derive(Clone)]
pub enum FlowFeedback {
    Constant(Vector),
    State(StateMapFn),
}

/// State feedback pair `(κ_C, κ_D)`.
///
/// `jump_guard` optionally gives a signed function whose sublevel set
/// `{≤ 0}` is the closed-loop jump set, for plants whose jumps are input
/// triggered.
#[derive(Clone)]
pub struct Feedback {
    flow: FlowFeedback,
    jump: StateMapFn,
    jump_guard: Option<StateScalarFn>,
}

impl fmt::Debug for Feedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Feedback").field("jump_guard", &self.jump_guard.is_some()).finish()
    }
}

impl Feedback {
    pub fn new(flow: FlowFeedback, jump: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        Self { flow, jump: Arc::new(jump), jump_guard: None }
    }

    pub fn with_jump_guard(mut self, guard: impl Fn(&Vector) -> f64 + Send + Sync + 'static) -> Self {
        self.jump_guard = Some(Arc::new(guard));
        self
    }

    pub fn flow_feedback(&self) -> &FlowFeedback {
        &self.flow
    }

    pub fn kappa_c(&self, x: &Vector) -> Vector {
        match &self.flow {
            FlowFeedback::Constant(u) => u.clone(),
            FlowFeedback::State(k) => k(x),
        }
    }

    pub fn kappa_d(&self, x: &Vector) -> Vector {
        (self.jump)(x)
    }

    pub fn jump_guard(&self) -> Option<&StateScalarFn> {
        self.jump_guard.as_ref()
    }
}

/// Closed loop `H_κ = (C_κ, f_κ, D_κ, g_κ)` as a plant with no input.
pub fn close_loop(plant: &HybridPlant, fb: &Feedback) -> HybridPlant {
    let (p1, f1) = (plant.clone(), fb.clone());
    let (p2, f2) = (plant.clone(), fb.clone());
    let (p3, f3) = (plant.clone(), fb.clone());
    let (p4, f4) = (plant.clone(), fb.clone());
    let mut jump_set = ConstraintSet::new(move |x, _| p4.jump_violation(x, &f4.kappa_d(x)));
    if let Some(g) = fb.jump_guard.clone() {
        jump_set = jump_set.with_guard(move |x, _| g(x));
    } else if plant.jump_set.has_guard() {
        let (p5, f5) = (plant.clone(), fb.clone());
        jump_set = jump_set.with_guard(move |x, _| p5.jump_set.guard(x, &f5.kappa_d(x)).unwrap_or(f64::INFINITY));
    }
    let mut flow_set = ConstraintSet::new(move |x, _| p3.flow_violation(x, &f3.kappa_c(x)));
    if plant.flow_set.has_guard() {
        let (p6, f6) = (plant.clone(), fb.clone());
        flow_set = flow_set.with_guard(move |x, _| p6.flow_set.guard(x, &f6.kappa_c(x)).unwrap_or(f64::NEG_INFINITY));
    }
    let mut closed = HybridPlant {
        name: format!("{} (closed loop)", plant.name),
        state_dim: plant.state_dim,
        input_dim: 0,
        flow_map: Arc::new(move |x, _| p1.flow(x, &f1.kappa_c(x))),
        jump_map: Arc::new(move |x, _| p2.jump(x, &f2.kappa_d(x))),
        flow_set,
        jump_set,
        closed_form: None,
        input_bounds: None,
    };
    if let (Some(phi), FlowFeedback::Constant(u)) = (plant.closed_form.clone(), &fb.flow) {
        let u = u.clone();
        closed.closed_form = Some(Arc::new(move |x, _, dt| phi(x, &u, dt)));
    }
    closed
}

/// Which solution condition a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    /// Initial point outside `C ∪ D`.
    S0,
    /// Interior flow point outside `C`.
    S1Membership,
    /// Flow residual `ẋ - f(x, u)` too large.
    S1Dynamics,
    /// Pre-jump point outside `D`.
    S2Membership,
    /// Post-jump state differs from `g(x, u)`.
    S2Map,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub condition: Condition,
    pub at: HybridTime,
    /// Index of the offending node within its flow arc, if any.
    pub node: Option<usize>,
    pub residual: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.condition {
            Condition::S0 => "initial point not in C ∪ D",
            Condition::S1Membership => "flow point not in C",
            Condition::S1Dynamics => "flow residual",
            Condition::S2Membership => "not in D",
            Condition::S2Map => "post-jump state differs from g(x, u)",
        };
        write!(f, "{what} at {} (residual {:.3e})", self.at, self.residual)
    }
}

/// Outcome of [`validate_solution`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub max_flow_residual: f64,
    pub max_membership_residual: f64,
    pub max_jump_residual: f64,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check S0, S1 and S2 for a solution pair at tolerance `tol`.
///
/// The flow residual on each node interval is the mismatch between the
/// state increment and Simpson's rule applied to `f` along the Hermite
/// interpolant built from `f` evaluated at the nodes, scaled by
/// `1 + |x|_∞`.
pub fn validate_solution(plant: &HybridPlant, sol: &SolutionPair, tol: f64) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let x0 = sol.initial_state();
    let first = &sol.arcs()[0];
    let mut r0 = plant.flow_violation(x0, &first.inputs[0]);
    if let Some(v) = sol.jump_inputs().first() {
        r0 = r0.min(plant.jump_violation(x0, v));
    }
    rep.max_membership_residual = r0;
    if r0 > tol {
        rep.violations.push(Violation {
            condition: Condition::S0,
            at: HybridTime::zero(),
            node: Some(0),
            residual: r0,
        });
    }

    for (j, arc) in sol.arcs().iter().enumerate() {
        if arc.duration() <= TIME_TOL {
            continue;
        }
        let n = arc.len();
        for i in 1..n.saturating_sub(1) {
            let r = plant.flow_violation(&arc.states[i], &arc.inputs[i]);
            rep.max_membership_residual = rep.max_membership_residual.max(r);
            if r > tol {
                rep.violations.push(Violation {
                    condition: Condition::S1Membership,
                    at: HybridTime::new(arc.times[i], j),
                    node: Some(i),
                    residual: r,
                });
            }
        }
        for i in 0..n - 1 {
            let h = arc.times[i + 1] - arc.times[i];
            if h <= 0.0 {
                continue;
            }
            let u = &arc.inputs[i];
            let (xa, xb) = (&arc.states[i], &arc.states[i + 1]);
            let fa = plant.flow(xa, u);
            let fb = plant.flow(xb, u);
            let tm = 0.5 * (arc.times[i] + arc.times[i + 1]);
            let (xm, _) = hermite(arc.times[i], arc.times[i + 1], xa, &fa, xb, &fb, tm);
            let fm = plant.flow(&xm, u);
            let incr = xb - xa - (&fa + &fm * 4.0 + &fb) * (h / 6.0);
            let r = incr.amax() / (1.0 + xa.amax());
            rep.max_flow_residual = rep.max_flow_residual.max(r);
            if r > tol {
                rep.violations.push(Violation {
                    condition: Condition::S1Dynamics,
                    at: HybridTime::new(arc.times[i + 1], j),
                    node: Some(i + 1),
                    residual: r,
                });
            }
        }
    }

    for j in 0..sol.jump_count() {
        let (pre, post, v) = sol.jump(j).unwrap();
        let t = sol.arcs()[j].end();
        let rd = plant.jump_violation(pre, v);
        rep.max_jump_residual = rep.max_jump_residual.max(rd);
        if rd > tol {
            rep.violations.push(Violation {
                condition: Condition::S2Membership,
                at: HybridTime::new(t, j),
                node: None,
                residual: rd,
            });
        }
        let g = plant.jump(pre, v);
        let rg = (post - &g).amax() / (1.0 + g.amax());
        rep.max_jump_residual = rep.max_jump_residual.max(rg);
        if rg > tol {
            rep.violations.push(Violation {
                condition: Condition::S2Map,
                at: HybridTime::new(t, j + 1),
                node: None,
                residual: rg,
            });
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solution::FlowArc;

    fn v(a: &[f64]) -> Vector {
        Vector::from_row_slice(a)
    }

    fn ball() -> HybridPlant {
        HybridPlant::new(
            "ball",
            2,
            1,
            |x, _| v(&[x[1], -9.81]),
            |x, u| v(&[0.0, -0.9 * x[1] + u[0]]),
            ConstraintSet::new(|x, u| (-x[0]).max(0.0) + (-u[0]).max(0.0)),
            ConstraintSet::new(|x, u| x[0].abs() + x[1].max(0.0) + (-u[0]).max(0.0)).with_guard(|x, _| x[0]),
        )
        .unwrap()
    }

    fn fall(t0: f64, t1: f64, x0: &Vector, n: usize) -> FlowArc {
        let at = |t: f64| {
            let s = t - t0;
            v(&[x0[0] + x0[1] * s - 4.905 * s * s, x0[1] - 9.81 * s])
        };
        let mut arc = FlowArc::new(t0, at(t0), v(&[x0[1], -9.81]), v(&[0.0]));
        for k in 1..=n {
            let t = t0 + (t1 - t0) * k as f64 / n as f64;
            let x = at(t);
            let d = v(&[x[1], -9.81]);
            arc.push(t, x, d, v(&[0.0]));
        }
        arc
    }

    #[test]
    fn exact_arc_validates_and_perturbation_is_flagged() {
        let p = ball();
        let x0 = v(&[1.0, 0.0]);
        let t1 = (2.0f64 / 9.81).sqrt();
        let sol = SolutionPair::new(vec![fall(0.0, t1, &x0, 20)], vec![]).unwrap();
        assert!(validate_solution(&p, &sol, 1e-9).is_valid());

        let mut arcs = sol.arcs().to_vec();
        arcs[0].states[7][0] += 1e-3;
        let bad = SolutionPair::new(arcs, vec![]).unwrap();
        let rep = validate_solution(&p, &bad, 1e-9);
        assert!(rep.violations.iter().any(|e| e.condition == Condition::S1Dynamics && e.node == Some(7)));
    }

    #[test]
    fn jump_off_the_ground_is_not_in_d() {
        let p = ball();
        let a0 = fall(0.0, 0.1, &v(&[0.55, 0.0]), 4);
        let pre = a0.last_state().clone();
        let post = p.jump(&pre, &v(&[0.0]));
        let a1 = FlowArc::new(0.1, post.clone(), p.flow(&post, &v(&[0.0])), v(&[0.0]));
        let sol = SolutionPair::new(vec![a0, a1], vec![v(&[0.0])]).unwrap();
        let rep = validate_solution(&p, &sol, 1e-9);
        assert!(rep.violations.iter().any(|e| e.condition == Condition::S2Membership));
    }

    #[test]
    fn closed_loop_has_no_input() {
        let p = ball();
        let fb = Feedback::new(FlowFeedback::Constant(v(&[0.0])), |x| v(&[(0.9 * x[1] + 7.672).max(0.0)]));
        let cl = close_loop(&p, &fb);
        assert_eq!(cl.input_dim(), 0);
        let e = Vector::zeros(0);
        let x = v(&[0.0, -7.672]);
        assert!(cl.in_jump_set(&x, &e, 0.0));
        assert!((cl.jump(&x, &e)[1] - 7.672).abs() < 1e-12);
        assert_eq!(cl.jump_set().guard(&x, &e), Some(0.0));
    }
}
