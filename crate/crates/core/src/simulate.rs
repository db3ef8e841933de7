//! Simulation of hybrid plants: adaptive flows with event location and
//! jumps with priority over flows.

use std::fmt;

use crate::error::{Error, Result};
use crate::integrate::{dopri_step, step_factor};
use crate::plant::{Feedback, FlowFeedback, HybridPlant};
use crate::solution::{FlowArc, SolutionPair, Vector};
use crate::time::{HybridTimeDomain, TIME_TOL};

/// Inter-jump time below which consecutive jumps count towards Zeno truncation.
pub const ZENO_DWELL: f64 = 1e-9;
/// Number of consecutive short dwells that stops a simulation.
pub const ZENO_COUNT: usize = 10;

/// Budgets and tolerances for [`simulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub t_max: f64,
    pub j_max: usize,
    /// Largest step; also the node spacing of closed-form flows.
    pub max_step: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Slack for set membership tests.
    pub set_tol: f64,
    /// Width of the final event bracket.
    pub event_tol: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { t_max: 10.0, j_max: 100, max_step: 0.02, rtol: 1e-10, atol: 1e-12, set_tol: 1e-9, event_tol: 1e-12 }
    }
}

impl SimOptions {
    pub fn budget(t_max: f64, j_max: usize) -> Self {
        Self { t_max, j_max, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max >= 0.0) || !self.t_max.is_finite() {
            return Err(Error::InvalidParams(format!("t_max must be finite and >= 0, got {}", self.t_max)));
        }
        if !(self.max_step > 0.0) || !(self.rtol > 0.0) || !(self.atol > 0.0) || !(self.event_tol > 0.0) {
            return Err(Error::InvalidParams("step size and tolerances must be positive".into()));
        }
        Ok(())
    }

    /// Tolerance at which simulated solutions pass [`crate::plant::validate_solution`].
    pub fn validation_tol(&self) -> f64 {
        10.0 * self.rtol.max(self.atol).max(self.set_tol)
    }
}

/// Input applied during flows.
#[derive(Clone)]
pub enum FlowSignal {
    Constant(Vector),
    Feedback(Feedback),
}

impl FlowSignal {
    pub fn value(&self, x: &Vector) -> Vector {
        match self {
            FlowSignal::Constant(u) => u.clone(),
            FlowSignal::Feedback(fb) => fb.kappa_c(x),
        }
    }

    fn constant(&self) -> Option<&Vector> {
        match self {
            FlowSignal::Constant(u) => Some(u),
            FlowSignal::Feedback(fb) => match fb.flow_feedback() {
                FlowFeedback::Constant(u) => Some(u),
                FlowFeedback::State(_) => None,
            },
        }
    }
}

/// An open-loop hybrid input defined on a hybrid time domain.
///
/// The flow input on level `j` is piecewise constant on `flow[j].len()`
/// equal sub-intervals of `[t_j, t_{j+1}]`; `jumps[j]` is applied at
/// `(t_{j+1}, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridInput {
    pub domain: HybridTimeDomain,
    pub flow: Vec<Vec<Vector>>,
    pub jumps: Vec<Vector>,
}

impl HybridInput {
    pub fn new(domain: HybridTimeDomain, flow: Vec<Vec<Vector>>, jumps: Vec<Vector>) -> Result<Self> {
        let levels = domain.jump_count() + 1;
        if flow.len() != levels || jumps.len() + 1 != levels || flow.iter().any(|f| f.is_empty()) {
            return Err(Error::InvalidParams(format!(
                "input on a domain with {levels} levels needs {levels} flow pieces and {} jump inputs",
                levels - 1
            )));
        }
        Ok(Self { domain, flow, jumps })
    }
}

/// How inputs are chosen during a simulation.
#[derive(Clone)]
pub enum InputPolicy {
    /// The same input for flows and jumps; jumps take priority.
    Constant(Vector),
    /// State feedback `(κ_C, κ_D)`; jumps take priority.
    Feedback(Feedback),
    /// Open-loop input; its domain dictates when jumps happen.
    OpenLoop(HybridInput),
    /// Constant flow input and a finite list of jump inputs consumed at
    /// guard events; jumps take priority.
    JumpSequence { flow: Vector, jumps: Vec<Vector> },
}

impl InputPolicy {
    fn flow_signal(&self) -> FlowSignal {
        match self {
            InputPolicy::Constant(u) => FlowSignal::Constant(u.clone()),
            InputPolicy::Feedback(fb) => FlowSignal::Feedback(fb.clone()),
            InputPolicy::JumpSequence { flow, .. } => FlowSignal::Constant(flow.clone()),
            InputPolicy::OpenLoop(inp) => FlowSignal::Constant(inp.flow[0][0].clone()),
        }
    }

    fn jump_input(&self, x: &Vector, j: usize) -> Option<Vector> {
        match self {
            InputPolicy::Constant(u) => Some(u.clone()),
            InputPolicy::Feedback(fb) => Some(fb.kappa_d(x)),
            InputPolicy::JumpSequence { jumps, .. } => jumps.get(j).cloned(),
            InputPolicy::OpenLoop(inp) => inp.jumps.get(j).cloned(),
        }
    }
}

/// Why a simulation stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    TimeBudget,
    JumpBudget,
    /// A jump was required but the input supplied none.
    InputExhausted,
    /// Neither flowing nor jumping is possible.
    Blocked,
    /// Jumps accumulate; `accumulation_time` estimates the Zeno time.
    ZenoTruncated {
        accumulation_time: f64,
    },
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::TimeBudget => write!(f, "time budget reached"),
            Termination::JumpBudget => write!(f, "jump budget reached"),
            Termination::InputExhausted => write!(f, "input exhausted"),
            Termination::Blocked => write!(f, "blocked: neither flow nor jump possible"),
            Termination::ZenoTruncated { accumulation_time } => {
                write!(f, "Zeno-truncated (jumps accumulate near t = {accumulation_time:.6})")
            }
        }
    }
}

/// A simulated solution pair and the reason the simulation stopped.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub solution: SolutionPair,
    pub termination: Termination,
}

/// How a flow segment ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentEnd {
    Duration,
    Event,
}

#[derive(Debug, Clone)]
pub struct FlowSegment {
    pub arc: FlowArc,
    pub end: SegmentEnd,
}

type EventFn<'a> = &'a dyn Fn(&Vector, &Vector) -> f64;

/// Flow from `x0` at time `t0` for at most `duration`, stopping early when
/// the jump guard of `plant` becomes nonpositive.
pub fn flow_segment(
    plant: &HybridPlant,
    x0: &Vector,
    t0: f64,
    signal: &FlowSignal,
    duration: f64,
    opts: &SimOptions,
) -> Result<FlowSegment> {
    plant.check_state(x0)?;
    if plant.jump_set().has_guard() {
        let ev = |x: &Vector, u: &Vector| plant.jump_set().guard(x, u).unwrap();
        integrate_flow(plant, x0, t0, signal, duration, opts, Some(&ev), true)
    } else {
        integrate_flow(plant, x0, t0, signal, duration, opts, None, true)
    }
}

/// Shared flow integrator. With `strict`, leaving `C` without an event is an error.
#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate_flow(
    plant: &HybridPlant,
    x0: &Vector,
    t0: f64,
    signal: &FlowSignal,
    duration: f64,
    opts: &SimOptions,
    event: Option<EventFn>,
    strict: bool,
) -> Result<FlowSegment> {
    let u0 = signal.value(x0);
    let mut arc = FlowArc::new(t0, x0.clone(), plant.flow(x0, &u0), u0.clone());
    if !(duration > 0.0) {
        return Ok(FlowSegment { arc, end: SegmentEnd::Duration });
    }
    let t_end = t0 + duration;
    let closed = match (plant.closed_form(), signal.constant()) {
        (Some(phi), Some(u)) => Some((phi.clone(), u.clone())),
        _ => None,
    };
    let rhs = |x: &Vector| plant.flow(x, &signal.value(x));

    let mut t = t0;
    let mut x = x0.clone();
    let mut dx = arc.derivs[0].clone();
    let mut d_prev = event.map(|e| e(&x, &u0));
    let mut h = opts.max_step.min(duration);
    let mut rejected = 0usize;

    while t < t_end {
        let h_try = h.min(t_end - t).min(opts.max_step);
        let (x_new, dx_new, err) = match &closed {
            Some((phi, u)) => {
                let xn = phi(x0, u, t + h_try - t0);
                let dn = plant.flow(&xn, u);
                (xn, dn, 0.0)
            }
            None => {
                let s = dopri_step(&rhs, &x, &dx, h_try, opts.rtol, opts.atol);
                if !s.err.is_finite() || s.y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Integration { t, reason: "non-finite state".into() });
                }
                if s.err > 1.0 {
                    h = h_try * step_factor(s.err);
                    rejected += 1;
                    if h < 1e-14 * (1.0 + t.abs()) || rejected > 10_000 {
                        return Err(Error::Integration { t, reason: "step size underflow".into() });
                    }
                    continue;
                }
                (s.y, s.dy, s.err)
            }
        };
        let t_new = if t_end - (t + h_try) <= TIME_TOL { t_end } else { t + h_try };
        let u_new = signal.value(&x_new);

        if let (Some(ev), Some(dp)) = (event, d_prev) {
            let d_new = ev(&x_new, &u_new);
            if dp > 0.0 && d_new <= 0.0 {
                let advance = |tau: f64| -> Vector {
                    match &closed {
                        Some((phi, u)) => phi(x0, u, t + tau - t0),
                        None => dopri_step(&rhs, &x, &dx, tau, opts.rtol, opts.atol).y,
                    }
                };
                let g = |tau: f64| {
                    let xs = advance(tau);
                    let us = signal.value(&xs);
                    ev(&xs, &us)
                };
                let tau = locate_root(&g, h_try, dp, d_new, opts.event_tol);
                let xe = advance(tau);
                let ue = signal.value(&xe);
                let de = plant.flow(&xe, &ue);
                arc.push(t + tau, xe, de, ue);
                return Ok(FlowSegment { arc, end: SegmentEnd::Event });
            }
            d_prev = Some(d_new);
        }

        if strict && plant.flow_violation(&x_new, &u_new) > opts.set_tol {
            return Err(Error::FlowEscape { t: t_new });
        }
        arc.push(t_new, x_new.clone(), dx_new.clone(), u_new);
        t = t_new;
        x = x_new;
        dx = dx_new;
        if closed.is_none() {
            h = (h_try * step_factor(err)).min(opts.max_step);
        }
    }
    Ok(FlowSegment { arc, end: SegmentEnd::Duration })
}

/// Illinois false position on `[0, b]` with `g(0) > 0 >= g(b)`; returns a
/// point with `g <= 0` within `tol` of the crossing.
fn locate_root(g: &dyn Fn(f64) -> f64, b: f64, ga: f64, gb: f64, tol: f64) -> f64 {
    let (mut a, mut fa, mut b, mut fb) = (0.0, ga, b, gb);
    let mut side = 0i8;
    for it in 0..200 {
        if b - a <= tol {
            break;
        }
        let mut m = if it % 4 == 3 { 0.5 * (a + b) } else { (a * fb - b * fa) / (fb - fa) };
        if !(m > a && m < b) {
            m = 0.5 * (a + b);
        }
        let fm = g(m);
        if fm > 0.0 {
            a = m;
            fa = fm;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        } else {
            b = m;
            fb = fm;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        }
    }
    b
}

/// Simulate `plant` from `x0` under `policy` until a budget is exhausted.
pub fn simulate(plant: &HybridPlant, x0: &Vector, policy: &InputPolicy, opts: &SimOptions) -> Result<Simulation> {
    plant.check_state(x0)?;
    opts.validate()?;
    match policy {
        InputPolicy::OpenLoop(inp) => simulate_open_loop(plant, x0, inp, opts),
        _ => simulate_with_priority(plant, x0, policy, opts),
    }
}

/// Simulate the closed loop under `fb`.
pub fn simulate_closed_loop(plant: &HybridPlant, fb: &Feedback, x0: &Vector, opts: &SimOptions) -> Result<Simulation> {
    simulate(plant, x0, &InputPolicy::Feedback(fb.clone()), opts)
}

fn append(cur: &mut FlowArc, seg: FlowArc) {
    for i in 1..seg.len() {
        cur.push(seg.times[i], seg.states[i].clone(), seg.derivs[i].clone(), seg.inputs[i].clone());
    }
}

fn simulate_with_priority(
    plant: &HybridPlant,
    x0: &Vector,
    policy: &InputPolicy,
    opts: &SimOptions,
) -> Result<Simulation> {
    let signal = policy.flow_signal();
    let u_flow = signal.value(x0);
    plant.check_input(&u_flow)?;
    let mut r0 = plant.flow_violation(x0, &u_flow);
    if let Some(v) = policy.jump_input(x0, 0) {
        r0 = r0.min(plant.jump_violation(x0, &v));
    }
    if r0 > opts.set_tol {
        return Err(Error::InfeasibleStart { residual: r0 });
    }

    let fb_guard = match policy {
        InputPolicy::Feedback(fb) => fb.jump_guard().cloned(),
        _ => None,
    };
    let plant_guard = |x: &Vector, u: &Vector| plant.jump_set().guard(x, u).unwrap();
    let fb_event = |x: &Vector, _: &Vector| (fb_guard.as_ref().unwrap())(x);
    let event: Option<EventFn> = if fb_guard.is_some() {
        Some(&fb_event)
    } else if plant.jump_set().has_guard() {
        Some(&plant_guard)
    } else {
        None
    };

    let mut arcs = Vec::new();
    let mut jumps = Vec::new();
    let mut cur = FlowArc::new(0.0, x0.clone(), plant.flow(x0, &u_flow), u_flow);
    let mut x = x0.clone();
    let mut t = 0.0;
    let mut at_event = false;
    let mut short = 0usize;
    let mut last_jump_t = 0.0;
    let termination;

    loop {
        let j = jumps.len();
        let v = policy.jump_input(&x, j);
        if let Some(v) = v.as_ref().filter(|v| plant.in_jump_set(&x, v, opts.set_tol)) {
            if j >= opts.j_max {
                termination = Termination::JumpBudget;
                break;
            }
            let xp = plant.jump(&x, v);
            let moved = (&xp - &x).amax() > 1e-12 * (1.0 + x.amax());
            if t - last_jump_t < ZENO_DWELL && moved && j > 0 {
                short += 1;
            } else {
                short = 0;
            }
            last_jump_t = t;
            let u = signal.value(&xp);
            let next = FlowArc::new(t, xp.clone(), plant.flow(&xp, &u), u);
            arcs.push(std::mem::replace(&mut cur, next));
            jumps.push(v.clone());
            x = xp;
            at_event = false;
            if short >= ZENO_COUNT {
                termination = Termination::ZenoTruncated { accumulation_time: t };
                break;
            }
            continue;
        }
        if at_event {
            termination = if v.is_none() { Termination::InputExhausted } else { Termination::Blocked };
            break;
        }
        if t >= opts.t_max {
            termination = Termination::TimeBudget;
            break;
        }
        let u = signal.value(&x);
        if plant.flow_violation(&x, &u) > opts.set_tol {
            termination = if v.is_none() { Termination::InputExhausted } else { Termination::Blocked };
            break;
        }
        let seg = integrate_flow(plant, &x, t, &signal, opts.t_max - t, opts, event, true)?;
        let end = seg.end;
        append(&mut cur, seg.arc);
        t = cur.end();
        x = cur.last_state().clone();
        match end {
            SegmentEnd::Duration => {
                termination = Termination::TimeBudget;
                break;
            }
            SegmentEnd::Event => at_event = true,
        }
    }
    arcs.push(cur);
    let termination = diagnose_zeno(&arcs, termination);
    Ok(Simulation { solution: SolutionPair::new(arcs, jumps)?, termination })
}

/// Reclassify a budget stop as Zeno when inter-jump dwell times shrink
/// geometrically over the last five complete dwells.
fn diagnose_zeno(arcs: &[FlowArc], termination: Termination) -> Termination {
    if !matches!(termination, Termination::TimeBudget | Termination::JumpBudget) {
        return termination;
    }
    let jumps = arcs.len() - 1;
    if jumps < 6 {
        return termination;
    }
    let dwell: Vec<f64> = arcs[jumps - 5..jumps].iter().map(|a| a.duration()).collect();
    if dwell.iter().any(|&d| d <= 1e-15) {
        return termination;
    }
    let ratios: Vec<f64> = dwell.windows(2).map(|w| w[1] / w[0]).collect();
    if ratios.iter().any(|&r| !(0.01..=0.995).contains(&r)) {
        return termination;
    }
    let r = (dwell[4] / dwell[0]).powf(0.25);
    let last_jump = arcs[jumps - 1].end();
    Termination::ZenoTruncated { accumulation_time: last_jump + dwell[4] * r / (1.0 - r) }
}

fn simulate_open_loop(plant: &HybridPlant, x0: &Vector, inp: &HybridInput, opts: &SimOptions) -> Result<Simulation> {
    let levels = inp.domain.jump_count() + 1;
    let u_flow = inp.flow[0][0].clone();
    plant.check_input(&u_flow)?;
    let (a0, b0) = inp.domain.interval(0).unwrap();
    let mut r0 = plant.flow_violation(x0, &u_flow);
    if b0 - a0 <= TIME_TOL {
        if let Some(v) = inp.jumps.first() {
            r0 = r0.min(plant.jump_violation(x0, v));
        }
    }
    if r0 > opts.set_tol {
        return Err(Error::InfeasibleStart { residual: r0 });
    }
    let plant_guard = |x: &Vector, u: &Vector| plant.jump_set().guard(x, u).unwrap();
    let event: Option<EventFn> = if plant.jump_set().has_guard() { Some(&plant_guard) } else { None };

    let mut arcs = Vec::new();
    let mut jumps = Vec::new();
    let mut cur = FlowArc::new(0.0, x0.clone(), plant.flow(x0, &u_flow), u_flow);
    let mut x = x0.clone();
    let mut t = 0.0;
    let mut termination = Termination::InputExhausted;

    'levels: for j in 0..levels {
        let (a, b) = inp.domain.interval(j).unwrap();
        let b_eff = b.min(opts.t_max);
        let pieces = &inp.flow[j];
        let k = pieces.len();
        for (p, u) in pieces.iter().enumerate() {
            let pb = if p + 1 == k { b } else { a + (b - a) * (p + 1) as f64 / k as f64 };
            let pb = pb.min(b_eff);
            if pb - t <= TIME_TOL {
                continue;
            }
            let seg = integrate_flow(plant, &x, t, &FlowSignal::Constant(u.clone()), pb - t, opts, event, true)?;
            let end = seg.end;
            append(&mut cur, seg.arc);
            t = cur.end();
            x = cur.last_state().clone();
            if end == SegmentEnd::Event && b - t > 1e3 * opts.event_tol {
                termination = Termination::Blocked;
                break 'levels;
            }
        }
        if b > opts.t_max + TIME_TOL {
            termination = Termination::TimeBudget;
            break;
        }
        if j + 1 < levels {
            if j >= opts.j_max {
                termination = Termination::JumpBudget;
                break;
            }
            let v = &inp.jumps[j];
            if !plant.in_jump_set(&x, v, opts.set_tol) {
                termination = Termination::Blocked;
                break;
            }
            let xp = plant.jump(&x, v);
            let u = inp.flow[j + 1][0].clone();
            let next = FlowArc::new(t, xp.clone(), plant.flow(&xp, &u), u);
            arcs.push(std::mem::replace(&mut cur, next));
            jumps.push(v.clone());
            x = xp;
        }
    }
    arcs.push(cur);
    Ok(Simulation { solution: SolutionPair::new(arcs, jumps)?, termination })
}
