//! Finite-horizon hybrid optimal control: minimize the cost over solution
//! pairs from `x₀` whose terminal hybrid time lies in the prediction horizon
//! and whose terminal state lies in `X`.
//!
//! Each level `J'` of the horizon (and each word over a finite jump
//! alphabet) is transcribed into a box-constrained nonlinear program solved
//! by Nelder-Mead under an exact L1 penalty on the constraint residuals.

use std::cell::RefCell;
use std::fmt;

use rayon::prelude::*;

use crate::cost::CostSpec;
use crate::error::{Error, Result};
use crate::horizon::PredictionHorizon;
use crate::plant::{Feedback, HybridPlant};
use crate::simulate::{integrate_flow, simulate, FlowSignal, HybridInput, InputPolicy, SegmentEnd, SimOptions};
use crate::solution::{FlowArc, SolutionPair, Vector};
use crate::time::{HybridTime, HybridTimeDomain, TIME_TOL};

/// Solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpOptions {
    /// Largest residual of a feasible candidate.
    pub feas_tol: f64,
    /// Spread of simplex values at convergence, relative to `1 + |f|`.
    pub cost_tol: f64,
    /// Simplex diameter at convergence, in unit-box coordinates.
    pub x_tol: f64,
    /// Nelder-Mead iterations per start.
    pub max_iters: usize,
    pub penalty_rounds: usize,
    /// Initial penalty weight, multiplied by 10 per infeasible round.
    pub penalty_weight: f64,
    /// Number of deterministic box seeds (lower, upper and two mixed corners, centroid).
    pub seeds: usize,
    /// Pieces of constant flow input per flow segment, when flow inputs are decisions.
    pub k_flow: usize,
    pub sim: SimOptions,
}

impl Default for OcpOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-6,
            cost_tol: 1e-8,
            x_tol: 1e-9,
            max_iters: 200,
            penalty_rounds: 6,
            penalty_weight: 10.0,
            seeds: 5,
            k_flow: 1,
            sim: SimOptions::default(),
        }
    }
}

impl OcpOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.feas_tol > 0.0 && self.cost_tol > 0.0 && self.x_tol > 0.0 && self.penalty_weight > 0.0) {
            return Err(Error::InvalidParams("solver tolerances and penalty weight must be positive".into()));
        }
        if self.max_iters == 0 || self.penalty_rounds == 0 || self.k_flow == 0 || self.seeds > 5 {
            return Err(Error::InvalidParams(
                "need max_iters, penalty_rounds, k_flow >= 1 and at most 5 box seeds".into(),
            ));
        }
        self.sim.validate()
    }
}

/// Constraint residuals of a candidate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Residuals {
    /// Largest violation of `C` along flows.
    pub flow: f64,
    /// Summed violation of `D` at jumps.
    pub jump: f64,
    /// Violation of `x(T, J) ∈ X`.
    pub terminal: f64,
    /// Violation of `(T, J) ∈ 𝒯` and of the jump timing.
    pub time: f64,
}

impl Residuals {
    pub fn total(&self) -> f64 {
        self.flow + self.jump + self.terminal + self.time
    }

    pub fn max(&self) -> f64 {
        self.flow.max(self.jump).max(self.terminal).max(self.time)
    }
}

impl fmt::Display for Residuals {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "flow {:.3e}, jump {:.3e}, terminal {:.3e}, time {:.3e}",
            self.flow, self.jump, self.terminal, self.time
        )
    }
}

/// Decision variables of one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcription {
    pub jump_count: usize,
    /// Flow durations `Δ_0..Δ_{J'-1}` before each jump; used by input-triggered plants.
    pub flow_durations: Vec<f64>,
    /// Per segment, constant flow inputs on equal sub-intervals.
    pub flow_inputs: Vec<Vec<Vector>>,
    pub jump_inputs: Vec<Vector>,
    pub terminal_time: f64,
}

/// A solution of the optimal control problem.
#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub sol: SolutionPair,
    pub cost: f64,
    pub residuals: Residuals,
    pub jump_count: usize,
    /// Nelder-Mead iterations over all levels and starts.
    pub iterations: usize,
    pub evaluations: usize,
}

/// A plant, cost and horizon together with the optional structure the
/// transcription exploits.
#[derive(Clone)]
pub struct OcpProblem {
    pub plant: HybridPlant,
    pub cost: CostSpec,
    pub horizon: PredictionHorizon,
    /// Feedback used to build an extra seed by closed-loop simulation.
    pub feedback: Option<Feedback>,
    /// Flow input held fixed; `None` makes flow inputs decision variables.
    pub flow_input: Option<Vector>,
    /// Finite set of admissible jump inputs, enumerated exhaustively.
    pub jump_alphabet: Option<Vec<Vector>>,
    pub options: OcpOptions,
}

impl fmt::Debug for OcpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OcpProblem")
            .field("plant", &self.plant.name())
            .field("horizon", &self.horizon)
            .field("options", &self.options)
            .finish()
    }
}

impl OcpProblem {
    pub fn new(plant: HybridPlant, cost: CostSpec, horizon: PredictionHorizon) -> Self {
        Self {
            plant,
            cost,
            horizon,
            feedback: None,
            flow_input: None,
            jump_alphabet: None,
            options: OcpOptions::default(),
        }
    }

    /// Problem for a bundle, including its feedback seed and input structure.
    pub fn from_bundle(b: &crate::examples::Bundle) -> Self {
        Self {
            plant: b.plant.clone(),
            cost: b.cost.clone(),
            horizon: b.horizon.clone(),
            feedback: Some(b.feedback.clone()),
            flow_input: b.flow_input.clone(),
            jump_alphabet: b.jump_alphabet.clone(),
            options: OcpOptions::default(),
        }
    }

    pub fn with_options(mut self, options: OcpOptions) -> Self {
        self.options = options;
        self
    }

    pub fn with_horizon(mut self, horizon: PredictionHorizon) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn solve(&self, x0: &Vector) -> Result<OcpSolution> {
        self.solve_with_warm_starts(x0, &[])
    }

    /// Solve with additional candidate solutions used as seeds.
    pub fn solve_with_warm_starts(&self, x0: &Vector, warm: &[SolutionPair]) -> Result<OcpSolution> {
        self.options.validate()?;
        self.plant.check_state(x0)?;
        if let Some(u) = &self.flow_input {
            self.plant.check_input(u)?;
        }
        let m = self.plant.input_dim();
        let needs_box = self.flow_input.is_none() || self.jump_alphabet.is_none();
        if needs_box && m > 0 && self.plant.input_bounds().is_none() {
            return Err(Error::InvalidParams("input decisions need plant input bounds".into()));
        }
        if let Some(a) = &self.jump_alphabet {
            if a.is_empty() || a.iter().any(|v| v.len() != m) {
                return Err(Error::InvalidParams("jump alphabet must be nonempty with input-sized entries".into()));
            }
        }

        let mut seeds: Vec<Transcription> = warm.iter().map(|s| self.transcription_of(s)).collect();
        if let Some(s) = self.feedback_seed(x0) {
            seeds.push(self.transcription_of(&s));
        }

        let tasks = self.tasks();
        let outcomes: Vec<TaskOutcome> = tasks.par_iter().map(|task| self.solve_task(x0, task, &seeds)).collect();

        let iterations = outcomes.iter().map(|o| o.iterations).sum();
        let evaluations = outcomes.iter().map(|o| o.evaluations).sum();
        let mut best: Option<(&Task, &Incumbent)> = None;
        for (task, out) in tasks.iter().zip(&outcomes) {
            if let Some(inc) = &out.feasible {
                let better = match best {
                    None => true,
                    Some((bt, b)) => inc.cost < b.cost - 1e-9 || (inc.cost <= b.cost + 1e-9 && task.level < bt.level),
                };
                if better {
                    best = Some((task, inc));
                }
            }
        }
        match best {
            Some((task, inc)) => {
                let tr = task.decode(self, &inc.y);
                let ev = self.evaluate(x0, &tr);
                let sol = ev.sol.ok_or_else(|| Error::Solver("incumbent failed to re-evaluate".into()))?;
                Ok(OcpSolution {
                    sol,
                    cost: ev.cost,
                    residuals: ev.residuals,
                    jump_count: task.level,
                    iterations,
                    evaluations,
                })
            }
            None => {
                let residual = outcomes.iter().map(|o| o.best_residual).fold(f64::INFINITY, f64::min);
                if !residual.is_finite() {
                    return Err(Error::Solver(format!(
                        "no candidate could be evaluated after {evaluations} evaluations"
                    )));
                }
                Err(Error::Infeasible { residual })
            }
        }
    }

    /// `J*(x₀)`.
    pub fn value(&self, x0: &Vector) -> Result<f64> {
        Ok(self.solve(x0)?.cost)
    }

    /// Closed-loop simulation under the feedback, truncated where it first
    /// enters the horizon.
    pub fn feedback_seed(&self, x0: &Vector) -> Option<SolutionPair> {
        let fb = self.feedback.as_ref()?;
        let opts =
            SimOptions { t_max: self.horizon.max_time(), j_max: self.horizon.max_jumps(), ..self.options.sim.clone() };
        let sim = simulate(&self.plant, x0, &InputPolicy::Feedback(fb.clone()), &opts).ok()?;
        let hit = self.horizon.reached(&sim.solution.domain())?;
        sim.solution.truncate(hit).ok()
    }

    /// Decision variables reproducing `sol`.
    pub fn transcription_of(&self, sol: &SolutionPair) -> Transcription {
        let k = self.options.k_flow;
        let flow_inputs = sol
            .arcs()
            .iter()
            .map(|a| (0..k).map(|p| a.input_at(a.start() + a.duration() * p as f64 / k as f64)).collect())
            .collect();
        let n = sol.jump_count();
        Transcription {
            jump_count: n,
            flow_durations: sol.arcs()[..n].iter().map(|a| a.duration()).collect(),
            flow_inputs,
            jump_inputs: sol.jump_inputs().to_vec(),
            terminal_time: sol.terminal_time().t,
        }
    }

    fn guard_triggered(&self) -> bool {
        self.plant.is_guard_triggered()
    }

    fn tasks(&self) -> Vec<Task> {
        let mut tasks = Vec::new();
        for level in 0..=self.horizon.max_jumps() {
            let (lo, hi) = self.horizon.level(level).unwrap();
            let words: Vec<Option<Vec<usize>>> = match &self.jump_alphabet {
                None => vec![None],
                Some(a) => {
                    let count = a.len().pow(level as u32);
                    (0..count)
                        .map(|mut c| {
                            let mut w = vec![0; level];
                            for slot in w.iter_mut() {
                                *slot = c % a.len();
                                c /= a.len();
                            }
                            Some(w)
                        })
                        .collect()
                }
            };
            for word in words {
                tasks.push(Task::new(self, level, lo, hi, word));
            }
        }
        tasks
    }

    /// Simulate the candidate and measure cost and residuals.
    pub fn evaluate(&self, x0: &Vector, tr: &Transcription) -> Evaluation {
        let result = if self.guard_triggered() { self.evaluate_guarded(x0, tr) } else { self.evaluate_timed(x0, tr) };
        result.unwrap_or(Evaluation {
            sol: None,
            cost: f64::INFINITY,
            residuals: Residuals { time: f64::INFINITY, ..Residuals::default() },
        })
    }

    fn segment_input(&self, tr: &Transcription, seg: usize, piece: usize) -> Vector {
        match &self.flow_input {
            Some(u) => u.clone(),
            None => tr.flow_inputs[seg][piece].clone(),
        }
    }

    fn flow_residual(&self, arc: &FlowArc) -> f64 {
        arc.states.iter().zip(&arc.inputs).map(|(x, u)| self.plant.flow_violation(x, u)).fold(0.0, f64::max)
    }

    /// Jumps happen at guard events, with priority over flows; the terminal
    /// segment flows until the terminal time.
    fn evaluate_guarded(&self, x0: &Vector, tr: &Transcription) -> Result<Evaluation> {
        let opts = &self.options.sim;
        let guard = |x: &Vector, u: &Vector| self.plant.jump_set().guard(x, u).unwrap();
        let cap = self.horizon.max_time();
        let mut res = Residuals::default();
        let mut arcs = Vec::new();
        let mut x = x0.clone();
        let mut t = 0.0;
        for k in 0..tr.jump_count {
            let u = self.segment_input(tr, k, 0);
            let v = &tr.jump_inputs[k];
            let mut arc = FlowArc::new(t, x.clone(), self.plant.flow(&x, &u), u.clone());
            if !self.plant.in_jump_set(&x, v, opts.set_tol) {
                let seg =
                    integrate_flow(&self.plant, &x, t, &FlowSignal::Constant(u), cap - t, opts, Some(&guard), false)?;
                res.flow = res.flow.max(self.flow_residual(&seg.arc));
                arc = seg.arc;
                t = arc.end();
                x = arc.last_state().clone();
                if seg.end == SegmentEnd::Duration {
                    res.time += (tr.jump_count - k) as f64;
                    arcs.push(arc);
                    return self.finish(arcs, &tr.jump_inputs[..k], res, None);
                }
            }
            res.jump += self.plant.jump_violation(&x, v);
            arcs.push(arc);
            x = self.plant.jump(&x, v);
        }
        let u = self.segment_input(tr, tr.jump_count, 0);
        let target = tr.terminal_time;
        let mut arc = FlowArc::new(t, x.clone(), self.plant.flow(&x, &u), u.clone());
        if t > target + TIME_TOL {
            res.time += t - target;
        } else if target - t > TIME_TOL {
            let seg =
                integrate_flow(&self.plant, &x, t, &FlowSignal::Constant(u), target - t, opts, Some(&guard), false)?;
            res.flow = res.flow.max(self.flow_residual(&seg.arc));
            arc = seg.arc;
            if target - arc.end() > 1e3 * opts.event_tol {
                res.time += target - arc.end();
            }
        }
        arcs.push(arc);
        self.finish(arcs, &tr.jump_inputs, res, Some(target))
    }

    /// Flows of the chosen durations separated by jumps with the chosen inputs.
    fn evaluate_timed(&self, x0: &Vector, tr: &Transcription) -> Result<Evaluation> {
        let opts = &self.options.sim;
        let k_flow = if self.flow_input.is_some() { 1 } else { self.options.k_flow };
        let mut res = Residuals::default();
        let mut arcs = Vec::new();
        let mut x = x0.clone();
        let mut t = 0.0;
        let flow = |x: &mut Vector, t: &mut f64, seg: usize, duration: f64, res: &mut Residuals| -> Result<FlowArc> {
            let u = self.segment_input(tr, seg, 0);
            let mut arc = FlowArc::new(*t, x.clone(), self.plant.flow(x, &u), u);
            let end = *t + duration;
            for p in 0..k_flow {
                let pb = if p + 1 == k_flow { end } else { *t + duration * (p + 1) as f64 / k_flow as f64 };
                let start = arc.end();
                if pb - start <= TIME_TOL {
                    continue;
                }
                let u = self.segment_input(tr, seg, p);
                let seg_arc = integrate_flow(
                    &self.plant,
                    arc.last_state(),
                    start,
                    &FlowSignal::Constant(u),
                    pb - start,
                    opts,
                    None,
                    false,
                )?
                .arc;
                res.flow = res.flow.max(self.flow_residual(&seg_arc));
                for i in 1..seg_arc.len() {
                    arc.push(
                        seg_arc.times[i],
                        seg_arc.states[i].clone(),
                        seg_arc.derivs[i].clone(),
                        seg_arc.inputs[i].clone(),
                    );
                }
            }
            res.flow = res
                .flow
                .max(self.plant.flow_violation(arc.first_state(), &arc.inputs[0]) * (duration > 0.0) as u8 as f64);
            *t = arc.end();
            *x = arc.last_state().clone();
            Ok(arc)
        };
        for k in 0..tr.jump_count {
            let arc = flow(&mut x, &mut t, k, tr.flow_durations[k].max(0.0), &mut res)?;
            arcs.push(arc);
            let v = &tr.jump_inputs[k];
            res.jump += self.plant.jump_violation(&x, v);
            x = self.plant.jump(&x, v);
        }
        let target = tr.terminal_time;
        if t > target + TIME_TOL {
            res.time += t - target;
        }
        let rest = (target - t).max(0.0);
        let arc = flow(&mut x, &mut t, tr.jump_count, rest, &mut res)?;
        arcs.push(arc);
        self.finish(arcs, &tr.jump_inputs, res, Some(target))
    }

    fn finish(
        &self,
        arcs: Vec<FlowArc>,
        jumps: &[Vector],
        mut res: Residuals,
        target: Option<f64>,
    ) -> Result<Evaluation> {
        let sol = SolutionPair::new(arcs, jumps.to_vec())?;
        let end = sol.terminal_time();
        if target.is_some() && !self.horizon.contains(end) {
            let (lo, hi) = self.horizon.level(end.j).unwrap_or((0.0, 0.0));
            res.time += (lo - end.t).max(0.0) + (end.t - hi).max(0.0);
        }
        let b = self.cost.breakdown(&sol);
        res.terminal = b.terminal_violation;
        let cost = b.total();
        if !cost.is_finite() || !res.total().is_finite() {
            return Err(Error::Solver("non-finite cost".into()));
        }
        Ok(Evaluation { sol: Some(sol), cost, residuals: res })
    }

    fn solve_task(&self, x0: &Vector, task: &Task, seeds: &[Transcription]) -> TaskOutcome {
        let o = &self.options;
        let tracker = RefCell::new(TaskOutcome::default());
        let objective = |y: &[f64], w: f64| -> f64 {
            let clamped: Vec<f64> = y.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            let outside: f64 = y.iter().zip(&clamped).map(|(a, b)| (a - b).abs()).sum();
            let ev = self.evaluate(x0, &task.decode(self, &clamped));
            let r = ev.residuals.total();
            let mut tr = tracker.borrow_mut();
            tr.evaluations += 1;
            tr.best_residual = tr.best_residual.min(r);
            if ev.sol.is_some() && ev.residuals.max() <= o.feas_tol {
                let better = tr.feasible.as_ref().is_none_or(|b| ev.cost < b.cost);
                if better {
                    tr.feasible = Some(Incumbent { cost: ev.cost, y: clamped });
                }
            }
            ev.cost + w * r + 1e3 * (1.0 + w) * outside
        };

        let mut starts: Vec<Vec<f64>> =
            seeds.iter().filter(|s| task.accepts(self, s)).map(|s| task.encode(self, s)).collect();
        let d = task.dim();
        let corners: [Box<dyn Fn(usize) -> f64>; 5] = [
            Box::new(|_| 0.0),
            Box::new(|_| 1.0),
            Box::new(|i| (i % 2) as f64),
            Box::new(|i| ((i + 1) % 2) as f64),
            Box::new(|_| 0.5),
        ];
        for c in corners.iter().take(o.seeds) {
            starts.push((0..d).map(c).collect());
        }
        if d == 0 {
            objective(&[], o.penalty_weight);
            return tracker.into_inner();
        }
        starts.dedup();

        let mut w = o.penalty_weight;
        let mut best: Option<NmResult> = None;
        for start in &starts {
            let r = nelder_mead(&|y| objective(y, w), start, 0.1, o.max_iters, o.cost_tol, o.x_tol);
            tracker.borrow_mut().iterations += r.iters;
            if best.as_ref().is_none_or(|b| r.f < b.f) {
                best = Some(r);
            }
        }
        let mut best = best.unwrap();
        for _ in 1..o.penalty_rounds {
            let feasible = tracker.borrow().feasible.is_some();
            if feasible && best.converged {
                break;
            }
            let y = &best.y;
            let clamped: Vec<f64> = y.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            let ev = self.evaluate(x0, &task.decode(self, &clamped));
            if ev.residuals.max() > o.feas_tol {
                w *= 10.0;
            }
            let restart = match &tracker.borrow().feasible {
                Some(inc) if ev.residuals.max() > o.feas_tol => inc.y.clone(),
                _ => best.y.clone(),
            };
            let r = nelder_mead(&|y| objective(y, w), &restart, 0.05, o.max_iters, o.cost_tol, o.x_tol);
            tracker.borrow_mut().iterations += r.iters;
            best = r;
        }
        tracker.into_inner()
    }
}

/// Cost, residuals and trajectory of one candidate.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// `None` when the candidate could not be simulated.
    pub sol: Option<SolutionPair>,
    pub cost: f64,
    pub residuals: Residuals,
}

#[derive(Debug, Clone)]
struct Incumbent {
    cost: f64,
    y: Vec<f64>,
}

#[derive(Debug, Clone)]
struct TaskOutcome {
    feasible: Option<Incumbent>,
    best_residual: f64,
    iterations: usize,
    evaluations: usize,
}

impl Default for TaskOutcome {
    fn default() -> Self {
        Self { feasible: None, best_residual: f64::INFINITY, iterations: 0, evaluations: 0 }
    }
}

/// One inner program: a jump count and, for discrete inputs, a word of
/// alphabet indices. Variables live in the unit box.
#[derive(Debug, Clone)]
struct Task {
    level: usize,
    lo: f64,
    hi: f64,
    word: Option<Vec<usize>>,
    n_jump: usize,
    n_flow: usize,
    n_dur: usize,
    free_time: bool,
}

impl Task {
    fn new(p: &OcpProblem, level: usize, lo: f64, hi: f64, word: Option<Vec<usize>>) -> Self {
        let m = p.plant.input_dim();
        let pieces = if p.guard_triggered() { 1 } else { p.options.k_flow };
        Self {
            level,
            lo,
            hi,
            n_jump: if word.is_some() { 0 } else { level * m },
            n_flow: if p.flow_input.is_some() { 0 } else { (level + 1) * pieces * m },
            n_dur: if p.guard_triggered() { 0 } else { level },
            free_time: hi - lo > TIME_TOL,
            word,
        }
    }

    fn dim(&self) -> usize {
        self.n_jump + self.n_flow + self.n_dur + self.free_time as usize
    }

    fn input_box(p: &OcpProblem) -> (Vector, Vector) {
        let m = p.plant.input_dim();
        p.plant.input_bounds().cloned().unwrap_or((Vector::zeros(m), Vector::zeros(m)))
    }

    fn decode(&self, p: &OcpProblem, y: &[f64]) -> Transcription {
        let m = p.plant.input_dim();
        let (lo_u, hi_u) = Self::input_box(p);
        let input = |chunk: &[f64]| Vector::from_iterator(m, (0..m).map(|i| lo_u[i] + chunk[i] * (hi_u[i] - lo_u[i])));
        let mut at = 0;
        let jump_inputs = match &self.word {
            Some(w) => w.iter().map(|&i| p.jump_alphabet.as_ref().unwrap()[i].clone()).collect(),
            None => (0..self.level).map(|k| input(&y[at + k * m..at + (k + 1) * m])).collect(),
        };
        at += self.n_jump;
        let pieces = if p.guard_triggered() { 1 } else { p.options.k_flow };
        let flow_inputs = if self.n_flow > 0 {
            (0..=self.level)
                .map(|s| {
                    (0..pieces)
                        .map(|q| {
                            let i = at + (s * pieces + q) * m;
                            input(&y[i..i + m])
                        })
                        .collect()
                })
                .collect()
        } else {
            vec![vec![p.flow_input.clone().unwrap_or_else(|| Vector::zeros(m))]; self.level + 1]
        };
        at += self.n_flow;
        let cap = p.horizon.max_time();
        let flow_durations = (0..self.n_dur).map(|k| y[at + k] * cap).collect();
        at += self.n_dur;
        let terminal_time = if self.free_time { self.lo + y[at] * (self.hi - self.lo) } else { self.hi };
        Transcription { jump_count: self.level, flow_durations, flow_inputs, jump_inputs, terminal_time }
    }

    fn accepts(&self, p: &OcpProblem, tr: &Transcription) -> bool {
        if tr.jump_count != self.level {
            return false;
        }
        match (&self.word, &p.jump_alphabet) {
            (Some(w), Some(a)) => w.iter().zip(&tr.jump_inputs).all(|(&i, v)| nearest(a, v) == i),
            _ => true,
        }
    }

    fn encode(&self, p: &OcpProblem, tr: &Transcription) -> Vec<f64> {
        let m = p.plant.input_dim();
        let (lo_u, hi_u) = Self::input_box(p);
        let unit = |v: f64, lo: f64, hi: f64| if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
        let mut y = Vec::with_capacity(self.dim());
        if self.n_jump > 0 {
            for v in &tr.jump_inputs {
                for i in 0..m {
                    y.push(unit(v[i], lo_u[i], hi_u[i]));
                }
            }
        }
        if self.n_flow > 0 {
            let pieces = if p.guard_triggered() { 1 } else { p.options.k_flow };
            for s in 0..=self.level {
                for q in 0..pieces {
                    let u = tr.flow_inputs.get(s).and_then(|f| f.get(q).or(f.last()));
                    for i in 0..m {
                        y.push(u.map_or(0.5, |u| unit(u[i], lo_u[i], hi_u[i])));
                    }
                }
            }
        }
        let cap = p.horizon.max_time();
        for k in 0..self.n_dur {
            y.push(unit(tr.flow_durations.get(k).copied().unwrap_or(0.0), 0.0, cap));
        }
        if self.free_time {
            y.push(unit(tr.terminal_time, self.lo, self.hi));
        }
        y
    }
}

fn nearest(alphabet: &[Vector], v: &Vector) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, a) in alphabet.iter().enumerate() {
        let d = (a - v).amax();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

#[derive(Debug, Clone)]
struct NmResult {
    y: Vec<f64>,
    f: f64,
    iters: usize,
    converged: bool,
}

/// Nelder-Mead with standard coefficients. Converged when both the spread
/// of simplex values and the simplex diameter are below tolerance.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, y0: &[f64], step: f64, max_iters: usize, f_tol: f64, x_tol: f64) -> NmResult {
    let d = y0.len();
    let mut simplex: Vec<Vec<f64>> = vec![y0.to_vec()];
    for i in 0..d {
        let mut y = y0.to_vec();
        y[i] += if y[i] + step <= 1.0 { step } else { -step };
        simplex.push(y);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|y| sanitize(f(y))).collect();
    let mut iters = 0;
    let mut converged = false;
    while iters < max_iters {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let spread = vals[d] - vals[0];
        let diameter = simplex[1..]
            .iter()
            .map(|y| y.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= f_tol * (1.0 + vals[0].abs()) && diameter <= x_tol {
            converged = true;
            break;
        }
        iters += 1;
        let centroid: Vec<f64> = (0..d).map(|k| simplex[..d].iter().map(|y| y[k]).sum::<f64>() / d as f64).collect();
        let along = |c: f64| -> Vec<f64> { (0..d).map(|k| centroid[k] + c * (simplex[d][k] - centroid[k])).collect() };
        let yr = along(-1.0);
        let fr = sanitize(f(&yr));
        if fr < vals[0] {
            let ye = along(-2.0);
            let fe = sanitize(f(&ye));
            if fe < fr {
                simplex[d] = ye;
                vals[d] = fe;
            } else {
                simplex[d] = yr;
                vals[d] = fr;
            }
        } else if fr < vals[d - 1] {
            simplex[d] = yr;
            vals[d] = fr;
        } else {
            let (yc, fc) = if fr < vals[d] {
                let yc = along(-0.5);
                let fc = sanitize(f(&yc));
                (yc, fc)
            } else {
                let yc = along(0.5);
                let fc = sanitize(f(&yc));
                (yc, fc)
            };
            if fc < vals[d].min(fr) {
                simplex[d] = yc;
                vals[d] = fc;
            } else {
                for i in 1..=d {
                    let y: Vec<f64> = (0..d).map(|k| simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k])).collect();
                    vals[i] = sanitize(f(&y));
                    simplex[i] = y;
                }
            }
        }
    }
    let i = (0..=d).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    NmResult { y: simplex[i].clone(), f: vals[i], iters, converged }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// `J*(x₀)` for `problem`.
pub fn solve(problem: &OcpProblem, x0: &Vector) -> Result<OcpSolution> {
    problem.solve(x0)
}

pub fn value(problem: &OcpProblem, x0: &Vector) -> Result<f64> {
    problem.value(x0)
}

/// Grid for [`brute_force_value`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// Candidate values of each input coordinate, shared by all jumps.
    pub inputs: Vec<Vec<f64>>,
    /// Points on each free terminal-time interval.
    pub time_points: usize,
    /// Points on `[0, t_0]` for each flow duration of input-triggered plants.
    pub duration_points: usize,
}

/// Largest number of points per grid axis.
pub const GRID_AXIS_LIMIT: usize = 501;
/// Largest number of candidates in one brute-force search.
pub const GRID_TOTAL_LIMIT: usize = 2_000_000;

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || hi - lo <= TIME_TOL {
        return vec![hi];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Exhaustive grid minimum of the cost, computed by plain simulation.
///
/// Guard-triggered plants consume the jump inputs at guard events; other
/// plants follow an open-loop input whose domain is given by the durations.
/// The flow input is `problem.flow_input` (zero when unset).
pub fn brute_force_value(problem: &OcpProblem, x0: &Vector, grid: &GridSpec) -> Result<f64> {
    let p = problem;
    let m = p.plant.input_dim();
    if p.horizon.max_jumps() > 2 {
        return Err(Error::GridTooLarge(format!("horizon allows {} jumps, at most 2", p.horizon.max_jumps())));
    }
    if grid.inputs.len() != m && p.jump_alphabet.is_none() {
        return Err(Error::InvalidParams(format!("grid needs {m} input axes, got {}", grid.inputs.len())));
    }
    let axis_sizes = grid.inputs.iter().map(|g| g.len()).chain([grid.time_points, grid.duration_points]);
    for n in axis_sizes {
        if n > GRID_AXIS_LIMIT {
            return Err(Error::GridTooLarge(format!("{n} points on one axis, at most {GRID_AXIS_LIMIT}")));
        }
    }
    let words: Vec<Vector> = match &p.jump_alphabet {
        Some(a) => a.clone(),
        None => {
            let mut words = vec![Vec::new()];
            for axis in &grid.inputs {
                words = words
                    .into_iter()
                    .flat_map(|w: Vec<f64>| axis.iter().map(move |v| [w.clone(), vec![*v]].concat()))
                    .collect();
            }
            words.into_iter().map(Vector::from_vec).collect()
        }
    };
    let flow = p.flow_input.clone().unwrap_or_else(|| Vector::zeros(m));
    let guarded = p.plant.is_guard_triggered();
    let cap = p.horizon.max_time();

    let mut total = 0usize;
    for level in 0..=p.horizon.max_jumps() {
        let (lo, hi) = p.horizon.level(level).unwrap();
        let times = linspace(lo, hi, grid.time_points.max(1)).len();
        let durs = if guarded { 1 } else { grid.duration_points.max(1).pow(level as u32) };
        total = total.saturating_add(words.len().pow(level as u32).saturating_mul(times).saturating_mul(durs));
    }
    if total > GRID_TOTAL_LIMIT {
        return Err(Error::GridTooLarge(format!("{total} candidates, at most {GRID_TOTAL_LIMIT}")));
    }

    let mut best = f64::INFINITY;
    let mut best_residual = f64::INFINITY;
    for level in 0..=p.horizon.max_jumps() {
        let (lo, hi) = p.horizon.level(level).unwrap();
        let times = linspace(lo, hi, grid.time_points.max(1));
        let word_count = words.len().pow(level as u32);
        let dur_axis = linspace(0.0, cap, grid.duration_points.max(1));
        let dur_count = if guarded { 1 } else { dur_axis.len().pow(level as u32) };
        let results: Vec<(f64, f64)> = (0..word_count)
            .into_par_iter()
            .map(|mut wi| {
                let mut jumps = Vec::with_capacity(level);
                for _ in 0..level {
                    jumps.push(words[wi % words.len()].clone());
                    wi /= words.len();
                }
                let mut best = (f64::INFINITY, f64::INFINITY);
                for &t_end in &times {
                    for mut di in 0..dur_count {
                        let mut durations = Vec::with_capacity(level);
                        for _ in 0..level {
                            durations.push(dur_axis[di % dur_axis.len()]);
                            di /= dur_axis.len();
                        }
                        let r = if guarded {
                            candidate_guarded(p, x0, &flow, &jumps, t_end)
                        } else {
                            candidate_timed(p, x0, &flow, &jumps, &durations, t_end)
                        };
                        match r {
                            Ok(c) => best.0 = best.0.min(c),
                            Err(Error::TerminalConstraint { residual }) => best.1 = best.1.min(residual),
                            Err(_) => best.1 = best.1.min(f64::MAX),
                        }
                    }
                }
                best
            })
            .collect();
        for (c, r) in results {
            best = best.min(c);
            best_residual = best_residual.min(r);
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::Infeasible { residual: best_residual })
    }
}

fn candidate_guarded(p: &OcpProblem, x0: &Vector, flow: &Vector, jumps: &[Vector], t_end: f64) -> Result<f64> {
    let opts = SimOptions { t_max: t_end, j_max: jumps.len(), ..p.options.sim.clone() };
    let policy = InputPolicy::JumpSequence { flow: flow.clone(), jumps: jumps.to_vec() };
    let sim = simulate(&p.plant, x0, &policy, &opts)?;
    check_candidate(p, &sim.solution, HybridTime::new(t_end, jumps.len()))
}

fn candidate_timed(
    p: &OcpProblem,
    x0: &Vector,
    flow: &Vector,
    jumps: &[Vector],
    durations: &[f64],
    t_end: f64,
) -> Result<f64> {
    let mut times = vec![0.0];
    for d in durations {
        times.push(times.last().unwrap() + d);
    }
    if *times.last().unwrap() > t_end + TIME_TOL {
        return Err(Error::InvalidDomain("jumps after the terminal time".into()));
    }
    times.push(t_end);
    let domain = HybridTimeDomain::new(times)?;
    let input = HybridInput::new(domain, vec![vec![flow.clone()]; jumps.len() + 1], jumps.to_vec())?;
    let opts = SimOptions { t_max: t_end, j_max: jumps.len(), ..p.options.sim.clone() };
    let sim = simulate(&p.plant, x0, &InputPolicy::OpenLoop(input), &opts)?;
    check_candidate(p, &sim.solution, HybridTime::new(t_end, jumps.len()))
}

fn check_candidate(p: &OcpProblem, sol: &SolutionPair, expected: HybridTime) -> Result<f64> {
    let end = sol.terminal_time();
    if end.j != expected.j || (end.t - expected.t).abs() > 1e-9 || !p.horizon.contains(end) {
        return Err(Error::InvalidDomain(format!("candidate ends at {end}, expected {expected}")));
    }
    p.cost.evaluate(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_minimizes_rosenbrock_in_box() {
        let f = |y: &[f64]| {
            let (a, b) = (4.0 * y[0] - 2.0, 4.0 * y[1] - 2.0);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let r = nelder_mead(&f, &[0.2, 0.2], 0.1, 5000, 1e-14, 1e-10);
        assert!(r.converged);
        assert!((r.y[0] - 0.75).abs() < 1e-6 && (r.y[1] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn linspace_handles_degenerate_intervals() {
        assert_eq!(linspace(1.0, 1.0, 5), vec![1.0]);
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
    }
}
