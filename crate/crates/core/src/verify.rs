//! Sampled checks of stage-cost bounds, terminal-cost bounds, control
//! Lyapunov inequalities and the lower-bound conditions P1-P5.
//!
//! Every check is falsification on a finite seeded sample: a passing report
//! means no counterexample was found, not that the inequality holds.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cost::{CostSpec, TargetSet};
use crate::error::{Error, Result};
use crate::plant::{Feedback, HybridPlant, StateScalarFn};
use crate::solution::{SolutionPair, Vector};

/// Membership slack used when sampling sets.
pub const SET_TOL: f64 = 1e-9;
/// Absolute tolerance of jump-side inequalities.
pub const JUMP_TOL: f64 = 1e-9;

/// One coordinate of a sampling box.
#[derive(Debug, Clone, PartialEq)]
pub enum Axis {
    /// Uniform on `[lo, hi]`; `lo == hi` pins the coordinate.
    Interval(f64, f64),
    /// Uniform over a finite set of values.
    Levels(Vec<f64>),
}

impl Axis {
    fn validate(&self) -> Result<()> {
        match self {
            Axis::Interval(lo, hi) if lo.is_finite() && hi.is_finite() && lo <= hi => Ok(()),
            Axis::Levels(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => Ok(()),
            other => Err(Error::InvalidParams(format!("invalid sampling axis {other:?}"))),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Axis::Interval(lo, hi) if lo == hi => *lo,
            Axis::Interval(lo, hi) => rng.gen_range(*lo..=*hi),
            Axis::Levels(v) => v[rng.gen_range(0..v.len())],
        }
    }
}

/// Set that samples are restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Restriction {
    /// `(x, u) ∈ C`.
    Flow,
    /// `(x, u) ∈ D`.
    Jump,
    /// `x ∈ X`.
    Terminal,
    /// `x ∈ C_κ`; the sampled input is replaced by `κ_C(x)`.
    ClosedLoopFlow,
    /// `x ∈ D_κ`; the sampled input is replaced by `κ_D(x)`.
    ClosedLoopJump,
}

/// Sets and maps the restrictions refer to.
#[derive(Clone, Copy, Default)]
pub struct SetContext<'a> {
    pub plant: Option<&'a HybridPlant>,
    pub cost: Option<&'a CostSpec>,
    pub feedback: Option<&'a Feedback>,
}

/// Seeded rejection sample of state-input pairs in a box.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCloud {
    pub seed: u64,
    pub count: usize,
    pub region: Vec<Axis>,
    pub inputs: Vec<Axis>,
    pub restrictions: Vec<Restriction>,
    /// Draws allowed per accepted sample before giving up.
    pub max_draws_per_sample: usize,
}

/// A sampled state with the input it is paired with.
pub type Sample = (Vector, Vector);

/// Velocity bound `σ` with its radius `ε` and the flow samples to test it on.
pub type VelocityCheck<'a> = (&'a (dyn Fn(f64) -> f64 + Sync), f64, &'a SampleCloud);

impl SampleCloud {
    pub fn new(seed: u64, count: usize, region: Vec<Axis>) -> Self {
        Self { seed, count, region, inputs: Vec::new(), restrictions: Vec::new(), max_draws_per_sample: 1000 }
    }

    pub fn with_inputs(mut self, inputs: Vec<Axis>) -> Self {
        self.inputs = inputs;
        self
    }

    pub fn restrict(mut self, r: Restriction) -> Self {
        self.restrictions.push(r);
        self
    }

    /// Draw `count` samples satisfying every restriction.
    pub fn draw(&self, ctx: &SetContext<'_>) -> Result<Vec<Sample>> {
        for a in self.region.iter().chain(&self.inputs) {
            a.validate()?;
        }
        let need = |what: &str| Error::InvalidParams(format!("restriction needs a {what}"));
        for r in &self.restrictions {
            match r {
                Restriction::Flow | Restriction::Jump if ctx.plant.is_none() => return Err(need("plant")),
                Restriction::Terminal if ctx.cost.is_none() => return Err(need("cost")),
                Restriction::ClosedLoopFlow | Restriction::ClosedLoopJump
                    if ctx.plant.is_none() || ctx.feedback.is_none() =>
                {
                    return Err(need("plant and feedback"))
                }
                _ => {}
            }
        }
        if let Some(plant) = ctx.plant {
            if self.region.len() != plant.state_dim() {
                return Err(Error::Dimension { expected: plant.state_dim(), got: self.region.len() });
            }
            let open_loop = self.restrictions.iter().any(|r| matches!(r, Restriction::Flow | Restriction::Jump));
            if open_loop && self.inputs.len() != plant.input_dim() {
                return Err(Error::Dimension { expected: plant.input_dim(), got: self.inputs.len() });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.count);
        let budget = self.count.saturating_mul(self.max_draws_per_sample).max(self.max_draws_per_sample);
        let mut draws = 0;
        while out.len() < self.count {
            if draws >= budget {
                return Err(Error::InvalidParams(format!(
                    "accepted only {} of {} samples after {draws} draws",
                    out.len(),
                    self.count
                )));
            }
            draws += 1;
            let x = Vector::from_iterator(self.region.len(), self.region.iter().map(|a| a.draw(&mut rng)));
            let mut u = Vector::from_iterator(self.inputs.len(), self.inputs.iter().map(|a| a.draw(&mut rng)));
            let mut ok = true;
            for r in &self.restrictions {
                ok = match r {
                    Restriction::Flow => ctx.plant.unwrap().in_flow_set(&x, &u, SET_TOL),
                    Restriction::Jump => ctx.plant.unwrap().in_jump_set(&x, &u, SET_TOL),
                    Restriction::Terminal => ctx.cost.unwrap().in_terminal_set(&x, SET_TOL),
                    Restriction::ClosedLoopFlow => {
                        u = ctx.feedback.unwrap().kappa_c(&x);
                        ctx.plant.unwrap().in_flow_set(&x, &u, SET_TOL)
                    }
                    Restriction::ClosedLoopJump => {
                        u = ctx.feedback.unwrap().kappa_d(&x);
                        ctx.plant.unwrap().in_jump_set(&x, &u, SET_TOL)
                    }
                };
                if !ok {
                    break;
                }
            }
            if ok {
                out.push((x, u));
            }
        }
        Ok(out)
    }
}

/// Comparison function `r ↦ α(r)` used as a class-K witness.
#[derive(Clone)]
pub struct BoundWitness {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for BoundWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BoundWitness({})", self.name)
    }
}

impl BoundWitness {
    /// `α(r) = a·r^p` with `a, p > 0`.
    pub fn power(a: f64, p: f64) -> Result<Self> {
        if !(a > 0.0 && p > 0.0 && a.is_finite() && p.is_finite()) {
            return Err(Error::InvalidParams(format!("power witness needs a, p > 0, got a = {a}, p = {p}")));
        }
        Ok(Self { name: format!("{a}*r^{p}"), f: Arc::new(move |r: f64| a * r.powf(p)) })
    }

    /// Arbitrary witness, accepted when it is zero at zero and strictly
    /// increasing on a grid of `[0, r_max]`.
    pub fn from_fn(name: &str, r_max: f64, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if f(0.0) != 0.0 {
            return Err(Error::InvalidParams(format!("witness {name} is not zero at zero")));
        }
        const GRID: usize = 1000;
        let mut prev = 0.0;
        for k in 1..=GRID {
            let v = f(r_max * k as f64 / GRID as f64);
            if !(v > prev) {
                return Err(Error::InvalidParams(format!("witness {name} is not strictly increasing")));
            }
            prev = v;
        }
        Ok(Self { name: name.into(), f: Arc::new(f) })
    }

    /// `α ≡ 0`, which is not class-K; useful as a degenerate comparator.
    pub fn zero() -> Self {
        Self { name: "0".into(), f: Arc::new(|_| 0.0) }
    }

    /// Smallest `a` with `value ≤ a·r^p` on all `(r, value)` pairs with `r > 0`,
    /// rounded up so the fitted points themselves pass.
    pub fn fit_upper(points: &[(f64, f64)], p: f64) -> Result<Self> {
        let a = points.iter().filter(|(r, _)| *r > 0.0).map(|(r, v)| v / r.powf(p)).fold(0.0f64, f64::max);
        Self::power((a * (1.0 + 8.0 * f64::EPSILON)).max(f64::MIN_POSITIVE), p)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, r: f64) -> f64 {
        (self.f)(r)
    }
}

/// A sample at which a checked inequality `lhs ≤ rhs` fails.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckViolation {
    pub inequality: String,
    pub point: Vector,
    pub lhs: f64,
    pub rhs: f64,
}

/// Outcome of a sampled check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub check: String,
    pub samples: usize,
    pub violations: Vec<CheckViolation>,
    /// Largest `lhs - rhs` seen.
    pub worst_margin: f64,
}

impl CheckReport {
    fn new(check: &str) -> Self {
        Self { check: check.into(), samples: 0, violations: Vec::new(), worst_margin: f64::NEG_INFINITY }
    }

    fn record(&mut self, inequality: &str, point: &Vector, lhs: f64, rhs: f64, tol: f64) {
        let margin = lhs - rhs;
        if margin > self.worst_margin || margin.is_nan() {
            self.worst_margin = margin;
        }
        if !(margin <= tol) {
            self.violations.push(CheckViolation { inequality: inequality.into(), point: point.clone(), lhs, rhs });
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            write!(f, "{}: no violation found among {} samples", self.check, self.samples)
        } else {
            let v = &self.violations[0];
            write!(
                f,
                "{}: {} violations among {} samples; first {} at {:?}: {:.6e} > {:.6e}",
                self.check,
                self.violations.len(),
                self.samples,
                v.inequality,
                v.point.as_slice(),
                v.lhs,
                v.rhs
            )
        }
    }
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: &dyn Fn(&Vector) -> f64, x: &Vector, h: f64) -> Vector {
    let mut g = Vector::zeros(x.len());
    let mut y = x.clone();
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Evaluate `lhs ≤ rhs` on each sample in parallel and fold in order.
fn run(
    report: &mut CheckReport,
    samples: &[Sample],
    tol: f64,
    eval: impl Fn(&Vector, &Vector) -> Vec<(&'static str, f64, f64)> + Sync,
) {
    let rows: Vec<_> = samples.par_iter().map(|(x, u)| eval(x, u)).collect();
    for ((x, _), row) in samples.iter().zip(rows) {
        for (name, lhs, rhs) in row {
            report.record(name, x, lhs, rhs, tol);
        }
    }
    report.samples += samples.len();
}

/// `L_C(x, u) ≥ α_C(|x|_𝒜)` on `C` samples and `L_D(x, u) ≥ α_D(|x|_𝒜)` on `D` samples.
#[allow(clippy::too_many_arguments)]
pub fn check_stage_bounds(
    plant: &HybridPlant,
    cost: &CostSpec,
    target: &TargetSet,
    witness_c: &BoundWitness,
    witness_d: &BoundWitness,
    flow_cloud: &SampleCloud,
    jump_cloud: &SampleCloud,
) -> Result<CheckReport> {
    let ctx = SetContext { plant: Some(plant), cost: Some(cost), feedback: None };
    let flow = flow_cloud.clone().restrict(Restriction::Flow).draw(&ctx)?;
    let jump = jump_cloud.clone().restrict(Restriction::Jump).draw(&ctx)?;
    let mut report = CheckReport::new("stage bounds");
    run(&mut report, &flow, 0.0, |x, u| vec![("W1", witness_c.eval(target.distance(x)), cost.flow_cost(x, u))]);
    run(&mut report, &jump, 0.0, |x, u| vec![("W2", witness_d.eval(target.distance(x)), cost.jump_cost(x, u))]);
    Ok(report)
}

/// `V(x) ≤ α(|x|_𝒜)` on samples of `X` within `epsilon` of `𝒜`.
pub fn check_terminal_bound(
    cost: &CostSpec,
    target: &TargetSet,
    witness: &BoundWitness,
    epsilon: f64,
    cloud: &SampleCloud,
) -> Result<CheckReport> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParams(format!("epsilon must be positive, got {epsilon}")));
    }
    let ctx = SetContext { plant: None, cost: Some(cost), feedback: None };
    let samples: Vec<Sample> = cloud
        .clone()
        .restrict(Restriction::Terminal)
        .draw(&ctx)?
        .into_iter()
        .filter(|(x, _)| target.distance(x) <= epsilon)
        .collect();
    let mut report = CheckReport::new("terminal bound");
    run(&mut report, &samples, 0.0, |x, _| vec![("V", cost.terminal_cost(x), witness.eval(target.distance(x)))]);
    Ok(report)
}

/// Smallest gain `k` with `V(x) ≤ k·|x|_𝒜^p` on samples of `X` within `epsilon` of `𝒜`.
pub fn fit_terminal_witness(
    cost: &CostSpec,
    target: &TargetSet,
    p: f64,
    epsilon: f64,
    cloud: &SampleCloud,
) -> Result<BoundWitness> {
    let ctx = SetContext { plant: None, cost: Some(cost), feedback: None };
    let points: Vec<(f64, f64)> = cloud
        .clone()
        .restrict(Restriction::Terminal)
        .draw(&ctx)?
        .iter()
        .map(|(x, _)| (target.distance(x), cost.terminal_cost(x)))
        .filter(|(r, _)| *r <= epsilon)
        .collect();
    BoundWitness::fit_upper(&points, p)
}

/// Flow tolerance of [`check_clf`] for a finite-difference step `h`.
pub fn clf_flow_tol(h: f64) -> f64 {
    1e-6 + 10.0 * h * h
}

/// CLF inequalities for the closed loop under `fb`:
/// `⟨∇V, f(x, κ_C)⟩ ≤ -L_C(x, κ_C)` on `X ∩ C_κ` and
/// `V(g(x, κ_D)) - V(x) ≤ -L_D(x, κ_D)` on `X ∩ D_κ`.
pub fn check_clf(
    plant: &HybridPlant,
    cost: &CostSpec,
    fb: &Feedback,
    flow_cloud: &SampleCloud,
    jump_cloud: &SampleCloud,
    fd_step: f64,
) -> Result<CheckReport> {
    if !(fd_step > 0.0) {
        return Err(Error::InvalidParams(format!("fd_step must be positive, got {fd_step}")));
    }
    let ctx = SetContext { plant: Some(plant), cost: Some(cost), feedback: Some(fb) };
    let flow = flow_cloud.clone().restrict(Restriction::Terminal).restrict(Restriction::ClosedLoopFlow).draw(&ctx)?;
    let jump = jump_cloud.clone().restrict(Restriction::Terminal).restrict(Restriction::ClosedLoopJump).draw(&ctx)?;
    let v = |x: &Vector| cost.terminal_cost(x);
    let mut report = CheckReport::new("clf");
    run(&mut report, &flow, clf_flow_tol(fd_step), |x, u| {
        let grad = fd_gradient(&v, x, fd_step);
        vec![("flow", grad.dot(&plant.flow(x, u)), -cost.flow_cost(x, u))]
    });
    run(&mut report, &jump, JUMP_TOL, |x, u| vec![("jump", v(&plant.jump(x, u)) - v(x), -cost.jump_cost(x, u))]);
    Ok(report)
}

/// Which of P1-P4 hold for one solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PdFlags {
    pub p1: bool,
    pub p2: bool,
    pub p3: bool,
    pub p4: bool,
}

/// Outcome of [`check_pd_conditions`].
#[derive(Debug, Clone, PartialEq)]
pub struct PdReport {
    pub flags: Vec<PdFlags>,
    /// Sampled `|f(x, u)| ≤ σ(|x|_𝒜)`, when a bound was supplied.
    pub p5: Option<CheckReport>,
}

/// P1-P4 for one solution, scanning its domain nodes.
pub fn pd_flags(target: &TargetSet, sol: &SolutionPair, alpha: &BoundWitness) -> PdFlags {
    let nodes = sol.nodes();
    let a = alpha.eval(target.distance(sol.initial_state()));
    let dist: Vec<f64> = nodes.iter().map(|(_, x, _)| target.distance(x)).collect();
    let (mut p1, mut p2) = (false, false);
    let mut start: Option<usize> = None;
    for k in 0..nodes.len() {
        if dist[k] >= a {
            let s = *start.get_or_insert(k);
            let (t0, t1) = (nodes[s].0, nodes[k].0);
            p1 |= t1.scalar() - t0.scalar() >= a;
            p2 |= t1.t - t0.t >= a;
        } else {
            start = None;
        }
    }
    let p3 = (0..sol.jump_count()).any(|j| target.distance(sol.jump(j).unwrap().0) >= a);
    let p4 = target.distance(sol.terminal_state()) >= a;
    PdFlags { p1, p2, p3, p4 }
}

/// P1-P4 on each solution and, when `sigma` is given, P5 on `C` samples
/// with `0 < |x|_𝒜 ≤ epsilon`.
pub fn check_pd_conditions(
    plant: &HybridPlant,
    target: &TargetSet,
    sols: &[SolutionPair],
    alpha: &BoundWitness,
    p5: Option<VelocityCheck<'_>>,
) -> Result<PdReport> {
    let flags = sols.iter().map(|s| pd_flags(target, s, alpha)).collect();
    let p5 = match p5 {
        None => None,
        Some((sigma, epsilon, cloud)) => {
            let ctx = SetContext { plant: Some(plant), cost: None, feedback: None };
            let samples: Vec<Sample> = cloud
                .clone()
                .restrict(Restriction::Flow)
                .draw(&ctx)?
                .into_iter()
                .filter(|(x, _)| {
                    let d = target.distance(x);
                    d > 0.0 && d <= epsilon
                })
                .collect();
            let mut report = CheckReport::new("P5");
            run(&mut report, &samples, 0.0, |x, u| vec![("P5", plant.flow(x, u).norm(), sigma(target.distance(x)))]);
            Some(report)
        }
    };
    Ok(PdReport { flags, p5 })
}

/// Data for the sufficient conditions of the lower-bound proposition.
/// Each `None` skips the matching inequality.
#[derive(Clone, Default)]
pub struct Prop5Data {
    /// `Ṽ`, with the sandwich `α̃₁(|x|_𝒜) ≤ Ṽ(x) ≤ α̃₂(|x|_𝒜)`.
    pub vtilde: Option<(StateScalarFn, BoundWitness, BoundWitness)>,
    /// `λ` in `⟨∇Ṽ, f⟩ ≥ λṼ`.
    pub lambda: Option<f64>,
    /// `σ` in `|f(x, u)| ≤ σ(|x|_𝒜)`.
    pub sigma: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    /// `α̃_D` in `|g(x, u)|_𝒜 ≥ α̃_D(|x|_𝒜)`.
    pub alpha_d: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    /// Radius of the neighbourhood of `𝒜` the flow inequalities apply on.
    pub epsilon: f64,
    pub fd_step: f64,
}

/// Sample the candidate sandwich, the flow lower bound, the velocity bound
/// (all on `C` within `epsilon` of `𝒜`) and the jump lower bound (on `D`).
pub fn check_prop5(
    plant: &HybridPlant,
    target: &TargetSet,
    data: &Prop5Data,
    flow_cloud: &SampleCloud,
    jump_cloud: &SampleCloud,
) -> Result<CheckReport> {
    if !(data.epsilon > 0.0) {
        return Err(Error::InvalidParams("epsilon must be positive".into()));
    }
    let ctx = SetContext { plant: Some(plant), cost: None, feedback: None };
    let near: Vec<Sample> = flow_cloud
        .clone()
        .restrict(Restriction::Flow)
        .draw(&ctx)?
        .into_iter()
        .filter(|(x, _)| target.distance(x) <= data.epsilon)
        .collect();
    let fd = if data.fd_step > 0.0 { data.fd_step } else { 1e-5 };
    let mut report = CheckReport::new("prop5");
    run(&mut report, &near, clf_flow_tol(fd), |x, u| {
        let mut rows = Vec::new();
        let r = target.distance(x);
        if let Some((v, a1, a2)) = &data.vtilde {
            let val = v(x);
            rows.push(("sandwich-lower", a1.eval(r), val));
            rows.push(("sandwich-upper", val, a2.eval(r)));
            if let Some(lambda) = data.lambda {
                let grad = fd_gradient(&|y: &Vector| v(y), x, fd);
                rows.push(("flow-lower", lambda * val, grad.dot(&plant.flow(x, u))));
            }
        }
        if let Some(sigma) = &data.sigma {
            if r > 0.0 {
                rows.push(("velocity", plant.flow(x, u).norm(), sigma(r)));
            }
        }
        rows
    });
    if let Some(alpha_d) = &data.alpha_d {
        let jump = jump_cloud.clone().restrict(Restriction::Jump).draw(&ctx)?;
        run(&mut report, &jump, JUMP_TOL, |x, u| {
            vec![("jump-lower", alpha_d(target.distance(x)), target.distance(&plant.jump(x, u)))]
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_deterministic_and_respects_pins() {
        let cloud = SampleCloud::new(7, 50, vec![Axis::Interval(0.0, 0.0), Axis::Levels(vec![1.0, 2.0])])
            .with_inputs(vec![Axis::Interval(-1.0, 1.0)]);
        let a = cloud.draw(&SetContext::default()).unwrap();
        let b = cloud.draw(&SetContext::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|(x, _)| x[0] == 0.0 && (x[1] == 1.0 || x[1] == 2.0)));
    }

    #[test]
    fn witness_validation() {
        assert!(BoundWitness::power(0.0, 1.0).is_err());
        assert!(BoundWitness::from_fn("sat", 1.0, |r| r.min(0.5)).is_err());
        assert!(BoundWitness::from_fn("shift", 1.0, |r| r + 1.0).is_err());
        let w = BoundWitness::fit_upper(&[(1.0, 2.0), (2.0, 3.0), (0.0, 5.0)], 1.0).unwrap();
        assert!(w.eval(1.0) >= 2.0 && w.eval(1.0) - 2.0 <= 1e-14);
        assert!(w.eval(2.0) >= 3.0);
    }

    #[test]
    fn fd_gradient_of_quadratic() {
        let f = |x: &Vector| x[0] * x[0] + 3.0 * x[0] * x[1];
        let g = fd_gradient(&f, &Vector::from_row_slice(&[1.0, 2.0]), 1e-5);
        assert!((g[0] - 8.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }
}
