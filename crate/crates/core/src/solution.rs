//! Hybrid arcs paired with hybrid inputs, stored as flow arcs with dense output.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::time::{HybridTime, HybridTimeDomain, TIME_TOL};

pub type Vector = DVector<f64>;

/// Samples of one flow interval `[t_j, t_{j+1}] × {j}`.
///
/// Times are absolute ordinary times. Inputs hold between nodes (the value on
/// `[t_i, t_{i+1})` is `inputs[i]`); states are interpolated by cubic Hermite
/// polynomials through the node states and derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowArc {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub derivs: Vec<Vector>,
    pub inputs: Vec<Vector>,
}

impl FlowArc {
    pub fn new(t: f64, x: Vector, dx: Vector, u: Vector) -> Self {
        Self { times: vec![t], states: vec![x], derivs: vec![dx], inputs: vec![u] }
    }

    pub fn push(&mut self, t: f64, x: Vector, dx: Vector, u: Vector) {
        self.times.push(t);
        self.states.push(x);
        self.derivs.push(dx);
        self.inputs.push(u);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    pub fn first_state(&self) -> &Vector {
        &self.states[0]
    }

    pub fn last_state(&self) -> &Vector {
        self.states.last().unwrap()
    }

    /// Index `i` of the node interval `[t_i, t_{i+1}]` containing `t`.
    fn locate(&self, t: f64) -> usize {
        let n = self.times.len();
        if n < 2 {
            return 0;
        }
        let k = self.times.partition_point(|&s| s <= t);
        k.saturating_sub(1).min(n - 2)
    }

    pub fn state_at(&self, t: f64) -> Vector {
        if self.times.len() == 1 {
            return self.states[0].clone();
        }
        let i = self.locate(t);
        hermite(
            self.times[i],
            self.times[i + 1],
            &self.states[i],
            &self.derivs[i],
            &self.states[i + 1],
            &self.derivs[i + 1],
            t,
        )
        .0
    }

    pub fn deriv_at(&self, t: f64) -> Vector {
        if self.times.len() == 1 {
            return self.derivs[0].clone();
        }
        let i = self.locate(t);
        hermite(
            self.times[i],
            self.times[i + 1],
            &self.states[i],
            &self.derivs[i],
            &self.states[i + 1],
            &self.derivs[i + 1],
            t,
        )
        .1
    }

    pub fn input_at(&self, t: f64) -> Vector {
        if t >= self.end() - TIME_TOL {
            return self.inputs.last().unwrap().clone();
        }
        self.inputs[self.locate(t)].clone()
    }

    fn shifted(&self, dt: f64) -> FlowArc {
        FlowArc {
            times: self.times.iter().map(|t| t + dt).collect(),
            states: self.states.clone(),
            derivs: self.derivs.clone(),
            inputs: self.inputs.clone(),
        }
    }

    /// Nodes up to and including `t`, with an interpolated node at `t`.
    fn head(&self, t: f64) -> FlowArc {
        let mut out =
            FlowArc::new(self.times[0], self.states[0].clone(), self.derivs[0].clone(), self.inputs[0].clone());
        for i in 1..self.times.len() {
            if self.times[i] < t - TIME_TOL {
                out.push(self.times[i], self.states[i].clone(), self.derivs[i].clone(), self.inputs[i].clone());
            } else if (self.times[i] - t).abs() <= TIME_TOL {
                out.push(t, self.states[i].clone(), self.derivs[i].clone(), self.inputs[i].clone());
                return out;
            } else {
                break;
            }
        }
        if t > out.end() + TIME_TOL {
            out.push(t, self.state_at(t), self.deriv_at(t), self.input_at(t));
        }
        out
    }

    /// Nodes from `t` onward, with an interpolated node at `t`.
    fn tail(&self, t: f64) -> FlowArc {
        let k = self.times.partition_point(|&s| s < t - TIME_TOL);
        let (first_t, mut out) = if k < self.times.len() && (self.times[k] - t).abs() <= TIME_TOL {
            (k + 1, FlowArc::new(t, self.states[k].clone(), self.derivs[k].clone(), self.inputs[k].clone()))
        } else {
            (k, FlowArc::new(t, self.state_at(t), self.deriv_at(t), self.input_at(t)))
        };
        for i in first_t..self.times.len() {
            out.push(self.times[i], self.states[i].clone(), self.derivs[i].clone(), self.inputs[i].clone());
        }
        out
    }
}

/// Cubic Hermite value and derivative on `[t0, t1]`.
pub fn hermite(t0: f64, t1: f64, x0: &Vector, d0: &Vector, x1: &Vector, d1: &Vector, t: f64) -> (Vector, Vector) {
    let h = t1 - t0;
    if h <= 0.0 {
        return (x1.clone(), d1.clone());
    }
    let s = ((t - t0) / h).clamp(0.0, 1.0);
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let x = x0 * h00 + d0 * (h10 * h) + x1 * h01 + d1 * (h11 * h);
    let dh00 = (6.0 * s2 - 6.0 * s) / h;
    let dh10 = 3.0 * s2 - 4.0 * s + 1.0;
    let dh01 = (-6.0 * s2 + 6.0 * s) / h;
    let dh11 = 3.0 * s2 - 2.0 * s;
    let dx = x0 * dh00 + d0 * dh10 + x1 * dh01 + d1 * dh11;
    (x, dx)
}

/// A solution pair `(x, u)`: one flow arc per jump level plus the jump inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPair {
    arcs: Vec<FlowArc>,
    jump_inputs: Vec<Vector>,
}

impl SolutionPair {
    pub fn new(arcs: Vec<FlowArc>, jump_inputs: Vec<Vector>) -> Result<Self> {
        if arcs.is_empty() || arcs.iter().any(|a| a.is_empty()) {
            return Err(Error::InvalidDomain("solution needs nonempty flow arcs".into()));
        }
        if jump_inputs.len() + 1 != arcs.len() {
            return Err(Error::InvalidDomain(format!(
                "{} arcs require {} jump inputs, got {}",
                arcs.len(),
                arcs.len() - 1,
                jump_inputs.len()
            )));
        }
        if arcs[0].start().abs() > TIME_TOL {
            return Err(Error::InvalidDomain("solution must start at t = 0".into()));
        }
        for a in &arcs {
            if a.times.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidDomain("node times decrease".into()));
            }
        }
        for w in arcs.windows(2) {
            if (w[1].start() - w[0].end()).abs() > TIME_TOL {
                return Err(Error::InvalidDomain(format!(
                    "arc starting at {} does not follow jump at {}",
                    w[1].start(),
                    w[0].end()
                )));
            }
        }
        Ok(Self { arcs, jump_inputs })
    }

    /// A solution consisting of the single point `(0, 0)`.
    pub fn point(x: Vector, dx: Vector, u: Vector) -> Self {
        Self { arcs: vec![FlowArc::new(0.0, x, dx, u)], jump_inputs: vec![] }
    }

    pub fn arcs(&self) -> &[FlowArc] {
        &self.arcs
    }

    pub fn arc(&self, j: usize) -> Option<&FlowArc> {
        self.arcs.get(j)
    }

    pub fn jump_inputs(&self) -> &[Vector] {
        &self.jump_inputs
    }

    pub fn jump_count(&self) -> usize {
        self.jump_inputs.len()
    }

    pub fn state_dim(&self) -> usize {
        self.arcs[0].states[0].len()
    }

    pub fn input_dim(&self) -> usize {
        self.arcs[0].inputs[0].len()
    }

    pub fn domain(&self) -> HybridTimeDomain {
        let mut times = vec![0.0];
        times.extend(self.arcs.iter().map(|a| a.end()));
        HybridTimeDomain::new(times).expect("arcs are ordered by construction")
    }

    pub fn terminal_time(&self) -> HybridTime {
        HybridTime::new(self.arcs.last().unwrap().end(), self.arcs.len() - 1)
    }

    pub fn initial_state(&self) -> &Vector {
        self.arcs[0].first_state()
    }

    pub fn terminal_state(&self) -> &Vector {
        self.arcs.last().unwrap().last_state()
    }

    fn check(&self, ht: HybridTime) -> Result<&FlowArc> {
        let arc = self.arcs.get(ht.j).ok_or(Error::OutOfDomain { t: ht.t, j: ht.j })?;
        if ht.t < arc.start() - TIME_TOL || ht.t > arc.end() + TIME_TOL {
            return Err(Error::OutOfDomain { t: ht.t, j: ht.j });
        }
        Ok(arc)
    }

    pub fn state_at(&self, ht: HybridTime) -> Result<Vector> {
        Ok(self.check(ht)?.state_at(ht.t))
    }

    /// Input at `ht`; at a jump point `(t_{j+1}, j)` this is the jump input.
    pub fn input_at(&self, ht: HybridTime) -> Result<Vector> {
        let arc = self.check(ht)?;
        if ht.j < self.jump_inputs.len() && ht.t >= arc.end() - TIME_TOL {
            return Ok(self.jump_inputs[ht.j].clone());
        }
        Ok(arc.input_at(ht.t))
    }

    /// Restriction to hybrid times preceding `ht`.
    pub fn truncate(&self, ht: HybridTime) -> Result<Self> {
        let arc = self.check(ht)?;
        let t = ht.t.clamp(arc.start(), arc.end());
        let mut arcs: Vec<FlowArc> = self.arcs[..ht.j].to_vec();
        arcs.push(arc.head(t));
        Self::new(arcs, self.jump_inputs[..ht.j].to_vec())
    }

    /// The part after `ht`, shifted so that `ht` becomes `(0, 0)`.
    pub fn suffix(&self, ht: HybridTime) -> Result<Self> {
        let arc = self.check(ht)?;
        let t = ht.t.clamp(arc.start(), arc.end());
        let mut arcs = vec![arc.tail(t).shifted(-t)];
        arcs.extend(self.arcs[ht.j + 1..].iter().map(|a| a.shifted(-t)));
        Self::new(arcs, self.jump_inputs[ht.j..].to_vec())
    }

    /// Concatenation `self ⊕ other`. The initial state of `other` must match
    /// the terminal state of `self` within `tol` (relative to its magnitude).
    pub fn concatenate(&self, other: &SolutionPair, tol: f64) -> Result<Self> {
        let end = self.terminal_time();
        let gap = (other.initial_state() - self.terminal_state()).amax();
        if gap > tol * (1.0 + self.terminal_state().amax()) {
            return Err(Error::InvalidDomain(format!("cannot concatenate: state mismatch {gap:.3e} at {end}")));
        }
        let mut arcs = self.arcs.clone();
        let last = arcs.pop().unwrap();
        let first = other.arcs[0].shifted(end.t);
        let mut merged = last;
        merged.times.pop();
        merged.states.pop();
        merged.derivs.pop();
        merged.inputs.pop();
        merged.times.extend(first.times);
        merged.states.extend(first.states);
        merged.derivs.extend(first.derivs);
        merged.inputs.extend(first.inputs);
        arcs.push(merged);
        arcs.extend(other.arcs[1..].iter().map(|a| a.shifted(end.t)));
        let mut jumps = self.jump_inputs.clone();
        jumps.extend(other.jump_inputs.iter().cloned());
        Self::new(arcs, jumps)
    }

    /// Pre-jump state, post-jump state and jump input of jump `j`.
    pub fn jump(&self, j: usize) -> Option<(&Vector, &Vector, &Vector)> {
        if j >= self.jump_inputs.len() {
            return None;
        }
        Some((self.arcs[j].last_state(), self.arcs[j + 1].first_state(), &self.jump_inputs[j]))
    }

    /// Every stored node as `(hybrid time, state, input)` in hybrid-time order.
    /// Pre-jump nodes carry the jump input.
    pub fn nodes(&self) -> Vec<(HybridTime, &Vector, &Vector)> {
        let mut out = Vec::new();
        for (j, arc) in self.arcs.iter().enumerate() {
            let n = arc.len();
            for i in 0..n {
                let u = if i + 1 == n && j < self.jump_inputs.len() { &self.jump_inputs[j] } else { &arc.inputs[i] };
                out.push((HybridTime::new(arc.times[i], j), &arc.states[i], u));
            }
        }
        out
    }
}
