//! Hybrid time `(t, j)` and compact hybrid time domains.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};

/// Tolerance used when comparing ordinary times.
pub const TIME_TOL: f64 = 1e-12;

/// A hybrid time: ordinary time `t` and jump counter `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridTime {
    pub t: f64,
    pub j: usize,
}

impl HybridTime {
    pub fn new(t: f64, j: usize) -> Self {
        Self { t, j }
    }

    pub fn zero() -> Self {
        Self { t: 0.0, j: 0 }
    }

    /// The scalar `t + j` that orders points of a domain.
    pub fn scalar(&self) -> f64 {
        self.t + self.j as f64
    }

    /// Componentwise `self <= other` up to [`TIME_TOL`].
    pub fn le_componentwise(&self, other: &HybridTime) -> bool {
        self.j <= other.j && self.t <= other.t + TIME_TOL
    }

    /// Shift by another hybrid time, as done when concatenating.
    pub fn offset(&self, by: HybridTime) -> HybridTime {
        HybridTime::new(self.t + by.t, self.j + by.j)
    }
}

impl PartialOrd for HybridTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.scalar().partial_cmp(&other.scalar())? {
            Ordering::Equal => Some(self.j.cmp(&other.j)),
            ord => Some(ord),
        }
    }
}

impl fmt::Display for HybridTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.t, self.j)
    }
}

/// Compact hybrid time domain `∪_{j=0}^{J} [t_j, t_{j+1}] × {j}`.
///
/// Stored as the jump-time sequence `t_0 = 0 ≤ t_1 ≤ … ≤ t_{J+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridTimeDomain {
    jump_times: Vec<f64>,
}

impl HybridTimeDomain {
    pub fn new(jump_times: Vec<f64>) -> Result<Self> {
        if jump_times.len() < 2 {
            return Err(Error::InvalidDomain("need at least t_0 and t_1".into()));
        }
        if jump_times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidDomain("non-finite jump time".into()));
        }
        if jump_times[0].abs() > TIME_TOL {
            return Err(Error::InvalidDomain(format!("t_0 must be 0, got {}", jump_times[0])));
        }
        let mut times = jump_times;
        times[0] = 0.0;
        for k in 1..times.len() {
            if times[k] < times[k - 1] - TIME_TOL {
                return Err(Error::InvalidDomain(format!(
                    "jump times decrease at index {k}: {} < {}",
                    times[k],
                    times[k - 1]
                )));
            }
            if times[k] < times[k - 1] {
                times[k] = times[k - 1];
            }
        }
        Ok(Self { jump_times: times })
    }

    /// The single point `{(0, 0)}`.
    pub fn point() -> Self {
        Self { jump_times: vec![0.0, 0.0] }
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    /// Number of jumps `J`.
    pub fn jump_count(&self) -> usize {
        self.jump_times.len() - 2
    }

    /// Terminal time `(T, J)`.
    pub fn terminal(&self) -> HybridTime {
        HybridTime::new(*self.jump_times.last().unwrap(), self.jump_count())
    }

    /// Flow interval `[t_j, t_{j+1}]` at level `j`.
    pub fn interval(&self, j: usize) -> Option<(f64, f64)> {
        if j > self.jump_count() {
            return None;
        }
        Some((self.jump_times[j], self.jump_times[j + 1]))
    }

    pub fn contains(&self, ht: HybridTime) -> bool {
        match self.interval(ht.j) {
            Some((a, b)) => ht.t >= a - TIME_TOL && ht.t <= b + TIME_TOL,
            None => false,
        }
    }

    /// Jump points `(t_{j+1}, j)` for `j < J`.
    pub fn jump_points(&self) -> impl Iterator<Item = HybridTime> + '_ {
        (0..self.jump_count()).map(move |j| HybridTime::new(self.jump_times[j + 1], j))
    }

    /// Restriction to points preceding `ht` (inclusive).
    pub fn truncate(&self, ht: HybridTime) -> Result<Self> {
        if !self.contains(ht) {
            return Err(Error::OutOfDomain { t: ht.t, j: ht.j });
        }
        let mut times = self.jump_times[..=ht.j].to_vec();
        times.push(ht.t.max(self.jump_times[ht.j]));
        Self::new(times)
    }

    /// Points following `ht` (inclusive), shifted so that `ht` becomes `(0, 0)`.
    pub fn suffix(&self, ht: HybridTime) -> Result<Self> {
        if !self.contains(ht) {
            return Err(Error::OutOfDomain { t: ht.t, j: ht.j });
        }
        let t0 = ht.t.min(self.jump_times[ht.j + 1]);
        let mut times = vec![0.0];
        times.extend(self.jump_times[ht.j + 1..].iter().map(|s| (s - t0).max(0.0)));
        Self::new(times)
    }

    /// Concatenation `self ⊕ other`: `other` shifted by the terminal time of `self`.
    pub fn concatenate(&self, other: &HybridTimeDomain) -> Self {
        let end = self.terminal();
        let mut times = self.jump_times[..=end.j].to_vec();
        times.extend(other.jump_times[1..].iter().map(|s| s + end.t));
        Self { jump_times: times }
    }

    /// Equality of jump-time sequences up to `tol`.
    pub fn approx_eq(&self, other: &HybridTimeDomain, tol: f64) -> bool {
        self.jump_times.len() == other.jump_times.len()
            && self.jump_times.iter().zip(&other.jump_times).all(|(a, b)| (a - b).abs() <= tol)
    }
}

impl fmt::Display for HybridTimeDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.jump_times.iter().map(|t| t.to_string()).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}
