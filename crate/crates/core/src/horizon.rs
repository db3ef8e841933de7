//! Prediction horizons (staircase sets of terminal hybrid times) and control
//! horizons (when to re-optimize).

use std::fmt;

use crate::error::{Error, Result};
use crate::time::{HybridTime, HybridTimeDomain, TIME_TOL};

#[derive(Debug, Clone, PartialEq)]
enum HorizonKind {
    Generic { n: usize, delta: f64 },
    Band { mu: f64 },
    Explicit,
}

/// Prediction horizon `𝒯 = ∪_{j=0}^{J} [t_{j+1}, t_j] × {j}` given by
/// thresholds `t_0 > 0`, nonincreasing, with `t_{J+1} = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionHorizon {
    thresholds: Vec<f64>,
    kind: HorizonKind,
}

impl PredictionHorizon {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        Self::with_kind(thresholds, HorizonKind::Explicit)
    }

    fn with_kind(thresholds: Vec<f64>, kind: HorizonKind) -> Result<Self> {
        if thresholds.len() < 2 {
            return Err(Error::InvalidParams("a horizon needs at least two thresholds".into()));
        }
        if thresholds.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidParams("thresholds must be finite and nonnegative".into()));
        }
        if !(thresholds[0] > 0.0) {
            return Err(Error::InvalidParams("t_0 must be positive".into()));
        }
        if thresholds.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidParams("thresholds must be nonincreasing".into()));
        }
        if *thresholds.last().unwrap() != 0.0 {
            return Err(Error::InvalidParams("the last threshold must be 0".into()));
        }
        Ok(Self { thresholds, kind })
    }

    /// `{(T, J) : max{T/δ, J} = N}`.
    pub fn generic(n: usize, delta: f64) -> Result<Self> {
        if n == 0 || !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParams(format!(
                "generic horizon needs N >= 1 and delta > 0, got N = {n}, delta = {delta}"
            )));
        }
        let mut th = vec![delta * n as f64; n + 1];
        th.push(0.0);
        Self::with_kind(th, HorizonKind::Generic { n, delta })
    }

    /// `{(T, J) : μ ≤ T + J ≤ μ + 1}`.
    pub fn band(mu: f64) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::InvalidParams(format!("band horizon needs mu >= 0, got {mu}")));
        }
        let jmax = (mu + 1.0).floor() as usize;
        let mut th: Vec<f64> = (0..=jmax).map(|j| (mu + 1.0 - j as f64).max(0.0)).collect();
        th.push(0.0);
        Self::with_kind(th, HorizonKind::Band { mu })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Largest jump count `J` in the horizon.
    pub fn max_jumps(&self) -> usize {
        self.thresholds.len() - 2
    }

    /// Longest ordinary time `t_0`.
    pub fn max_time(&self) -> f64 {
        self.thresholds[0]
    }

    /// Admissible terminal ordinary times `[t_{j+1}, t_j]` at level `j`.
    pub fn level(&self, j: usize) -> Option<(f64, f64)> {
        if j > self.max_jumps() {
            return None;
        }
        Some((self.thresholds[j + 1], self.thresholds[j]))
    }

    pub fn contains(&self, ht: HybridTime) -> bool {
        match self.level(ht.j) {
            Some((lo, hi)) => ht.t >= lo - TIME_TOL && ht.t <= hi + TIME_TOL,
            None => false,
        }
    }

    /// Earliest hybrid time of `dom ∩ 𝒯`.
    pub fn reached(&self, dom: &HybridTimeDomain) -> Option<HybridTime> {
        self.reached_from(dom, HybridTime::zero())
    }

    /// Earliest hybrid time of `dom ∩ 𝒯` not preceding `from`.
    pub fn reached_from(&self, dom: &HybridTimeDomain, from: HybridTime) -> Option<HybridTime> {
        let top = dom.jump_count().min(self.max_jumps());
        for j in from.j..=top {
            let (s0, s1) = dom.interval(j).unwrap();
            let (lo, hi) = self.level(j).unwrap();
            let lower = s0.max(lo).max(from.t);
            let upper = s1.min(hi);
            if lower <= upper + TIME_TOL {
                return Some(HybridTime::new(lower.min(upper.max(s0)), j));
            }
        }
        None
    }

    /// Parse `generic(N=5,delta=0.5)`, `band(mu=1.5)` or an explicit
    /// threshold list such as `[2.5, 1.5, 0.5, 0]`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let args = |body: &str| -> Result<Vec<(String, String)>> {
            body.split(',')
                .filter(|p| !p.trim().is_empty())
                .map(|p| {
                    let (k, v) =
                        p.split_once('=').ok_or_else(|| Error::Parse(format!("expected key=value in '{p}'")))?;
                    Ok((k.trim().to_ascii_lowercase(), v.trim().to_string()))
                })
                .collect()
        };
        let num =
            |v: &str| -> Result<f64> { v.parse::<f64>().map_err(|_| Error::Parse(format!("not a number: '{v}'"))) };
        if let Some(body) = s.strip_prefix("generic(").and_then(|r| r.strip_suffix(')')) {
            let (mut n, mut delta) = (None, None);
            for (k, v) in args(body)? {
                match k.as_str() {
                    "n" => n = Some(v.parse::<usize>().map_err(|_| Error::Parse(format!("bad N: '{v}'")))?),
                    "delta" => delta = Some(num(&v)?),
                    _ => return Err(Error::Parse(format!("unknown generic horizon key '{k}'"))),
                }
            }
            let n = n.ok_or_else(|| Error::Parse("generic horizon needs N".into()))?;
            let delta = delta.ok_or_else(|| Error::Parse("generic horizon needs delta".into()))?;
            return Self::generic(n, delta);
        }
        if let Some(body) = s.strip_prefix("band(").and_then(|r| r.strip_suffix(')')) {
            let mut mu = None;
            for (k, v) in args(body)? {
                match k.as_str() {
                    "mu" => mu = Some(num(&v)?),
                    _ => return Err(Error::Parse(format!("unknown band horizon key '{k}'"))),
                }
            }
            return Self::band(mu.ok_or_else(|| Error::Parse("band horizon needs mu".into()))?);
        }
        let body = s.trim_start_matches('[').trim_end_matches(']');
        let th = body.split(',').map(|p| num(p.trim())).collect::<Result<Vec<f64>>>()?;
        Self::new(th)
    }
}

impl fmt::Display for PredictionHorizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            HorizonKind::Generic { n, delta } => write!(f, "generic(N={n},delta={delta})"),
            HorizonKind::Band { mu } => write!(f, "band(mu={mu})"),
            HorizonKind::Explicit => {
                let parts: Vec<String> = self.thresholds.iter().map(|t| t.to_string()).collect();
                write!(f, "[{}]", parts.join(","))
            }
        }
    }
}

/// When the MPC loop stops applying an optimal input and re-optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerPolicy {
    /// Apply until `max{(t - T_i)/δ_c, j - J_i} ≥ N_c` or the prediction ends.
    FixedBudget,
    /// Apply through the first predicted jump, or to the end of the
    /// prediction if it has none.
    NextJumpOrTerminal,
}

/// Control horizon `(N_c, δ_c)` with its trigger policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlHorizon {
    pub n_c: usize,
    pub delta_c: f64,
    pub trigger: TriggerPolicy,
}

impl Default for ControlHorizon {
    fn default() -> Self {
        Self { n_c: 1, delta_c: f64::INFINITY, trigger: TriggerPolicy::NextJumpOrTerminal }
    }
}

impl ControlHorizon {
    pub fn fixed_budget(n_c: usize, delta_c: f64) -> Result<Self> {
        if n_c == 0 || !(delta_c > 0.0) {
            return Err(Error::InvalidParams("control horizon needs N_c >= 1 and delta_c > 0".into()));
        }
        Ok(Self { n_c, delta_c, trigger: TriggerPolicy::FixedBudget })
    }

    /// Check `N_c ≤ N` and `δ_c ≤ δ` against a generic prediction horizon.
    pub fn validate_against(&self, n: usize, delta: f64) -> Result<()> {
        if self.trigger == TriggerPolicy::FixedBudget && (self.n_c > n || self.delta_c > delta) {
            return Err(Error::InvalidParams(format!(
                "control horizon (N_c = {}, delta_c = {}) exceeds prediction horizon (N = {n}, delta = {delta})",
                self.n_c, self.delta_c
            )));
        }
        Ok(())
    }

    /// Hybrid time in `dom` at which the next optimization happens.
    pub fn trigger_point(&self, dom: &HybridTimeDomain) -> HybridTime {
        let end = dom.terminal();
        match self.trigger {
            TriggerPolicy::NextJumpOrTerminal => {
                if end.j >= 1 {
                    HybridTime::new(dom.jump_times()[1], 1)
                } else {
                    end
                }
            }
            TriggerPolicy::FixedBudget => {
                let budget = self.delta_c * self.n_c as f64;
                for j in 0..=end.j {
                    let (s0, s1) = dom.interval(j).unwrap();
                    if j >= self.n_c {
                        return HybridTime::new(s0, j);
                    }
                    if s1 >= budget - TIME_TOL {
                        return HybridTime::new(s0.max(budget).min(s1), j);
                    }
                }
                end
            }
        }
    }
}
