//! Linear plant under sample-and-hold control.
//!
//! State `x = (z, η, τ)`: plant state `z ∈ ℝⁿ`, held input `η ∈ ℝᵐ` and
//! sample timer `τ ∈ [0, T_s]`. At `τ = T_s` the timer resets and the
//! held input is replaced by the new input `u`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::cost::{CostSpec, TargetSet};
use crate::error::{Error, Result};
use crate::horizon::PredictionHorizon;
use crate::plant::{ConstraintSet, Feedback, FlowFeedback, HybridPlant};
use crate::solution::Vector;
use crate::verify::Axis;

use super::Bundle;

/// Points of the grid on which the flow-cost bound is checked.
pub const GRID_POINTS: usize = 101;

/// Plant, controller and cost data for the sample-and-hold example.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleHoldParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Sampling period `T_s`.
    pub t_s: f64,
    /// Feedback gain, `u = K z`.
    pub k: DMatrix<f64>,
    /// Weight of `V` on `(z, η)`.
    pub p: DMatrix<f64>,
    /// Decay rate `σ` of `V` along flows.
    pub sigma: f64,
    /// Flow cost weight on `(z, η)`.
    pub q_c: DMatrix<f64>,
    /// Level of the terminal set `X = {V ≤ c}`.
    pub c: f64,
    /// Input bound, `U = [-u_max, u_max]ᵐ`.
    pub u_max: f64,
}

impl SampleHoldParams {
    /// Double integrator `ż₁ = z₂, ż₂ = η` sampled every 0.2 s.
    pub fn double_integrator() -> Result<Self> {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        Self::design(a, b, 0.2, 2.0, 0.1, 20.0)
    }

    /// Discrete LQR gain (state weight `I`, input weight `r`), a Lyapunov
    /// weight `P` solving `HᵀPH - e^{-σT_s}P = -I`, the largest scalar flow
    /// weight allowed by the flow-cost bound (with a 10 % margin), and the
    /// largest terminal level keeping `Kz` inside `U` (with a 10 % margin).
    pub fn design(a: DMatrix<f64>, b: DMatrix<f64>, t_s: f64, sigma: f64, r: f64, u_max: f64) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if a.ncols() != n || b.nrows() != n || n == 0 || m == 0 {
            return Err(Error::InvalidParams("A must be n×n and B n×m".into()));
        }
        if !(t_s > 0.0) || !(sigma > 0.0) || !(r > 0.0) || !(u_max > 0.0) {
            return Err(Error::InvalidParams("T_s, sigma, r and u_max must be positive".into()));
        }
        let af = augmented(&a, &b);
        let e = (&af * t_s).exp();
        let ad = e.view((0, 0), (n, n)).into_owned();
        let bd = e.view((0, n), (n, m)).into_owned();
        let k = dlqr(&ad, &bd, &DMatrix::identity(n, n), &(DMatrix::identity(m, m) * r))?;
        let h = e * a_g(&k, n, m);
        let rho = (-sigma * t_s).exp();
        let p = dlyap(&h, rho, &DMatrix::identity(n + m, n + m))?;
        let mut params = Self { a, b, t_s, k, p, sigma, q_c: DMatrix::zeros(n + m, n + m), c: 0.0, u_max };
        let q = (0..GRID_POINTS)
            .map(|i| {
                let s = t_s * i as f64 / (GRID_POINTS - 1) as f64;
                min_eig(&(params.weight(s) * sigma))
            })
            .fold(f64::INFINITY, f64::min);
        params.q_c = DMatrix::identity(n + m, n + m) * (0.9 * q);
        params.c = 0.9 * params.terminal_level_bound()?;
        params.validate()?;
        Ok(params)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `A_f = [[A, B], [0, 0]]`.
    pub fn a_f(&self) -> DMatrix<f64> {
        augmented(&self.a, &self.b)
    }

    /// `H(K) = exp(A_f T_s) A_g(K)`.
    pub fn h(&self) -> DMatrix<f64> {
        (self.a_f() * self.t_s).exp() * a_g(&self.k, self.n(), self.m())
    }

    /// `e^{-στ} exp(A_fᵀ(T_s - τ)) P exp(A_f(T_s - τ))`, so that `V(x) = x₁ᵀ M(τ) x₁`.
    pub fn weight(&self, tau: f64) -> DMatrix<f64> {
        let e = (self.a_f() * (self.t_s - tau)).exp();
        e.transpose() * &self.p * e * (-self.sigma * tau).exp()
    }

    /// Largest `c` with `|Kz|_∞ ≤ u_max` on `{V ≤ c}` for `τ` on the grid.
    fn terminal_level_bound(&self) -> Result<f64> {
        let (n, m) = (self.n(), self.m());
        let mut best = f64::INFINITY;
        for i in 0..GRID_POINTS {
            let tau = self.t_s * i as f64 / (GRID_POINTS - 1) as f64;
            let w = self.weight(tau);
            let winv = w.try_inverse().ok_or_else(|| Error::InvalidParams("V weight is singular".into()))?;
            for row in 0..m {
                let mut kt = DVector::zeros(n + m);
                for col in 0..n {
                    kt[col] = self.k[(row, col)];
                }
                let s = (kt.transpose() * &winv * &kt)[(0, 0)];
                if s > 0.0 {
                    best = best.min(self.u_max * self.u_max / s);
                }
            }
        }
        Ok(best)
    }

    /// Check the Lyapunov and cost conditions that make `V` a control
    /// Lyapunov function for the feedback `u = Kz`.
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        let d = n + m;
        let shape_ok = self.a.shape() == (n, n)
            && self.b.shape() == (n, m)
            && self.k.shape() == (m, n)
            && self.p.shape() == (d, d)
            && self.q_c.shape() == (d, d);
        if !shape_ok {
            return Err(Error::InvalidParams("matrix dimensions are inconsistent".into()));
        }
        if !(self.t_s > 0.0 && self.sigma > 0.0 && self.c > 0.0 && self.u_max > 0.0) {
            return Err(Error::InvalidParams("T_s, sigma, c and u_max must be positive".into()));
        }
        let scale = self.p.amax().max(1.0);
        let p_min = min_eig(&self.p);
        if p_min <= 0.0 {
            return Err(Error::InvalidParams(format!("P is not positive definite (min eigenvalue {p_min:.3e})")));
        }
        let h = self.h();
        let htph = h.transpose() * &self.p * &h;
        let lyap = max_eig(&(&htph - &self.p));
        if lyap >= 0.0 {
            return Err(Error::InvalidParams(format!(
                "H(K)ᵀ P H(K) - P is not negative definite (max eigenvalue {lyap:.3e})"
            )));
        }
        let rho = (-self.sigma * self.t_s).exp();
        let decay = max_eig(&(&htph - &self.p * rho));
        if decay > 1e-12 * scale {
            return Err(Error::InvalidParams(format!(
                "H(K)ᵀ P H(K) - exp(-σT_s) P is not negative semidefinite (max eigenvalue {decay:.3e})"
            )));
        }
        for i in 0..GRID_POINTS {
            let s = self.t_s * i as f64 / (GRID_POINTS - 1) as f64;
            let gap = min_eig(&(self.weight(s) * self.sigma - &self.q_c));
            if gap < -1e-12 * scale {
                return Err(Error::InvalidParams(format!(
                    "flow cost weight exceeds σ·V weight at s = {s:.4} (min eigenvalue {gap:.3e})"
                )));
            }
        }
        if self.c > self.terminal_level_bound()? * (1.0 + 1e-12) {
            return Err(Error::InvalidParams("terminal level c lets Kz leave U".into()));
        }
        Ok(())
    }

    fn x1(&self, x: &Vector) -> DVector<f64> {
        x.rows(0, self.n() + self.m()).into_owned()
    }

    /// `V(x) = e^{-στ} x₁ᵀ exp(A_fᵀ(T_s - τ)) P exp(A_f(T_s - τ)) x₁`.
    pub fn terminal_cost(&self, x: &Vector) -> f64 {
        let tau = x[self.n() + self.m()];
        let x1 = self.x1(x);
        let e = (self.a_f() * (self.t_s - tau)).exp();
        let y = e * x1;
        (-self.sigma * tau).exp() * (y.transpose() * &self.p * y)[(0, 0)]
    }

    pub fn flow_cost(&self, x: &Vector) -> f64 {
        let d = self.n() + self.m();
        let mut total = 0.0;
        for i in 0..d {
            for j in 0..d {
                total += x[i] * self.q_c[(i, j)] * x[j];
            }
        }
        total
    }

    fn timer_violation(&self, tau: f64) -> f64 {
        (-tau).max(0.0) + (tau - self.t_s).max(0.0)
    }

    fn box_violation(&self, u: &Vector) -> f64 {
        u.iter().map(|v| (v.abs() - self.u_max).max(0.0)).sum()
    }

    pub fn plant(&self) -> Result<HybridPlant> {
        self.validate()?;
        let (n, m) = (self.n(), self.m());
        let d = n + m;
        let af = self.a_f();
        let (af1, af2) = (af.clone(), af);
        let (c1, c2) = (self.clone(), self.clone());
        let t_s = self.t_s;
        let flow = move |x: &Vector, _: &Vector| {
            let mut out = Vector::zeros(d + 1);
            out.rows_mut(0, d).copy_from(&(&af1 * x.rows(0, d)));
            out[d] = 1.0;
            out
        };
        let jump = move |x: &Vector, u: &Vector| {
            let mut out = x.clone();
            out.rows_mut(n, m).copy_from(u);
            out[d] = 0.0;
            out
        };
        let closed = move |x: &Vector, _: &Vector, t: f64| {
            let mut out = x.clone();
            out.rows_mut(0, d).copy_from(&((&af2 * t).exp() * x.rows(0, d)));
            out[d] = x[d] + t;
            out
        };
        let plant = HybridPlant::new(
            "sample-hold",
            d + 1,
            m,
            flow,
            jump,
            ConstraintSet::new(move |x, _| c1.timer_violation(x[d]) + c1.box_violation(&x.rows(n, m).into_owned()))
                .with_guard(move |x, _| x[d] - t_s),
            ConstraintSet::new(move |x, u| (x[d] - c2.t_s).abs() + c2.box_violation(u))
                .with_guard(move |x, _| t_s - x[d]),
        )?
        .with_closed_form(closed)
        .with_input_bounds(Vector::from_element(m, -self.u_max), Vector::from_element(m, self.u_max))?;
        Ok(plant)
    }

    pub fn cost(&self) -> CostSpec {
        let (a, b) = (self.clone(), self.clone());
        let d = self.n() + self.m();
        CostSpec::new(
            move |x, _| a.flow_cost(x),
            |_, _| 0.0,
            {
                let p = self.clone();
                move |x| p.terminal_cost(x)
            },
            move |x| b.timer_violation(x[d]) + (b.terminal_cost(x) - b.c).max(0.0),
        )
    }

    pub fn feedback(&self) -> Feedback {
        let k = self.k.clone();
        let n = self.n();
        Feedback::new(FlowFeedback::Constant(Vector::zeros(self.m())), move |x| &k * x.rows(0, n))
    }

    /// `𝒜 = {0} × {0} × [0, T_s]`.
    pub fn target(&self) -> TargetSet {
        let p = self.clone();
        let d = self.n() + self.m();
        TargetSet::new(move |x| (x.rows(0, d).norm_squared() + p.timer_violation(x[d]).powi(2)).sqrt())
    }

    /// `𝒜 = {0} × U × [0, T_s]`, whose distance only involves `z`.
    pub fn target_plant_state(&self) -> TargetSet {
        let p = self.clone();
        let (n, m) = (self.n(), self.m());
        TargetSet::new(move |x| {
            let held: f64 = x.rows(n, m).iter().map(|v| (v.abs() - p.u_max).max(0.0).powi(2)).sum();
            (x.rows(0, n).norm_squared() + held + p.timer_violation(x[n + m]).powi(2)).sqrt()
        })
    }
}

type DVector<T> = nalgebra::DVector<T>;

fn augmented(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (a.nrows(), b.ncols());
    let mut af = DMatrix::zeros(n + m, n + m);
    af.view_mut((0, 0), (n, n)).copy_from(a);
    af.view_mut((0, n), (n, m)).copy_from(b);
    af
}

/// `A_g(K) = [[I, 0], [K, 0]]`.
fn a_g(k: &DMatrix<f64>, n: usize, m: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(n + m, n + m);
    g.view_mut((0, 0), (n, n)).fill_with_identity();
    g.view_mut((n, 0), (m, n)).copy_from(k);
    g
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn min_eig(m: &DMatrix<f64>) -> f64 {
    sym(m).symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

pub(crate) fn max_eig(m: &DMatrix<f64>) -> f64 {
    sym(m).symmetric_eigenvalues().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Gain `K` of the discrete LQR `u = Kz` by Riccati iteration.
fn dlqr(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    for _ in 0..100_000 {
        let btp = b.transpose() * &p;
        let s = (r + &btp * b).try_inverse().ok_or_else(|| Error::Solver("singular Riccati iterate".into()))?;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &s * &btp * a;
        let diff = (&next - &p).amax();
        p = sym(&next);
        if diff <= 1e-13 * p.amax().max(1.0) {
            let btp = b.transpose() * &p;
            let s = (r + &btp * b).try_inverse().unwrap();
            return Ok(-(s * btp * a));
        }
    }
    Err(Error::Solver("Riccati iteration did not converge".into()))
}

/// Solve `HᵀPH - ρP = -Q` by vectorization.
fn dlyap(h: &DMatrix<f64>, rho: f64, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = h.nrows();
    let ht = h.transpose();
    let lhs = DMatrix::identity(d * d, d * d) * rho - ht.kronecker(&ht);
    let rhs = DVector::from_column_slice(q.as_slice());
    let sol =
        lhs.lu().solve(&rhs).ok_or_else(|| Error::InvalidParams("Lyapunov equation has no unique solution".into()))?;
    Ok(sym(&DMatrix::from_column_slice(d, d, sol.as_slice())))
}

/// Sample-and-hold bundle with horizon `generic(N=3, delta=T_s)`.
pub fn sample_hold(params: SampleHoldParams) -> Result<Bundle> {
    let (n, m) = (params.n(), params.m());
    let mut region = vec![Axis::Interval(-2.0, 2.0); n];
    region.extend(vec![Axis::Interval(-5.0, 5.0); m]);
    let mut jump_region = region.clone();
    region.push(Axis::Interval(0.0, params.t_s));
    jump_region.push(Axis::Interval(params.t_s, params.t_s));
    let p = params.clone();
    Ok(Bundle {
        name: "sample-hold".into(),
        plant: params.plant()?,
        cost: params.cost(),
        feedback: params.feedback(),
        target: params.target(),
        horizon: PredictionHorizon::generic(3, params.t_s)?,
        flow_input: Some(Vector::zeros(m)),
        jump_alphabet: None,
        region,
        jump_region,
        observables: vec![("V".into(), Arc::new(move |x: &Vector| p.terminal_cost(x)))],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_instance_is_certified() {
        let p = SampleHoldParams::double_integrator().unwrap();
        p.validate().unwrap();
        assert!(p.q_c[(0, 0)] > 0.0);
        assert!(p.c > 0.0);
    }

    #[test]
    fn closed_form_matches_discretization() {
        let p = SampleHoldParams::double_integrator().unwrap();
        let e = (p.a_f() * p.t_s).exp();
        // Double integrator: Ad = [[1, T], [0, 1]], Bd = [T²/2, T].
        let t = p.t_s;
        let expect = [1.0, t, t * t / 2.0, 0.0, 1.0, t, 0.0, 0.0, 1.0];
        for (i, v) in expect.iter().enumerate() {
            assert!((e[(i / 3, i % 3)] - v).abs() < 1e-14);
        }
    }

    #[test]
    fn unstable_gain_is_rejected() {
        let mut p = SampleHoldParams::double_integrator().unwrap();
        p.k = DMatrix::from_row_slice(1, 2, &[5.0, 5.0]);
        match p.validate() {
            Err(Error::InvalidParams(msg)) => assert!(msg.contains("eigenvalue")),
            other => panic!("expected invalid params, got {other:?}"),
        }
    }

    #[test]
    fn jump_decrease_is_quadratic_form() {
        let p = SampleHoldParams::double_integrator().unwrap();
        let plant = p.plant().unwrap();
        let fb = p.feedback();
        let x = Vector::from_row_slice(&[0.7, -0.3, 0.4, p.t_s]);
        let xp = plant.jump(&x, &fb.kappa_d(&x));
        let h = p.h();
        let x1 = Vector::from_row_slice(&[0.7, -0.3, 0.4]);
        let rho = (-p.sigma * p.t_s).exp();
        let form = (x1.transpose() * (h.transpose() * &p.p * &h - &p.p * rho) * &x1)[(0, 0)];
        let diff = p.terminal_cost(&xp) - p.terminal_cost(&x);
        assert!((diff - form).abs() < 1e-10 * (1.0 + form.abs()));
        assert!(diff < 0.0);
    }
}
