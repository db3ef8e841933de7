//! Optimal control and receding-horizon behavior on the example plants.

use hybrid_mpc::examples::{bouncing_ball, thermostat, BouncingBallParams, ThermostatParams};
use hybrid_mpc::horizon::PredictionHorizon;
use hybrid_mpc::mpc::{assert_descent, run, MpcBudget, MpcConfig};
use hybrid_mpc::ocp::{brute_force_value, GridSpec, OcpProblem};
use hybrid_mpc::{simulate, validate_solution, Error, HybridTime, InputPolicy, SimOptions, Vector};

fn ball() -> (BouncingBallParams, hybrid_mpc::examples::Bundle) {
    let p = BouncingBallParams::default();
    (p, bouncing_ball(p).unwrap())
}

fn v(xs: &[f64]) -> Vector {
    Vector::from_row_slice(xs)
}

#[test]
fn value_vanishes_on_the_target() {
    let (p, b) = ball();
    let problem = OcpProblem::from_bundle(&b);
    let s = 4.0;
    for x0 in [v(&[3.0, 0.0]), v(&[(p.c_star() - s * s / 2.0) / p.gamma, s])] {
        assert!(p.distance(&x0) < 1e-12);
        let value = problem.value(&x0).unwrap();
        assert!(value.abs() <= 1e-6, "J*({:?}) = {value}", x0.as_slice());
    }
}

#[test]
fn optimal_pair_is_a_solution_ending_on_the_horizon() {
    let (_, b) = ball();
    let problem = OcpProblem::from_bundle(&b).with_horizon(PredictionHorizon::generic(2, 0.5).unwrap());
    for x0 in [v(&[1.0, -1.0]), v(&[0.0, 0.0]), v(&[3.0, 4.0])] {
        let opt = problem.solve(&x0).unwrap();
        let dom = opt.sol.domain();
        assert_eq!(problem.horizon.reached(&dom), Some(opt.sol.terminal_time()));
        let report = validate_solution(&b.plant, &opt.sol, 1e-6);
        assert!(report.is_valid(), "{:?}", report.violations.first());
        let recomputed = b.cost.evaluate(&opt.sol).unwrap();
        assert!((recomputed - opt.cost).abs() <= 1e-6 * (1.0 + opt.cost));
    }
}

#[test]
fn brute_force_single_candidate_is_its_cost() {
    let (p, b) = ball();
    let problem = OcpProblem::from_bundle(&b).with_horizon(PredictionHorizon::generic(1, 1.0).unwrap());
    let x0 = v(&[1.0, -1.0]);
    let u = 12.0;
    let grid = GridSpec { inputs: vec![vec![u]], time_points: 1, duration_points: 1 };
    let got = brute_force_value(&problem, &x0, &grid).unwrap();

    // Flowing for 1 s without a jump is impossible from this state, so the only
    // candidate is the impact at t₁ with input u followed by a flight to t = 1.
    let t1 = (-1.0 + (1.0 + 2.0 * p.gamma).sqrt()) / p.gamma;
    let pre = p.ballistic(&x0, t1);
    let post = v(&[0.0, -p.lambda * pre[1] + u]);
    let end = p.ballistic(&post, 1.0 - t1);
    let expected = p.flow_cost(&x0) * t1 + p.jump_cost(&pre) + p.flow_cost(&post) * (1.0 - t1) + p.terminal_cost(&end);
    assert!((got - expected).abs() <= 1e-6 * expected, "{got} vs {expected}");
}

#[test]
fn brute_force_without_feasible_candidate_is_infeasible() {
    let (_, b) = ball();
    let problem = OcpProblem::from_bundle(&b).with_horizon(PredictionHorizon::generic(1, 0.1).unwrap());
    // At rest on the ground with zero input the ball keeps jumping in place,
    // so it never flows for 0.1 s.
    let grid = GridSpec { inputs: vec![vec![0.0]], time_points: 1, duration_points: 1 };
    match brute_force_value(&problem, &v(&[0.0, 0.0]), &grid) {
        Err(Error::Infeasible { .. }) => {}
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn brute_force_rejects_oversized_grids() {
    let (_, b) = ball();
    let problem = OcpProblem::from_bundle(&b).with_horizon(PredictionHorizon::generic(1, 1.0).unwrap());
    let grid = GridSpec { inputs: vec![vec![0.0; 600]], time_points: 3, duration_points: 1 };
    assert!(matches!(brute_force_value(&problem, &v(&[1.0, 0.0]), &grid), Err(Error::GridTooLarge(_))));
}

/// Re-solving from states along an optimal pair stays feasible, and the value
/// drops by at least the cost already incurred.
#[test]
fn resolving_along_an_optimal_pair_is_feasible_and_descends() {
    let (_, b) = ball();
    let problem = OcpProblem::from_bundle(&b);
    for x0 in [v(&[1.0, -1.0]), v(&[3.0, 4.0])] {
        let opt = problem.solve(&x0).unwrap();
        let dom = opt.sol.domain();
        let end = opt.sol.terminal_time();
        let samples = [0.15, 0.3, 0.5, 0.7, 0.9].map(|f| {
            let target = f * end.scalar();
            let j = (0..=end.j).rev().find(|&j| dom.interval(j).unwrap().0 + j as f64 <= target).unwrap();
            let (s0, s1) = dom.interval(j).unwrap();
            HybridTime::new((target - j as f64).clamp(s0, s1), j)
        });
        for ht in samples {
            let x = opt.sol.state_at(ht).unwrap();
            let again = problem.solve(&x).unwrap_or_else(|e| panic!("re-solve at {ht} failed: {e}"));
            let spent = b.cost.running_cost_up_to(&opt.sol, ht).unwrap();
            assert!(again.cost <= opt.cost - spent + 5e-4, "at {ht}: {} > {} - {spent}", again.cost, opt.cost);
        }
    }
}

#[test]
fn mpc_trace_replays_the_stored_predictions() {
    let (_, b) = ball();
    let cfg =
        MpcConfig::new(OcpProblem::from_bundle(&b)).with_budget(MpcBudget { t_max: 5.0, j_max: 10, max_steps: 100 });
    let trace = run(&cfg, &v(&[3.0, 4.0])).unwrap();
    let times = trace.optimization_times();
    assert_eq!(times[0], HybridTime::zero());
    assert!(times.windows(2).all(|w| w[1].scalar() > w[0].scalar()));
    assert!(assert_descent(&trace, f64::INFINITY).passed());

    let nodes = trace.sol.nodes();
    let mut checked = 0;
    for (ht, x, _) in &nodes {
        let ht = *ht;
        let i = times.iter().rposition(|s| s.scalar() <= ht.scalar() && s.le_componentwise(&ht)).unwrap();
        let start = times[i];
        let local = HybridTime::new(ht.t - start.t, ht.j - start.j);
        let Ok(predicted) = trace.steps[i].prediction.state_at(local) else {
            // The node closing segment i is the opening node of segment i + 1.
            continue;
        };
        assert!((&predicted - *x).amax() <= 1e-9 * (1.0 + x.amax()), "{ht}: {predicted} vs {x}");
        checked += 1;
    }
    assert!(checked + times.len() >= nodes.len(), "{checked} of {} nodes replayed", nodes.len());
}

/// Runs from a grid of states near the target stay close to it and converge.
#[test]
fn runs_near_the_target_stay_near_and_converge() {
    let (p, b) = ball();
    let cfg = MpcConfig::new(OcpProblem::from_bundle(&b));
    let mut starts = Vec::new();
    for s in [-6.0, -3.0, 0.0, 3.0, 6.0] {
        let on = v(&[(p.c_star() - s * s / 2.0) / p.gamma, s]);
        for (r, phi) in [(0.1, 0.0), (0.25, 1.5), (0.4, 3.0), (0.5, 4.5)] {
            let x = on.clone() + v(&[r * f64::cos(phi), r * f64::sin(phi)]);
            if x[0] >= 0.0 {
                starts.push(x);
            }
        }
    }
    assert_eq!(starts.len(), 20);
    for x0 in starts {
        let d0 = p.distance(&x0);
        assert!(d0 <= 0.5 + 1e-9);
        let trace = run(&cfg, &x0).unwrap();
        let dists: Vec<f64> = trace.sol.nodes().iter().map(|(_, x, _)| p.distance(x)).collect();
        let worst = dists.iter().cloned().fold(0.0, f64::max);
        assert!(worst <= 3.0 * d0 + 0.05, "x0 = {:?}: max distance {worst} for |x0| = {d0}", x0.as_slice());
        let last = *dists.last().unwrap();
        assert!(last <= 1e-3, "x0 = {:?}: final distance {last}", x0.as_slice());
    }
}

#[test]
fn thermostat_optimum_is_no_worse_than_the_feedback() {
    let b = thermostat(ThermostatParams::default()).unwrap();
    let problem = OcpProblem::from_bundle(&b);
    let x0 = v(&[1.0, 21.0]);
    let opt = problem.solve(&x0).unwrap();
    assert_eq!(problem.horizon.reached(&opt.sol.domain()), Some(opt.sol.terminal_time()));
    let seed = problem.feedback_seed(&x0).expect("feedback reaches the horizon");
    let seed_cost = b.cost.evaluate(&seed).unwrap();
    assert!(opt.cost <= seed_cost + 1e-6, "{} > {seed_cost}", opt.cost);

    let sim = simulate(&b.plant, &x0, &InputPolicy::Feedback(b.feedback.clone()), &SimOptions::budget(1.0, 4)).unwrap();
    assert!(validate_solution(&b.plant, &sim.solution, 1e-6).is_valid());
}
