//! Acceptance suite. Every criterion runs in sequence inside one test, is
//! timed, and prints a single PASS/FAIL line.

use std::time::{Duration, Instant};

use hybrid_mpc::examples::{bouncing_ball, sample_hold, BouncingBallParams, Bundle, SampleHoldParams};
use hybrid_mpc::mpc::{assert_descent, run, MpcBudget, MpcConfig, MpcTrace};
use hybrid_mpc::ocp::{brute_force_value, GridSpec, OcpProblem};
use hybrid_mpc::verify::{check_clf, Restriction, SampleCloud, SetContext};
use hybrid_mpc::{
    simulate, HybridTime, HybridTimeDomain, InputPolicy, PredictionHorizon, SimOptions, SolutionPair, Vector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

fn v(x: &[f64]) -> Vector {
    Vector::from_row_slice(x)
}

fn ball() -> (BouncingBallParams, Bundle) {
    let p = BouncingBallParams::default();
    (p, bouncing_ball(p).unwrap())
}

fn ball_mpc(x0: &[f64]) -> std::result::Result<(MpcTrace, Duration), String> {
    let (_, b) = ball();
    let cfg =
        MpcConfig::new(OcpProblem::from_bundle(&b)).with_budget(MpcBudget { t_max: 10.0, j_max: 30, max_steps: 1000 });
    let start = Instant::now();
    let trace = run(&cfg, &v(x0)).map_err(|e| format!("MPC from {x0:?} failed: {e}"))?;
    Ok((trace, start.elapsed()))
}

/// Energy at every node after jump `from`, and the largest deviation from `c*` there.
fn energy_deviation_after(p: &BouncingBallParams, sol: &SolutionPair, from: usize) -> f64 {
    sol.arcs()[from..]
        .iter()
        .flat_map(|a| a.states.iter())
        .map(|x| (p.energy(x) - p.c_star()).abs())
        .fold(0.0, f64::max)
}

fn within(elapsed: Duration, limit_s: f64) -> Check {
    if elapsed.as_secs_f64() < limit_s {
        Ok(format!("{:.1} s < {limit_s} s", elapsed.as_secs_f64()))
    } else {
        Err(format!("runtime {:.1} s exceeds {limit_s} s", elapsed.as_secs_f64()))
    }
}

fn criterion_1(trace: &MpcTrace, elapsed: Duration) -> Check {
    let (p, _) = ball();
    let sol = &trace.sol;
    if sol.jump_count() == 0 || sol.arcs()[0].duration() > 1e-12 {
        return Err("no jump at (0, 0)".into());
    }
    let (_, post, u) = sol.jump(0).unwrap();
    let w0 = p.energy(post);
    if (w0 - p.c_star()).abs() > 1e-4 {
        return Err(format!("post-jump W = {w0:.6}, c* = {:.6}", p.c_star()));
    }
    let dev = energy_deviation_after(&p, sol, 1);
    if dev > 1e-4 {
        return Err(format!("W deviates from c* by {dev:.3e} after the first jump"));
    }
    let end = sol.terminal_time();
    if end.t < 10.0 - 1e-9 && end.j < 30 {
        return Err(format!("run stopped early at {end}"));
    }
    let t = within(elapsed, 60.0)?;
    Ok(format!("u* = {:.6}, |W - c*| <= {dev:.2e} over {} jumps to {end}, {t}", u[0], sol.jump_count()))
}

fn criterion_2(trace: &MpcTrace, elapsed: Duration) -> Check {
    let (p, _) = ball();
    let sol = &trace.sol;
    if sol.jump_count() == 0 {
        return Err("no jump".into());
    }
    let t1 = sol.arcs()[0].end();
    if (t1 - 0.361).abs() > 0.01 {
        return Err(format!("first jump at t1 = {t1:.5}"));
    }
    let dev = energy_deviation_after(&p, sol, 1);
    if dev > 1e-4 {
        return Err(format!("W deviates from c* by {dev:.3e} after the first jump"));
    }
    let t = within(elapsed, 60.0)?;
    Ok(format!("t1 = {t1:.5}, |W - c*| <= {dev:.2e} afterwards, {t}"))
}

fn criterion_3(trace: &MpcTrace, elapsed: Duration) -> Check {
    let (p, _) = ball();
    let sol = &trace.sol;
    let c = p.c_star();
    let mut levels = vec![p.energy(sol.initial_state())];
    for j in 0..sol.jump_count() {
        levels.push(p.energy(sol.jump(j).unwrap().1));
    }
    for w in levels.windows(2) {
        if w[0] - c > 1e-3 && !(w[1] < w[0]) {
            return Err(format!("W rose from {:.6} to {:.6} before reaching c*", w[0], w[1]));
        }
    }
    let last = *levels.last().unwrap();
    if (last - c).abs() > 1e-3 {
        return Err(format!("final W = {last:.6} not within 1e-3 of c*"));
    }
    let lowest = sol.arcs().iter().flat_map(|a| a.states.iter()).map(|x| p.energy(x)).fold(f64::INFINITY, f64::min);
    if lowest < c - 1e-3 {
        return Err(format!("W undershoots c* (lowest {lowest:.6})"));
    }
    let t = within(elapsed, 120.0)?;
    let shown: Vec<String> = levels.iter().take(4).map(|w| format!("{w:.4}")).collect();
    Ok(format!("W at jumps {} ..., {t}", shown.join(" -> ")))
}

fn criterion_4(runs: &[&MpcTrace]) -> Check {
    let mut total = 0;
    for (i, tr) in runs.iter().enumerate() {
        if tr.steps.len() < 5 {
            return Err(format!("run {} has only {} re-optimizations", i + 1, tr.steps.len()));
        }
        if let Some(s) = tr.steps.iter().find(|s| s.residuals.max() > 1e-6) {
            return Err(format!("run {} infeasible step at {}: {}", i + 1, s.time, s.residuals));
        }
        total += tr.steps.len();
    }
    Ok(format!("{total} optimizations across {} runs, all feasible", runs.len()))
}

fn criterion_5(runs: &[&MpcTrace]) -> Check {
    let mut checked = 0;
    for (i, tr) in runs.iter().enumerate() {
        let report = assert_descent(tr, 5e-4);
        if !report.passed() {
            return Err(format!("run {}: {report}", i + 1));
        }
        checked += report.checked;
    }
    Ok(format!("{checked} consecutive pairs satisfy the descent bound"))
}

fn criterion_6() -> Check {
    let (p, b) = ball();
    let ctx = SetContext { plant: Some(&b.plant), cost: Some(&b.cost), feedback: None };
    let cloud = SampleCloud::new(6, 400, b.region.clone()).restrict(Restriction::Terminal);
    let samples = cloud.draw(&ctx).map_err(|e| e.to_string())?;
    let x0s: Vec<Vector> = samples.into_iter().map(|(x, _)| x).filter(|x| p.distance(x) <= 2.0).take(20).collect();
    if x0s.len() < 20 {
        return Err(format!("only {} samples with |x0|_A <= 2", x0s.len()));
    }
    let problem = OcpProblem::from_bundle(&b);
    let mut worst = f64::NEG_INFINITY;
    for x0 in &x0s {
        let j = problem.value(x0).map_err(|e| format!("J* at {:?}: {e}", x0.as_slice()))?;
        let bound = p.terminal_cost(x0);
        if j > bound + 1e-4 {
            return Err(format!("J*({:?}) = {j:.6} > V = {bound:.6}", x0.as_slice()));
        }
        worst = worst.max(j - bound);
    }
    Ok(format!("20 samples, max J* - V = {worst:.3e}"))
}

fn criterion_7() -> Check {
    let mut parts = Vec::new();
    let (_, b) = ball();
    let sh =
        sample_hold(SampleHoldParams::double_integrator().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    for (bundle, seed) in [(&b, 71u64), (&sh, 72u64)] {
        let flow = SampleCloud::new(seed, 10_000, bundle.region.clone());
        let jump = SampleCloud::new(seed + 100, 10_000, bundle.jump_region.clone());
        let report =
            check_clf(&bundle.plant, &bundle.cost, &bundle.feedback, &flow, &jump, 1e-5).map_err(|e| e.to_string())?;
        if !report.passed() {
            return Err(format!("{}: {report}", bundle.name));
        }
        parts.push(format!("{} {} samples", bundle.name, report.samples));
    }
    Ok(format!("zero violations ({})", parts.join(", ")))
}

struct Instance {
    bundle: Bundle,
    horizon: PredictionHorizon,
    x0: Vector,
    grid: GridSpec,
}

fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

fn corpus() -> Vec<Instance> {
    let (_, b) = ball();
    let sh = sample_hold(SampleHoldParams::double_integrator().unwrap()).unwrap();
    let mut out = Vec::new();
    let fine = GridSpec { inputs: vec![axis(0.0, 15.0, 0.05)], time_points: 51, duration_points: 1 };
    for x0 in [[1.0, -1.0], [0.0, 0.0], [0.5, 2.0], [2.0, 0.0], [0.0, -3.0]] {
        out.push(Instance {
            bundle: b.clone(),
            horizon: PredictionHorizon::generic(1, 1.0).unwrap(),
            x0: v(&x0),
            grid: fine.clone(),
        });
    }
    let coarse = GridSpec { inputs: vec![axis(0.0, 15.0, 0.25)], time_points: 21, duration_points: 1 };
    for x0 in [[0.2, -1.0], [0.0, 0.0], [1.0, -1.0], [0.05, 0.5], [3.0, 4.0]] {
        out.push(Instance {
            bundle: b.clone(),
            horizon: PredictionHorizon::generic(2, 0.5).unwrap(),
            x0: v(&x0),
            grid: coarse.clone(),
        });
    }
    let held = GridSpec { inputs: vec![axis(-10.0, 10.0, 0.2)], time_points: 11, duration_points: 1 };
    for x0 in [
        [1.0, 0.0, 0.0, 0.0],
        [0.5, -0.5, 0.2, 0.1],
        [-1.0, 1.0, 0.0, 0.15],
        [0.3, 0.3, -1.0, 0.0],
        [0.0, 1.0, 0.5, 0.05],
    ] {
        out.push(Instance {
            bundle: sh.clone(),
            horizon: PredictionHorizon::generic(2, 0.2).unwrap(),
            x0: v(&x0),
            grid: held.clone(),
        });
    }
    out
}

fn criterion_8() -> Check {
    let start = Instant::now();
    let mut worst = f64::NEG_INFINITY;
    let corpus = corpus();
    for (i, inst) in corpus.iter().enumerate() {
        let problem = OcpProblem::from_bundle(&inst.bundle).with_horizon(inst.horizon.clone());
        let oracle = brute_force_value(&problem, &inst.x0, &inst.grid)
            .map_err(|e| format!("instance {i}: oracle failed: {e}"))?;
        let solved = problem.value(&inst.x0).map_err(|e| format!("instance {i}: solve failed: {e}"))?;
        if solved > oracle + 1e-4 {
            return Err(format!(
                "instance {i} ({} from {:?}): solve {solved:.6} > oracle {oracle:.6}",
                inst.bundle.name,
                inst.x0.as_slice()
            ));
        }
        worst = worst.max(solved - oracle);
    }
    let t = within(start.elapsed(), 300.0)?;
    Ok(format!("{} instances, max solve - oracle = {worst:.3e}, {t}", corpus.len()))
}

fn criterion_9() -> Check {
    let (p, b) = ball();
    let numeric = b.plant.clone().without_closed_form();
    let zero = InputPolicy::Constant(v(&[0.0]));
    let opts = SimOptions { t_max: 5.0, j_max: 20, ..SimOptions::default() };

    let mut drift: f64 = 0.0;
    let mut segments = 0;
    for x0 in [[3.0, 0.0], [1.0, 4.0], [4.5, -2.0]] {
        let sim = simulate(&numeric, &v(&x0), &zero, &opts).map_err(|e| e.to_string())?;
        for arc in sim.solution.arcs() {
            let w0 = p.energy(arc.first_state());
            for x in &arc.states {
                drift = drift.max((p.energy(x) - w0).abs());
            }
            segments += 1;
        }
    }
    if drift > 1e-8 {
        return Err(format!("energy drift {drift:.3e} during flow"));
    }

    let mut gap: f64 = 0.0;
    let one_jump = SimOptions { t_max: 10.0, j_max: 1, ..SimOptions::default() };
    for i in 0..10 {
        for k in 0..10 {
            let x0 = v(&[0.5 + 0.5 * i as f64, -10.0 + 20.0 * k as f64 / 9.0]);
            let sim = simulate(&numeric, &x0, &zero, &one_jump).map_err(|e| e.to_string())?;
            if sim.solution.jump_count() != 1 {
                return Err(format!("no impact from {:?}", x0.as_slice()));
            }
            gap = gap.max((sim.solution.arcs()[0].end() - p.time_to_impact(&x0)).abs());
        }
    }
    if gap > 1e-8 {
        return Err(format!("impact times differ by {gap:.3e} s"));
    }

    let x0 = v(&[1.0, -1.0]);
    let a = simulate(&b.plant, &x0, &InputPolicy::Feedback(b.feedback.clone()), &opts).map_err(|e| e.to_string())?;
    let c = simulate(&b.plant, &x0, &InputPolicy::Feedback(b.feedback.clone()), &opts).map_err(|e| e.to_string())?;
    let problem = OcpProblem::from_bundle(&b);
    let s1 = problem.solve(&x0).map_err(|e| e.to_string())?;
    let s2 = problem.solve(&x0).map_err(|e| e.to_string())?;
    if a.solution != c.solution || s1.sol != s2.sol || s1.cost.to_bits() != s2.cost.to_bits() {
        return Err("reruns differ".into());
    }
    Ok(format!(
        "drift {drift:.1e} over {segments} segments, impact gap {gap:.1e} s over 100 points, reruns bit-identical"
    ))
}

fn criterion_10() -> Check {
    let p = SampleHoldParams::double_integrator().map_err(|e| e.to_string())?;
    let b = sample_hold(p.clone()).map_err(|e| e.to_string())?;
    let t_end = 20.0 * p.t_s;
    let cfg = MpcConfig::new(OcpProblem::from_bundle(&b)).with_budget(MpcBudget {
        t_max: t_end,
        j_max: 1000,
        max_steps: 1000,
    });
    let start = Instant::now();
    let trace = run(&cfg, &v(&[1.0, 0.0, 0.0, 0.0])).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let end = trace.sol.terminal_time();
    if end.t < t_end - 1e-9 {
        return Err(format!("run stopped at {end}"));
    }
    let xe = trace.sol.state_at(HybridTime::new(t_end, end.j)).map_err(|e| e.to_string())?;
    let z = xe.rows(0, 2).norm();
    if z > 1e-2 {
        return Err(format!("|z({t_end})| = {z:.3e}"));
    }
    let mut rise = f64::NEG_INFINITY;
    for j in 0..trace.sol.jump_count() {
        let (pre, post, _) = trace.sol.jump(j).unwrap();
        rise = rise.max(p.terminal_cost(post) - p.terminal_cost(pre));
    }
    if rise > 1e-6 {
        return Err(format!("V rises by {rise:.3e} at a jump"));
    }
    let t = within(elapsed, 120.0)?;
    Ok(format!("|z({t_end})| = {z:.2e}, max V jump change {rise:.2e} over {} jumps, {t}", trace.sol.jump_count()))
}

fn random_pair(rng: &mut ChaCha8Rng) -> (PredictionHorizon, HybridTimeDomain) {
    let big_j = rng.gen_range(0..=6usize);
    let mut th: Vec<f64> = (0..=big_j).map(|_| rng.gen_range(0.0..5.0)).collect();
    th.sort_by(|a, b| b.total_cmp(a));
    th[0] = th[0].max(1e-3);
    if rng.gen_bool(0.2) {
        let k = rng.gen_range(0..th.len());
        th[k] = th[k.saturating_sub(1)];
    }
    th.push(0.0);
    let horizon = PredictionHorizon::new(th).unwrap();
    let bound = horizon.thresholds()[0] + big_j as f64;
    let jumps = rng.gen_range(0..=12usize);
    let mut times = vec![0.0];
    for _ in 0..jumps {
        let dwell = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..2.0) };
        times.push(times.last().unwrap() + dwell);
    }
    let dwell = rng.gen_range(0.0..3.0);
    let mut end = times.last().unwrap() + dwell;
    if end + jumps as f64 <= bound {
        end = bound - jumps as f64 + rng.gen_range(1e-6..1.0);
    }
    times.push(end.max(*times.last().unwrap()));
    (horizon, HybridTimeDomain::new(times).unwrap())
}

fn criterion_11() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut tested = 0;
    while tested < 10_000 {
        let (h, dom) = random_pair(&mut rng);
        let end = dom.terminal();
        if end.t + end.j as f64 <= h.thresholds()[0] + h.max_jumps() as f64 {
            continue;
        }
        tested += 1;
        match h.reached(&dom) {
            Some(ht) if h.contains(ht) && dom.contains(ht) => {}
            other => return Err(format!("{h:?} and {:?} give {other:?}", dom.jump_times())),
        }
    }
    Ok(format!("{tested} pairs intersect the horizon"))
}

#[test]
fn acceptance_criteria() {
    let mut lines: Vec<(usize, &str, Check, Duration)> = Vec::new();
    let mut record = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let out = f();
        let elapsed = start.elapsed();
        let status = if out.is_ok() { "PASS" } else { "FAIL" };
        let detail = match &out {
            Ok(s) | Err(s) => s.clone(),
        };
        println!("[{status}] criterion {id:>2} {name} ({:.1} s): {detail}", elapsed.as_secs_f64());
        lines.push((id, name, out, elapsed));
    };

    let run1 = ball_mpc(&[0.0, 0.0]);
    let run2 = ball_mpc(&[1.0, -1.0]);
    let run3 = ball_mpc(&[3.0, 4.0]);
    record(1, "ball MPC from (0,0)", &mut || {
        run1.as_ref().map_err(|e| e.clone()).and_then(|(t, d)| criterion_1(t, *d))
    });
    record(2, "ball MPC from (1,-1)", &mut || {
        run2.as_ref().map_err(|e| e.clone()).and_then(|(t, d)| criterion_2(t, *d))
    });
    record(3, "ball MPC from (3,4)", &mut || {
        run3.as_ref().map_err(|e| e.clone()).and_then(|(t, d)| criterion_3(t, *d))
    });
    let runs: std::result::Result<Vec<&MpcTrace>, String> =
        [&run1, &run2, &run3].iter().map(|r| r.as_ref().map(|(t, _)| t).map_err(|e| e.clone())).collect();
    record(4, "recursive feasibility", &mut || runs.clone().and_then(|r| criterion_4(&r)));
    record(5, "value descent", &mut || runs.clone().and_then(|r| criterion_5(&r)));
    record(6, "value bound J* <= V", &mut criterion_6);
    record(7, "CLF inequalities", &mut criterion_7);
    record(8, "brute-force oracle corpus", &mut criterion_8);
    record(9, "simulator physics", &mut criterion_9);
    record(10, "sample-and-hold MPC", &mut criterion_10);
    record(11, "horizon reachability", &mut criterion_11);

    let failed: Vec<String> =
        lines.iter().filter(|(_, _, out, _)| out.is_err()).map(|(id, name, _, _)| format!("{id} ({name})")).collect();
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
