//! `hmpc`: simulate, optimize, run MPC on and verify the example plants.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hybrid_mpc::examples::{Bundle, NAMES};
use hybrid_mpc::mpc::{assert_descent, run, MpcConfig, StopReason};
use hybrid_mpc::ocp::OcpProblem;
use hybrid_mpc::verify::{
    check_clf, check_pd_conditions, check_prop5, check_stage_bounds, check_terminal_bound, fit_terminal_witness, Axis,
    BoundWitness, CheckReport, Prop5Data, Restriction, SampleCloud, SetContext,
};
use hybrid_mpc::{simulate, Error, InputPolicy, SimOptions, Termination, Vector};
use serde_json::{json, Value};

use config::{RunConfig, Settings, SimInput};
use output::{emit_summary, num, solution_summary, vector, write_csv};

#[derive(Parser)]
#[command(name = "hmpc", version, about = "Model predictive control for hybrid dynamical systems")]
struct Cli {
    /// Settings file with `[section] key = value` entries; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `--set bouncing_ball.theta=0.05`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the plant under zero, constant or feedback input.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// `zero`, `feedback` or a constant input such as `1.5`.
        #[arg(long)]
        input: Option<String>,
    },
    /// Solve one optimal control problem from `--x0`.
    Ocp {
        #[command(flatten)]
        common: Common,
    },
    /// Run the receding-horizon loop from `--x0`.
    Mpc {
        #[command(flatten)]
        common: Common,
        /// `next-jump` or `fixed(Nc=..,delta_c=..)`.
        #[arg(long)]
        control: Option<String>,
        /// `off`, `feasibility` or `descent`.
        #[arg(long = "assert")]
        assert_level: Option<String>,
        #[arg(long)]
        descent_tol: Option<f64>,
    },
    /// Sampled check of a stability condition.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "clf")]
        check: Check,
        #[arg(long)]
        samples: Option<usize>,
        /// Class-K witness `a,p` for `a·r^p`.
        #[arg(long)]
        witness: Option<String>,
        /// Radius used by the terminal, pd and prop5 checks.
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        /// Finite-difference step for gradients.
        #[arg(long, default_value_t = 1e-5)]
        fd_step: f64,
    },
    /// Print the available plants.
    ListPlants,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Check {
    Clf,
    Stage,
    Terminal,
    Pd,
    Prop5,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    plant: Option<String>,
    /// Initial state, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// `generic(N=..,delta=..)`, `band(mu=..)` or a threshold list.
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    tmax: Option<f64>,
    #[arg(long)]
    jmax: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trajectory CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary JSON path; stdout when omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
}

impl Common {
    fn apply(&self, s: &mut Settings) {
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                s.set(k, &v);
            }
        };
        put("run.plant", self.plant.clone());
        put("run.x0", self.x0.clone());
        put("run.horizon", self.horizon.clone());
        put("run.tmax", self.tmax.map(|v| v.to_string()));
        put("run.jmax", self.jmax.map(|v| v.to_string()));
        put("run.seed", self.seed.map(|v| v.to_string()));
        put("run.out", self.out.as_ref().map(|p| p.display().to_string()));
        put("run.summary", self.summary.as_ref().map(|p| p.display().to_string()));
    }
}

/// A failed run and its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Infeasible { .. }
            | Error::InfeasibleStart { .. }
            | Error::MpcInfeasibleStart { .. }
            | Error::FeasibilityLost { .. }
            | Error::DescentViolated { .. }
            | Error::TerminalConstraint { .. } => 1,
            Error::InvalidParams(_)
            | Error::Parse(_)
            | Error::Dimension { .. }
            | Error::GridTooLarge(..)
            | Error::InvalidDomain(_) => 2,
            _ => 3,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self { code: 3, message: format!("i/o error: {e}") }
    }
}

type Outcome = std::result::Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = std::env::var("HMPC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|n| *n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            if f.code == 2 {
                eprintln!(
                    "usage: hmpc <simulate|ocp|mpc|verify|list-plants> --plant NAME --x0 X [OPTIONS]; see hmpc --help"
                );
            }
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> Outcome {
    let mut s = match &cli.config {
        Some(p) => Settings::from_file(p)?,
        None => Settings::default(),
    };
    for pair in &cli.set {
        s.set_pair(pair)?;
    }
    match cli.command {
        Command::ListPlants => {
            for name in NAMES {
                println!("{name}");
            }
            Ok(0)
        }
        Command::Simulate { common, input } => {
            common.apply(&mut s);
            if let Some(i) = input {
                s.set("run.input", &i);
            }
            cmd_simulate(&RunConfig::resolve(&s, true)?)
        }
        Command::Ocp { common } => {
            common.apply(&mut s);
            cmd_ocp(&RunConfig::resolve(&s, true)?)
        }
        Command::Mpc { common, control, assert_level, descent_tol } => {
            common.apply(&mut s);
            if let Some(c) = control {
                s.set("run.control", &c);
            }
            if let Some(a) = assert_level {
                s.set("mpc.assert", &a);
            }
            if let Some(t) = descent_tol {
                s.set("mpc.descent_tol", &t.to_string());
            }
            let tol = s.get("mpc.descent_tol").and_then(|v| v.parse().ok()).unwrap_or(5e-4);
            cmd_mpc(&RunConfig::resolve(&s, true)?, tol)
        }
        Command::Verify { common, check, samples, witness, epsilon, fd_step } => {
            common.apply(&mut s);
            if let Some(n) = samples {
                s.set("verify.samples", &n.to_string());
            }
            let rc = RunConfig::resolve(&s, false)?;
            let witness = witness.map(|w| parse_witness(&w)).transpose()?;
            cmd_verify(&rc, check, witness, epsilon, fd_step)
        }
    }
}

fn parse_witness(s: &str) -> Result<BoundWitness, Failure> {
    let v = config::parse_vector(s)?;
    if v.len() != 2 {
        return Err(Error::Parse(format!("witness must be 'a,p', got '{s}'")).into());
    }
    Ok(BoundWitness::power(v[0], v[1])?)
}

fn header(rc: &RunConfig, command: &str) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), json!(command));
    m.insert("plant".into(), json!(rc.bundle.name));
    m.insert("x0".into(), vector(&rc.x0));
    m
}

fn cmd_simulate(rc: &RunConfig) -> Outcome {
    let b = &rc.bundle;
    let policy = match &rc.input {
        SimInput::Zero => InputPolicy::Constant(Vector::zeros(b.plant.input_dim())),
        SimInput::Feedback => InputPolicy::Feedback(b.feedback.clone()),
        SimInput::Constant(u) => {
            if u.len() != b.plant.input_dim() {
                return Err(Error::Dimension { expected: b.plant.input_dim(), got: u.len() }.into());
            }
            InputPolicy::Constant(u.clone())
        }
    };
    let opts = SimOptions::budget(rc.budget.t_max, rc.budget.j_max);
    let started = Instant::now();
    let sim = simulate(&b.plant, &rc.x0, &policy, &opts)?;
    let wall = started.elapsed().as_secs_f64();
    let mut m = header(rc, "simulate");
    m.extend(solution_summary(&sim.solution));
    m.insert("termination".into(), json!(sim.termination.to_string()));
    let zeno = match sim.termination {
        Termination::ZenoTruncated { accumulation_time } => json!({ "accumulation_time": num(accumulation_time) }),
        _ => Value::Null,
    };
    m.insert("zeno".into(), zeno);
    m.insert("cost".into(), b.cost.evaluate(&sim.solution).map(num).unwrap_or(Value::Null));
    m.insert("wall_time".into(), num(wall));
    if let Some(out) = &rc.out {
        let meta = [("command", "simulate".to_string()), ("termination", sim.termination.to_string())];
        write_csv(out, b, &sim.solution, &meta)?;
    }
    emit_summary(rc.summary.as_deref(), &Value::Object(m))?;
    Ok(0)
}

fn problem(rc: &RunConfig) -> OcpProblem {
    OcpProblem::from_bundle(&rc.bundle).with_horizon(rc.horizon.clone()).with_options(rc.ocp.clone())
}

fn cmd_ocp(rc: &RunConfig) -> Outcome {
    let started = Instant::now();
    let opt = problem(rc).solve(&rc.x0)?;
    let wall = started.elapsed().as_secs_f64();
    let mut m = header(rc, "ocp");
    m.extend(solution_summary(&opt.sol));
    m.insert("cost".into(), num(opt.cost));
    m.insert("residual".into(), num(opt.residuals.max()));
    m.insert("jump_count".into(), json!(opt.jump_count));
    m.insert("iterations".into(), json!(opt.iterations));
    m.insert("evaluations".into(), json!(opt.evaluations));
    m.insert("wall_time".into(), num(wall));
    if let Some(out) = &rc.out {
        let meta = [("command", "ocp".to_string()), ("cost", opt.cost.to_string())];
        write_csv(out, &rc.bundle, &opt.sol, &meta)?;
    }
    emit_summary(rc.summary.as_deref(), &Value::Object(m))?;
    Ok(0)
}

fn cmd_mpc(rc: &RunConfig, descent_tol: f64) -> Outcome {
    let cfg =
        MpcConfig::new(problem(rc)).with_control(rc.control).with_budget(rc.budget).with_assert_level(rc.assert_level);
    let started = Instant::now();
    let trace = run(&cfg, &rc.x0)?;
    let wall = started.elapsed().as_secs_f64();
    let descent = assert_descent(&trace, descent_tol);
    let mut m = header(rc, "mpc");
    m.extend(solution_summary(&trace.sol));
    let steps: Vec<Value> = trace
        .steps
        .iter()
        .map(|s| {
            json!({
                "t": num(s.time.t),
                "j": s.time.j,
                "value": num(s.value),
                "stage_cost": num(s.stage_cost),
                "residual": num(s.residuals.max()),
                "jump_count": s.jump_count,
                "iterations": s.iterations,
                "evaluations": s.evaluations,
                "wall_time": num(s.elapsed.as_secs_f64()),
            })
        })
        .collect();
    m.insert("optimizations".into(), json!(trace.steps.len()));
    m.insert("steps".into(), Value::Array(steps));
    m.insert("cost".into(), trace.steps.first().map(|s| num(s.value)).unwrap_or(Value::Null));
    let (stop, code) = match trace.stop {
        StopReason::Budget => (json!("budget"), 0),
        StopReason::Infeasible { step, residual } => {
            (json!({ "infeasible": { "step": step, "residual": num(residual) } }), 1)
        }
    };
    m.insert("stop".into(), stop);
    m.insert("descent".into(), json!({ "passed": descent.passed(), "report": descent.to_string() }));
    m.insert("wall_time".into(), num(wall));
    if let Some(out) = &rc.out {
        let times: Vec<String> = trace.optimization_times().iter().map(|h| format!("({}, {})", h.t, h.j)).collect();
        let meta = [("command", "mpc".to_string()), ("optimization_times", format!("[{}]", times.join(", ")))];
        write_csv(out, &rc.bundle, &trace.sol, &meta)?;
    }
    emit_summary(rc.summary.as_deref(), &Value::Object(m))?;
    Ok(code)
}

/// Input sampling axes: the fixed flow input or the jump alphabet when the
/// bundle has one, else the plant's input box.
fn input_axes(b: &Bundle, flow: bool) -> Result<Vec<Axis>, Failure> {
    if flow {
        if let Some(u) = &b.flow_input {
            return Ok(u.iter().map(|v| Axis::Interval(*v, *v)).collect());
        }
    } else if let Some(alphabet) = b.jump_alphabet.as_ref().filter(|_| b.plant.input_dim() == 1) {
        return Ok(vec![Axis::Levels(alphabet.iter().map(|u| u[0]).collect())]);
    }
    let (lo, hi) = b
        .plant
        .input_bounds()
        .ok_or_else(|| Error::InvalidParams(format!("plant '{}' has no input bounds to sample from", b.name)))?;
    Ok(lo.iter().zip(hi.iter()).map(|(l, h)| Axis::Interval(*l, *h)).collect())
}

fn cmd_verify(rc: &RunConfig, check: Check, witness: Option<BoundWitness>, epsilon: f64, fd_step: f64) -> Outcome {
    let b = &rc.bundle;
    let flow = SampleCloud::new(rc.seed, rc.samples, b.region.clone()).with_inputs(input_axes(b, true)?);
    let jump =
        SampleCloud::new(rc.seed.wrapping_add(1), rc.samples, b.jump_region.clone()).with_inputs(input_axes(b, false)?);
    let started = Instant::now();
    let mut m = header(rc, "verify");
    m.remove("x0");
    let report: CheckReport = match check {
        Check::Clf => check_clf(&b.plant, &b.cost, &b.feedback, &flow, &jump, fd_step)?,
        Check::Stage => {
            let w = witness.unwrap_or_else(BoundWitness::zero);
            m.insert("witness".into(), json!(w.name()));
            check_stage_bounds(&b.plant, &b.cost, &b.target, &w, &w, &flow, &jump)?
        }
        Check::Terminal => {
            let w = match witness {
                Some(w) => w,
                None => {
                    let fit = SampleCloud::new(rc.seed.wrapping_add(2), rc.samples, b.region.clone());
                    fit_terminal_witness(&b.cost, &b.target, 2.0, epsilon, &fit)?
                }
            };
            m.insert("witness".into(), json!(w.name()));
            check_terminal_bound(&b.cost, &b.target, &w, epsilon, &flow)?
        }
        Check::Pd => {
            let alpha = witness.unwrap_or(BoundWitness::power(0.1, 1.0)?);
            m.insert("witness".into(), json!(alpha.name()));
            let ctx = SetContext { plant: Some(&b.plant), cost: Some(&b.cost), feedback: Some(&b.feedback) };
            let starts = SampleCloud::new(rc.seed, rc.samples.min(50), b.region.clone())
                .restrict(Restriction::Terminal)
                .draw(&ctx)?;
            let opts = SimOptions::budget(rc.budget.t_max, rc.budget.j_max);
            let sols = starts
                .iter()
                .map(|(x, _)| {
                    simulate(&b.plant, x, &InputPolicy::Feedback(b.feedback.clone()), &opts).map(|s| s.solution)
                })
                .collect::<hybrid_mpc::Result<Vec<_>>>()?;
            let pd = check_pd_conditions(&b.plant, &b.target, &sols, &alpha, None)?;
            let any = |f: fn(&hybrid_mpc::verify::PdFlags) -> bool| pd.flags.iter().filter(|p| f(p)).count();
            m.insert(
                "pd_counts".into(),
                json!({
                    "solutions": pd.flags.len(),
                    "p1": any(|p| p.p1),
                    "p2": any(|p| p.p2),
                    "p3": any(|p| p.p3),
                    "p4": any(|p| p.p4),
                }),
            );
            m.insert("wall_time".into(), num(started.elapsed().as_secs_f64()));
            emit_summary(rc.summary.as_deref(), &Value::Object(m))?;
            return Ok(0);
        }
        Check::Prop5 => {
            let w = witness.ok_or_else(|| Error::Parse("prop5 needs --witness a,p for the velocity bound".into()))?;
            m.insert("witness".into(), json!(w.name()));
            let sigma = std::sync::Arc::new(move |r: f64| w.eval(r));
            let data = Prop5Data { sigma: Some(sigma), epsilon, fd_step, ..Prop5Data::default() };
            check_prop5(&b.plant, &b.target, &data, &flow, &jump)?
        }
    };
    m.insert("check".into(), json!(report.check));
    m.insert("samples".into(), json!(report.samples));
    m.insert("violations".into(), json!(report.violations.len()));
    m.insert("worst_margin".into(), num(report.worst_margin));
    m.insert("passed".into(), json!(report.passed()));
    m.insert("report".into(), json!(report.to_string()));
    m.insert("wall_time".into(), num(started.elapsed().as_secs_f64()));
    emit_summary(rc.summary.as_deref(), &Value::Object(m))?;
    Ok(if report.passed() { 0 } else { 1 })
}
