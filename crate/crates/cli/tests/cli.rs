use std::path::Path;
use std::process::{Command, Output};

use hybrid_mpc::examples::by_name;
use hybrid_mpc::Vector;
use serde_json::Value;

fn hmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmpc")).args(args).output().expect("failed to start hmpc")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn summary(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("summary is JSON")
}

/// Header and numeric rows of a trajectory CSV, skipping `#` lines.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(|v| v.parse::<f64>().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn list_plants_prints_every_example() {
    let out = hmpc(&["list-plants"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().collect::<Vec<_>>(), ["bouncing-ball", "sample-hold", "thermostat"]);
}

#[test]
fn missing_x0_is_a_config_error_with_usage() {
    let out = hmpc(&["mpc", "--plant", "bouncing-ball"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("missing --x0") && err.contains("usage"), "{err}");
}

#[test]
fn config_errors_exit_with_two() {
    let cases: [&[&str]; 6] = [
        &["simulate", "--plant", "pendulum", "--x0", "0,0"],
        &["simulate", "--plant", "bouncing-ball", "--x0", "0,0,0"],
        &["ocp", "--plant", "bouncing-ball", "--x0", "0,0", "--horizon", "generic(N=2)"],
        &["mpc", "--plant", "bouncing-ball", "--x0", "0,0", "--control", "sometimes"],
        &["simulate", "--plant", "bouncing-ball", "--x0", "0,0", "--set", "bouncing_ball.theta=0.5"],
        &["simulate", "--plant", "bouncing-ball", "--x0", "0,0", "--set", "run.colour=red"],
    ];
    for args in cases {
        assert_eq!(code(&hmpc(args)), 2, "{args:?}");
    }
    assert_eq!(code(&hmpc(&["frobnicate"])), 2);
}

#[test]
fn infeasible_problems_exit_with_one() {
    let out = hmpc(&["ocp", "--plant", "sample-hold", "--x0", "100,0,0,0", "--horizon", "generic(N=1,delta=0.2)"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8(out.stderr).unwrap().contains("no feasible solution"));
}

#[test]
fn autonomous_ball_is_reported_zeno() {
    let out = hmpc(&[
        "simulate",
        "--plant",
        "bouncing-ball",
        "--x0",
        "1,-1",
        "--input",
        "zero",
        "--tmax",
        "5",
        "--jmax",
        "50",
    ]);
    assert_eq!(code(&out), 0);
    let s = summary(&out);
    assert!(s["termination"].as_str().unwrap().starts_with("Zeno-truncated"), "{s}");
    // First impact from height 1 with speed -1, then flights of 2λ^k|v₁|/γ.
    let (g, lam) = (9.81f64, 0.9f64);
    let t1 = (-1.0 + (1.0 + 2.0 * g).sqrt()) / g;
    let v1 = 1.0 + g * t1;
    let expected = t1 + 2.0 * lam * v1 / g / (1.0 - lam);
    let got = s["zeno"]["accumulation_time"].as_f64().unwrap();
    assert!((got - expected).abs() < 1e-3 * expected, "{got} vs {expected}");
}

#[test]
fn mpc_ball_from_rest_reaches_target_energy_after_first_jump() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("run1.csv");
    let out = hmpc(&[
        "mpc",
        "--plant",
        "bouncing-ball",
        "--x0",
        "0,0",
        "--horizon",
        "generic(N=5,delta=0.5)",
        "--tmax",
        "10",
        "--jmax",
        "30",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    assert_eq!(s["descent"]["passed"], Value::Bool(true));
    assert!(s["optimizations"].as_u64().unwrap() >= 5);

    let (header, rows) = read_csv(&csv);
    assert_eq!(header, ["t", "j", "x_0", "x_1", "u_0", "W"]);
    let c_star = 9.81 * 3.0;
    let after: Vec<&Vec<f64>> = rows.iter().filter(|r| r[1] >= 1.0).collect();
    assert!(!after.is_empty());
    for r in after {
        assert!((r[5] - c_star).abs() < 1e-4, "W = {} at t = {}", r[5], r[0]);
    }
}

#[test]
fn identical_config_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let ini = dir.path().join("run.ini");
    std::fs::write(
        &ini,
        "[run]\nplant = bouncing-ball\nx0 = 3,4\nhorizon = generic(N=2,delta=0.5)\ntmax = 4\njmax = 4\nseed = 7\n",
    )
    .unwrap();
    let run = |name: &str, threads: &str| {
        let path = dir.path().join(name);
        let out = Command::new(env!("CARGO_BIN_EXE_hmpc"))
            .env("HMPC_THREADS", threads)
            .args(["mpc", "--config", ini.to_str().unwrap(), "--out", path.to_str().unwrap()])
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(path).unwrap()
    };
    let a = run("a.csv", "1");
    assert_eq!(a, run("b.csv", "1"));
    assert_eq!(a, run("c.csv", "4"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let ini = dir.path().join("run.ini");
    std::fs::write(&ini, "plant = bouncing-ball\nx0 = 1,-1\n[run]\ntmax = 1\n").unwrap();
    let cfg = ini.to_str().unwrap();
    let s = summary(&hmpc(&["simulate", "--config", cfg, "--input", "zero"]));
    assert_eq!(s["x0"], serde_json::json!([1.0, -1.0]));
    let s = summary(&hmpc(&["simulate", "--config", cfg, "--x0", "2,0", "--input", "zero"]));
    assert_eq!(s["x0"], serde_json::json!([2.0, 0.0]));
    assert_eq!(s["terminal_time"]["t"], serde_json::json!(1.0));
    let s = summary(&hmpc(&["simulate", "--config", cfg, "--set", "run.tmax=0.5", "--input", "zero"]));
    assert_eq!(s["terminal_time"]["t"], serde_json::json!(0.5));
}

/// Every CSV row is a state in the projection of `C ∪ D` onto the state space.
#[test]
fn csv_rows_lie_in_flow_or_jump_set() {
    let dir = tempfile::tempdir().unwrap();
    let runs: [(&str, &str, &str); 4] = [
        ("bouncing-ball", "1,-1", "zero"),
        ("bouncing-ball", "3,4", "feedback"),
        ("sample-hold", "1,-0.5,0,0", "feedback"),
        ("thermostat", "1,20", "feedback"),
    ];
    for (k, (plant, x0, input)) in runs.into_iter().enumerate() {
        let path = dir.path().join(format!("{k}.csv"));
        let out = hmpc(&[
            "simulate",
            "--plant",
            plant,
            "--x0",
            x0,
            "--input",
            input,
            "--tmax",
            "3",
            "--jmax",
            "40",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{plant}: {}", String::from_utf8_lossy(&out.stderr));
        let b = by_name(plant).unwrap();
        let (n, m) = (b.plant.state_dim(), b.plant.input_dim());
        let (lo, hi) = b.plant.input_bounds().cloned().unwrap();
        let (_, rows) = read_csv(&path);
        assert!(rows.len() > 2);
        for r in &rows {
            let x = Vector::from_row_slice(&r[2..2 + n]);
            let u = Vector::from_row_slice(&r[2 + n..2 + n + m]);
            let mut candidates = vec![u, lo.clone(), hi.clone()];
            candidates.extend(b.jump_alphabet.clone().unwrap_or_default());
            let inside =
                candidates.iter().any(|u| b.plant.in_flow_set(&x, u, 1e-9) || b.plant.in_jump_set(&x, u, 1e-9));
            assert!(inside, "{plant}: row {r:?} outside C ∪ D");
        }
    }
}

#[test]
fn verify_reports_and_exit_codes() {
    let out = hmpc(&["verify", "--plant", "bouncing-ball", "--check", "clf", "--samples", "500", "--seed", "3"]);
    assert_eq!(code(&out), 0);
    let s = summary(&out);
    assert_eq!(s["passed"], Value::Bool(true));
    assert_eq!(s["report"], "clf: no violation found among 1000 samples");

    // A gain far too small for the terminal cost must be falsified.
    let out =
        hmpc(&["verify", "--plant", "bouncing-ball", "--check", "terminal", "--witness", "1e-6,2", "--samples", "500"]);
    assert_eq!(code(&out), 1);
    assert!(summary(&out)["violations"].as_u64().unwrap() > 0);

    let again = hmpc(&["verify", "--plant", "bouncing-ball", "--check", "clf", "--samples", "500", "--seed", "3"]);
    assert_eq!(summary(&again)["worst_margin"], s["worst_margin"]);
}
