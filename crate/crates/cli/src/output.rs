//! Trajectory CSV and JSON run summaries.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use hybrid_mpc::examples::Bundle;
use hybrid_mpc::SolutionPair;
use serde_json::{json, Map, Value};

/// Write `sol` as CSV: `#` metadata lines, then the header
/// `t,j,x_0..,u_0..,<observables>` and one row per node. A jump yields two
/// rows with equal `t`.
pub fn write_csv(path: &Path, bundle: &Bundle, sol: &SolutionPair, meta: &[(&str, String)]) -> std::io::Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# plant: {}", bundle.name)?;
    for (k, v) in meta {
        writeln!(file, "# {k}: {v}")?;
    }
    let jumps: Vec<String> = jump_times(sol).iter().map(|t| t.to_string()).collect();
    writeln!(file, "# jump_times: [{}]", jumps.join(", "))?;
    writeln!(file, "# J: {}", sol.jump_count())?;

    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["t".to_string(), "j".to_string()];
    header.extend((0..sol.state_dim()).map(|i| format!("x_{i}")));
    header.extend((0..sol.input_dim()).map(|i| format!("u_{i}")));
    header.extend(bundle.observables.iter().map(|(name, _)| name.clone()));
    w.write_record(&header)?;
    for (ht, x, u) in sol.nodes() {
        let mut row = vec![ht.t.to_string(), ht.j.to_string()];
        row.extend(x.iter().map(f64::to_string));
        row.extend(u.iter().map(f64::to_string));
        row.extend(bundle.observables.iter().map(|(_, f)| f(x).to_string()));
        w.write_record(&row)?;
    }
    w.flush()
}

/// Ordinary times of the jumps of `sol`, in order.
pub fn jump_times(sol: &SolutionPair) -> Vec<f64> {
    let dom = sol.domain();
    let b = dom.jump_times();
    b[1..b.len() - 1].to_vec()
}

/// JSON number, or `null` when not finite.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

pub fn vector(v: &hybrid_mpc::Vector) -> Value {
    Value::Array(v.iter().map(|x| num(*x)).collect())
}

/// Summary fields shared by every command that produces a solution pair.
pub fn solution_summary(sol: &SolutionPair) -> Map<String, Value> {
    let end = sol.terminal_time();
    let mut m = Map::new();
    m.insert("terminal_time".into(), json!({ "t": num(end.t), "j": end.j }));
    m.insert("terminal_state".into(), vector(sol.terminal_state()));
    m.insert("jump_times".into(), Value::Array(jump_times(sol).into_iter().map(num).collect()));
    m
}

/// Pretty JSON to `path`, or to stdout when absent.
pub fn emit_summary(path: Option<&Path>, summary: &Value) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(summary)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n"),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}")
        }
    }
}
