//! Run configuration: an optional `[section] key = value` file merged with
//! command-line flags, which take precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hybrid_mpc::examples::{
    bouncing_ball, sample_hold, thermostat, BouncingBallParams, Bundle, SampleHoldParams, ThermostatParams,
};
use hybrid_mpc::horizon::{ControlHorizon, PredictionHorizon};
use hybrid_mpc::mpc::{AssertLevel, MpcBudget};
use hybrid_mpc::ocp::OcpOptions;
use hybrid_mpc::{Error, Result, Vector};

/// Flat `section.key -> value` settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Read an INI-style file. Keys outside any section land in `run`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self> {
        let ini = ini::Ini::load_from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        let mut s = Self::default();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("run").replace('-', "_");
            for (k, v) in props.iter() {
                s.set(&format!("{section}.{k}"), v);
            }
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.trim().to_ascii_lowercase(), value.trim().to_string());
    }

    /// Apply a `section.key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .filter(|(k, _)| k.contains('.'))
            .ok_or_else(|| Error::Parse(format!("expected section.key=value, got '{pair}'")))?;
        self.set(k, v);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| Error::Parse(format!("invalid value for {key}: '{v}'"))),
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.parse::<f64>(key)?.unwrap_or(default))
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.parse::<usize>(key)?.unwrap_or(default))
    }

    /// Keys under `section` that are not in `known`.
    fn unknown_keys(&self, section: &str, known: &[&str]) -> Vec<String> {
        let prefix = format!("{section}.");
        self.values
            .keys()
            .filter_map(|k| k.strip_prefix(&prefix))
            .filter(|k| !known.contains(k))
            .map(|k| format!("{prefix}{k}"))
            .collect()
    }
}

pub fn parse_vector(s: &str) -> Result<Vector> {
    let vals: std::result::Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match vals {
        Ok(v) if !v.is_empty() => Ok(Vector::from_vec(v)),
        _ => Err(Error::Parse(format!("expected comma-separated numbers, got '{s}'"))),
    }
}

/// `next-jump` or `fixed(Nc=1,delta_c=0.5)`.
pub fn parse_control(s: &str) -> Result<ControlHorizon> {
    let s = s.trim();
    if s == "next-jump" {
        return Ok(ControlHorizon::default());
    }
    let body = s.strip_prefix("fixed(").and_then(|r| r.strip_suffix(')')).ok_or_else(|| {
        Error::Parse(format!("control horizon must be 'next-jump' or 'fixed(Nc=..,delta_c=..)', got '{s}'"))
    })?;
    let (mut n_c, mut delta_c) = (None, None);
    for part in body.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| Error::Parse(format!("expected key=value in '{part}'")))?;
        match k.trim().to_ascii_lowercase().as_str() {
            "nc" | "n_c" => n_c = v.trim().parse::<usize>().ok(),
            "delta_c" | "deltac" => delta_c = v.trim().parse::<f64>().ok(),
            other => return Err(Error::Parse(format!("unknown control horizon key '{other}'"))),
        }
    }
    match (n_c, delta_c) {
        (Some(n), Some(d)) => ControlHorizon::fixed_budget(n, d),
        _ => Err(Error::Parse(format!("fixed control horizon needs numeric Nc and delta_c: '{s}'"))),
    }
}

pub fn parse_assert(s: &str, tol: f64) -> Result<AssertLevel> {
    match s.trim() {
        "off" => Ok(AssertLevel::Off),
        "feasibility" => Ok(AssertLevel::Feasibility),
        "descent" | "feasibility+descent" => Ok(AssertLevel::FeasibilityAndDescent { tol }),
        other => Err(Error::Parse(format!("assert level must be off, feasibility or descent, got '{other}'"))),
    }
}

/// Input used by the `simulate` command.
#[derive(Debug, Clone, PartialEq)]
pub enum SimInput {
    Zero,
    Feedback,
    Constant(Vector),
}

/// Resolved configuration of one invocation.
#[derive(Debug)]
pub struct RunConfig {
    pub bundle: Bundle,
    pub x0: Vector,
    pub horizon: PredictionHorizon,
    pub control: ControlHorizon,
    pub budget: MpcBudget,
    pub assert_level: AssertLevel,
    pub ocp: OcpOptions,
    pub input: SimInput,
    pub samples: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

const RUN_KEYS: &[&str] =
    &["plant", "x0", "horizon", "control", "tmax", "jmax", "max_steps", "seed", "out", "summary", "input"];
const OCP_KEYS: &[&str] = &["feas_tol", "seeds", "max_iters", "penalty_rounds", "cost_tol", "k_flow"];
const MPC_KEYS: &[&str] = &["assert", "descent_tol"];
const VERIFY_KEYS: &[&str] = &["samples"];
const BALL_KEYS: &[&str] = &["gamma", "lambda", "h", "theta", "u_max"];
const HOLD_KEYS: &[&str] = &["t_s", "sigma", "r", "u_max"];
const THERMO_KEYS: &[&str] =
    &["z_o", "z_delta", "z_min", "z_max", "a_hot", "a_cold", "a_on", "b_hot", "b_on_hot", "b_ss", "b_on_ss", "b_cold"];

fn build_bundle(s: &Settings, plant: &str) -> Result<Bundle> {
    match plant.replace('_', "-").as_str() {
        "bouncing-ball" => {
            let d = BouncingBallParams::default();
            bouncing_ball(BouncingBallParams {
                gamma: s.f64_or("bouncing_ball.gamma", d.gamma)?,
                lambda: s.f64_or("bouncing_ball.lambda", d.lambda)?,
                height: s.f64_or("bouncing_ball.h", d.height)?,
                theta: s.f64_or("bouncing_ball.theta", d.theta)?,
                u_max: s.f64_or("bouncing_ball.u_max", d.u_max)?,
            })
        }
        "sample-hold" => {
            let d = SampleHoldParams::double_integrator()?;
            let keys = ["sample_hold.t_s", "sample_hold.sigma", "sample_hold.r", "sample_hold.u_max"];
            if keys.iter().all(|k| s.get(k).is_none()) {
                return sample_hold(d);
            }
            let p = SampleHoldParams::design(
                d.a.clone(),
                d.b.clone(),
                s.f64_or(keys[0], d.t_s)?,
                s.f64_or(keys[1], d.sigma)?,
                s.f64_or(keys[2], 0.1)?,
                s.f64_or(keys[3], d.u_max)?,
            )?;
            sample_hold(p)
        }
        "thermostat" => {
            let d = ThermostatParams::default();
            let g = |k: &str, v: f64| s.f64_or(&format!("thermostat.{k}"), v);
            thermostat(ThermostatParams {
                z_o: g("z_o", d.z_o)?,
                z_delta: g("z_delta", d.z_delta)?,
                z_min: g("z_min", d.z_min)?,
                z_max: g("z_max", d.z_max)?,
                a_hot: g("a_hot", d.a_hot)?,
                a_cold: g("a_cold", d.a_cold)?,
                a_on: g("a_on", d.a_on)?,
                b_hot: g("b_hot", d.b_hot)?,
                b_on_hot: g("b_on_hot", d.b_on_hot)?,
                b_ss: g("b_ss", d.b_ss)?,
                b_on_ss: g("b_on_ss", d.b_on_ss)?,
                b_cold: g("b_cold", d.b_cold)?,
            })
        }
        other => Err(Error::InvalidParams(format!(
            "unknown plant '{other}'; available: {}",
            hybrid_mpc::examples::NAMES.join(", ")
        ))),
    }
}

impl RunConfig {
    /// Resolve settings; `needs_x0` is false only for commands without an initial state.
    pub fn resolve(s: &Settings, needs_x0: bool) -> Result<Self> {
        let mut unknown = Vec::new();
        for (section, keys) in [
            ("run", RUN_KEYS),
            ("ocp", OCP_KEYS),
            ("mpc", MPC_KEYS),
            ("verify", VERIFY_KEYS),
            ("bouncing_ball", BALL_KEYS),
            ("sample_hold", HOLD_KEYS),
            ("thermostat", THERMO_KEYS),
        ] {
            unknown.extend(s.unknown_keys(section, keys));
        }
        let known_sections = ["run.", "ocp.", "mpc.", "verify.", "bouncing_ball.", "sample_hold.", "thermostat."];
        unknown.extend(s.values.keys().filter(|k| !known_sections.iter().any(|p| k.starts_with(p))).cloned());
        if !unknown.is_empty() {
            return Err(Error::Parse(format!("unknown setting(s): {}", unknown.join(", "))));
        }

        let plant = s.get("run.plant").ok_or_else(|| Error::Parse("missing --plant".into()))?;
        let bundle = build_bundle(s, plant)?;
        let x0 = match s.get("run.x0") {
            Some(v) => parse_vector(v)?,
            None if needs_x0 => return Err(Error::Parse("missing --x0".into())),
            None => Vector::zeros(bundle.plant.state_dim()),
        };
        if x0.len() != bundle.plant.state_dim() {
            return Err(Error::Dimension { expected: bundle.plant.state_dim(), got: x0.len() });
        }
        let horizon = match s.get("run.horizon") {
            Some(h) => PredictionHorizon::parse(h)?,
            None => bundle.horizon.clone(),
        };
        let control = match s.get("run.control") {
            Some(c) => parse_control(c)?,
            None => ControlHorizon::default(),
        };
        let budget = MpcBudget {
            t_max: s.f64_or("run.tmax", 10.0)?,
            j_max: s.usize_or("run.jmax", 30)?,
            max_steps: s.usize_or("run.max_steps", 1000)?,
        };
        let descent_tol = s.f64_or("mpc.descent_tol", 5e-4)?;
        let assert_level = parse_assert(s.get("mpc.assert").unwrap_or("feasibility"), descent_tol)?;
        let d = OcpOptions::default();
        let ocp = OcpOptions {
            feas_tol: s.f64_or("ocp.feas_tol", d.feas_tol)?,
            cost_tol: s.f64_or("ocp.cost_tol", d.cost_tol)?,
            seeds: s.usize_or("ocp.seeds", d.seeds)?,
            max_iters: s.usize_or("ocp.max_iters", d.max_iters)?,
            penalty_rounds: s.usize_or("ocp.penalty_rounds", d.penalty_rounds)?,
            k_flow: s.usize_or("ocp.k_flow", d.k_flow)?,
            ..d
        };
        ocp.validate()?;
        let input = match s.get("run.input").unwrap_or("feedback") {
            "zero" => SimInput::Zero,
            "feedback" => SimInput::Feedback,
            other => SimInput::Constant(parse_vector(other).map_err(|_| {
                Error::Parse(format!("input must be zero, feedback or a constant vector, got '{other}'"))
            })?),
        };
        Ok(Self {
            bundle,
            x0,
            horizon,
            control,
            budget,
            assert_level,
            ocp,
            input,
            samples: s.usize_or("verify.samples", 10_000)?,
            seed: s.parse::<u64>("run.seed")?.unwrap_or(0),
            out: s.get("run.out").map(PathBuf::from),
            summary: s.get("run.summary").map(PathBuf::from),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_sections_and_overrides() {
        let mut s =
            Settings::from_str("plant = bouncing-ball\n[bouncing_ball]\ntheta = 0.05\n[ocp]\nseeds = 3\n").unwrap();
        s.set_pair("bouncing_ball.theta=0.07").unwrap();
        s.set("run.x0", "1,-1");
        let rc = RunConfig::resolve(&s, true).unwrap();
        assert_eq!(rc.ocp.seeds, 3);
        assert_eq!(rc.x0, Vector::from_row_slice(&[1.0, -1.0]));
        assert_eq!(s.get("bouncing_ball.theta"), Some("0.07"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_dimensions() {
        let s = Settings::from_str("[run]\nplant = thermostat\nx0 = 1\n").unwrap();
        assert!(matches!(RunConfig::resolve(&s, true), Err(Error::Dimension { .. })));
        let s = Settings::from_str("[run]\nplant = thermostat\nx0 = 1,10\ncolour = red\n").unwrap();
        assert!(matches!(RunConfig::resolve(&s, true), Err(Error::Parse(_))));
    }

    #[test]
    fn control_horizon_forms() {
        assert_eq!(parse_control("next-jump").unwrap(), ControlHorizon::default());
        let c = parse_control("fixed(Nc=2,delta_c=0.25)").unwrap();
        assert_eq!((c.n_c, c.delta_c), (2, 0.25));
        assert!(parse_control("fixed(Nc=2)").is_err());
    }
}
