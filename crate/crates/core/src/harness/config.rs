//! `key = value` configuration.
//!
//! All defaults live in [`DEFAULTS`]. A file is applied first, then command
//! line overrides; the seed falls back to `DJUMP_SEED` and then to 1. Keys
//! marked mode-dependent take their default from [`Mode::default_for`].

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::coupling::{Geometry, TransitionId, TransitionRates};
use crate::dynamics::{SimulationParams, Stepper};
use crate::error::{Error, Result};
use crate::hilbert::{Level, StateVector};
use crate::jumpstats::{log_grid, FlipRule, ProtocolSettings, SweepSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    CouplingScan,
    Trajectory,
    Validate,
    Sweep,
    Fit,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::CouplingScan,
        Mode::Trajectory,
        Mode::Validate,
        Mode::Sweep,
        Mode::Fit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::CouplingScan => "coupling-scan",
            Mode::Trajectory => "trajectory",
            Mode::Validate => "validate",
            Mode::Sweep => "sweep",
            Mode::Fit => "fit",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// Defaults of the mode-dependent keys `t_max` and `trajectories`.
    fn default_for(self, key: &str) -> Option<&'static str> {
        match (self, key) {
            (Mode::Trajectory, "t_max") => Some("1000"),
            (Mode::Trajectory, "trajectories") => Some("1"),
            (Mode::Validate, "t_max") => Some("20"),
            (Mode::Validate, "trajectories") => Some("2000"),
            (Mode::Sweep | Mode::Fit | Mode::CouplingScan, "t_max") => Some("5000"),
            (Mode::Sweep | Mode::Fit | Mode::CouplingScan, "trajectories") => Some("4"),
            _ => None,
        }
    }
}

/// `(key, default, meaning)`. A default of `"*"` is mode-dependent.
pub const DEFAULTS: &[(&str, &str, &str)] = &[
    (
        "rabi",
        "8",
        "Omega_R; 2*Omega_R is the Rabi frequency of the 1-3 drive",
    ),
    ("gamma13", "1", "rate unit"),
    ("gamma12", "0.02", "metastable transition rate"),
    (
        "gamma23",
        "1e-6",
        "decay of the metastable level to the ground state",
    ),
    (
        "theta",
        "1.5707963267948966",
        "dipole angle on the 1-2 transition, radians",
    ),
    (
        "r",
        "0.5",
        "separation in units of lambda12 (trajectory, validate)",
    ),
    ("initial", "1,2", "initial product state n,m"),
    ("dt", "0.001", "time step in units of 1/gamma13"),
    ("stepper", "first-order", "first-order or exponential"),
    ("t_max", "*", "trajectory length"),
    (
        "trajectories",
        "*",
        "trajectories per run or per sweep point",
    ),
    ("r_min", "0.1", "smallest separation of scans and sweeps"),
    ("r_max", "3", "largest separation of scans and sweeps"),
    ("r_points", "12", "log-spaced sweep points"),
    ("scan_points", "30", "linear coupling-scan points"),
    ("scan_transition", "t12", "transition of the coupling scan"),
    ("bin_width", "50", "counting bin in units of 1/gamma13"),
    ("threshold", "3", "clicks per bin for a bright detector"),
    ("flip_rule", "adjacent", "adjacent or bridge-both-bright"),
    ("checkpoint", "1", "validate checkpoint spacing"),
    ("sweep_csv", "", "input of fit; defaults to <out>/sweep.csv"),
    (
        "seed",
        "",
        "master seed; flag, then file, then DJUMP_SEED, then 1",
    ),
    ("out", "out", "output directory"),
    (
        "workers",
        "",
        "worker threads; defaults to the available parallelism",
    ),
];

/// Smallest separation accepted, in units of lambda12.
pub const MIN_SEPARATION: f64 = 0.01;

/// Keys that never reach an output file: they cannot change any result.
const EXECUTION_ONLY: &[&str] = &["out", "workers"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub params: SimulationParams,
    pub r_min: f64,
    pub r_max: f64,
    pub r_points: usize,
    pub scan_points: usize,
    pub scan_transition: TransitionId,
    pub trajectories: u64,
    pub protocol: ProtocolSettings,
    pub checkpoint: f64,
    pub sweep_csv: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Resolved `key = value` pairs in [`DEFAULTS`] order.
    values: Vec<(&'static str, String)>,
}

impl RunConfig {
    pub fn sweep_settings(&self) -> SweepSettings {
        SweepSettings {
            r_values: log_grid(self.r_min, self.r_max, self.r_points),
            trajectories_per_point: self.trajectories,
            t_max: self.params.t_max,
            protocol: self.protocol,
        }
    }

    pub fn sweep_csv_path(&self) -> PathBuf {
        self.sweep_csv
            .clone()
            .unwrap_or_else(|| self.out_dir.join("sweep.csv"))
    }

    /// Resolved configuration, without execution-only keys.
    pub fn echo_pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values
            .iter()
            .filter(|(k, _)| !EXECUTION_ONLY.contains(k))
            .map(|(k, v)| (*k, v.as_str()))
    }

    /// `# key = value` lines, preceded by the mode. Stripping the `# ` from
    /// the key lines yields a config file that reproduces the run.
    pub fn echo_block(&self) -> String {
        let mut s = format!(
            "# djump {} {}\n",
            env!("CARGO_PKG_VERSION"),
            self.mode.as_str()
        );
        for (k, v) in self.echo_pairs() {
            writeln!(s, "# {k} = {v}").expect("writing to a String");
        }
        s
    }

    pub fn echo_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .echo_pairs()
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.to_string())))
            .collect();
        serde_json::json!({ "mode": self.mode.as_str(), "config": map })
    }
}

/// Parses `text` as a config file, applies `overrides` (flag name, value) in
/// order, then fills the seed from `env_seed`.
pub fn parse_config(
    mode: Mode,
    text: &str,
    overrides: &[(&str, String)],
    env_seed: Option<&str>,
) -> Result<RunConfig> {
    let mut raw: Raw = DEFAULTS.iter().map(|(k, _, _)| (*k, None)).collect();
    fn set(raw: &mut Raw, key: &str, value: String, context: String) -> Result<()> {
        let slot = raw
            .iter_mut()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| Error::config(&context, format!("unknown key '{key}'")))?;
        slot.1 = Some((value, context));
        Ok(())
    }
    for (n, line) in text.lines().enumerate() {
        let context = format!("line {}", n + 1);
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(&context, format!("expected key = value, got '{line}'"))
        })?;
        set(&mut raw, key.trim(), value.trim().to_string(), context)?;
    }
    for (flag, value) in overrides {
        let key = flag.trim_start_matches("--").replace('-', "_");
        set(
            &mut raw,
            &key,
            value.clone(),
            format!("--{}", flag.trim_start_matches("--")),
        )?;
    }
    let seed_unset = raw.iter().any(|(k, v)| *k == "seed" && v.is_none());
    if let (true, Some(env)) = (seed_unset, env_seed) {
        set(
            &mut raw,
            "seed",
            env.trim().to_string(),
            "DJUMP_SEED".into(),
        )?;
    }
    Builder { mode, raw }.build()
}

/// Per key: the value set and where it came from.
type Raw = Vec<(&'static str, Option<(String, String)>)>;

struct Builder {
    mode: Mode,
    raw: Raw,
}

impl Builder {
    /// Value and its context; unset keys resolve to their default.
    fn get(&self, key: &str) -> (String, String) {
        let (_, slot) = self.raw.iter().find(|(k, _)| *k == key).expect("known key");
        if let Some((v, ctx)) = slot {
            return (v.clone(), ctx.clone());
        }
        let default = DEFAULTS
            .iter()
            .find(|(k, _, _)| *k == key)
            .expect("known key")
            .1;
        let default = if default == "*" {
            self.mode.default_for(key).expect("mode default")
        } else {
            default
        };
        (default.to_string(), format!("default {key}"))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let (v, ctx) = self.get(key);
        v.parse()
            .map_err(|_| Error::config(ctx, format!("malformed value '{v}' for {key}")))
    }

    fn positive(&self, key: &str) -> Result<f64> {
        let x: f64 = self.parse(key)?;
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::config(
                self.get(key).1,
                format!("{key} must be > 0, got {x}"),
            ));
        }
        Ok(x)
    }

    /// Separations below `MIN_SEPARATION` are outside the validated grid.
    fn separation(&self, key: &str) -> Result<f64> {
        let r = self.positive(key)?;
        if r < MIN_SEPARATION {
            return Err(Error::config(
                self.get(key).1,
                format!("{key} must be >= {MIN_SEPARATION}, got {r}"),
            ));
        }
        Ok(r)
    }

    fn choice<T>(&self, key: &str, parse: impl Fn(&str) -> Option<T>) -> Result<T> {
        let (v, ctx) = self.get(key);
        parse(&v).ok_or_else(|| Error::config(ctx, format!("unrecognized {key} '{v}'")))
    }

    fn build(self) -> Result<RunConfig> {
        let rates = TransitionRates {
            gamma13: self.positive("gamma13")?,
            gamma12: self.positive("gamma12")?,
            gamma23: self.positive("gamma23")?,
        };
        let mut geom = Geometry::with_r(self.separation("r")?);
        geom.set_theta(TransitionId::T12, self.parse("theta")?);
        let initial = self.choice("initial", parse_product_state)?;
        let (seed_text, seed_ctx) = self.get("seed");
        let seed = if seed_text.is_empty() {
            1
        } else {
            seed_text
                .parse()
                .map_err(|_| Error::config(&seed_ctx, format!("malformed seed '{seed_text}'")))?
        };
        let params = SimulationParams {
            rates,
            geom,
            rabi: self.parse("rabi")?,
            dt: self.positive("dt")?,
            t_max: self.positive("t_max")?,
            seed,
            initial_state: initial,
            stepper: self.choice("stepper", Stepper::parse)?,
            sample_every: None,
        };
        params
            .validate()
            .map_err(|e| Error::config("resolved config", e.to_string()))?;
        let protocol = ProtocolSettings {
            bin_width: self.positive("bin_width")?,
            threshold: self.parse("threshold")?,
            rule: self.choice("flip_rule", FlipRule::parse)?,
        };
        protocol
            .validate(params.dt)
            .map_err(|e| Error::config("resolved config", e.to_string()))?;
        let r_min = self.separation("r_min")?;
        let r_max = self.positive("r_max")?;
        if r_min >= r_max {
            return Err(Error::config(
                self.get("r_max").1,
                format!("r_max must exceed r_min, got [{r_min}, {r_max}]"),
            ));
        }
        let count = |key: &str, min: usize| -> Result<usize> {
            let n: usize = self.parse(key)?;
            if n < min {
                return Err(Error::config(
                    self.get(key).1,
                    format!("{key} must be >= {min}"),
                ));
            }
            Ok(n)
        };
        let r_points = count("r_points", 1)?;
        let scan_points = count("scan_points", 2)?;
        let trajectories = count("trajectories", 1)? as u64;
        let checkpoint = self.positive("checkpoint")?;
        let ratio = checkpoint / params.dt;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio {
            return Err(Error::config(
                self.get("checkpoint").1,
                format!(
                    "checkpoint {checkpoint} is not a multiple of dt {}",
                    params.dt
                ),
            ));
        }
        let (sweep_csv, _) = self.get("sweep_csv");
        let workers = match self.get("workers").0.as_str() {
            "" => std::thread::available_parallelism().map_or(1, |n| n.get()),
            _ => count("workers", 1)?,
        };
        let mut values: Vec<(&'static str, String)> = DEFAULTS
            .iter()
            .map(|(k, _, _)| (*k, self.get(k).0))
            .collect();
        for (k, v) in values.iter_mut() {
            match *k {
                "seed" => *v = seed.to_string(),
                "workers" => *v = workers.to_string(),
                _ => {}
            }
        }
        Ok(RunConfig {
            mode: self.mode,
            params,
            r_min,
            r_max,
            r_points,
            scan_points,
            scan_transition: self.choice("scan_transition", TransitionId::parse)?,
            trajectories,
            protocol,
            checkpoint,
            sweep_csv: (!sweep_csv.is_empty()).then(|| PathBuf::from(sweep_csv)),
            out_dir: PathBuf::from(self.get("out").0),
            workers,
            values,
        })
    }
}

/// `"n,m"` with level numbers 1 to 3.
fn parse_product_state(s: &str) -> Option<StateVector> {
    let (a, b) = s.split_once(',')?;
    let level = |x: &str| Level::from_number(x.trim().parse().ok()?);
    Some(StateVector::basis(level(a)?, level(b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, overrides: &[(&str, &str)]) -> Result<RunConfig> {
        let o: Vec<(&str, String)> = overrides.iter().map(|(k, v)| (*k, v.to_string())).collect();
        parse_config(Mode::Sweep, text, &o, None)
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse("", &[]).unwrap();
        assert_eq!(c.params.rabi, 8.0);
        assert_eq!(c.params.rates, TransitionRates::default());
        assert_eq!(c.params.dt, 1e-3);
        assert_eq!(c.params.seed, 1);
        assert_eq!(c.protocol, ProtocolSettings::default());
        assert_eq!(c.sweep_settings().r_values.len(), 12);
        assert_eq!(c.scan_points, 30);
    }

    #[test]
    fn flag_overrides_file() {
        let c = parse("rabi = 8\n", &[("--rabi", "4")]).unwrap();
        assert_eq!(c.params.rabi, 4.0);
    }

    #[test]
    fn step_bound_is_enforced() {
        let err = parse("dt = 0.05\n", &[]).unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err}");
    }

    #[test]
    fn errors_carry_line_or_flag() {
        let e = parse("# comment\n\nbogus = 1\n", &[]).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let e = parse("rabi = fast\n", &[]).unwrap_err();
        assert!(e.to_string().contains("line 1"), "{e}");
        let e = parse("", &[("--r-min", "x")]).unwrap_err();
        assert!(e.to_string().contains("--r-min"), "{e}");
        let e = parse("no equals sign\n", &[]).unwrap_err();
        assert!(e.to_string().contains("line 1"), "{e}");
    }

    #[test]
    fn seed_precedence() {
        let o = |s: &str| vec![("--seed", s.to_string())];
        let seed = |text: &str, o: &[(&str, String)], env: Option<&str>| {
            parse_config(Mode::Sweep, text, o, env).unwrap().params.seed
        };
        assert_eq!(seed("", &[], None), 1);
        assert_eq!(seed("", &[], Some("9")), 9);
        assert_eq!(seed("seed = 5", &[], Some("9")), 5);
        assert_eq!(seed("seed = 5", &o("7"), Some("9")), 7);
        assert!(parse_config(Mode::Sweep, "", &[], Some("x")).is_err());
    }

    #[test]
    fn mode_defaults() {
        let c = parse_config(Mode::Validate, "", &[], None).unwrap();
        assert_eq!(c.trajectories, 2000);
        assert_eq!(c.params.t_max, 20.0);
    }

    #[test]
    fn echo_round_trips_and_omits_execution_keys() {
        let c = parse("gamma12 = 0.01\nthreshold = 5\n", &[("--workers", "3")]).unwrap();
        let block = c.echo_block();
        assert!(!block.contains("workers") && !block.contains("out ="));
        let text: String = block
            .lines()
            .skip(1)
            .map(|l| format!("{}\n", l.trim_start_matches("# ")))
            .collect();
        let again = parse(&text, &[("--workers", "3")]).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn initial_state_and_choices() {
        let c = parse("initial = 1,3\nstepper = exponential\ndt = 0.02\n", &[]).unwrap();
        assert_eq!(
            c.params.initial_state,
            StateVector::basis(Level::Upper, Level::Ground)
        );
        assert_eq!(c.params.stepper, Stepper::Exponential);
        assert!(parse("initial = 4,1\n", &[]).is_err());
        assert!(parse("flip_rule = sideways\n", &[]).is_err());
        assert!(parse("gamma23 = 0\n", &[]).is_err());
        assert!(parse("bin_width = 0.0005\n", &[]).is_err());
        assert!(parse("r_min = 3\nr_max = 1\n", &[]).is_err());
        assert!(parse("r_min = 0.005\n", &[]).is_err());
        assert!(parse("r = 0.001\n", &[]).is_err());
    }
}
