use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use djump::harness::{self, parse_config, Mode};
use djump::Error;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    CouplingScan,
    Trajectory,
    Validate,
    Sweep,
    Fit,
}

/// Quantum-jump simulator for two dipole-dipole coupled three-level atoms.
#[derive(Debug, Parser)]
#[command(name = "djump", version)]
struct Cli {
    #[arg(value_enum)]
    mode: ModeArg,

    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Master seed (falls back to the file, then DJUMP_SEED, then 1).
    #[arg(long)]
    seed: Option<String>,

    #[arg(long)]
    workers: Option<String>,

    /// Output directory.
    #[arg(long)]
    out: Option<String>,

    #[arg(long)]
    rabi: Option<String>,
    #[arg(long)]
    gamma13: Option<String>,
    #[arg(long)]
    gamma12: Option<String>,
    #[arg(long)]
    gamma23: Option<String>,
    #[arg(long)]
    theta: Option<String>,
    #[arg(long)]
    r: Option<String>,
    #[arg(long)]
    r_min: Option<String>,
    #[arg(long)]
    r_max: Option<String>,
    #[arg(long)]
    r_points: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long)]
    t_max: Option<String>,
    #[arg(long)]
    trajectories: Option<String>,
    #[arg(long)]
    bin_width: Option<String>,
    #[arg(long)]
    threshold: Option<String>,
    /// first-order or exponential.
    #[arg(long)]
    stepper: Option<String>,
    /// adjacent or bridge-both-bright.
    #[arg(long)]
    flip_rule: Option<String>,
    /// Initial product state, e.g. "1,2".
    #[arg(long)]
    initial: Option<String>,
    #[arg(long)]
    scan_points: Option<String>,
    #[arg(long)]
    scan_transition: Option<String>,
    /// Checkpoint spacing of validate.
    #[arg(long)]
    checkpoint: Option<String>,
    /// Input of fit; defaults to <out>/sweep.csv.
    #[arg(long)]
    sweep_csv: Option<String>,
}

impl Cli {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let flags: [(&'static str, &Option<String>); 24] = [
            ("--seed", &self.seed),
            ("--workers", &self.workers),
            ("--out", &self.out),
            ("--rabi", &self.rabi),
            ("--gamma13", &self.gamma13),
            ("--gamma12", &self.gamma12),
            ("--gamma23", &self.gamma23),
            ("--theta", &self.theta),
            ("--r", &self.r),
            ("--r-min", &self.r_min),
            ("--r-max", &self.r_max),
            ("--r-points", &self.r_points),
            ("--dt", &self.dt),
            ("--t-max", &self.t_max),
            ("--trajectories", &self.trajectories),
            ("--bin-width", &self.bin_width),
            ("--threshold", &self.threshold),
            ("--stepper", &self.stepper),
            ("--flip-rule", &self.flip_rule),
            ("--initial", &self.initial),
            ("--scan-points", &self.scan_points),
            ("--scan-transition", &self.scan_transition),
            ("--checkpoint", &self.checkpoint),
            ("--sweep-csv", &self.sweep_csv),
        ];
        flags
            .into_iter()
            .filter_map(|(flag, v)| v.clone().map(|v| (flag, v)))
            .collect()
    }
}

fn mode(m: ModeArg) -> Mode {
    match m {
        ModeArg::CouplingScan => Mode::CouplingScan,
        ModeArg::Trajectory => Mode::Trajectory,
        ModeArg::Validate => Mode::Validate,
        ModeArg::Sweep => Mode::Sweep,
        ModeArg::Fit => Mode::Fit,
    }
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("{}", harness::error_json(err));
    ExitCode::from(harness::exit_code(err) as u8)
}

// clap itself exits with status 2 on malformed flags, the config-error code.
fn main() -> ExitCode {
    let cli = Cli::parse();
    let text = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                let err = Error::Config {
                    context: path.display().to_string(),
                    message: e.to_string(),
                };
                return fail(&err);
            }
        },
        None => String::new(),
    };
    let env_seed = std::env::var("DJUMP_SEED").ok();
    let config = match parse_config(mode(cli.mode), &text, &cli.overrides(), env_seed.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match harness::run(&config) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => fail(&e),
    }
}
