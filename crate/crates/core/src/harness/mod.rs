//! Experiment driver: resolves a [`RunConfig`], runs one mode inside a
//! dedicated worker pool and writes its files. This is the only module that
//! touches the filesystem.
//!
//! Every output starts with the resolved configuration. The worker count and
//! output directory are left out of it, since neither can change a result.

mod config;
mod validate;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use crate::coupling::{coupling_scan, write_scan_csv, TransitionId};
use crate::dynamics::{build_conditional_generator, jump_channels, Propagator};
use crate::error::{Error, Result};
use crate::fmt::g12;
use crate::jumpstats::{
    count_flips, fit_scaling, flip_sweep_with_progress, read_sweep_csv, run_protocol,
    write_sweep_csv, BinClass,
};
use crate::rng::trajectory_rng;

pub use config::{parse_config, Mode, RunConfig, DEFAULTS};
pub use validate::{validate_ensemble, CheckpointReport, ValidationReport, ABS_FLOOR, SIGMAS};

/// Value the flip-rate fit is compared against in `fit` output.
pub const REFERENCE_C_S: f64 = 2.0;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_VALIDATION_FAIL: i32 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    /// False only for a failed `validate`.
    pub passed: bool,
    /// One-line result for standard output.
    pub summary: String,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            EXIT_OK
        } else {
            EXIT_VALIDATION_FAIL
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config { .. } | Error::Parse { .. } => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

/// Machine-readable form of a failure, written to standard error.
pub fn error_json(err: &Error) -> serde_json::Value {
    let kind = match err.root() {
        Error::DegenerateCollapse => "degenerate-collapse",
        Error::InvalidGeometry(_) => "invalid-geometry",
        Error::InvalidParams(_) => "invalid-params",
        Error::NegativeRate { .. } => "negative-rate",
        Error::StepTooLarge { .. } => "step-too-large",
        Error::Invariant { .. } => "invariant",
        Error::DegenerateSweep(_) => "degenerate-sweep",
        Error::Config { .. } => "config",
        Error::Parse { .. } => "parse",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::AtStep { .. } | Error::AtSeparation { .. } => unreachable!("root peels context"),
    };
    serde_json::json!({
        "error": kind,
        "message": err.to_string(),
        "exit_code": exit_code(err),
    })
}

/// Runs `config.mode` on a pool of `config.workers` threads.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    pool.install(|| match config.mode {
        Mode::CouplingScan => run_coupling_scan(config),
        Mode::Trajectory => run_single_trajectory(config),
        Mode::Validate => run_validate(config),
        Mode::Sweep => run_sweep(config),
        Mode::Fit => run_fit(config),
    })
}

fn write_file(config: &RunConfig, name: &str, contents: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn run_coupling_scan(config: &RunConfig) -> Result<RunOutcome> {
    let p = &config.params;
    let rows = coupling_scan(
        config.scan_transition,
        &p.rates,
        &p.geom,
        p.geom.theta(TransitionId::T12),
        config.r_min,
        config.r_max,
        config.scan_points,
    )?;
    let mut out = config.echo_block().into_bytes();
    write_scan_csv(&mut out, &rows)?;
    let path = write_file(config, "coupling_scan.csv", &out)?;
    Ok(RunOutcome {
        summary: format!("coupling-scan: {} rows -> {}", rows.len(), path.display()),
        files: vec![path],
        passed: true,
    })
}

fn class_name(c: BinClass) -> &'static str {
    match c {
        BinClass::Bright1Dark2 => "bright1",
        BinClass::Dark1Bright2 => "bright2",
        BinClass::BothBright => "both-bright",
        BinClass::BothDark => "both-dark",
    }
}

/// One trajectory under the same re-preparation protocol as `sweep`, so the
/// record shows the bins the flip statistics are computed from.
fn run_single_trajectory(config: &RunConfig) -> Result<RunOutcome> {
    let p = &config.params;
    let c12 = p.coupling()?;
    let gen = build_conditional_generator(p, &c12)?;
    let channels = jump_channels(p, &c12)?;
    let prop = Propagator::new(&gen, &channels, p.dt, p.stepper)?;
    let mut rng = trajectory_rng(p.seed, 0);
    let run = run_protocol(p, &prop, &config.protocol, &mut rng)?;

    let mut jsonl = serde_json::to_string(&config.echo_json())?;
    jsonl.push('\n');
    let mut resets = run.reprepared_at.iter().peekable();
    for e in &run.events {
        while let Some(t) = resets.next_if(|t| **t <= e.t) {
            jsonl.push_str(&serde_json::json!({ "t": t, "reprepared": true }).to_string());
            jsonl.push('\n');
        }
        jsonl.push_str(&serde_json::to_string(e)?);
        jsonl.push('\n');
    }
    for t in resets {
        jsonl.push_str(&serde_json::json!({ "t": t, "reprepared": true }).to_string());
        jsonl.push('\n');
    }
    let events_path = write_file(config, "trajectory.jsonl", jsonl.as_bytes())?;

    // Detector 2 is written negated so both records plot on one axis.
    let mut csv = config.echo_block();
    csv.push_str("index,t_start,counts1,counts2_negated,class\n");
    for (b, c) in run.bins.iter().zip(&run.classes) {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            b.index,
            g12(b.t_start),
            b.counts1,
            -i64::from(b.counts2),
            class_name(*c)
        ));
    }
    let bins_path = write_file(config, "bins.csv", csv.as_bytes())?;
    let flips = count_flips(
        &run.classes,
        config.protocol.bin_width,
        config.protocol.rule,
    );
    Ok(RunOutcome {
        summary: format!(
            "trajectory: {} events, {} bins, {} flips, {} re-preparations -> {}",
            run.events.len(),
            run.bins.len(),
            flips.flips.len(),
            run.reprepared_at.len(),
            config.out_dir.display()
        ),
        files: vec![events_path, bins_path],
        passed: true,
    })
}

fn run_validate(config: &RunConfig) -> Result<RunOutcome> {
    let steps = (config.checkpoint / config.params.dt).round() as u64;
    eprintln!(
        "validate: {} trajectories to t = {}",
        config.trajectories, config.params.t_max
    );
    let report = validate_ensemble(&config.params, config.trajectories, steps)?;
    let mut csv = config.echo_block();
    csv.push_str(&format!(
        "# bound per population: max({SIGMAS} * stderr, {ABS_FLOOR})\n"
    ));
    csv.push_str("t,max_abs_diff,worst_ratio,pass\n");
    for c in &report.checkpoints {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            g12(c.t),
            g12(c.max_abs_diff),
            g12(c.worst_ratio),
            u8::from(c.passed())
        ));
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    csv.push_str(&format!("# {verdict}\n"));
    let path = write_file(config, "validate.csv", csv.as_bytes())?;
    Ok(RunOutcome {
        summary: format!(
            "validate: max |dpop| = {}, worst deviation/bound = {} -> {verdict}",
            g12(report.max_abs_diff()),
            g12(report.worst_ratio())
        ),
        files: vec![path],
        passed: report.passed(),
    })
}

fn run_sweep(config: &RunConfig) -> Result<RunOutcome> {
    let settings = config.sweep_settings();
    let n = settings.r_values.len();
    let points = flip_sweep_with_progress(&config.params, &settings, |k, p| {
        eprintln!(
            "sweep: {}/{n} r = {} flips = {} rate = {}",
            k + 1,
            g12(p.r),
            p.flips,
            g12(p.flip_rate)
        );
    })?;
    let mut out = config.echo_block().into_bytes();
    write_sweep_csv(&mut out, &points)?;
    let path = write_file(config, "sweep.csv", &out)?;
    let flips: u64 = points.iter().map(|p| p.flips).sum();
    Ok(RunOutcome {
        summary: format!("sweep: {n} points, {flips} flips -> {}", path.display()),
        files: vec![path],
        passed: true,
    })
}

/// Comment lines of an existing file, without the leading `# `.
fn comment_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .map(|l| l.trim().to_string())
        .collect())
}

fn run_fit(config: &RunConfig) -> Result<RunOutcome> {
    let input = config.sweep_csv_path();
    let file = fs::File::open(&input).map_err(|e| Error::Parse {
        context: input.display().to_string(),
        message: e.to_string(),
    })?;
    let points = read_sweep_csv(BufReader::new(file))?;
    let fit = fit_scaling(&points)?;
    let sweep_config = comment_lines(&input)?;
    // The ratio is taken from the sweep that produced the data.
    let ratio_of = |key: &str| {
        sweep_config.iter().find_map(|l| {
            let (k, v) = l.split_once('=')?;
            (k.trim() == key).then(|| v.trim().parse::<f64>().ok())?
        })
    };
    let gamma12 = ratio_of("gamma12").unwrap_or(config.params.rates.gamma12);
    let gamma13 = ratio_of("gamma13").unwrap_or(config.params.rates.gamma13);
    let mut json = config.echo_json();
    let obj = json.as_object_mut().expect("echo is an object");
    obj.insert("sweep_csv".into(), input.display().to_string().into());
    obj.insert("sweep_config".into(), sweep_config.into());
    obj.insert("gamma12_over_gamma13".into(), (gamma12 / gamma13).into());
    obj.insert("c_s".into(), fit.c_s.into());
    obj.insert("residual".into(), fit.residual.into());
    obj.insert("points_used".into(), fit.points_used.into());
    obj.insert("reference_c_s".into(), REFERENCE_C_S.into());
    obj.insert(
        "abs_c_s_minus_reference".into(),
        (fit.c_s - REFERENCE_C_S).abs().into(),
    );
    let mut text = serde_json::to_string_pretty(&json)?;
    text.push('\n');
    let path = write_file(config, "fit.json", text.as_bytes())?;
    Ok(RunOutcome {
        summary: format!(
            "fit: c_s = {} from {} points -> {}",
            g12(fit.c_s),
            fit.points_used,
            path.display()
        ),
        files: vec![path],
        passed: true,
    })
}
