//! Python bindings. Settings are passed as a `{key: value}` dict using the
//! same keys as the CLI config file, so a Python run and a CLI run with equal
//! settings produce equal numbers.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use djump::coupling::{coupling_profile, coupling_scan as scan, TransitionId};
use djump::dynamics::{build_conditional_generator, jump_channels, Propagator};
use djump::harness::{self, parse_config, validate_ensemble, Mode, RunConfig};
use djump::jumpstats::{fit_scaling, flip_sweep, pearson as pearson_r, run_protocol, SweepPoint};
use djump::rng::trajectory_rng;
use djump::Error;

fn to_py(err: Error) -> PyErr {
    let msg = harness::error_json(&err).to_string();
    match harness::exit_code(&err) {
        harness::EXIT_CONFIG => PyValueError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn config(mode: Mode, settings: Option<BTreeMap<String, String>>) -> PyResult<RunConfig> {
    let overrides: Vec<(String, String)> = settings.unwrap_or_default().into_iter().collect();
    let refs: Vec<(&str, String)> = overrides
        .iter()
        .map(|(k, v)| (k.as_str(), v.clone()))
        .collect();
    parse_config(mode, "", &refs, None).map_err(to_py)
}

/// `(gamma_dd, omega_dd)` in units of the transition rate at `x = k·r`.
#[pyfunction]
#[pyo3(signature = (x, theta=std::f64::consts::FRAC_PI_2))]
fn coupling(x: f64, theta: f64) -> (f64, f64) {
    let c = coupling_profile(x, theta);
    (c.gamma_dd, c.omega_dd)
}

/// Rows `(r, gamma_dd, omega_dd, |gamma12|^2)` of the coupling scan.
#[pyfunction]
#[pyo3(signature = (settings=None))]
fn coupling_scan(settings: Option<BTreeMap<String, String>>) -> PyResult<Vec<(f64, f64, f64, f64)>> {
    let c = config(Mode::CouplingScan, settings)?;
    let p = &c.params;
    let rows = scan(
        c.scan_transition,
        &p.rates,
        &p.geom,
        p.geom.theta(TransitionId::T12),
        c.r_min,
        c.r_max,
        c.scan_points,
    )
    .map_err(to_py)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.r, r.gamma_dd, r.omega_dd, r.abs_gamma12_sq))
        .collect())
}

/// One protocol run: `(events, bins)` with events as `(t, channel)` and bins
/// as `(t_start, counts1, counts2)`.
#[pyfunction]
#[pyo3(signature = (settings=None, index=0))]
#[allow(clippy::type_complexity)]
fn trajectory(
    settings: Option<BTreeMap<String, String>>,
    index: u64,
) -> PyResult<(Vec<(f64, String)>, Vec<(f64, u32, u32)>)> {
    let c = config(Mode::Trajectory, settings)?;
    let p = &c.params;
    let run = (|| {
        let c12 = p.coupling()?;
        let gen = build_conditional_generator(p, &c12)?;
        let channels = jump_channels(p, &c12)?;
        let prop = Propagator::new(&gen, &channels, p.dt, p.stepper)?;
        run_protocol(p, &prop, &c.protocol, &mut trajectory_rng(p.seed, index))
    })()
    .map_err(to_py)?;
    Ok((
        run.events
            .iter()
            .map(|e| (e.t, e.channel.as_str().to_string()))
            .collect(),
        run.bins
            .iter()
            .map(|b| (b.t_start, b.counts1, b.counts2))
            .collect(),
    ))
}

fn point_dict(p: &SweepPoint) -> BTreeMap<&'static str, f64> {
    BTreeMap::from([
        ("r", p.r),
        ("flips", p.flips as f64),
        ("live_time", p.live_time),
        ("flip_rate", p.flip_rate),
        ("stderr", p.stderr),
        ("abs_gamma12_sq", p.abs_gamma12_sq),
        ("total_time", p.total_time),
        ("both_bright_fraction", p.both_bright_fraction()),
    ])
}

/// Flip statistics per separation of the configured grid.
#[pyfunction]
#[pyo3(signature = (settings=None))]
fn sweep(py: Python<'_>, settings: Option<BTreeMap<String, String>>) -> PyResult<Vec<BTreeMap<&'static str, f64>>> {
    let c = config(Mode::Sweep, settings)?;
    let points = py
        .allow_threads(|| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(c.workers)
                .build()
                .map_err(|e| Error::InvalidParams(e.to_string()))?
                .install(|| flip_sweep(&c.params, &c.sweep_settings()))
        })
        .map_err(to_py)?;
    Ok(points.iter().map(point_dict).collect())
}

/// `(c_s, residual, points_used)` of `flip_rate ≈ c_s·|gamma12|^2`.
#[pyfunction]
fn fit(abs_gamma12_sq: Vec<f64>, flip_rate: Vec<f64>) -> PyResult<(f64, f64, usize)> {
    if abs_gamma12_sq.len() != flip_rate.len() {
        return Err(PyValueError::new_err("inputs differ in length"));
    }
    let points: Vec<SweepPoint> = abs_gamma12_sq
        .iter()
        .zip(&flip_rate)
        .map(|(&g, &f)| SweepPoint {
            r: 0.0,
            flips: 0,
            live_time: 0.0,
            flip_rate: f,
            stderr: 0.0,
            abs_gamma12_sq: g,
            total_time: 0.0,
            flip_rate_total_time: 0.0,
            both_bright_bins: 0,
            total_bins: 0,
        })
        .collect();
    let f = fit_scaling(&points).map_err(to_py)?;
    Ok((f.c_s, f.residual, f.points_used))
}

#[pyfunction]
fn pearson(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(PyValueError::new_err("need two equally long samples"));
    }
    Ok(pearson_r(&xs, &ys))
}

/// `(passed, max_abs_diff, worst_ratio)` of the ensemble-vs-oracle check.
#[pyfunction]
#[pyo3(signature = (settings=None))]
fn validate(py: Python<'_>, settings: Option<BTreeMap<String, String>>) -> PyResult<(bool, f64, f64)> {
    let c = config(Mode::Validate, settings)?;
    let steps = (c.checkpoint / c.params.dt).round() as u64;
    let report = py
        .allow_threads(|| validate_ensemble(&c.params, c.trajectories, steps))
        .map_err(to_py)?;
    Ok((report.passed(), report.max_abs_diff(), report.worst_ratio()))
}

#[pymodule]
fn djump_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(coupling, m)?)?;
    m.add_function(wrap_pyfunction!(coupling_scan, m)?)?;
    m.add_function(wrap_pyfunction!(trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
