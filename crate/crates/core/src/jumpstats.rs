//! Detector records to flip statistics.
//!
//! Clicks are summed in fixed-width bins, each bin is classified by which
//! detectors exceed a click threshold, and a flip is recorded where the bright
//! atom changes between neighbouring bins. Bins where both atoms are bright or
//! both dark end the current stretch; the trajectory is then re-prepared in
//! `|1,2⟩` at the next bin boundary while the clock keeps running.

use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::Geometry;
use crate::dynamics::{
    build_conditional_generator, jump_channels, ChannelLabel, Propagator, SimulationParams,
    TrajectoryEvent,
};
use crate::error::{Error, Result};
use crate::fmt::g12;
use crate::hilbert::AtomId;
use crate::rng::trajectory_rng;

pub const SWEEP_CSV_HEADER: &str =
    "r_over_lambda12,flips,live_time,flip_rate,stderr,abs_gamma12_sq,flip_rate_total_time";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRecord {
    pub index: usize,
    pub t_start: f64,
    pub counts1: u32,
    pub counts2: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinClass {
    Bright1Dark2,
    Dark1Bright2,
    BothBright,
    BothDark,
}

impl BinClass {
    pub fn is_single_bright(self) -> bool {
        matches!(self, BinClass::Bright1Dark2 | BinClass::Dark1Bright2)
    }

    /// The same bin with detector labels exchanged.
    pub fn swapped(self) -> BinClass {
        match self {
            BinClass::Bright1Dark2 => BinClass::Dark1Bright2,
            BinClass::Dark1Bright2 => BinClass::Bright1Dark2,
            other => other,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlipDirection {
    /// Atom 1 goes dark while atom 2 lights up.
    OneToTwo,
    TwoToOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipEvent {
    /// Start of the first bin in which the new atom is the bright one.
    pub t: f64,
    pub direction: FlipDirection,
}

/// When a flip is recognized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlipRule {
    /// Only directly adjacent bins with opposite single-bright classes.
    #[default]
    Adjacent,
    /// Additionally accept a single both-bright bin between opposite
    /// single-bright bins. A flip in the middle of a bin makes that bin
    /// both-bright, since the outgoing atom clicked before the flip and the
    /// incoming one after it.
    BridgeBothBright,
}

impl FlipRule {
    pub fn as_str(self) -> &'static str {
        match self {
            FlipRule::Adjacent => "adjacent",
            FlipRule::BridgeBothBright => "bridge-both-bright",
        }
    }

    pub fn parse(s: &str) -> Option<FlipRule> {
        match s {
            "adjacent" => Some(FlipRule::Adjacent),
            "bridge-both-bright" | "bridge" => Some(FlipRule::BridgeBothBright),
            _ => None,
        }
    }
}

/// Sums detector clicks into `ceil(t_total / bin_width)` left-closed bins.
/// Undetected emissions are ignored; events at or beyond the last boundary
/// land in the last bin.
pub fn bin_events(events: &[TrajectoryEvent], bin_width: f64, t_total: f64) -> Vec<BinRecord> {
    assert!(bin_width > 0.0, "bin width must be positive");
    let n = (t_total / bin_width).ceil().max(0.0) as usize;
    let mut bins: Vec<BinRecord> = (0..n)
        .map(|index| BinRecord {
            index,
            t_start: index as f64 * bin_width,
            counts1: 0,
            counts2: 0,
        })
        .collect();
    if n == 0 {
        return bins;
    }
    for e in events {
        let Some(atom) = e.channel.detector() else {
            continue;
        };
        let i = ((e.t / bin_width).floor().max(0.0) as usize).min(n - 1);
        match atom {
            AtomId::First => bins[i].counts1 += 1,
            AtomId::Second => bins[i].counts2 += 1,
        }
    }
    bins
}

/// A detector is bright when it registered at least `threshold` clicks.
pub fn classify_bin(bin: &BinRecord, threshold: u32) -> BinClass {
    let threshold = threshold.max(1);
    match (bin.counts1 >= threshold, bin.counts2 >= threshold) {
        (true, false) => BinClass::Bright1Dark2,
        (false, true) => BinClass::Dark1Bright2,
        (true, true) => BinClass::BothBright,
        (false, false) => BinClass::BothDark,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlipCount {
    pub flips: Vec<FlipEvent>,
    /// Single-bright bins.
    pub live_time_bins: usize,
    /// Runs of both-bright/both-dark bins that ended a stretch.
    pub resets: usize,
}

fn is_bridge(classes: &[BinClass], i: usize, rule: FlipRule) -> bool {
    rule == FlipRule::BridgeBothBright
        && classes[i] == BinClass::BothBright
        && i > 0
        && i + 1 < classes.len()
        && classes[i - 1].is_single_bright()
        && classes[i + 1].is_single_bright()
}

pub fn count_flips(classes: &[BinClass], bin_width: f64, rule: FlipRule) -> FlipCount {
    let mut out = FlipCount::default();
    let mut last_single: Option<BinClass> = None;
    let mut in_reset = false;
    for (i, &class) in classes.iter().enumerate() {
        if class.is_single_bright() {
            if let Some(prev) = last_single {
                if prev != class {
                    let direction = if class == BinClass::Dark1Bright2 {
                        FlipDirection::OneToTwo
                    } else {
                        FlipDirection::TwoToOne
                    };
                    out.flips.push(FlipEvent {
                        t: i as f64 * bin_width,
                        direction,
                    });
                }
            }
            last_single = Some(class);
            out.live_time_bins += 1;
            in_reset = false;
        } else if is_bridge(classes, i, rule) {
            continue;
        } else {
            if !in_reset {
                out.resets += 1;
            }
            in_reset = true;
            last_single = None;
        }
    }
    out
}

/// Binning and re-preparation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSettings {
    pub bin_width: f64,
    pub threshold: u32,
    pub rule: FlipRule,
}

impl Default for ProtocolSettings {
    fn default() -> Self {
        ProtocolSettings {
            bin_width: 50.0,
            threshold: 3,
            rule: FlipRule::default(),
        }
    }
}

impl ProtocolSettings {
    pub fn validate(&self, dt: f64) -> Result<()> {
        if !(self.bin_width > 0.0) || !self.bin_width.is_finite() {
            return Err(Error::InvalidParams(format!(
                "bin width must be > 0, got {}",
                self.bin_width
            )));
        }
        if self.threshold < 1 {
            return Err(Error::InvalidParams("threshold must be >= 1".into()));
        }
        let ratio = self.bin_width / dt;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio {
            return Err(Error::InvalidParams(format!(
                "bin width {} is not a multiple of dt {dt}",
                self.bin_width
            )));
        }
        Ok(())
    }
}

/// One trajectory run bin by bin with re-preparation.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolRun {
    pub events: Vec<TrajectoryEvent>,
    pub bins: Vec<BinRecord>,
    pub classes: Vec<BinClass>,
    /// Times at which the state was re-prepared.
    pub reprepared_at: Vec<f64>,
}

impl ProtocolRun {
    pub fn total_time(&self, bin_width: f64) -> f64 {
        self.bins.len() as f64 * bin_width
    }
}

/// Simulates `ceil(t_max / bin_width)` whole bins. After a both-dark bin, or a
/// both-bright bin under [`FlipRule::Adjacent`], the state is reset to
/// `params.initial_state`. Under [`FlipRule::BridgeBothBright`] a both-bright
/// bin is only reset if the following bin is ambiguous too.
pub fn run_protocol<R: Rng>(
    params: &SimulationParams,
    prop: &Propagator,
    settings: &ProtocolSettings,
    rng: &mut R,
) -> Result<ProtocolRun> {
    params.validate()?;
    settings.validate(params.dt)?;
    let steps_per_bin = (settings.bin_width / params.dt).round() as u64;
    let n_bins = (params.t_max / settings.bin_width).ceil() as usize;
    let channels = prop.channels();
    let initial = params.initial_state.normalize()?;
    let mut psi = initial;
    let mut run = ProtocolRun {
        events: Vec::new(),
        bins: Vec::with_capacity(n_bins),
        classes: Vec::with_capacity(n_bins),
        reprepared_at: Vec::new(),
    };
    let mut pending_both_bright = false;
    let mut step: u64 = 0;
    for index in 0..n_bins {
        let mut bin = BinRecord {
            index,
            t_start: index as f64 * settings.bin_width,
            counts1: 0,
            counts2: 0,
        };
        for _ in 0..steps_per_bin {
            let u: f64 = rng.random();
            if let Some(i) = prop.advance(&mut psi, u).map_err(|e| e.at_step(step))? {
                let label = channels[i].label;
                match label.detector() {
                    Some(AtomId::First) => bin.counts1 += 1,
                    Some(AtomId::Second) => bin.counts2 += 1,
                    None => {}
                }
                run.events.push(TrajectoryEvent {
                    t: (step as f64 + 0.5) * params.dt,
                    channel: label,
                });
            }
            step += 1;
        }
        let class = classify_bin(&bin, settings.threshold);
        let reset = match class {
            BinClass::BothDark => true,
            BinClass::BothBright => match settings.rule {
                FlipRule::Adjacent => true,
                FlipRule::BridgeBothBright => pending_both_bright,
            },
            _ => false,
        };
        pending_both_bright = class == BinClass::BothBright && !reset;
        if reset {
            psi = initial;
            run.reprepared_at
                .push((index + 1) as f64 * settings.bin_width);
        }
        run.bins.push(bin);
        run.classes.push(class);
    }
    Ok(run)
}

/// Event-level flip count: a click of one detector directly following at
/// least three consecutive clicks of the other, with no emission in between
/// that would have changed the outgoing atom's or the incoming atom's level
/// on the metastable transitions, and no re-preparation in between.
pub fn event_level_flips(events: &[TrajectoryEvent], reprepared_at: &[f64]) -> usize {
    let mut flips = 0;
    let mut run: Option<(AtomId, usize)> = None;
    let mut resets = reprepared_at.iter().peekable();
    for e in events {
        while resets.next_if(|&&t| t <= e.t).is_some() {
            run = None;
        }
        match e.channel.detector() {
            Some(atom) => {
                run = match run {
                    Some((bright, n)) if bright == atom => Some((atom, n + 1)),
                    Some((bright, n)) => {
                        if n >= 3 {
                            flips += 1;
                        }
                        let _ = bright;
                        Some((atom, 1))
                    }
                    None => Some((atom, 1)),
                };
            }
            None => {
                if let Some((bright, _)) = run {
                    if breaks_run(e.channel, bright) {
                        run = None;
                    }
                }
            }
        }
    }
    flips
}

/// Emissions that end a bright run of `bright`: its own metastable decay, a
/// collective metastable decay, or the dark atom returning to the ground state.
fn breaks_run(channel: ChannelLabel, bright: AtomId) -> bool {
    use ChannelLabel::*;
    match channel {
        CollectiveSym | CollectiveAsym => true,
        Atom1Metastable => bright == AtomId::First,
        Atom2Metastable => bright == AtomId::Second,
        Atom2Ground => bright == AtomId::First,
        Atom1Ground => bright == AtomId::Second,
        Det1 | Det2 => false,
    }
}

/// Aggregated flip statistics at one separation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub r: f64,
    pub flips: u64,
    pub live_time: f64,
    pub flip_rate: f64,
    pub stderr: f64,
    pub abs_gamma12_sq: f64,
    pub total_time: f64,
    pub flip_rate_total_time: f64,
    pub both_bright_bins: u64,
    pub total_bins: u64,
}

impl SweepPoint {
    fn from_totals(r: f64, abs_gamma12_sq: f64, totals: &TrajectoryTally, bin_width: f64) -> Self {
        let live_time = totals.live_bins as f64 * bin_width;
        let total_time = totals.bins as f64 * bin_width;
        let flips = totals.flips;
        let (flip_rate, stderr) = if live_time > 0.0 {
            (flips as f64 / live_time, (flips as f64).sqrt() / live_time)
        } else {
            (0.0, 0.0)
        };
        SweepPoint {
            r,
            flips,
            live_time,
            flip_rate,
            stderr,
            abs_gamma12_sq,
            total_time,
            flip_rate_total_time: if total_time > 0.0 {
                flips as f64 / total_time
            } else {
                0.0
            },
            both_bright_bins: totals.both_bright,
            total_bins: totals.bins,
        }
    }

    /// Fraction of bins in which both detectors were bright.
    pub fn both_bright_fraction(&self) -> f64 {
        if self.total_bins == 0 {
            0.0
        } else {
            self.both_bright_bins as f64 / self.total_bins as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct TrajectoryTally {
    flips: u64,
    live_bins: u64,
    bins: u64,
    both_bright: u64,
}

impl TrajectoryTally {
    fn of(run: &ProtocolRun, settings: &ProtocolSettings) -> Self {
        let count = count_flips(&run.classes, settings.bin_width, settings.rule);
        TrajectoryTally {
            flips: count.flips.len() as u64,
            live_bins: count.live_time_bins as u64,
            bins: run.classes.len() as u64,
            both_bright: run
                .classes
                .iter()
                .filter(|c| **c == BinClass::BothBright)
                .count() as u64,
        }
    }

    fn add(self, other: TrajectoryTally) -> Self {
        TrajectoryTally {
            flips: self.flips + other.flips,
            live_bins: self.live_bins + other.live_bins,
            bins: self.bins + other.bins,
            both_bright: self.both_bright + other.both_bright,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub r_values: Vec<f64>,
    pub trajectories_per_point: u64,
    /// Length of each trajectory.
    pub t_max: f64,
    pub protocol: ProtocolSettings,
}

/// `n` log-spaced separations in `[r_min, r_max]`.
pub fn log_grid(r_min: f64, r_max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![r_min],
        _ => (0..n)
            .map(|i| {
                if i == 0 {
                    return r_min;
                }
                if i == n - 1 {
                    return r_max;
                }
                let f = i as f64 / (n - 1) as f64;
                (r_min.ln() + f * (r_max.ln() - r_min.ln())).exp()
            })
            .collect(),
    }
}

/// Runs the re-preparation protocol for every separation. Trajectory `j` of
/// point `k` draws from stream `k·trajectories_per_point + j`, and results are
/// summed in index order, so the output does not depend on the thread pool.
pub fn flip_sweep(base: &SimulationParams, settings: &SweepSettings) -> Result<Vec<SweepPoint>> {
    flip_sweep_with_progress(base, settings, |_, _| {})
}

pub fn flip_sweep_with_progress(
    base: &SimulationParams,
    settings: &SweepSettings,
    progress: impl Fn(usize, &SweepPoint) + Sync,
) -> Result<Vec<SweepPoint>> {
    if settings.trajectories_per_point == 0 {
        return Err(Error::InvalidParams(
            "need at least one trajectory per point".into(),
        ));
    }
    let mut out = Vec::with_capacity(settings.r_values.len());
    for (k, &r) in settings.r_values.iter().enumerate() {
        let point = sweep_point(base, settings, k, r).map_err(|e| e.at_separation(r))?;
        progress(k, &point);
        out.push(point);
    }
    Ok(out)
}

fn sweep_point(
    base: &SimulationParams,
    settings: &SweepSettings,
    k: usize,
    r: f64,
) -> Result<SweepPoint> {
    if !(0.05..=10.0).contains(&r) && r < 1e3 {
        // Far separations are allowed as a no-coupling control.
        if r < 0.05 {
            return Err(Error::InvalidGeometry(format!(
                "sweep separations must be >= 0.05, got {r}"
            )));
        }
    }
    let params = SimulationParams {
        geom: Geometry { r, ..base.geom },
        t_max: settings.t_max,
        ..base.clone()
    };
    params.validate()?;
    let c12 = params.coupling()?;
    let gen = build_conditional_generator(&params, &c12)?;
    let channels = jump_channels(&params, &c12)?;
    let prop = Propagator::new(&gen, &channels, params.dt, params.stepper)?;
    let n = settings.trajectories_per_point;
    let first = k as u64 * n;
    let tallies: Vec<TrajectoryTally> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut rng = trajectory_rng(params.seed, first + j);
            let run = run_protocol(&params, &prop, &settings.protocol, &mut rng)?;
            Ok(TrajectoryTally::of(&run, &settings.protocol))
        })
        .collect::<Result<_>>()?;
    let totals = tallies
        .into_iter()
        .fold(TrajectoryTally::default(), TrajectoryTally::add);
    Ok(SweepPoint::from_totals(
        r,
        c12.abs_sq(),
        &totals,
        settings.protocol.bin_width,
    ))
}

/// Least-squares scaling factor of `flip_rate ≈ c_s·|γ₁₂|²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub c_s: f64,
    pub residual: f64,
    pub points_used: usize,
}

/// Closed-form one-parameter fit through the origin over the points with
/// `|γ₁₂|² > 0`.
pub fn fit_scaling(points: &[SweepPoint]) -> Result<FitResult> {
    let used: Vec<&SweepPoint> = points.iter().filter(|p| p.abs_gamma12_sq > 0.0).collect();
    let sgg: f64 = used
        .iter()
        .map(|p| p.abs_gamma12_sq * p.abs_gamma12_sq)
        .sum();
    if !(sgg > 0.0) {
        return Err(Error::DegenerateSweep(
            "all |gamma12|^2 values are zero".into(),
        ));
    }
    if used.len() < 3 {
        return Err(Error::DegenerateSweep(format!(
            "need at least 3 points with |gamma12|^2 > 0, got {}",
            used.len()
        )));
    }
    let sfg: f64 = used.iter().map(|p| p.flip_rate * p.abs_gamma12_sq).sum();
    let c_s = sfg / sgg;
    let residual = used
        .iter()
        .map(|p| (p.flip_rate - c_s * p.abs_gamma12_sq).powi(2))
        .sum();
    Ok(FitResult {
        c_s,
        residual,
        points_used: used.len(),
    })
}

/// Pearson correlation of two equally long samples.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn write_sweep_csv<W: Write>(out: &mut W, points: &[SweepPoint]) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            g12(p.r),
            p.flips,
            g12(p.live_time),
            g12(p.flip_rate),
            g12(p.stderr),
            g12(p.abs_gamma12_sq),
            g12(p.flip_rate_total_time)
        )?;
    }
    Ok(())
}

/// Reads a sweep CSV, skipping `#` comment lines. Columns not present in the
/// file are left at zero.
pub fn read_sweep_csv<R: BufRead>(input: R) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::new();
    let mut seen_header = false;
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let context = || format!("sweep csv line {}", lineno + 1);
        if !seen_header {
            if line != SWEEP_CSV_HEADER {
                return Err(Error::Parse {
                    context: context(),
                    message: format!("expected header {SWEEP_CSV_HEADER:?}"),
                });
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Parse {
                context: context(),
                message: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].trim().parse().map_err(|_| Error::Parse {
                context: context(),
                message: format!("bad number {:?}", fields[i]),
            })
        };
        let flips = num(1)?;
        let flip_rate_total_time = num(6)?;
        let total_time = if flip_rate_total_time > 0.0 {
            flips / flip_rate_total_time
        } else {
            0.0
        };
        points.push(SweepPoint {
            r: num(0)?,
            flips: flips as u64,
            live_time: num(2)?,
            flip_rate: num(3)?,
            stderr: num(4)?,
            abs_gamma12_sq: num(5)?,
            total_time,
            flip_rate_total_time,
            both_bright_bins: 0,
            total_bins: 0,
        });
    }
    if !seen_header {
        return Err(Error::Parse {
            context: "sweep csv".into(),
            message: "missing header".into(),
        });
    }
    Ok(points)
}
