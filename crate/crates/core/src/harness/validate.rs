//! Trajectory ensemble against the master equation.

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{
    build_conditional_generator, jump_channels, run_trajectory, SimulationParams,
};
use crate::error::{Error, Result};
use crate::hilbert::DIM;
use crate::oracle::{integrate, DensityMatrix};
use crate::rng::trajectory_rng;

/// Deviations below this are accepted regardless of the sampling error.
pub const ABS_FLOOR: f64 = 0.02;
/// Allowed deviation in units of the standard error of the ensemble mean.
pub const SIGMAS: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckpointReport {
    pub t: f64,
    pub ensemble: [f64; DIM],
    pub oracle: [f64; DIM],
    pub stderr: [f64; DIM],
    /// Largest `|ensemble − oracle|` over the nine populations.
    pub max_abs_diff: f64,
    /// Largest ratio of deviation to its bound `max(4σ, 0.02)`.
    pub worst_ratio: f64,
}

impl CheckpointReport {
    pub fn passed(&self) -> bool {
        self.worst_ratio < 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub trajectories: u64,
    pub checkpoints: Vec<CheckpointReport>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checkpoints.iter().all(CheckpointReport::passed)
    }

    pub fn max_abs_diff(&self) -> f64 {
        self.checkpoints
            .iter()
            .map(|c| c.max_abs_diff)
            .fold(0.0, f64::max)
    }

    pub fn worst_ratio(&self) -> f64 {
        self.checkpoints
            .iter()
            .map(|c| c.worst_ratio)
            .fold(0.0, f64::max)
    }
}

/// Runs `trajectories` trajectories over `[0, params.t_max]` and compares the
/// mean populations every `checkpoint_steps` steps with an RK4 integration
/// of the master equation at the same `dt`.
pub fn validate_ensemble(
    params: &SimulationParams,
    trajectories: u64,
    checkpoint_steps: u64,
) -> Result<ValidationReport> {
    if trajectories < 2 {
        return Err(Error::InvalidParams(
            "validation needs at least 2 trajectories".into(),
        ));
    }
    let params = SimulationParams {
        sample_every: Some(checkpoint_steps),
        ..params.clone()
    };
    params.validate()?;
    let c12 = params.coupling()?;
    let gen = build_conditional_generator(&params, &c12)?;
    let channels = jump_channels(&params, &c12)?;
    let oracle = integrate(
        &DensityMatrix::pure(&params.initial_state.normalize()?),
        &gen,
        &channels,
        params.t_max,
        params.dt,
        checkpoint_steps,
    )?;
    let runs: Vec<Vec<[f64; DIM]>> = (0..trajectories)
        .into_par_iter()
        .map(|j| {
            let mut rng = trajectory_rng(params.seed, j);
            let run = run_trajectory(&params, &channels, &gen, &mut rng)?;
            Ok(run.samples.into_iter().map(|s| s.populations).collect())
        })
        .collect::<Result<_>>()?;
    let n_points = runs[0].len().min(oracle.len());
    let n = trajectories as f64;
    let mut checkpoints = Vec::with_capacity(n_points);
    for (k, cp) in oracle.iter().enumerate().take(n_points) {
        let mut sum = [0.0; DIM];
        let mut sum_sq = [0.0; DIM];
        for run in &runs {
            for i in 0..DIM {
                sum[i] += run[k][i];
                sum_sq[i] += run[k][i] * run[k][i];
            }
        }
        let reference = cp.rho.populations();
        let mut report = CheckpointReport {
            t: cp.t,
            ensemble: [0.0; DIM],
            oracle: reference,
            stderr: [0.0; DIM],
            max_abs_diff: 0.0,
            worst_ratio: 0.0,
        };
        for i in 0..DIM {
            let mean = sum[i] / n;
            let var = ((sum_sq[i] - n * mean * mean) / (n - 1.0)).max(0.0);
            let se = (var / n).sqrt();
            let diff = (mean - reference[i]).abs();
            report.ensemble[i] = mean;
            report.stderr[i] = se;
            report.max_abs_diff = report.max_abs_diff.max(diff);
            report.worst_ratio = report.worst_ratio.max(diff / (SIGMAS * se).max(ABS_FLOOR));
        }
        checkpoints.push(report);
    }
    Ok(ValidationReport {
        trajectories,
        checkpoints,
    })
}
