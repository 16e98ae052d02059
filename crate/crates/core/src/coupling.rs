//! Distance- and angle-dependent dipole-dipole coefficients.
//!
//! For a transition `n ↔ m` with per-atom rate `γ` (half the Einstein A
//! coefficient), separation `r` and dipole angle `θ`, the cross coefficient is
//! `γ₁₂ = γ_dd + i·Ω_dd` with `x = k·r`, `A = 1 − cos²θ`, `B = 1 − 3cos²θ`:
//!
//! ```text
//! γ_dd = (3γ/2)·[ A·sin x/x + B·(cos x/x² − sin x/x³) ]
//! Ω_dd = (3γ/2)·[ −A·cos x/x + B·(sin x/x² + cos x/x³) ]
//! ```
//!
//! `γ_dd` tends to `γ` as `x → 0` and never exceeds it in magnitude, so the
//! collective damping rates `γ ± γ_dd` stay nonnegative. `Ω_dd` diverges as
//! `x⁻³` in the near field. Lengths are in units of λ₁₂, rates in units of γ¹³.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::g12;

/// Header of the coupling-scan CSV.
pub const SCAN_CSV_HEADER: &str = "r_over_lambda12,gamma_dd,omega_dd,abs_gamma12_sq";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransitionId {
    #[serde(rename = "t12")]
    T12,
    #[serde(rename = "t13")]
    T13,
    #[serde(rename = "t23")]
    T23,
}

impl TransitionId {
    pub const ALL: [TransitionId; 3] = [TransitionId::T12, TransitionId::T13, TransitionId::T23];

    pub fn as_str(self) -> &'static str {
        match self {
            TransitionId::T12 => "t12",
            TransitionId::T13 => "t13",
            TransitionId::T23 => "t23",
        }
    }

    pub fn parse(s: &str) -> Option<TransitionId> {
        match s {
            "t12" | "12" => Some(TransitionId::T12),
            "t13" | "13" => Some(TransitionId::T13),
            "t23" | "23" => Some(TransitionId::T23),
            _ => None,
        }
    }

    fn index(self) -> usize {
        match self {
            TransitionId::T12 => 0,
            TransitionId::T13 => 1,
            TransitionId::T23 => 2,
        }
    }
}

/// Per-atom rates γ^{nm}; `2γ^{nm}` is the Einstein A coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionRates {
    pub gamma13: f64,
    pub gamma12: f64,
    pub gamma23: f64,
}

impl TransitionRates {
    pub fn get(&self, transition: TransitionId) -> f64 {
        match transition {
            TransitionId::T12 => self.gamma12,
            TransitionId::T13 => self.gamma13,
            TransitionId::T23 => self.gamma23,
        }
    }

    /// Rates must be finite and nonnegative. Zero rates are accepted for
    /// limiting-case studies; the configuration layer requires them positive.
    pub fn validate(&self) -> Result<()> {
        for t in TransitionId::ALL {
            let g = self.get(t);
            if !(g >= 0.0) || !g.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "rate gamma{} must be finite and >= 0, got {g}",
                    &t.as_str()[1..]
                )));
            }
        }
        Ok(())
    }
}

impl Default for TransitionRates {
    fn default() -> Self {
        TransitionRates {
            gamma13: 1.0,
            gamma12: 2e-2,
            // Must stay well below the dipole-mediated flip rate, otherwise
            // 2→3 decays of the dark atom dominate the record.
            gamma23: 1e-6,
        }
    }
}

/// Atom separation and dipole orientations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Separation in units of λ₁₂.
    pub r: f64,
    /// Angle between the transition dipole and the interatomic axis,
    /// per transition in the order t12, t13, t23.
    pub theta: [f64; 3],
    /// λ₁₃/λ₁₂.
    pub wavelength_ratio_13: f64,
    /// λ₂₃/λ₁₂.
    pub wavelength_ratio_23: f64,
}

impl Geometry {
    pub fn with_r(r: f64) -> Self {
        Geometry {
            r,
            ..Geometry::default()
        }
    }

    pub fn theta(&self, transition: TransitionId) -> f64 {
        self.theta[transition.index()]
    }

    pub fn set_theta(&mut self, transition: TransitionId, theta: f64) {
        self.theta[transition.index()] = theta;
    }

    pub fn wavelength_ratio(&self, transition: TransitionId) -> f64 {
        match transition {
            TransitionId::T12 => 1.0,
            TransitionId::T13 => self.wavelength_ratio_13,
            TransitionId::T23 => self.wavelength_ratio_23,
        }
    }

    /// `k_nm·r = 2π r / λ_nm` with `r` in units of λ₁₂.
    pub fn phase(&self, transition: TransitionId) -> f64 {
        2.0 * PI * self.r / self.wavelength_ratio(transition)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::InvalidGeometry(format!(
                "separation must be > 0, got {}",
                self.r
            )));
        }
        for t in TransitionId::ALL {
            let theta = self.theta(t);
            if !(0.0..=PI).contains(&theta) {
                return Err(Error::InvalidGeometry(format!(
                    "theta for {} must lie in [0, pi], got {theta}",
                    t.as_str()
                )));
            }
        }
        for ratio in [self.wavelength_ratio_13, self.wavelength_ratio_23] {
            if !(ratio > 0.0) || !ratio.is_finite() {
                return Err(Error::InvalidGeometry(format!(
                    "wavelength ratios must be > 0, got {ratio}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for Geometry {
    /// Dipoles perpendicular to the axis; wavelength ratios of In⁺
    /// (9.3 µm on 1↔2, 230.6 nm on 1↔3, 236.5 nm on 2↔3).
    fn default() -> Self {
        Geometry {
            r: 0.5,
            theta: [FRAC_PI_2; 3],
            wavelength_ratio_13: 230.6e-9 / 9.3e-6,
            wavelength_ratio_23: 236.5e-9 / 9.3e-6,
        }
    }
}

/// Cross coefficient `γ₁₂ = gamma_dd + i·omega_dd`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossCoupling {
    pub gamma_dd: f64,
    pub omega_dd: f64,
}

impl CrossCoupling {
    pub const ZERO: CrossCoupling = CrossCoupling {
        gamma_dd: 0.0,
        omega_dd: 0.0,
    };

    pub fn complex(&self) -> Complex64 {
        Complex64::new(self.gamma_dd, self.omega_dd)
    }

    /// `|γ₁₂|²`.
    pub fn abs_sq(&self) -> f64 {
        self.gamma_dd * self.gamma_dd + self.omega_dd * self.omega_dd
    }
}

/// Coupling in units of the transition rate as a function of `x = k·r` and
/// the dipole angle.
pub fn coupling_profile(x: f64, theta: f64) -> CrossCoupling {
    let c2 = theta.cos().powi(2);
    let a = 1.0 - c2;
    let b = 1.0 - 3.0 * c2;
    // At the magic angle B is pure rounding noise, which the 1/x³ terms
    // would amplify in the near field.
    let b = if b.abs() < 8.0 * f64::EPSILON { 0.0 } else { b };
    let (s, c) = x.sin_cos();
    let x2 = x * x;
    let x3 = x2 * x;
    CrossCoupling {
        gamma_dd: 1.5 * (a * s / x + b * (c / x2 - s / x3)),
        omega_dd: 1.5 * (-a * c / x + b * (s / x2 + c / x3)),
    }
}

pub fn cross_coupling(
    transition: TransitionId,
    rates: &TransitionRates,
    geom: &Geometry,
) -> Result<CrossCoupling> {
    geom.validate()?;
    let gamma = rates.get(transition);
    let unit = coupling_profile(geom.phase(transition), geom.theta(transition));
    Ok(CrossCoupling {
        gamma_dd: gamma * unit.gamma_dd,
        omega_dd: gamma * unit.omega_dd,
    })
}

/// One row of a coupling scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CouplingRow {
    pub r: f64,
    pub gamma_dd: f64,
    pub omega_dd: f64,
    pub abs_gamma12_sq: f64,
}

/// Evaluates the coupling on `points` uniformly spaced separations in
/// `[r_min, r_max]`, endpoints included. `geom` supplies the wavelength
/// ratios; `theta` overrides its angle for `transition`.
pub fn coupling_scan(
    transition: TransitionId,
    rates: &TransitionRates,
    geom: &Geometry,
    theta: f64,
    r_min: f64,
    r_max: f64,
    points: usize,
) -> Result<Vec<CouplingRow>> {
    if !(r_min > 0.0 && r_min < r_max) || !r_max.is_finite() {
        return Err(Error::InvalidGeometry(format!(
            "scan needs 0 < r_min < r_max, got [{r_min}, {r_max}]"
        )));
    }
    if points < 2 {
        return Err(Error::InvalidParams(format!(
            "scan needs at least 2 points, got {points}"
        )));
    }
    let mut g = *geom;
    g.set_theta(transition, theta);
    let step = (r_max - r_min) / (points - 1) as f64;
    (0..points)
        .map(|i| {
            // Endpoints are hit exactly.
            g.r = if i == points - 1 {
                r_max
            } else {
                r_min + step * i as f64
            };
            let c = cross_coupling(transition, rates, &g)?;
            Ok(CouplingRow {
                r: g.r,
                gamma_dd: c.gamma_dd,
                omega_dd: c.omega_dd,
                abs_gamma12_sq: c.abs_sq(),
            })
        })
        .collect()
}

/// Writes rows under [`SCAN_CSV_HEADER`] with twelve significant digits.
pub fn write_scan_csv<W: Write>(out: &mut W, rows: &[CouplingRow]) -> std::io::Result<()> {
    writeln!(out, "{SCAN_CSV_HEADER}")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{}",
            g12(row.r),
            g12(row.gamma_dd),
            g12(row.omega_dd),
            g12(row.abs_gamma12_sq)
        )?;
    }
    Ok(())
}
