//! Master-equation reference for the trajectory ensemble.
//!
//! `dρ/dt = −(K ρ + ρ K†) + Σ_c rate_c L_c ρ L_c†`, integrated with classical
//! fixed-step RK4. The generator and channels are the same objects the
//! trajectories use, so agreement between the two checks the unraveling.

use std::io::Write;

use nalgebra::SMatrix;
use num_complex::Complex64;

use crate::dynamics::{ConditionalGenerator, JumpChannel};
use crate::error::{Error, Result};
use crate::fmt::g12;
use crate::hilbert::{StateVector, DIM};

/// Header shared by oracle checkpoints and trajectory population samples.
pub const POPULATION_CSV_HEADER: &str = "t,p11,p12,p13,p21,p22,p23,p31,p32,p33";

pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-9;
pub const POSITIVITY_TOL: f64 = 1e-8;

type Mat = SMatrix<Complex64, DIM, DIM>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix(Mat);

impl DensityMatrix {
    pub fn from_matrix(m: Mat) -> Self {
        DensityMatrix(m)
    }

    /// `|ψ⟩⟨ψ|/⟨ψ|ψ⟩`.
    pub fn pure(psi: &StateVector) -> Self {
        let v = psi.as_vector();
        DensityMatrix(v * v.adjoint() / Complex64::new(psi.norm_sq(), 0.0))
    }

    pub fn matrix(&self) -> &Mat {
        &self.0
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    pub fn populations(&self) -> [f64; DIM] {
        std::array::from_fn(|i| self.0[(i, i)].re)
    }

    pub fn hermiticity_error(&self) -> f64 {
        (self.0 - self.0.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (self.0 + self.0.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigenvalues().min()
    }

    /// Checks Hermiticity, unit trace and positivity.
    pub fn check(&self, t: f64) -> Result<()> {
        let fail = |what: String| Err(Error::Invariant { t, what });
        let h = self.hermiticity_error();
        if !(h <= HERMITICITY_TOL) {
            return fail(format!("hermiticity error {h:e}"));
        }
        let tr = self.trace();
        if !((tr.re - 1.0).abs() <= TRACE_TOL && tr.im.abs() <= TRACE_TOL) {
            return fail(format!("trace {tr}"));
        }
        let e = self.min_eigenvalue();
        if !(e >= -POSITIVITY_TOL) {
            return fail(format!("minimum eigenvalue {e:e}"));
        }
        Ok(())
    }
}

/// Right-hand side of the master equation.
pub fn lindblad_rhs(
    rho: &DensityMatrix,
    gen: &ConditionalGenerator,
    channels: &[JumpChannel],
) -> DensityMatrix {
    let k = gen.matrix.matrix();
    let r = &rho.0;
    let mut out = -(k * r + r * k.adjoint());
    for c in channels {
        let l = c.operator.matrix();
        out += l * r * l.adjoint() * Complex64::new(c.rate, 0.0);
    }
    DensityMatrix(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Checkpoint {
    pub t: f64,
    pub rho: DensityMatrix,
}

/// Integrates from `rho0` to `t_end` with RK4 steps of `dt_ode`, recording a
/// checkpoint at `t = 0` and every `checkpoint_every` steps after it (and at
/// `t_end`). Invariants are asserted at every checkpoint.
pub fn integrate(
    rho0: &DensityMatrix,
    gen: &ConditionalGenerator,
    channels: &[JumpChannel],
    t_end: f64,
    dt_ode: f64,
    checkpoint_every: u64,
) -> Result<Vec<Checkpoint>> {
    if !(dt_ode > 0.0) || !(t_end >= 0.0) || checkpoint_every == 0 {
        return Err(Error::InvalidParams(format!(
            "integrate needs dt_ode > 0, t_end >= 0, checkpoint_every >= 1 \
             (got {dt_ode}, {t_end}, {checkpoint_every})"
        )));
    }
    rho0.check(0.0)?;
    let steps = (t_end / dt_ode).round() as u64;
    let mut rho = *rho0;
    let mut out = vec![Checkpoint { t: 0.0, rho }];
    let half = Complex64::new(dt_ode / 2.0, 0.0);
    let full = Complex64::new(dt_ode, 0.0);
    let sixth = Complex64::new(dt_ode / 6.0, 0.0);
    let two = Complex64::new(2.0, 0.0);
    for step in 1..=steps {
        let k1 = lindblad_rhs(&rho, gen, channels).0;
        let k2 = lindblad_rhs(&DensityMatrix(rho.0 + k1 * half), gen, channels).0;
        let k3 = lindblad_rhs(&DensityMatrix(rho.0 + k2 * half), gen, channels).0;
        let k4 = lindblad_rhs(&DensityMatrix(rho.0 + k3 * full), gen, channels).0;
        rho.0 += (k1 + k2 * two + k3 * two + k4) * sixth;
        if step % checkpoint_every == 0 || step == steps {
            let t = step as f64 * dt_ode;
            rho.check(t)?;
            out.push(Checkpoint { t, rho });
        }
    }
    Ok(out)
}

/// Writes `t,p11,...,p33` rows.
pub fn write_population_csv<W: Write>(
    out: &mut W,
    rows: impl IntoIterator<Item = (f64, [f64; DIM])>,
) -> std::io::Result<()> {
    writeln!(out, "{POPULATION_CSV_HEADER}")?;
    for (t, p) in rows {
        let mut line = g12(t);
        for x in p {
            line.push(',');
            line.push_str(&g12(x));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{CrossCoupling, TransitionRates};
    use crate::dynamics::{build_conditional_generator, jump_channels, SimulationParams};
    use crate::hilbert::{basis_index, Level::*};
    use proptest::prelude::*;

    fn setup(
        p: &SimulationParams,
        c12: &CrossCoupling,
    ) -> (ConditionalGenerator, Vec<JumpChannel>) {
        (
            build_conditional_generator(p, c12).unwrap(),
            jump_channels(p, c12).unwrap(),
        )
    }

    fn no_drive() -> SimulationParams {
        SimulationParams {
            rabi: 0.0,
            ..SimulationParams::default()
        }
    }

    #[test]
    fn dark_state_is_stationary() {
        let p = no_drive();
        let (gen, ch) = setup(&p, &p.coupling().unwrap());
        let rho = DensityMatrix::pure(&StateVector::basis(Ground, Ground));
        let d = lindblad_rhs(&rho, &gen, &ch);
        assert!(d.0.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn excited_population_decays_at_total_rate() {
        let p = no_drive();
        let (gen, ch) = setup(&p, &CrossCoupling::ZERO);
        let rho = DensityMatrix::pure(&StateVector::basis(Upper, Metastable));
        let d = lindblad_rhs(&rho, &gen, &ch);
        let i = basis_index(Upper, Metastable);
        let expected = -2.0 * (p.rates.gamma13 + p.rates.gamma12 + p.rates.gamma23);
        // |1,2⟩ also loses population through atom 2's 2→3 decay.
        assert!((d.0[(i, i)].re - expected).abs() < 1e-14);
        // Population of atom 1's upper level decays at 2(γ¹³ + γ¹²).
        let p11: f64 = [Upper, Metastable, Ground]
            .iter()
            .map(|&m| d.0[(basis_index(Upper, m), basis_index(Upper, m))].re)
            .sum();
        assert!((p11 + 2.0 * (p.rates.gamma13 + p.rates.gamma12)).abs() < 1e-14);
    }

    fn arb_density() -> impl Strategy<Value = DensityMatrix> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), DIM * DIM).prop_map(|v| {
            let a = Mat::from_fn(|i, j| {
                let (re, im) = v[i * DIM + j];
                Complex64::new(re, im)
            });
            let m = a * a.adjoint();
            let tr = m.trace();
            DensityMatrix(m / tr)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn rhs_is_traceless(rho in arb_density(), r in 0.05f64..5.0) {
            let p = SimulationParams { geom: crate::coupling::Geometry::with_r(r), ..SimulationParams::default() };
            let (gen, ch) = setup(&p, &p.coupling().unwrap());
            let d = lindblad_rhs(&rho, &gen, &ch);
            prop_assert!(d.trace().norm() < 1e-12);
            prop_assert!(d.hermiticity_error() < 1e-12);
        }
    }

    #[test]
    fn zero_time_returns_initial_state() {
        let p = SimulationParams::default();
        let (gen, ch) = setup(&p, &p.coupling().unwrap());
        let rho0 = DensityMatrix::pure(&p.initial_state);
        let out = integrate(&rho0, &gen, &ch, 0.0, 1e-3, 10).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].rho, rho0);
    }

    #[test]
    fn undamped_rabi_oscillation_has_period_pi_over_rabi() {
        let rabi = 4.0;
        let p = SimulationParams {
            rabi,
            rates: TransitionRates {
                gamma13: 0.0,
                gamma12: 0.0,
                gamma23: 0.0,
            },
            ..SimulationParams::default()
        };
        let (gen, ch) = setup(&p, &CrossCoupling::ZERO);
        let rho0 = DensityMatrix::pure(&StateVector::basis(Ground, Ground));
        let dt = 1e-4;
        let out = integrate(&rho0, &gen, &ch, 2.0, dt, 1).unwrap();
        let upper1 = |c: &Checkpoint| {
            let p = c.rho.populations();
            p[basis_index(Upper, Upper)]
                + p[basis_index(Upper, Metastable)]
                + p[basis_index(Upper, Ground)]
        };
        for c in out.iter().step_by(500) {
            let exact = (rabi * c.t).sin().powi(2);
            assert!((upper1(c) - exact).abs() < 1e-9, "t = {}", c.t);
        }
        // Recurrences of the ground state sit at multiples of 2π/(2Ω_R).
        let period = std::f64::consts::PI / rabi;
        let mut minima = Vec::new();
        for w in out.windows(3) {
            if upper1(&w[1]) < upper1(&w[0]) && upper1(&w[1]) <= upper1(&w[2]) {
                minima.push(w[1].t);
            }
        }
        assert!(minima.len() >= 2);
        assert!(((minima[1] - minima[0]) - period).abs() < 2.0 * dt);
    }

    #[test]
    fn driven_two_level_steady_state() {
        // Couplings to the metastable level off: each atom is a driven
        // two-level system with steady excitation Ω²/(γ² + 2Ω²).
        let rabi = 8.0;
        let p = SimulationParams {
            rabi,
            rates: TransitionRates {
                gamma13: 1.0,
                gamma12: 0.0,
                gamma23: 0.0,
            },
            initial_state: StateVector::basis(Ground, Ground),
            ..SimulationParams::default()
        };
        let (gen, ch) = setup(&p, &CrossCoupling::ZERO);
        let out = integrate(
            &DensityMatrix::pure(&p.initial_state),
            &gen,
            &ch,
            20.0,
            1e-3,
            20_000,
        )
        .unwrap();
        let last = out.last().unwrap().rho.populations();
        let upper1 = last[0] + last[1] + last[2];
        let exact = rabi * rabi / (1.0 + 2.0 * rabi * rabi);
        assert!((upper1 - exact).abs() < 1e-6, "{upper1} vs {exact}");
    }

    #[test]
    fn step_halving_converges() {
        let p = SimulationParams::default();
        let (gen, ch) = setup(&p, &p.coupling().unwrap());
        let rho0 = DensityMatrix::pure(&p.initial_state);
        let a = integrate(&rho0, &gen, &ch, 20.0, 1e-3, 20_000).unwrap();
        let b = integrate(&rho0, &gen, &ch, 20.0, 5e-4, 40_000).unwrap();
        let pa = a.last().unwrap().rho.populations();
        let pb = b.last().unwrap().rho.populations();
        let diff = pa
            .iter()
            .zip(pb)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff:e}");
    }

    #[test]
    fn invariant_violation_reports_time() {
        let bad = DensityMatrix(Mat::identity());
        assert!(matches!(bad.check(1.5), Err(Error::Invariant { t, .. }) if t == 1.5));
    }

    #[test]
    fn population_csv_layout() {
        let mut buf = Vec::new();
        write_population_csv(&mut buf, [(0.0, [0.0; DIM]), (0.5, [1.0 / 9.0; DIM])]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], POPULATION_CSV_HEADER);
        assert_eq!(lines[2].split(',').count(), 10);
    }
}
