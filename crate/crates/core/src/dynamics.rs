//! Conditional generator, jump channels and single quantum trajectories.
//!
//! Between detections the state evolves as `ψ ← (1 − K·dt)·ψ` with the
//! non-Hermitian generator
//!
//! ```text
//! K = Σ_{n<m} Σ_{i,j} γ_ij^{nm} σ_i^{nm} σ_j^{mn} + i·Ω_R·Σ_i (σ_i^{13} + σ_i^{31})
//! ```
//!
//! where `γ_ii^{nm} = γ^{nm}` and the only nonzero cross term is
//! `γ_12^{12} = γ_dd + i·Ω_dd` on the metastable transition. The Hermitian part
//! of `K` equals `½ Σ_c rate_c L_c†L_c` over the jump channels returned by
//! [`jump_channels`], which is what makes the unraveling reproduce the master
//! equation.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::{cross_coupling, CrossCoupling, Geometry, TransitionId, TransitionRates};
use crate::error::{Error, Result};
use crate::hilbert::{
    sigma, AtomId, Level, OperatorMatrix, SparseOperator, StateVector, DIM, ZERO,
};

/// Upper bound on `dt` times the fastest rate in the problem.
pub const MAX_STEP_PHASE: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stepper {
    /// `ψ ← (1 − K·dt)·ψ`.
    #[default]
    FirstOrder,
    /// `ψ ← exp(−K·dt)·ψ`, for checking discretization error.
    Exponential,
}

impl Stepper {
    pub fn as_str(self) -> &'static str {
        match self {
            Stepper::FirstOrder => "first-order",
            Stepper::Exponential => "exponential",
        }
    }

    pub fn parse(s: &str) -> Option<Stepper> {
        match s {
            "first-order" | "euler" => Some(Stepper::FirstOrder),
            "exponential" | "exact" => Some(Stepper::Exponential),
            _ => None,
        }
    }
}

/// Rates in units of γ¹³, times in units of 1/γ¹³.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationParams {
    pub rates: TransitionRates,
    pub geom: Geometry,
    /// Ω_R; `2Ω_R` is the Rabi frequency of the 1↔3 drive.
    pub rabi: f64,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    pub initial_state: StateVector,
    pub stepper: Stepper,
    /// Record populations every this many steps.
    pub sample_every: Option<u64>,
}

impl Default for SimulationParams {
    fn default() -> Self {
        SimulationParams {
            rates: TransitionRates::default(),
            geom: Geometry::default(),
            rabi: 8.0,
            dt: 1e-3,
            t_max: 1000.0,
            seed: 1,
            initial_state: StateVector::basis(Level::Upper, Level::Metastable),
            stepper: Stepper::FirstOrder,
            sample_every: None,
        }
    }
}

impl SimulationParams {
    /// Largest total decay rate out of any single-atom level.
    pub fn max_decay_rate(&self) -> f64 {
        let r = &self.rates;
        (r.gamma13 + r.gamma12).max(r.gamma23)
    }

    pub fn validate(&self) -> Result<()> {
        self.rates.validate()?;
        self.geom.validate()?;
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.rabi >= 0.0) || !self.rabi.is_finite() {
            return bad(format!("rabi must be finite and >= 0, got {}", self.rabi));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.t_max >= 0.0) || !self.t_max.is_finite() {
            return bad(format!("t_max must be finite and >= 0, got {}", self.t_max));
        }
        if self.stepper == Stepper::FirstOrder && self.dt * 2.0 * self.rabi > MAX_STEP_PHASE {
            return bad(format!(
                "dt * 2 * rabi = {} exceeds {MAX_STEP_PHASE}",
                self.dt * 2.0 * self.rabi
            ));
        }
        if self.dt * 2.0 * self.max_decay_rate() > MAX_STEP_PHASE {
            return bad(format!(
                "dt * 2 * max decay rate = {} exceeds {MAX_STEP_PHASE}",
                self.dt * 2.0 * self.max_decay_rate()
            ));
        }
        if (self.initial_state.norm_sq() - 1.0).abs() > 1e-9 {
            return bad("initial state must be normalized".into());
        }
        if self.sample_every == Some(0) {
            return bad("sample_every must be >= 1".into());
        }
        Ok(())
    }

    /// Cross coupling on the metastable transition at this geometry.
    pub fn coupling(&self) -> Result<CrossCoupling> {
        cross_coupling(TransitionId::T12, &self.rates, &self.geom)
    }

    /// Number of steps covering `[0, t_max]`.
    pub fn step_count(&self) -> u64 {
        (self.t_max / self.dt).round() as u64
    }
}

/// The operator `K` of a no-jump step `ψ ← (1 − K·dt)·ψ`.
#[derive(Clone, Debug)]
pub struct ConditionalGenerator {
    pub matrix: OperatorMatrix,
    sparse: SparseOperator,
}

impl ConditionalGenerator {
    pub fn new(matrix: OperatorMatrix) -> Self {
        ConditionalGenerator {
            sparse: matrix.compress(),
            matrix,
        }
    }
}

/// `σ_i^{nm} σ_j^{mn}`.
fn pair(i: AtomId, j: AtomId, n: Level, m: Level) -> OperatorMatrix {
    sigma(i, n, m) * sigma(j, m, n)
}

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

pub fn build_conditional_generator(
    params: &SimulationParams,
    c12: &CrossCoupling,
) -> Result<ConditionalGenerator> {
    params.rates.validate()?;
    if !params.rabi.is_finite() {
        return Err(Error::InvalidParams(format!("rabi = {}", params.rabi)));
    }
    use Level::*;
    let rates = &params.rates;
    let transitions = [
        (Upper, Metastable, rates.gamma12, c12.complex()),
        (Upper, Ground, rates.gamma13, ZERO),
        (Metastable, Ground, rates.gamma23, ZERO),
    ];
    let mut k = OperatorMatrix::zeros();
    for (n, m, gamma, cross) in transitions {
        for i in AtomId::BOTH {
            k = k + pair(i, i, n, m).scale(real(gamma));
            if cross != ZERO {
                k = k + pair(i, i.other(), n, m).scale(cross);
            }
        }
    }
    let drive = Complex64::new(0.0, params.rabi);
    for i in AtomId::BOTH {
        k = k + (sigma(i, Upper, Ground) + sigma(i, Ground, Upper)).scale(drive);
    }
    Ok(ConditionalGenerator::new(k))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelLabel {
    #[serde(rename = "det1_13")]
    Det1,
    #[serde(rename = "det2_13")]
    Det2,
    #[serde(rename = "a1_12")]
    Atom1Metastable,
    #[serde(rename = "a2_12")]
    Atom2Metastable,
    #[serde(rename = "a1_23")]
    Atom1Ground,
    #[serde(rename = "a2_23")]
    Atom2Ground,
    #[serde(rename = "coll12_sym")]
    CollectiveSym,
    #[serde(rename = "coll12_asym")]
    CollectiveAsym,
}

impl ChannelLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelLabel::Det1 => "det1_13",
            ChannelLabel::Det2 => "det2_13",
            ChannelLabel::Atom1Metastable => "a1_12",
            ChannelLabel::Atom2Metastable => "a2_12",
            ChannelLabel::Atom1Ground => "a1_23",
            ChannelLabel::Atom2Ground => "a2_23",
            ChannelLabel::CollectiveSym => "coll12_sym",
            ChannelLabel::CollectiveAsym => "coll12_asym",
        }
    }

    pub fn parse(s: &str) -> Option<ChannelLabel> {
        [
            ChannelLabel::Det1,
            ChannelLabel::Det2,
            ChannelLabel::Atom1Metastable,
            ChannelLabel::Atom2Metastable,
            ChannelLabel::Atom1Ground,
            ChannelLabel::Atom2Ground,
            ChannelLabel::CollectiveSym,
            ChannelLabel::CollectiveAsym,
        ]
        .into_iter()
        .find(|l| l.as_str() == s)
    }

    /// Detector that registers this emission, if any.
    pub fn detector(self) -> Option<AtomId> {
        match self {
            ChannelLabel::Det1 => Some(AtomId::First),
            ChannelLabel::Det2 => Some(AtomId::Second),
            _ => None,
        }
    }

    /// Whether the emission moves population on the metastable transition.
    pub fn is_metastable_decay(self) -> bool {
        matches!(
            self,
            ChannelLabel::Atom1Metastable
                | ChannelLabel::Atom2Metastable
                | ChannelLabel::CollectiveSym
                | ChannelLabel::CollectiveAsym
        )
    }
}

/// How the decay on the metastable transition is split into channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ChannelBasis {
    /// Symmetric and antisymmetric channels diagonalizing the collective
    /// damping matrix.
    #[default]
    Collective,
    /// One channel per atom; valid only when `γ_dd = 0`.
    PerAtom,
}

#[derive(Clone, Debug)]
pub struct JumpChannel {
    pub label: ChannelLabel,
    pub operator: OperatorMatrix,
    /// Rate in units of γ¹³; the jump probability per step is
    /// `rate·dt·⟨L†L⟩`.
    pub rate: f64,
    pub detector: Option<AtomId>,
    sparse: SparseOperator,
}

impl JumpChannel {
    pub fn new(label: ChannelLabel, operator: OperatorMatrix, rate: f64) -> Self {
        JumpChannel {
            label,
            detector: label.detector(),
            sparse: operator.compress(),
            operator,
            rate,
        }
    }

    /// `rate·dt·‖Lψ‖²/‖ψ‖²`.
    pub fn probability(&self, psi: &StateVector, dt: f64) -> f64 {
        self.rate * dt * self.sparse.norm_sq_of_image(psi.as_slice()) / psi.norm_sq()
    }
}

/// Channels in the fixed sampling order
/// `det1, det2, a1_23, a2_23, coll12_sym, coll12_asym`.
pub fn jump_channels(params: &SimulationParams, c12: &CrossCoupling) -> Result<Vec<JumpChannel>> {
    jump_channels_in(params, c12, ChannelBasis::Collective)
}

pub fn jump_channels_in(
    params: &SimulationParams,
    c12: &CrossCoupling,
    basis: ChannelBasis,
) -> Result<Vec<JumpChannel>> {
    use Level::*;
    params.rates.validate()?;
    let rates = &params.rates;
    let lower = |atom, to, from| sigma(atom, to, from);
    let mut channels = vec![
        JumpChannel::new(
            ChannelLabel::Det1,
            lower(AtomId::First, Ground, Upper),
            2.0 * rates.gamma13,
        ),
        JumpChannel::new(
            ChannelLabel::Det2,
            lower(AtomId::Second, Ground, Upper),
            2.0 * rates.gamma13,
        ),
        JumpChannel::new(
            ChannelLabel::Atom1Ground,
            lower(AtomId::First, Ground, Metastable),
            2.0 * rates.gamma23,
        ),
        JumpChannel::new(
            ChannelLabel::Atom2Ground,
            lower(AtomId::Second, Ground, Metastable),
            2.0 * rates.gamma23,
        ),
    ];
    let s1 = lower(AtomId::First, Metastable, Upper);
    let s2 = lower(AtomId::Second, Metastable, Upper);
    match basis {
        ChannelBasis::Collective => {
            let tol = 1e-12 * rates.gamma12.max(f64::MIN_POSITIVE);
            let sym = 2.0 * (rates.gamma12 + c12.gamma_dd);
            let asym = 2.0 * (rates.gamma12 - c12.gamma_dd);
            for (label, rate) in [
                (ChannelLabel::CollectiveSym, sym),
                (ChannelLabel::CollectiveAsym, asym),
            ] {
                if rate < -2.0 * tol || !rate.is_finite() {
                    return Err(Error::NegativeRate {
                        channel: label.as_str(),
                        rate,
                    });
                }
            }
            let h = real(FRAC_1_SQRT_2);
            channels.push(JumpChannel::new(
                ChannelLabel::CollectiveSym,
                (s1 + s2).scale(h),
                sym.max(0.0),
            ));
            channels.push(JumpChannel::new(
                ChannelLabel::CollectiveAsym,
                (s1 - s2).scale(h),
                asym.max(0.0),
            ));
        }
        ChannelBasis::PerAtom => {
            if c12.gamma_dd != 0.0 {
                return Err(Error::InvalidParams(format!(
                    "per-atom metastable channels need gamma_dd = 0, got {}",
                    c12.gamma_dd
                )));
            }
            channels.push(JumpChannel::new(
                ChannelLabel::Atom1Metastable,
                s1,
                2.0 * rates.gamma12,
            ));
            channels.push(JumpChannel::new(
                ChannelLabel::Atom2Metastable,
                s2,
                2.0 * rates.gamma12,
            ));
        }
    }
    Ok(channels)
}

/// `(1 − K·dt)·ψ`, unnormalized.
pub fn step_no_jump(psi: &StateVector, gen: &ConditionalGenerator, dt: f64) -> StateVector {
    let mut k_psi = [ZERO; DIM];
    gen.sparse.apply_into(psi.as_slice(), &mut k_psi);
    let mut out = *psi;
    for (o, k) in out.as_mut_slice().iter_mut().zip(k_psi) {
        *o -= k * dt;
    }
    out
}

/// Index of the channel whose probability interval contains `u`, where the
/// intervals are laid out consecutively from 0 in channel order.
pub fn sample_jump_index(
    psi: &StateVector,
    channels: &[JumpChannel],
    dt: f64,
    u: f64,
) -> Result<Option<usize>> {
    let mut probs = [0.0; 8];
    let n2 = psi.norm_sq();
    let mut total = 0.0;
    for (p, c) in probs.iter_mut().zip(channels) {
        *p = c.rate * dt * c.sparse.norm_sq_of_image(psi.as_slice()) / n2;
        total += *p;
    }
    if total >= 1.0 {
        return Err(Error::StepTooLarge { total });
    }
    let mut edge = 0.0;
    for (i, p) in probs.iter().take(channels.len()).enumerate() {
        edge += p;
        if u < edge && *p > 0.0 {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

pub fn sample_jump<'a>(
    psi: &StateVector,
    channels: &'a [JumpChannel],
    dt: f64,
    u: f64,
) -> Result<Option<&'a JumpChannel>> {
    Ok(sample_jump_index(psi, channels, dt, u)?.map(|i| &channels[i]))
}

/// Post-detection state `L·ψ/‖L·ψ‖`.
pub fn collapse(psi: &StateVector, channel: &JumpChannel) -> Result<StateVector> {
    let mut out = [ZERO; DIM];
    channel.sparse.apply_into(psi.as_slice(), &mut out);
    StateVector::from_amplitudes(out).normalize()
}

enum Evolution {
    FirstOrder(ConditionalGenerator),
    Exponential(SparseOperator),
}

/// One trajectory step (jump or no-jump, then renormalize) for fixed
/// generator, channels and timestep.
pub struct Propagator {
    evolution: Evolution,
    channels: Vec<JumpChannel>,
    kernel: StepKernel,
    dt: f64,
}

/// No-jump step matrix and `Σ rate·L†L` for the common no-jump step.
struct StepKernel {
    step: PackedOperator,
    /// `None` when `Σ rate·L†L = K + K†`, in which case the first-order step
    /// already carries the total jump probability.
    emission: Option<PackedOperator>,
}

/// An operator stored with the fewest per-row slots that hold it. Emission
/// operators have at most one off-diagonal entry per row, first-order steps
/// at most three; the exponential step may be dense.
enum PackedOperator {
    Narrow(SplitOperator<1>),
    Sparse(SplitOperator<3>),
    Dense(SplitOperator<{ DIM - 1 }>),
}

impl PackedOperator {
    fn new(m: &OperatorMatrix) -> Self {
        if let Some(op) = SplitOperator::new(m) {
            return PackedOperator::Narrow(op);
        }
        if let Some(op) = SplitOperator::new(m) {
            return PackedOperator::Sparse(op);
        }
        PackedOperator::Dense(
            SplitOperator::new(m).expect("a row has at most DIM - 1 off-diagonal entries"),
        )
    }
}

/// Diagonal plus up to `S` off-diagonal nonzeros per row, with
/// split real and imaginary parts. Unused slots hold zeros, so the product is
/// a fixed-size loop that unrolls completely.
#[derive(Clone)]
struct SplitOperator<const S: usize> {
    diag_re: [f64; DIM],
    diag_im: [f64; DIM],
    col: [[usize; S]; DIM],
    off_re: [[f64; S]; DIM],
    off_im: [[f64; S]; DIM],
}

/// Amplitudes as separate real and imaginary arrays.
type Split = ([f64; DIM], [f64; DIM]);

impl<const S: usize> SplitOperator<S> {
    /// `None` when some row has more off-diagonal entries than fit.
    fn new(m: &OperatorMatrix) -> Option<Self> {
        let mut op = SplitOperator {
            diag_re: [0.0; DIM],
            diag_im: [0.0; DIM],
            col: [[0; S]; DIM],
            off_re: [[0.0; S]; DIM],
            off_im: [[0.0; S]; DIM],
        };
        for r in 0..DIM {
            let mut k = 0;
            for c in 0..DIM {
                let v = m.entry(r, c);
                if r == c {
                    op.diag_re[r] = v.re;
                    op.diag_im[r] = v.im;
                } else if v != ZERO {
                    if k == S {
                        return None;
                    }
                    op.col[r][k] = c;
                    op.off_re[r][k] = v.re;
                    op.off_im[r][k] = v.im;
                    k += 1;
                }
            }
        }
        Some(op)
    }

    #[inline(always)]
    fn mul(&self, (x_re, x_im): &Split) -> Split {
        let mut y_re = [0.0; DIM];
        let mut y_im = [0.0; DIM];
        for r in 0..DIM {
            let mut a = self.diag_re[r] * x_re[r] - self.diag_im[r] * x_im[r];
            let mut b = self.diag_re[r] * x_im[r] + self.diag_im[r] * x_re[r];
            for k in 0..S {
                let c = self.col[r][k].min(DIM - 1);
                let (re, im) = (self.off_re[r][k], self.off_im[r][k]);
                a += re * x_re[c] - im * x_im[c];
                b += re * x_im[c] + im * x_re[c];
            }
            y_re[r] = a;
            y_im[r] = b;
        }
        (y_re, y_im)
    }
}

fn split_state(psi: &StateVector) -> Split {
    let mut re = [0.0; DIM];
    let mut im = [0.0; DIM];
    for (k, a) in psi.as_slice().iter().enumerate() {
        re[k] = a.re;
        im[k] = a.im;
    }
    (re, im)
}

/// The no-jump branch of [`Propagator::advance`]. Returns `false`, leaving
/// `psi` untouched, when `u` may fall inside a channel interval.
#[inline(always)]
fn fast_step<const S: usize, const E: usize>(
    step: &SplitOperator<S>,
    emission: Option<&SplitOperator<E>>,
    dt: f64,
    psi: &mut StateVector,
    u: f64,
) -> Result<bool> {
    let x = split_state(psi);
    let (x_re, x_im) = &x;
    let (y_re, y_im) = step.mul(&x);
    let mut n2 = 0.0;
    for i in 0..DIM {
        n2 += x_re[i] * x_re[i] + x_im[i] * x_im[i];
    }
    let total = match emission {
        None => {
            let mut overlap = 0.0;
            for i in 0..DIM {
                overlap += x_re[i] * y_re[i] + x_im[i] * y_im[i];
            }
            2.0 * (n2 - overlap) / n2
        }
        Some(e) => {
            let (e_re, e_im) = e.mul(&x);
            let mut expect = 0.0;
            for i in 0..DIM {
                expect += x_re[i] * e_re[i] + x_im[i] * e_im[i];
            }
            dt * expect / n2
        }
    };
    if !(total < 0.5 && u > total * (1.0 + 1e-9) + 1e-12) {
        return Ok(false);
    }
    let mut m2 = 0.0;
    for i in 0..DIM {
        m2 += y_re[i] * y_re[i] + y_im[i] * y_im[i];
    }
    if !(m2 > 0.0) || !m2.is_finite() {
        return Err(Error::DegenerateCollapse);
    }
    let inv = 1.0 / m2.sqrt();
    let mut out = [ZERO; DIM];
    for i in 0..DIM {
        out[i] = Complex64::new(y_re[i] * inv, y_im[i] * inv);
    }
    *psi = StateVector::from_amplitudes(out);
    Ok(true)
}

impl Propagator {
    pub fn new(
        gen: &ConditionalGenerator,
        channels: &[JumpChannel],
        dt: f64,
        stepper: Stepper,
    ) -> Result<Self> {
        if channels.len() > 8 {
            return Err(Error::InvalidParams("at most 8 jump channels".into()));
        }
        let evolution = match stepper {
            Stepper::FirstOrder => Evolution::FirstOrder(gen.clone()),
            Stepper::Exponential => {
                Evolution::Exponential(gen.matrix.scale(real(-dt)).exp().compress())
            }
        };
        let emission = channels.iter().fold(OperatorMatrix::zeros(), |acc, c| {
            acc + (c.operator.adjoint() * c.operator).scale(real(c.rate))
        });
        let (step, from_step) = match &evolution {
            Evolution::FirstOrder(gen) => {
                let herm = gen.matrix + gen.matrix.adjoint();
                let scale = 1.0 + herm.max_abs_diff(&OperatorMatrix::zeros());
                (
                    OperatorMatrix::identity() - gen.matrix.scale(real(dt)),
                    herm.max_abs_diff(&emission) <= 1e-13 * scale,
                )
            }
            Evolution::Exponential(_) => (gen.matrix.scale(real(-dt)).exp(), false),
        };
        let kernel = StepKernel {
            step: PackedOperator::new(&step),
            emission: (!from_step).then(|| PackedOperator::new(&emission)),
        };
        Ok(Propagator {
            evolution,
            channels: channels.to_vec(),
            kernel,
            dt,
        })
    }

    pub fn channels(&self) -> &[JumpChannel] {
        &self.channels
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `psi` by one step using the uniform variate `u`; returns the
    /// index of the channel that fired, if any. `psi` is normalized on exit.
    #[inline]
    pub fn advance(&self, psi: &mut StateVector, u: f64) -> Result<Option<usize>> {
        // Most steps are far from any interval edge; the per-channel partition
        // is only built when `u` could fall inside it.
        use PackedOperator::*;
        let done = match (&self.kernel.step, &self.kernel.emission) {
            (Sparse(step), None) => fast_step(step, None::<&SplitOperator<1>>, self.dt, psi, u)?,
            (Sparse(step), Some(Narrow(e))) => fast_step(step, Some(e), self.dt, psi, u)?,
            (Dense(step), Some(Narrow(e))) => fast_step(step, Some(e), self.dt, psi, u)?,
            (Narrow(step), Some(Narrow(e))) => fast_step(step, Some(e), self.dt, psi, u)?,
            _ => false,
        };
        if done {
            return Ok(None);
        }
        if let Some(i) = sample_jump_index(psi, &self.channels, self.dt, u)? {
            *psi = collapse(psi, &self.channels[i])?;
            return Ok(Some(i));
        }
        let next = self.evolve(psi);
        *psi = next.normalize()?;
        Ok(None)
    }

    /// No-jump evolution over one step, unnormalized.
    pub fn evolve(&self, psi: &StateVector) -> StateVector {
        match &self.evolution {
            Evolution::FirstOrder(gen) => step_no_jump(psi, gen, self.dt),
            Evolution::Exponential(u) => {
                let mut out = [ZERO; DIM];
                u.apply_into(psi.as_slice(), &mut out);
                StateVector::from_amplitudes(out)
            }
        }
    }
}

/// A detector click or undetected emission. `t` is the midpoint of the step
/// in which the channel fired.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub t: f64,
    pub channel: ChannelLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationSample {
    pub t: f64,
    pub populations: [f64; DIM],
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryResult {
    pub events: Vec<TrajectoryEvent>,
    pub samples: Vec<PopulationSample>,
    pub final_state: StateVector,
    pub steps: u64,
}

/// Runs one trajectory from `params.initial_state` over `[0, t_max]`.
pub fn run_trajectory<R: Rng>(
    params: &SimulationParams,
    channels: &[JumpChannel],
    gen: &ConditionalGenerator,
    rng: &mut R,
) -> Result<TrajectoryResult> {
    params.validate()?;
    let prop = Propagator::new(gen, channels, params.dt, params.stepper)?;
    let steps = params.step_count();
    let mut psi = params.initial_state.normalize()?;
    let mut events = Vec::new();
    let mut samples = Vec::new();
    for step in 0..steps {
        if let Some(every) = params.sample_every {
            if step % every == 0 {
                samples.push(PopulationSample {
                    t: step as f64 * params.dt,
                    populations: psi.populations(),
                });
            }
        }
        let u: f64 = rng.random();
        if let Some(i) = prop.advance(&mut psi, u).map_err(|e| e.at_step(step))? {
            events.push(TrajectoryEvent {
                t: (step as f64 + 0.5) * params.dt,
                channel: channels[i].label,
            });
        }
    }
    if let Some(every) = params.sample_every {
        if steps % every == 0 {
            samples.push(PopulationSample {
                t: steps as f64 * params.dt,
                populations: psi.populations(),
            });
        }
    }
    Ok(TrajectoryResult {
        events,
        samples,
        final_state: psi,
        steps,
    })
}

/// Hermitian part `(K + K†)/2` of a generator.
pub fn hermitian_part(k: &OperatorMatrix) -> OperatorMatrix {
    (*k + k.adjoint()).scale(real(0.5))
}

/// `½ Σ_c rate_c L_c†L_c`.
pub fn dissipator_part(channels: &[JumpChannel]) -> OperatorMatrix {
    channels.iter().fold(OperatorMatrix::zeros(), |acc, c| {
        acc + (c.operator.adjoint() * c.operator).scale(real(0.5 * c.rate))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::basis_index;
    use crate::rng::trajectory_rng;
    use proptest::prelude::*;
    use Level::*;

    fn params_with(rates: TransitionRates, rabi: f64) -> SimulationParams {
        SimulationParams {
            rates,
            rabi,
            ..SimulationParams::default()
        }
    }

    fn s(n: Level, m: Level) -> StateVector {
        StateVector::basis(n, m)
    }

    #[test]
    fn decay_only_generator_counts_excited_atoms() {
        let p = params_with(
            TransitionRates {
                gamma13: 1.0,
                gamma12: 0.0,
                gamma23: 0.0,
            },
            0.0,
        );
        let k = build_conditional_generator(&p, &CrossCoupling::ZERO)
            .unwrap()
            .matrix;
        for row in 0..DIM {
            for col in 0..DIM {
                let v = k.entry(row, col);
                if row != col {
                    assert_eq!(v, ZERO);
                }
            }
        }
        for n in Level::ALL {
            for m in Level::ALL {
                let i = basis_index(n, m);
                let excited = (n == Upper) as u8 + (m == Upper) as u8;
                assert_eq!(k.entry(i, i), real(excited as f64));
            }
        }
        assert_eq!(k.entry(0, 0), real(2.0));
    }

    #[test]
    fn one_step_generates_exchange_amplitude() {
        let p = SimulationParams::default();
        let c12 = CrossCoupling {
            gamma_dd: 0.013,
            omega_dd: -0.007,
        };
        let gen = build_conditional_generator(&p, &c12).unwrap();
        let dt = 1e-3;
        let out = step_no_jump(&s(Upper, Metastable), &gen, dt);
        let expected = -c12.complex() * dt;
        assert!((out.amplitude(Metastable, Upper) - expected).norm() < 1e-15);
    }

    #[test]
    fn pure_drive_is_anti_hermitian_and_norm_preserving() {
        let p = params_with(
            TransitionRates {
                gamma13: 0.0,
                gamma12: 0.0,
                gamma23: 0.0,
            },
            3.0,
        );
        let k = build_conditional_generator(&p, &CrossCoupling::ZERO).unwrap();
        assert!((k.matrix + k.matrix.adjoint()).max_abs_diff(&OperatorMatrix::zeros()) < 1e-15);
        let psi = (s(Ground, Ground) + s(Upper, Metastable))
            .normalize()
            .unwrap();
        let dt = 1e-3;
        let out = step_no_jump(&psi, &k, dt);
        // ‖(1 − K dt)ψ‖² = 1 + dt²‖Kψ‖² for anti-Hermitian K.
        let kpsi = k.matrix.apply(&psi).norm_sq();
        assert!((out.norm_sq() - 1.0 - dt * dt * kpsi).abs() < 1e-14);
        assert!((out.norm_sq() - 1.0).abs() < 10.0 * dt * dt * 36.0);
    }

    #[test]
    fn drive_and_exchange_signs_match_schrodinger_form() {
        // K = iH + Γ/2 with H = Ω_R(σ13 + σ31) + Ω_dd·exchange.
        let p = SimulationParams::default();
        let c12 = p.coupling().unwrap();
        let gen = build_conditional_generator(&p, &c12).unwrap();
        let channels = jump_channels(&p, &c12).unwrap();
        let anti = (gen.matrix - gen.matrix.adjoint()).scale(Complex64::new(0.0, -0.5));
        let exchange = pair(AtomId::First, AtomId::Second, Upper, Metastable)
            + pair(AtomId::Second, AtomId::First, Upper, Metastable);
        let mut h = exchange.scale(real(c12.omega_dd));
        for i in AtomId::BOTH {
            h = h + (sigma(i, Upper, Ground) + sigma(i, Ground, Upper)).scale(real(p.rabi));
        }
        assert!(anti.max_abs_diff(&h) < 1e-14);
        assert!(hermitian_part(&gen.matrix).max_abs_diff(&dissipator_part(&channels)) < 1e-14);
    }

    #[test]
    fn dissipator_matches_generator_for_many_geometries() {
        for &r in &[0.05, 0.1, 0.3, 0.5, 1.0, 3.0, 10.0] {
            for basis in [ChannelBasis::Collective] {
                let p = SimulationParams {
                    geom: Geometry::with_r(r),
                    ..SimulationParams::default()
                };
                let c12 = p.coupling().unwrap();
                let gen = build_conditional_generator(&p, &c12).unwrap();
                let channels = jump_channels_in(&p, &c12, basis).unwrap();
                let diff = hermitian_part(&gen.matrix).max_abs_diff(&dissipator_part(&channels));
                assert!(diff < 1e-14, "r = {r}");
            }
        }
        let p = SimulationParams::default();
        let gen = build_conditional_generator(&p, &CrossCoupling::ZERO).unwrap();
        let per_atom = jump_channels_in(&p, &CrossCoupling::ZERO, ChannelBasis::PerAtom).unwrap();
        assert!(hermitian_part(&gen.matrix).max_abs_diff(&dissipator_part(&per_atom)) < 1e-14);
    }

    #[test]
    fn channel_set_and_rates() {
        let p = SimulationParams::default();
        let labels: Vec<_> = jump_channels(&p, &CrossCoupling::ZERO)
            .unwrap()
            .iter()
            .map(|c| c.label.as_str())
            .collect();
        assert_eq!(
            labels,
            [
                "det1_13",
                "det2_13",
                "a1_23",
                "a2_23",
                "coll12_sym",
                "coll12_asym"
            ]
        );

        let g12 = p.rates.gamma12;
        let ch = jump_channels(&p, &CrossCoupling::ZERO).unwrap();
        assert_eq!(ch[4].rate, 2.0 * g12);
        assert_eq!(ch[5].rate, 2.0 * g12);
        assert_eq!(ch[0].rate, 2.0 * p.rates.gamma13);
        assert_eq!(ch[2].rate, 2.0 * p.rates.gamma23);
        assert_eq!(ch[0].detector, Some(AtomId::First));
        assert_eq!(ch[1].detector, Some(AtomId::Second));
        assert_eq!(ch[4].detector, None);

        let dicke = CrossCoupling {
            gamma_dd: g12,
            omega_dd: 1.0,
        };
        let ch = jump_channels(&p, &dicke).unwrap();
        assert_eq!(ch[4].rate, 4.0 * g12);
        assert_eq!(ch[5].rate, 0.0);
    }

    #[test]
    fn detector_probabilities_follow_excitation() {
        let p = SimulationParams::default();
        let ch = jump_channels(&p, &CrossCoupling::ZERO).unwrap();
        let psi = s(Upper, Metastable);
        let dt = 1e-3;
        assert!((ch[0].probability(&psi, dt) - 2.0 * p.rates.gamma13 * dt).abs() < 1e-18);
        assert_eq!(ch[1].probability(&psi, dt), 0.0);
    }

    #[test]
    fn overdamped_coupling_is_rejected() {
        let p = SimulationParams::default();
        let bad = CrossCoupling {
            gamma_dd: 2.0 * p.rates.gamma12,
            omega_dd: 0.0,
        };
        assert!(matches!(
            jump_channels(&p, &bad),
            Err(Error::NegativeRate {
                channel: "coll12_asym",
                ..
            })
        ));
        let c = CrossCoupling {
            gamma_dd: 0.001,
            omega_dd: 0.0,
        };
        assert!(jump_channels_in(&p, &c, ChannelBasis::PerAtom).is_err());
    }

    #[test]
    fn step_examples() {
        let p = SimulationParams::default();
        let zero = ConditionalGenerator::new(OperatorMatrix::zeros());
        let psi = (s(Upper, Ground) + s(Metastable, Upper).scale(Complex64::new(0.0, 2.0)))
            .normalize()
            .unwrap();
        assert_eq!(step_no_jump(&psi, &zero, 1e-3), psi);

        // Ground states do not decay: norm changes only at O(dt²).
        let c12 = p.coupling().unwrap();
        let gen = build_conditional_generator(&p, &c12).unwrap();
        let dt = p.dt;
        let out = step_no_jump(&s(Ground, Ground), &gen, dt);
        assert!((out.norm_sq() - 1.0).abs() <= 2.0 * (p.rabi * dt).powi(2) + 1e-15);
        let mixed = Complex64::new(0.0, -p.rabi * dt);
        assert!((out.amplitude(Upper, Ground) - mixed).norm() < 1e-15);
        assert!((out.amplitude(Ground, Upper) - mixed).norm() < 1e-15);

        // One excited atom, no drive, no coupling: amplitude decays at γ¹³ + γ¹².
        let p0 = SimulationParams {
            rabi: 0.0,
            ..SimulationParams::default()
        };
        let gen0 = build_conditional_generator(&p0, &CrossCoupling::ZERO).unwrap();
        let out = step_no_jump(&s(Upper, Metastable), &gen0, dt);
        let decay = 1.0 - (p0.rates.gamma13 + p0.rates.gamma12) * dt;
        // Atom 2 in the metastable level also decays at γ²³.
        let expected = decay - p0.rates.gamma23 * dt;
        assert!((out.amplitude(Upper, Metastable) - real(expected)).norm() < 1e-15);
    }

    #[test]
    fn amplitude_decay_matches_population_law() {
        // With γ²³ = 0 the |1,2⟩ population after n steps is
        // (1 − Γ dt)^{2n} → e^{−2Γt}, Γ = γ¹³ + γ¹².
        let p = SimulationParams {
            rabi: 0.0,
            rates: TransitionRates {
                gamma23: 0.0,
                ..TransitionRates::default()
            },
            ..SimulationParams::default()
        };
        let gen = build_conditional_generator(&p, &CrossCoupling::ZERO).unwrap();
        let mut psi = s(Upper, Metastable);
        let dt = 1e-4;
        let n = 5000;
        for _ in 0..n {
            psi = step_no_jump(&psi, &gen, dt);
        }
        let t = n as f64 * dt;
        let gamma = p.rates.gamma13 + p.rates.gamma12;
        let exact = (-2.0 * gamma * t).exp();
        assert!((psi.norm_sq() - exact).abs() / exact < 2.0 * gamma * gamma * dt * t);
    }

    #[test]
    fn sample_jump_examples() {
        let p = SimulationParams::default();
        let ch = jump_channels(&p, &CrossCoupling::ZERO).unwrap();
        for u in [0.0, 0.3, 0.999] {
            assert!(sample_jump(&s(Ground, Ground), &ch, p.dt, u)
                .unwrap()
                .is_none());
        }
        let hit = sample_jump(&s(Upper, Metastable), &ch, p.dt, 0.0).unwrap();
        assert_eq!(hit.unwrap().label, ChannelLabel::Det1);
        // Just past det1's interval the metastable channels follow.
        let p1 = 2.0 * p.dt;
        let next = sample_jump(&s(Upper, Metastable), &ch, p.dt, p1 + 1e-12).unwrap();
        assert_eq!(next.unwrap().label, ChannelLabel::Atom2Ground);
        assert!(sample_jump(&s(Upper, Metastable), &ch, p.dt, 0.5)
            .unwrap()
            .is_none());
    }

    #[test]
    fn sample_jump_rejects_oversized_steps() {
        let p = SimulationParams::default();
        let ch = jump_channels(&p, &CrossCoupling::ZERO).unwrap();
        assert!(matches!(
            sample_jump(&s(Upper, Upper), &ch, 0.3, 0.5),
            Err(Error::StepTooLarge { .. })
        ));
    }

    #[test]
    fn collapse_examples() {
        let p = SimulationParams::default();
        let ch = jump_channels(&p, &CrossCoupling::ZERO).unwrap();
        let out = collapse(&s(Upper, Metastable), &ch[0]).unwrap();
        assert_eq!(out, s(Ground, Metastable));

        let alpha = Complex64::new(0.6, 0.0);
        let beta = Complex64::new(0.0, 0.8);
        let psi = s(Upper, Metastable).scale(alpha) + s(Metastable, Upper).scale(beta);
        let out = collapse(&psi, &ch[4]).unwrap();
        assert!((out.amplitude(Metastable, Metastable).norm() - 1.0).abs() < 1e-12);

        let psi = (s(Upper, Metastable) + s(Metastable, Upper))
            .normalize()
            .unwrap();
        let out = collapse(&psi, &ch[1]).unwrap();
        assert!((out.amplitude(Metastable, Ground).norm() - 1.0).abs() < 1e-12);

        // Antisymmetric channel on the symmetric superposition has no amplitude.
        let sym = (s(Upper, Metastable) + s(Metastable, Upper))
            .normalize()
            .unwrap();
        assert!(matches!(
            collapse(&sym, &ch[5]),
            Err(Error::DegenerateCollapse)
        ));
    }

    fn setup(p: &SimulationParams) -> (ConditionalGenerator, Vec<JumpChannel>) {
        let c12 = p.coupling().unwrap();
        (
            build_conditional_generator(p, &c12).unwrap(),
            jump_channels(p, &c12).unwrap(),
        )
    }

    #[test]
    fn zero_length_trajectory() {
        let p = SimulationParams {
            t_max: 0.0,
            ..SimulationParams::default()
        };
        let (gen, ch) = setup(&p);
        let res = run_trajectory(&p, &ch, &gen, &mut trajectory_rng(1, 0)).unwrap();
        assert!(res.events.is_empty());
        assert_eq!(res.final_state, p.initial_state);
        assert_eq!(res.steps, 0);
    }

    #[test]
    fn dark_state_never_jumps() {
        let p = SimulationParams {
            rabi: 0.0,
            t_max: 50.0,
            initial_state: s(Ground, Ground),
            ..SimulationParams::default()
        };
        let (gen, ch) = setup(&p);
        let res = run_trajectory(&p, &ch, &gen, &mut trajectory_rng(3, 0)).unwrap();
        assert!(res.events.is_empty());
        assert_eq!(res.steps, 50_000);
    }

    #[test]
    fn trajectories_are_deterministic() {
        let p = SimulationParams {
            t_max: 20.0,
            sample_every: Some(1000),
            ..SimulationParams::default()
        };
        let (gen, ch) = setup(&p);
        let a = run_trajectory(&p, &ch, &gen, &mut trajectory_rng(11, 5)).unwrap();
        let b = run_trajectory(&p, &ch, &gen, &mut trajectory_rng(11, 5)).unwrap();
        assert_eq!(a, b);
        assert!(!a.events.is_empty());
        assert!(a.events.windows(2).all(|w| w[1].t > w[0].t));
        assert_eq!(a.samples.len(), 21);
        for sample in &a.samples {
            let total: f64 = sample.populations.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        let c = run_trajectory(&p, &ch, &gen, &mut trajectory_rng(11, 6)).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn exponential_stepper_agrees_with_first_order() {
        // Same seed, drive on: the no-jump evolution differs at O(dt²) per step,
        // so the two runs share their first events.
        let p = SimulationParams {
            t_max: 5.0,
            ..SimulationParams::default()
        };
        let (gen, ch) = setup(&p);
        let a = run_trajectory(&p, &ch, &gen, &mut trajectory_rng(2, 0)).unwrap();
        let pe = SimulationParams {
            stepper: Stepper::Exponential,
            ..p.clone()
        };
        let b = run_trajectory(&pe, &ch, &gen, &mut trajectory_rng(2, 0)).unwrap();
        assert_eq!(a.events.first(), b.events.first());
    }

    #[test]
    fn validation_rejects_coarse_steps() {
        let p = SimulationParams {
            dt: 0.05,
            ..SimulationParams::default()
        };
        assert!(p.validate().is_err());
        let p = SimulationParams {
            rates: TransitionRates {
                gamma13: 30.0,
                ..TransitionRates::default()
            },
            rabi: 1.0,
            ..SimulationParams::default()
        };
        assert!(p.validate().is_err());
        assert!(SimulationParams::default().validate().is_ok());
    }

    #[test]
    fn exchange_probability_grows_quadratically() {
        let p = SimulationParams::default();
        let c12 = p.coupling().unwrap();
        let gen = build_conditional_generator(&p, &c12).unwrap();
        let start = s(Upper, Metastable);
        for t in [1e-2, 1e-3, 1e-4] {
            let psi = gen
                .matrix
                .scale(real(-t))
                .exp()
                .apply(&start)
                .normalize()
                .unwrap();
            let ratio = psi.amplitude(Metastable, Upper).norm_sqr() / (c12.abs_sq() * t * t);
            assert!((ratio - 1.0).abs() < 0.05, "t = {t}: {ratio}");
        }
    }

    fn arb_state() -> impl Strategy<Value = StateVector> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), DIM).prop_filter_map(
            "nonzero",
            |v| {
                let amps: [Complex64; DIM] =
                    std::array::from_fn(|i| Complex64::new(v[i].0, v[i].1));
                StateVector::from_amplitudes(amps).normalize().ok()
            },
        )
    }

    proptest! {
        #[test]
        fn norm_loss_equals_jump_probability(psi in arb_state(), r in 0.05f64..5.0) {
            let p = SimulationParams { geom: Geometry::with_r(r), ..SimulationParams::default() };
            let c12 = p.coupling().unwrap();
            let gen = build_conditional_generator(&p, &c12).unwrap();
            let ch = jump_channels(&p, &c12).unwrap();
            let dt = p.dt;
            let after = step_no_jump(&psi, &gen, dt);
            let jump: f64 = ch.iter().map(|c| c.probability(&psi, dt)).sum();
            let before = psi.norm_sq();
            let k_norm = gen.matrix.matrix().norm();
            let gap = (before - after.norm_sq() - jump * before).abs();
            prop_assert!(gap <= k_norm * k_norm * dt * dt * before + 1e-15);
        }

        #[test]
        fn advance_keeps_states_normalized(psi in arb_state(), u in 0.0f64..1.0) {
            let p = SimulationParams::default();
            let (gen, ch) = setup(&p);
            let prop = Propagator::new(&gen, &ch, p.dt, Stepper::FirstOrder).unwrap();
            let mut state = psi;
            prop.advance(&mut state, u).unwrap();
            prop_assert!((state.norm_sq() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn advance_matches_the_plain_partition(
            psi in arb_state(),
            u in prop_oneof![0.0f64..1.0, 0.0f64..0.05],
            r in 0.05f64..5.0,
            exponential in any::<bool>(),
        ) {
            let (stepper, dt) = if exponential {
                (Stepper::Exponential, 0.02)
            } else {
                (Stepper::FirstOrder, 1e-3)
            };
            let p = SimulationParams { geom: Geometry::with_r(r), dt, stepper, ..SimulationParams::default() };
            let (gen, ch) = setup(&p);
            let prop = Propagator::new(&gen, &ch, dt, stepper).unwrap();
            let psi = psi.normalize().unwrap();
            let mut fast = psi;
            let fired = prop.advance(&mut fast, u).unwrap();
            let expected = sample_jump_index(&psi, &ch, dt, u).unwrap();
            prop_assert_eq!(fired, expected);
            let reference = match expected {
                Some(i) => collapse(&psi, &ch[i]).unwrap(),
                None => prop.evolve(&psi).normalize().unwrap(),
            };
            prop_assert!((fast - reference).norm_sq().sqrt() < 1e-12);
        }
    }
}
