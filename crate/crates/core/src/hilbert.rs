//! Two-atom product space of two three-level atoms.
//!
//! Basis states are ordered atom-1-major:
//! `(1,1),(1,2),(1,3),(2,1),(2,2),(2,3),(3,1),(3,2),(3,3)`, where the pair is
//! (level of atom 1, level of atom 2). Level 1 is the upper state, level 2 the
//! metastable state and level 3 the ground state of the driven transition.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Dimension of the two-atom space.
pub const DIM: usize = 9;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    /// `|1⟩`, upper level of both the driven and the metastable transition.
    Upper,
    /// `|2⟩`, the shelving level.
    Metastable,
    /// `|3⟩`, ground state of the driven transition.
    Ground,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Upper, Level::Metastable, Level::Ground];

    /// Level number as used in the level scheme (1, 2 or 3).
    pub fn number(self) -> u8 {
        match self {
            Level::Upper => 1,
            Level::Metastable => 2,
            Level::Ground => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Level> {
        match n {
            1 => Some(Level::Upper),
            2 => Some(Level::Metastable),
            3 => Some(Level::Ground),
            _ => None,
        }
    }

    fn offset(self) -> usize {
        self.number() as usize - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AtomId {
    #[serde(rename = "atom1")]
    First,
    #[serde(rename = "atom2")]
    Second,
}

impl AtomId {
    pub const BOTH: [AtomId; 2] = [AtomId::First, AtomId::Second];

    pub fn other(self) -> AtomId {
        match self {
            AtomId::First => AtomId::Second,
            AtomId::Second => AtomId::First,
        }
    }
}

/// Position of `|n, m⟩` in the fixed basis order.
pub fn basis_index(n: Level, m: Level) -> usize {
    3 * n.offset() + m.offset()
}

/// Inverse of [`basis_index`].
pub fn basis_pair(index: usize) -> Option<(Level, Level)> {
    if index >= DIM {
        return None;
    }
    Some((Level::ALL[index / 3], Level::ALL[index % 3]))
}

/// Conditional state of the two atoms. Not necessarily normalized.
#[derive(Clone, Copy, PartialEq)]
pub struct StateVector(SVector<Complex64, DIM>);

impl StateVector {
    pub fn zeros() -> Self {
        StateVector(SVector::zeros())
    }

    /// Product state `|n⟩₁ ⊗ |m⟩₂`.
    pub fn basis(n: Level, m: Level) -> Self {
        let mut v = SVector::zeros();
        v[basis_index(n, m)] = ONE;
        StateVector(v)
    }

    pub fn from_amplitudes(amplitudes: [Complex64; DIM]) -> Self {
        StateVector(SVector::from(amplitudes))
    }

    pub fn amplitude(&self, n: Level, m: Level) -> Complex64 {
        self.0[basis_index(n, m)]
    }

    pub fn amplitudes(&self) -> [Complex64; DIM] {
        self.0.into()
    }

    pub fn as_vector(&self) -> &SVector<Complex64, DIM> {
        &self.0
    }

    pub(crate) fn as_slice(&self) -> &[Complex64] {
        self.0.as_slice()
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [Complex64] {
        self.0.as_mut_slice()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Returns `self / |self|`; fails on the zero vector.
    pub fn normalize(&self) -> Result<StateVector> {
        let n2 = self.norm_sq();
        if !(n2 > 0.0) || !n2.is_finite() {
            return Err(Error::DegenerateCollapse);
        }
        Ok(StateVector(self.0.unscale(n2.sqrt())))
    }

    pub fn scale(&self, factor: Complex64) -> StateVector {
        StateVector(self.0 * factor)
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.0.dotc(&other.0)
    }

    /// Probabilities `|c_nm|² / ⟨ψ|ψ⟩` in basis order.
    pub fn populations(&self) -> [f64; DIM] {
        let n2 = self.norm_sq();
        let mut p = [0.0; DIM];
        for (out, a) in p.iter_mut().zip(self.0.iter()) {
            *out = a.norm_sqr() / n2;
        }
        p
    }

    /// Probability that `atom` is found in `level`.
    pub fn level_population(&self, atom: AtomId, level: Level) -> f64 {
        let p = self.populations();
        Level::ALL
            .iter()
            .map(|&other| match atom {
                AtomId::First => p[basis_index(level, other)],
                AtomId::Second => p[basis_index(other, level)],
            })
            .sum()
    }

    /// Debug serialization: nine lines of `re,im` in basis order.
    pub fn to_debug_lines(&self) -> String {
        let mut s = String::new();
        for a in self.0.iter() {
            s.push_str(&format!("{:e},{:e}\n", a.re, a.im));
        }
        s
    }

    pub fn from_debug_lines(text: &str) -> Result<StateVector> {
        let mut amps = [ZERO; DIM];
        let mut count = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| Error::Parse {
                context: format!("state line {}", lineno + 1),
                message: message.to_string(),
            };
            if count == DIM {
                return Err(err("more than 9 amplitudes"));
            }
            let (re, im) = line.split_once(',').ok_or_else(|| err("expected re,im"))?;
            let re: f64 = re.trim().parse().map_err(|_| err("bad real part"))?;
            let im: f64 = im.trim().parse().map_err(|_| err("bad imaginary part"))?;
            amps[count] = Complex64::new(re, im);
            count += 1;
        }
        if count != DIM {
            return Err(Error::Parse {
                context: "state".into(),
                message: format!("expected 9 amplitudes, found {count}"),
            });
        }
        Ok(StateVector::from_amplitudes(amps))
    }
}

impl fmt::Debug for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl Add for StateVector {
    type Output = StateVector;
    fn add(self, rhs: StateVector) -> StateVector {
        StateVector(self.0 + rhs.0)
    }
}

impl Sub for StateVector {
    type Output = StateVector;
    fn sub(self, rhs: StateVector) -> StateVector {
        StateVector(self.0 - rhs.0)
    }
}

// Serialized as nine `[re, im]` pairs in basis order.
impl Serialize for StateVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = self.0.iter().map(|a| [a.re, a.im]).collect();
        pairs.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StateVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let pairs: Vec<[f64; 2]> = Vec::deserialize(deserializer)?;
        if pairs.len() != DIM {
            return Err(serde::de::Error::invalid_length(
                pairs.len(),
                &"9 amplitudes",
            ));
        }
        let mut amps = [ZERO; DIM];
        for (a, [re, im]) in amps.iter_mut().zip(pairs) {
            *a = Complex64::new(re, im);
        }
        Ok(StateVector::from_amplitudes(amps))
    }
}

/// Dense 9×9 operator on the two-atom space.
#[derive(Clone, Copy, PartialEq)]
pub struct OperatorMatrix(SMatrix<Complex64, DIM, DIM>);

impl OperatorMatrix {
    pub fn zeros() -> Self {
        OperatorMatrix(SMatrix::zeros())
    }

    pub fn identity() -> Self {
        OperatorMatrix(SMatrix::identity())
    }

    pub fn from_matrix(m: SMatrix<Complex64, DIM, DIM>) -> Self {
        OperatorMatrix(m)
    }

    pub fn matrix(&self) -> &SMatrix<Complex64, DIM, DIM> {
        &self.0
    }

    /// `|n⟩⟨m|` acting on `atom`, identity on the other atom.
    pub fn sigma(atom: AtomId, n: Level, m: Level) -> Self {
        let mut op = SMatrix::zeros();
        for spectator in Level::ALL {
            let (row, col) = match atom {
                AtomId::First => (basis_index(n, spectator), basis_index(m, spectator)),
                AtomId::Second => (basis_index(spectator, n), basis_index(spectator, m)),
            };
            op[(row, col)] = ONE;
        }
        OperatorMatrix(op)
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.0[(row, col)]
    }

    pub fn apply(&self, psi: &StateVector) -> StateVector {
        StateVector(self.0 * psi.0)
    }

    pub fn adjoint(&self) -> OperatorMatrix {
        OperatorMatrix(self.0.adjoint())
    }

    pub fn scale(&self, factor: Complex64) -> OperatorMatrix {
        OperatorMatrix(self.0 * factor)
    }

    /// `⟨ψ|A|ψ⟩ / ⟨ψ|ψ⟩`.
    pub fn expectation(&self, psi: &StateVector) -> Complex64 {
        psi.inner(&self.apply(psi)) / psi.norm_sq()
    }

    /// Matrix exponential `exp(self)`.
    pub fn exp(&self) -> OperatorMatrix {
        OperatorMatrix(self.0.exp())
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &OperatorMatrix) -> f64 {
        (self.0 - other.0)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub(crate) fn compress(&self) -> SparseOperator {
        SparseOperator::from_dense(self)
    }
}

impl fmt::Debug for OperatorMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OperatorMatrix{}", self.0)
    }
}

impl Mul for OperatorMatrix {
    type Output = OperatorMatrix;
    fn mul(self, rhs: OperatorMatrix) -> OperatorMatrix {
        OperatorMatrix(self.0 * rhs.0)
    }
}

impl Mul<StateVector> for OperatorMatrix {
    type Output = StateVector;
    fn mul(self, rhs: StateVector) -> StateVector {
        self.apply(&rhs)
    }
}

impl Add for OperatorMatrix {
    type Output = OperatorMatrix;
    fn add(self, rhs: OperatorMatrix) -> OperatorMatrix {
        OperatorMatrix(self.0 + rhs.0)
    }
}

impl Sub for OperatorMatrix {
    type Output = OperatorMatrix;
    fn sub(self, rhs: OperatorMatrix) -> OperatorMatrix {
        OperatorMatrix(self.0 - rhs.0)
    }
}

/// `|n⟩⟨m|` on `atom` (see [`OperatorMatrix::sigma`]).
pub fn sigma(atom: AtomId, n: Level, m: Level) -> OperatorMatrix {
    OperatorMatrix::sigma(atom, n, m)
}

/// Plain matrix-vector product, no normalization.
pub fn apply(op: &OperatorMatrix, psi: &StateVector) -> StateVector {
    op.apply(psi)
}

pub fn norm_sq(psi: &StateVector) -> f64 {
    psi.norm_sq()
}

pub fn normalize(psi: &StateVector) -> Result<StateVector> {
    psi.normalize()
}

/// Nonzero entries of an operator, used in the trajectory inner loop where
/// generators and jump operators have at most a few dozen entries.
#[derive(Clone, Debug)]
pub(crate) struct SparseOperator {
    entries: Vec<(usize, usize, Complex64)>,
}

impl SparseOperator {
    fn from_dense(op: &OperatorMatrix) -> Self {
        let mut entries = Vec::new();
        for row in 0..DIM {
            for col in 0..DIM {
                let v = op.0[(row, col)];
                if v != ZERO {
                    entries.push((row, col, v));
                }
            }
        }
        SparseOperator { entries }
    }

    /// `out = A·psi`.
    #[inline]
    pub(crate) fn apply_into(&self, psi: &[Complex64], out: &mut [Complex64; DIM]) {
        *out = [ZERO; DIM];
        for &(row, col, v) in &self.entries {
            out[row] += v * psi[col];
        }
    }

    /// `‖A·psi‖²`.
    #[inline]
    pub(crate) fn norm_sq_of_image(&self, psi: &[Complex64]) -> f64 {
        let mut out = [ZERO; DIM];
        self.apply_into(psi, &mut out);
        out.iter().map(|a| a.norm_sqr()).sum()
    }
}
