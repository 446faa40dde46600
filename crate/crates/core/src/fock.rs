//! Bitstring Fock-space engine.
//!
//! Modes are numbered `0..M`; for the spinful chain `mode = 2 * site + spin`
//! with spin up = 0 and spin down = 1. A basis state is stored as a `u64`
//! whose bit `i` is the occupation of mode `i`.
//!
//! Fock states are built with creation operators in descending mode order,
//! `|n> = (c†_{M-1})^{n_{M-1}} ... (c†_0)^{n_0} |0>`, so acting with `c_i` or
//! `c†_i` picks up the sign `(-1)^{sum_{s > i} n_s}`. Every ladder operation in
//! the crate goes through [`ladder_bits`] so the convention stays global.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector, C64, ZERO};

/// Largest supported mode count.
pub const MAX_MODES: usize = 28;

/// Spin projection of a lattice mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Spin {
    Up = 0,
    Down = 1,
}

/// Mode index of `(site, spin)` in the interleaved layout.
#[inline]
pub fn mode_index(site: usize, spin: Spin) -> usize {
    2 * site + spin as usize
}

/// Creation or annihilation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ladder {
    Create,
    Annihilate,
}

/// Apply a single ladder operator to a basis bitstring.
///
/// Returns `None` when the result vanishes.
#[inline]
pub fn ladder_bits(bits: u64, mode: usize, kind: Ladder) -> Option<(u64, f64)> {
    let mask = 1u64 << mode;
    let occupied = bits & mask != 0;
    let new_bits = match (kind, occupied) {
        (Ladder::Create, false) | (Ladder::Annihilate, true) => bits ^ mask,
        _ => return None,
    };
    let above = (bits >> mode >> 1).count_ones();
    let sign = if above.is_multiple_of(2) { 1.0 } else { -1.0 };
    Some((new_bits, sign))
}

/// Apply an operator string, rightmost first. `ops[0]` is applied last.
#[inline]
pub fn apply_string(bits: u64, ops: &[(usize, Ladder)]) -> Option<(u64, f64)> {
    let mut state = bits;
    let mut sign = 1.0;
    for &(mode, kind) in ops.iter().rev() {
        let (b, s) = ladder_bits(state, mode, kind)?;
        state = b;
        sign *= s;
    }
    Some((state, sign))
}

/// `c†_i c_j` on a bitstring.
#[inline]
pub fn hop_bits(bits: u64, i: usize, j: usize) -> Option<(u64, f64)> {
    apply_string(bits, &[(i, Ladder::Create), (j, Ladder::Annihilate)])
}

/// Binomial coefficient, exact for the sizes used here.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// Occupation bitstring over a fixed number of modes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bitstring {
    bits: u64,
    len: u8,
}

impl Bitstring {
    pub fn new(bits: u64, len: usize) -> Result<Self> {
        if len > 64 || (len < 64 && bits >> len != 0) {
            return Err(Error::domain(format!(
                "bit pattern {bits:#b} does not fit in {len} modes"
            )));
        }
        Ok(Bitstring {
            bits,
            len: len as u8,
        })
    }

    /// Build from occupations listed as `n_0, n_1, ...`.
    pub fn from_occupations(occ: &[u8]) -> Result<Self> {
        let mut bits = 0u64;
        for (i, &n) in occ.iter().enumerate() {
            match n {
                0 => {}
                1 => bits |= 1 << i,
                _ => return Err(Error::domain(format!("occupation {n} at mode {i}"))),
            }
        }
        Bitstring::new(bits, occ.len())
    }

    /// Parse `"n_0 n_1 ..."` written without separators, e.g. `"1011"`.
    pub fn parse(s: &str) -> Result<Self> {
        let occ: Result<Vec<u8>> = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(Error::domain(format!("bad occupation character {c:?}"))),
            })
            .collect();
        Bitstring::from_occupations(&occ?)
    }

    #[inline]
    pub fn bits(&self) -> u64 {
        self.bits
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len as usize
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn particle_count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    #[inline]
    pub fn occupation(&self, mode: usize) -> u8 {
        ((self.bits >> mode) & 1) as u8
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len() {
            write!(f, "{}", self.occupation(i))?;
        }
        Ok(())
    }
}

impl fmt::Debug for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|{self}>")
    }
}

/// Number of differing occupations.
pub fn hamming_distance(m: &Bitstring, n: &Bitstring) -> Result<usize> {
    if m.len() != n.len() {
        return Err(Error::DimensionMismatch {
            expected: m.len(),
            got: n.len(),
        });
    }
    Ok((m.bits ^ n.bits).count_ones() as usize)
}

/// Occupation strictly between modes `i` and `j`, skipping `excluded`.
pub fn occupation_phase(i: usize, j: usize, excluded: &[usize], n: &Bitstring) -> Result<u32> {
    if i == j {
        return Err(Error::domain("occupation phase needs two distinct modes"));
    }
    if i.max(j) >= n.len() {
        return Err(Error::domain(format!("mode {} out of range", i.max(j))));
    }
    Ok(phase_count(i, j, excluded, n.bits))
}

/// Bit-level [`occupation_phase`] without range checks.
#[inline]
pub(crate) fn phase_count(i: usize, j: usize, excluded: &[usize], bits: u64) -> u32 {
    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
    if hi - lo < 2 {
        return 0;
    }
    let mut mask = ((1u64 << (hi - lo - 1)) - 1) << (lo + 1);
    for &e in excluded {
        if e < 64 {
            mask &= !(1u64 << e);
        }
    }
    (bits & mask).count_ones()
}

/// Ordered list of basis bitstrings, optionally restricted to one particle number.
#[derive(Debug, Clone, PartialEq)]
pub struct FockBasis {
    mode_count: usize,
    sector: Option<usize>,
    twice_sz: Option<i32>,
    states: Vec<u64>,
}

impl FockBasis {
    /// Enumerate bitstrings in ascending integer order.
    pub fn new(mode_count: usize, sector: Option<usize>) -> Result<Self> {
        if mode_count > MAX_MODES {
            return Err(Error::Capacity {
                what: "mode_count",
                got: mode_count,
                limit: MAX_MODES,
            });
        }
        let states = match sector {
            None => (0..(1u64 << mode_count)).collect(),
            Some(n) if n > mode_count => {
                return Err(Error::domain(format!(
                    "particle sector {n} exceeds {mode_count} modes"
                )))
            }
            Some(n) => fixed_weight_states(mode_count, n),
        };
        Ok(FockBasis {
            mode_count,
            sector,
            twice_sz: None,
            states,
        })
    }

    /// Fixed particle number and fixed `2 S^z` (even modes are spin up).
    pub fn with_spin(mode_count: usize, particles: usize, twice_sz: i32) -> Result<Self> {
        let mut basis = Self::new(mode_count, Some(particles))?;
        basis.states.retain(|&b| twice_sz_of(b) == twice_sz);
        basis.twice_sz = Some(twice_sz);
        Ok(basis)
    }

    pub fn shared(mode_count: usize, sector: Option<usize>) -> Result<Arc<Self>> {
        Ok(Arc::new(Self::new(mode_count, sector)?))
    }

    #[inline]
    pub fn mode_count(&self) -> usize {
        self.mode_count
    }

    #[inline]
    pub fn sector(&self) -> Option<usize> {
        self.sector
    }

    #[inline]
    pub fn twice_sz(&self) -> Option<i32> {
        self.twice_sz
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.states.len()
    }

    #[inline]
    pub fn states(&self) -> &[u64] {
        &self.states
    }

    #[inline]
    pub fn state(&self, k: usize) -> Bitstring {
        Bitstring {
            bits: self.states[k],
            len: self.mode_count as u8,
        }
    }

    /// Position of a bitstring, `None` if it is outside this basis.
    #[inline]
    pub fn index_of(&self, bits: u64) -> Option<usize> {
        if self.mode_count < 64 && bits >> self.mode_count != 0 {
            return None;
        }
        match self.sector {
            None => Some(bits as usize),
            Some(n) => {
                if bits.count_ones() as usize != n {
                    return None;
                }
                match self.twice_sz {
                    None => Some(colex_rank(bits)),
                    Some(_) => self.states.binary_search(&bits).ok(),
                }
            }
        }
    }
}

const EVEN_BITS: u64 = 0x5555_5555_5555_5555;

/// `2 S^z` of a bitstring in the interleaved spin layout.
#[inline]
pub fn twice_sz_of(bits: u64) -> i32 {
    (bits & EVEN_BITS).count_ones() as i32 - (bits & !EVEN_BITS).count_ones() as i32
}

/// Rank of a fixed-weight word among words of the same weight in ascending order.
fn colex_rank(bits: u64) -> usize {
    let mut rank = 0;
    let mut rest = bits;
    let mut k = 1;
    while rest != 0 {
        let pos = rest.trailing_zeros() as usize;
        rank += binomial(pos, k);
        k += 1;
        rest &= rest - 1;
    }
    rank
}

fn fixed_weight_states(m: usize, n: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(binomial(m, n));
    if n == 0 {
        out.push(0);
        return out;
    }
    let mut v: u64 = (1u64 << n) - 1;
    let limit = 1u64 << m;
    while v < limit {
        out.push(v);
        // next word with the same popcount
        let t = v | (v - 1);
        v = (t + 1) | (((!t & (!t).wrapping_neg()) - 1) >> (v.trailing_zeros() + 1));
    }
    out
}

/// Enumerate a basis; see [`FockBasis::new`].
pub fn enumerate_basis(mode_count: usize, sector: Option<usize>) -> Result<FockBasis> {
    FockBasis::new(mode_count, sector)
}

/// Complex amplitudes over a Fock basis.
#[derive(Debug, Clone)]
pub struct StateVector {
    basis: Arc<FockBasis>,
    amplitudes: CVector,
}

impl StateVector {
    pub fn new(basis: Arc<FockBasis>, amplitudes: CVector) -> Result<Self> {
        if amplitudes.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                got: amplitudes.len(),
            });
        }
        Ok(StateVector { basis, amplitudes })
    }

    /// A single basis state with amplitude one.
    pub fn basis_state(basis: Arc<FockBasis>, bits: u64) -> Result<Self> {
        let k = basis
            .index_of(bits)
            .ok_or_else(|| Error::domain(format!("bitstring {bits:#b} not in basis")))?;
        let mut amps = CVector::zeros(basis.dim());
        amps[k] = linalg::ONE;
        Ok(StateVector {
            basis,
            amplitudes: amps,
        })
    }

    pub fn vacuum(mode_count: usize) -> Result<Self> {
        Self::basis_state(FockBasis::shared(mode_count, Some(0))?, 0)
    }

    #[inline]
    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    #[inline]
    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> CVector {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Numerical("cannot normalize a zero state".into()));
        }
        self.amplitudes.unscale_mut(n);
        Ok(self)
    }

    /// Amplitude on a bitstring (zero when outside the basis).
    pub fn amplitude(&self, bits: u64) -> C64 {
        self.basis
            .index_of(bits)
            .map(|k| self.amplitudes[k])
            .unwrap_or(ZERO)
    }

    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        if self.basis.as_ref() != other.basis.as_ref() {
            return Err(Error::domain("inner product across different bases"));
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// `<psi| O |psi>` for an operator given as a bitstring map.
    pub fn expectation(&self, op: impl Fn(u64) -> Option<(u64, f64)>) -> C64 {
        let mut acc = ZERO;
        for (k, &bits) in self.basis.states().iter().enumerate() {
            let a = self.amplitudes[k];
            if a == ZERO {
                continue;
            }
            if let Some((out, s)) = op(bits) {
                if let Some(idx) = self.basis.index_of(out) {
                    acc += self.amplitudes[idx].conj() * a * s;
                }
            }
        }
        acc
    }

    /// Pure-state density matrix.
    pub fn density_matrix(&self) -> DensityMatrix {
        DensityMatrix {
            basis: self.basis.clone(),
            elements: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }
}

/// Apply `c_mode` or `c†_mode` to a state.
///
/// The output lives in the sector shifted by one (or the same unfiltered basis).
pub fn apply_ladder(state: &StateVector, mode: usize, kind: Ladder) -> Result<StateVector> {
    let basis = state.basis();
    if mode >= basis.mode_count() {
        return Err(Error::domain(format!(
            "mode {mode} out of range for {} modes",
            basis.mode_count()
        )));
    }
    let target_sector = match (basis.sector(), kind) {
        (None, _) => None,
        (Some(n), Ladder::Create) if n == basis.mode_count() => {
            return Err(Error::domain("cannot create a particle in a filled sector"))
        }
        (Some(0), Ladder::Annihilate) => {
            return Err(Error::domain("cannot annihilate in the vacuum sector"))
        }
        (Some(n), Ladder::Create) => Some(n + 1),
        (Some(n), Ladder::Annihilate) => Some(n - 1),
    };
    let target = match (target_sector, basis.twice_sz()) {
        (_, None) if target_sector == basis.sector() => basis.clone(),
        (_, None) => FockBasis::shared(basis.mode_count(), target_sector)?,
        (Some(n), Some(sz)) => {
            let spin_step = if mode.is_multiple_of(2) { 1 } else { -1 };
            let delta = if kind == Ladder::Create { spin_step } else { -spin_step };
            Arc::new(FockBasis::with_spin(basis.mode_count(), n, sz + delta)?)
        }
        (None, Some(_)) => unreachable!("spin-resolved bases always fix the particle number"),
    };
    let mut out = CVector::zeros(target.dim());
    for (k, &bits) in basis.states().iter().enumerate() {
        if let Some((b, s)) = ladder_bits(bits, mode, kind) {
            let idx = target.index_of(b).expect("ladder output stays in target sector");
            out[idx] += state.amplitudes()[k] * s;
        }
    }
    StateVector::new(target, out)
}

/// Dense Hermitian operator on a subsystem Fock space.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    basis: Arc<FockBasis>,
    elements: CMatrix,
}

impl DensityMatrix {
    pub fn new(basis: Arc<FockBasis>, elements: CMatrix) -> Result<Self> {
        if elements.nrows() != basis.dim() || elements.ncols() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                got: elements.nrows(),
            });
        }
        Ok(DensityMatrix { basis, elements })
    }

    /// `I / d` on the full Fock space of `mode_count` modes.
    pub fn maximally_mixed(mode_count: usize) -> Result<Self> {
        let basis = FockBasis::shared(mode_count, None)?;
        let d = basis.dim();
        let elements = CMatrix::identity(d, d).unscale(d as f64);
        Ok(DensityMatrix { basis, elements })
    }

    #[inline]
    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    #[inline]
    pub fn elements(&self) -> &CMatrix {
        &self.elements
    }

    pub fn into_elements(self) -> CMatrix {
        self.elements
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn trace(&self) -> C64 {
        linalg::trace(&self.elements)
    }

    pub fn hermiticity_defect(&self) -> f64 {
        linalg::hermiticity_defect(&self.elements)
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        linalg::eigvalsh(&self.elements)
    }

    /// `Tr[rho O]` for an operator given as a bitstring map.
    pub fn expectation(&self, op: impl Fn(u64) -> Option<(u64, f64)>) -> C64 {
        let mut acc = ZERO;
        for (k, &bits) in self.basis.states().iter().enumerate() {
            if let Some((out, s)) = op(bits) {
                if let Some(m) = self.basis.index_of(out) {
                    acc += self.elements[(k, m)] * s;
                }
            }
        }
        acc
    }

    /// `Tr[rho^2]`.
    pub fn purity(&self) -> f64 {
        linalg::trace_product(&self.elements, &self.elements).re
    }
}

/// Trace out every mode except the leading `keep_modes`.
///
/// With the descending construction order the kept modes are the innermost
/// operators, so the fermionic and qubit partial traces agree for states of
/// definite particle-number parity.
pub fn partial_trace(psi: &StateVector, keep_modes: usize) -> Result<DensityMatrix> {
    let basis = psi.basis();
    if keep_modes > basis.mode_count() {
        return Err(Error::domain(format!(
            "cannot keep {keep_modes} of {} modes",
            basis.mode_count()
        )));
    }
    let sub = FockBasis::shared(keep_modes, None)?;
    let mask = if keep_modes == 64 {
        u64::MAX
    } else {
        (1u64 << keep_modes) - 1
    };
    let mut by_env: BTreeMap<u64, Vec<(usize, C64)>> = BTreeMap::new();
    for (k, &bits) in basis.states().iter().enumerate() {
        let a = psi.amplitudes()[k];
        if a == ZERO {
            continue;
        }
        by_env
            .entry(bits >> keep_modes)
            .or_default()
            .push(((bits & mask) as usize, a));
    }
    let d = sub.dim();
    let mut rho = CMatrix::zeros(d, d);
    for block in by_env.values() {
        for &(r, ar) in block {
            for &(c, ac) in block {
                rho[(r, c)] += ar * ac.conj();
            }
        }
    }
    DensityMatrix::new(sub, rho)
}

/// Partial trace for an arbitrary mode list; only leading contiguous blocks are supported.
pub fn partial_trace_modes(psi: &StateVector, keep: &[usize]) -> Result<DensityMatrix> {
    if keep.iter().enumerate().any(|(k, &m)| k != m) {
        return Err(Error::Unsupported(
            "partial trace over a non-leading or non-contiguous mode set".into(),
        ));
    }
    partial_trace(psi, keep.len())
}

/// Matrix of an operator, given as a bitstring map, in `basis`.
pub fn operator_matrix(basis: &FockBasis, op: impl Fn(u64) -> Vec<(u64, C64)>) -> CMatrix {
    let d = basis.dim();
    let mut m = CMatrix::zeros(d, d);
    for (col, &bits) in basis.states().iter().enumerate() {
        for (out, v) in op(bits) {
            if let Some(row) = basis.index_of(out) {
                m[(row, col)] += v;
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_state(basis: Arc<FockBasis>, rng: &mut impl Rng) -> StateVector {
        let amps = CVector::from_fn(basis.dim(), |_, _| {
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        StateVector::new(basis, amps).unwrap().normalized().unwrap()
    }

    #[test]
    fn enumerate_small_bases() {
        let b = enumerate_basis(2, None).unwrap();
        assert_eq!(b.states(), &[0b00, 0b01, 0b10, 0b11]);
        let b = enumerate_basis(4, Some(2)).unwrap();
        assert_eq!(b.dim(), 6);
        assert_eq!(b.states(), &[0b0011, 0b0101, 0b0110, 0b1001, 0b1010, 0b1100]);
        assert!(matches!(enumerate_basis(4, Some(5)), Err(Error::Domain(_))));
        assert!(matches!(enumerate_basis(29, None), Err(Error::Capacity { .. })));
    }

    #[test]
    fn index_of_inverts_states() {
        for m in 0..=10 {
            for n in 0..=m {
                let b = enumerate_basis(m, Some(n)).unwrap();
                assert_eq!(b.dim(), binomial(m, n));
                for (k, &s) in b.states().iter().enumerate() {
                    assert_eq!(b.index_of(s), Some(k));
                }
            }
        }
        let b = enumerate_basis(5, None).unwrap();
        for (k, &s) in b.states().iter().enumerate() {
            assert_eq!(b.index_of(s), Some(k));
        }
    }

    #[test]
    fn ladder_on_vacuum() {
        let vac = StateVector::basis_state(FockBasis::shared(2, None).unwrap(), 0).unwrap();
        let up = apply_ladder(&vac, 0, Ladder::Create).unwrap();
        assert_eq!(up.amplitude(0b01), linalg::ONE);
        let back = apply_ladder(&up, 0, Ladder::Annihilate).unwrap();
        assert_eq!(back.amplitude(0b00), linalg::ONE);
        assert!(apply_ladder(&vac, 2, Ladder::Create).is_err());
    }

    #[test]
    fn sign_counts_higher_modes() {
        // c_0 on |11>: mode 1 is above mode 0
        assert_eq!(ladder_bits(0b11, 0, Ladder::Annihilate), Some((0b10, -1.0)));
        assert_eq!(ladder_bits(0b11, 1, Ladder::Annihilate), Some((0b01, 1.0)));
        assert_eq!(ladder_bits(0b01, 0, Ladder::Create), None);
    }

    #[test]
    fn anticommutator_expectations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let basis = FockBasis::shared(4, None).unwrap();
        let psi = random_state(basis, &mut rng);
        let anti = |i: usize, j: usize| {
            psi.expectation(|b| apply_string(b, &[(i, Ladder::Create), (j, Ladder::Annihilate)]))
                + psi.expectation(|b| {
                    apply_string(b, &[(j, Ladder::Annihilate), (i, Ladder::Create)])
                })
        };
        assert!(anti(0, 1).norm() < 1e-14);
        assert!((anti(0, 0) - linalg::ONE).norm() < 1e-14);
    }

    #[test]
    fn canonical_anticommutation_exhaustive() {
        let basis = FockBasis::new(6, None).unwrap();
        let mat = |mode: usize, kind: Ladder| {
            operator_matrix(&basis, |b| {
                ladder_bits(b, mode, kind)
                    .map(|(o, s)| vec![(o, C64::new(s, 0.0))])
                    .unwrap_or_default()
            })
        };
        let id = CMatrix::identity(64, 64);
        for i in 0..6 {
            for j in 0..6 {
                let ci = mat(i, Ladder::Annihilate);
                let cj = mat(j, Ladder::Annihilate);
                let cjd = mat(j, Ladder::Create);
                let mixed = &ci * &cjd + &cjd * &ci;
                let expect = if i == j { id.clone() } else { CMatrix::zeros(64, 64) };
                assert!(linalg::max_abs_diff(&mixed, &expect) < 1e-12);
                assert!(linalg::max_abs(&(&ci * &cj + &cj * &ci)) < 1e-12);
            }
        }
    }

    #[test]
    fn hamming_examples() {
        let p = |s| Bitstring::parse(s).unwrap();
        assert_eq!(hamming_distance(&p("0101"), &p("0101")).unwrap(), 0);
        assert_eq!(hamming_distance(&p("0101"), &p("0110")).unwrap(), 2);
        assert_eq!(hamming_distance(&p("1100"), &p("0011")).unwrap(), 4);
        assert!(hamming_distance(&p("110"), &p("0011")).is_err());
    }

    #[test]
    fn phase_examples() {
        let n = Bitstring::parse("1011").unwrap();
        assert_eq!(occupation_phase(0, 3, &[], &n).unwrap(), 1);
        assert_eq!(occupation_phase(0, 3, &[2], &n).unwrap(), 0);
        assert_eq!(occupation_phase(3, 0, &[], &n).unwrap(), 1);
        assert!(occupation_phase(1, 1, &[], &n).is_err());
    }

    #[test]
    fn phase_symmetric_exhaustive() {
        for m in 2..=6usize {
            for bits in 0..(1u64 << m) {
                let n = Bitstring::new(bits, m).unwrap();
                for i in 0..m {
                    for j in 0..m {
                        if i == j {
                            continue;
                        }
                        for e in 0..(1u64 << m) {
                            let ex: Vec<usize> = (0..m).filter(|k| e >> k & 1 == 1).collect();
                            assert_eq!(
                                occupation_phase(i, j, &ex, &n).unwrap(),
                                occupation_phase(j, i, &ex, &n).unwrap()
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn partial_trace_examples() {
        // |10> (x) |phi>: mode 0 occupied, then a superposition on modes 2,3
        let basis = FockBasis::shared(4, Some(2)).unwrap();
        let mut amps = CVector::zeros(basis.dim());
        let s = 0.5f64.sqrt();
        amps[basis.index_of(0b0101).unwrap()] = C64::new(s, 0.0);
        amps[basis.index_of(0b1001).unwrap()] = C64::new(0.0, s);
        let psi = StateVector::new(basis, amps).unwrap();
        let rho = partial_trace(&psi, 2).unwrap();
        let mut expect = CMatrix::zeros(4, 4);
        expect[(0b01, 0b01)] = linalg::ONE;
        assert!(linalg::max_abs_diff(rho.elements(), &expect) < 1e-14);

        let basis = FockBasis::shared(2, Some(1)).unwrap();
        let amps = CVector::from_element(2, C64::new(s, 0.0));
        let psi = StateVector::new(basis, amps).unwrap();
        let rho = partial_trace(&psi, 1).unwrap();
        assert!((rho.elements()[(0, 0)].re - 0.5).abs() < 1e-14);
        assert!((rho.elements()[(1, 1)].re - 0.5).abs() < 1e-14);
        assert!(rho.elements()[(0, 1)].norm() < 1e-14);

        assert!(matches!(
            partial_trace_modes(&psi, &[1]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn partial_trace_random_fixed_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..200 {
            let m = 4 + trial % 7;
            let n = rng.gen_range(0..=m);
            let basis = FockBasis::shared(m, Some(n)).unwrap();
            let psi = random_state(basis, &mut rng);
            let keep = rng.gen_range(1..=m.min(8));
            let rho = partial_trace(&psi, keep).unwrap();
            assert!((rho.trace().re - 1.0).abs() < 1e-10);
            assert!(rho.hermiticity_defect() < 1e-12);
            let ev = rho.eigenvalues().unwrap();
            assert!(ev[0] > -1e-10, "min eigenvalue {}", ev[0]);
            // block diagonal in subsystem particle number
            for (r, &a) in rho.basis().states().iter().enumerate() {
                for (c, &b) in rho.basis().states().iter().enumerate() {
                    if a.count_ones() != b.count_ones() {
                        assert!(rho.elements()[(r, c)].norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn reduced_two_point_matches_global() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let basis = FockBasis::shared(8, Some(4)).unwrap();
        let psi = random_state(basis, &mut rng);
        let rho = partial_trace(&psi, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let global = psi.expectation(|b| hop_bits(b, i, j));
                let local = rho.expectation(|b| hop_bits(b, i, j));
                assert!((global - local).norm() < 1e-12);
            }
        }
    }
}
