//! Reduced-state reconstruction from two- and four-point functions.
//!
//! The state is expanded around the Gaussian state fixed by `C2`. All matrices
//! here live in the Fock basis of the frame modes `d_p = sum_b V_bp c_b`, built
//! with the same descending convention as the physical modes; use
//! [`frame_to_mode`] to return to the physical basis.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correlations::{
    self, DiagonalFrame, FourPointTensor, RotatedFourPoint, TwoPointMatrix, CLAMP_TOL,
};
use crate::error::{Error, Result};
use crate::fock::{self, hop_bits, phase_count, DensityMatrix, FockBasis};
use crate::linalg::{self, CMatrix, CVector, C64, ONE, ZERO};

/// Above this `max |C4~|` the expansion is flagged as outside its regime.
pub const ANSATZ_WARNING: f64 = 0.1;

#[inline]
fn bit(bits: u64, p: usize) -> bool {
    bits >> p & 1 == 1
}

#[inline]
fn parity(count: u32) -> f64 {
    if count.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn sgn(a: usize, b: usize) -> f64 {
    match a.cmp(&b) {
        std::cmp::Ordering::Less => -1.0,
        std::cmp::Ordering::Greater => 1.0,
        std::cmp::Ordering::Equal => 0.0,
    }
}

/// `f_p = n_p g_p + (1 - n_p)(1 - g_p)` for every mode.
fn mode_weights(g: &[f64], bits: u64) -> Vec<f64> {
    g.iter()
        .enumerate()
        .map(|(p, &gp)| if bit(bits, p) { gp } else { 1.0 - gp })
        .collect()
}

/// `prod_{p not in skip} f_p`.
fn weight_without(f: &[f64], skip: &[usize]) -> f64 {
    f.iter()
        .enumerate()
        .filter(|(p, _)| !skip.contains(p))
        .map(|(_, v)| v)
        .product()
}

/// Gaussian state, diagonal in the frame Fock basis.
#[derive(Debug, Clone)]
pub struct GaussianState {
    frame: DiagonalFrame,
    basis: Arc<FockBasis>,
    weights: Vec<f64>,
}

impl GaussianState {
    pub fn frame(&self) -> &DiagonalFrame {
        &self.frame
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    /// `rho_g,nn` indexed by frame bitstring.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn to_matrix(&self) -> CMatrix {
        CMatrix::from_diagonal(&CVector::from_iterator(
            self.weights.len(),
            self.weights.iter().map(|&w| C64::new(w, 0.0)),
        ))
    }
}

/// `rho_g,nn = prod_p f_p`.
pub fn gaussian_state(frame: &DiagonalFrame) -> Result<GaussianState> {
    let basis = FockBasis::shared(frame.dim(), None)?;
    let g = frame.occupations();
    let weights: Vec<f64> = basis
        .states()
        .iter()
        .map(|&b| mode_weights(g, b).iter().product())
        .collect();
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::Consistency(format!("Gaussian weights sum to {total}")));
    }
    Ok(GaussianState {
        frame: frame.clone(),
        basis,
        weights,
    })
}

/// Single-particle entanglement Hamiltonian `h` with `<c†_i c_j> = [(e^h + 1)^-1]_ji`.
pub fn single_particle_eh(c2: &TwoPointMatrix) -> Result<CMatrix> {
    let h = linalg::hermitian_function(c2.entries(), |g| {
        let g = g.clamp(CLAMP_TOL, 1.0 - CLAMP_TOL);
        C64::new(((1.0 - g) / g).ln(), 0.0)
    })?;
    // (e^{h^T} + 1)^{-1} = C  =>  h = conj(log((1 - C) / C))
    Ok(h.map(|z| z.conj()))
}

/// Many-body quadratic entanglement Hamiltonian on the mode Fock space,
/// shifted so that `Tr exp(-H_A) = 1`.
pub fn gaussian_eh(c2: &TwoPointMatrix) -> Result<DensityMatrix> {
    let n = c2.dim();
    let h = single_particle_eh(c2)?;
    let log_z: f64 = linalg::eigvalsh(c2.entries())?
        .iter()
        .map(|g| -(1.0 - g.clamp(CLAMP_TOL, 1.0 - CLAMP_TOL)).ln())
        .sum();
    let basis = FockBasis::shared(n, None)?;
    let mut m = fock::operator_matrix(&basis, |b| {
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if let Some((o, s)) = hop_bits(b, i, j) {
                    out.push((o, h[(i, j)] * s));
                }
            }
        }
        out
    });
    for k in 0..m.nrows() {
        m[(k, k)] += C64::new(log_z, 0.0);
    }
    DensityMatrix::new(basis, m)
}

/// Gaussian state with two-point function `c2`, in the mode Fock basis.
pub fn gaussian_density(c2: &TwoPointMatrix) -> Result<DensityMatrix> {
    let frame = correlations::diagonalize_two_point(c2)?;
    // no logarithm here, so the occupations are only clipped to [0, 1]
    let occ: Vec<f64> = frame.raw_occupations().iter().map(|g| g.clamp(0.0, 1.0)).collect();
    let weights = CMatrix::from_diagonal(&CVector::from_iterator(
        1 << occ.len(),
        (0..1u64 << occ.len()).map(|b| C64::new(mode_weights(&occ, b).iter().product(), 0.0)),
    ));
    let g = frame_to_mode(&frame)?;
    DensityMatrix::new(FockBasis::shared(c2.dim(), None)?, &g * weights * g.adjoint())
}

fn check_dims(c4t: &RotatedFourPoint, frame: &DiagonalFrame) -> Result<()> {
    if c4t.dim() != frame.dim() {
        return Err(Error::domain(format!(
            "frame has {} modes, tensor has {}",
            frame.dim(),
            c4t.dim()
        )));
    }
    if frame.dim() > correlations::MAX_SUBSYSTEM_MODES {
        return Err(Error::Capacity {
            what: "subsystem modes",
            got: frame.dim(),
            limit: correlations::MAX_SUBSYSTEM_MODES,
        });
    }
    Ok(())
}

fn ones(bits: u64, n: usize) -> Vec<usize> {
    (0..n).filter(|&p| bit(bits, p)).collect()
}

fn zeros(bits: u64, n: usize) -> Vec<usize> {
    (0..n).filter(|&p| !bit(bits, p)).collect()
}

/// Column `n` of the correction: all `(m, value)` with `m` reachable from `n`.
fn correction_column(c4t: &RotatedFourPoint, g: &[f64], nb: u64) -> Vec<(u64, C64)> {
    let n = g.len();
    let f = mode_weights(g, nb);
    let occ = ones(nb, n);
    let emp = zeros(nb, n);
    let mut out = Vec::new();

    // d_H = 0
    let mut diag = ZERO;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let s = parity(bit(nb, i) as u32 + bit(nb, j) as u32);
            diag += c4t.get(i, j, j, i) * (0.5 * s * weight_without(&f, &[i, j]));
        }
    }
    out.push((nb, diag));

    // d_H = 2: n_j = 1 -> m_j = 0, n_k = 0 -> m_k = 1
    for &j in &occ {
        for &k in &emp {
            let mb = nb ^ (1 << j) ^ (1 << k);
            let mut acc = ZERO;
            for i in 0..n {
                if i == j || i == k {
                    continue;
                }
                let phase = bit(nb, i) as u32 + phase_count(j, k, &[], nb);
                acc += c4t.get(i, j, i, k) * (parity(phase) * weight_without(&f, &[i, j, k]));
            }
            out.push((mb, acc));
        }
    }

    // d_H = 4: n_i = n_j = 1 -> 0, n_k = n_l = 0 -> 1
    for (a, &i) in occ.iter().enumerate() {
        for &j in &occ[a + 1..] {
            for (b, &k) in emp.iter().enumerate() {
                for &l in &emp[b + 1..] {
                    let mb = nb ^ (1 << i) ^ (1 << j) ^ (1 << k) ^ (1 << l);
                    // the four orderings of (i, j) and (k, l) contribute equally
                    let phase = phase_count(i, j, &[k, l], nb) + phase_count(k, l, &[i, j], nb);
                    let v = c4t.get(i, j, k, l)
                        * (-parity(phase) * sgn(i, j) * sgn(k, l) * weight_without(&f, &[i, j, k, l]));
                    out.push((mb, v));
                }
            }
        }
    }
    out
}

/// Non-Gaussian correction `delta rho` in the frame Fock basis.
pub fn delta_rho(c4t: &RotatedFourPoint, frame: &DiagonalFrame) -> Result<CMatrix> {
    check_dims(c4t, frame)?;
    let n = frame.dim();
    let dim = 1usize << n;
    let g = frame.occupations();
    let columns: Vec<Vec<(u64, C64)>> = (0..dim as u64)
        .into_par_iter()
        .map(|nb| correction_column(c4t, g, nb))
        .collect();
    let mut m = CMatrix::zeros(dim, dim);
    for (col, entries) in columns.into_iter().enumerate() {
        for (row, v) in entries {
            m[(row as usize, col)] += v;
        }
    }
    Ok(m)
}

/// The three partial sums `(sum I1, sum I2, sum I3)` whose combination
/// `2 I1 + 4 I2 + I3` is `delta rho`.
pub fn delta_rho_decomposed(
    c4t: &RotatedFourPoint,
    frame: &DiagonalFrame,
) -> Result<(CMatrix, CMatrix, CMatrix)> {
    check_dims(c4t, frame)?;
    let n = frame.dim();
    let dim = 1usize << n;
    let g = frame.occupations();
    let weights: Vec<Vec<f64>> = (0..dim as u64).map(|b| mode_weights(g, b)).collect();
    let mut i1 = CMatrix::zeros(dim, dim);
    let mut i2 = CMatrix::zeros(dim, dim);
    let mut i3 = CMatrix::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            let v = c4t.get(i, j, j, i);
            if i == j || v == ZERO {
                continue;
            }
            for nb in 0..dim as u64 {
                let s = parity(bit(nb, i) as u32 + bit(nb, j) as u32);
                let w = weight_without(&weights[nb as usize], &[i, j]);
                i1[(nb as usize, nb as usize)] += v * (0.25 * s * w);
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let v = c4t.get(i, j, i, k);
                if v == ZERO || j == k || i == j || i == k {
                    continue;
                }
                for nb in 0..dim as u64 {
                    if !bit(nb, j) || bit(nb, k) {
                        continue;
                    }
                    let mb = nb ^ (1 << j) ^ (1 << k);
                    let phase = bit(nb, i) as u32 + phase_count(j, k, &[], nb);
                    let w = weight_without(&weights[nb as usize], &[i, j, k]);
                    i2[(mb as usize, nb as usize)] += v * (0.25 * parity(phase) * w);
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let v = c4t.get(i, j, k, l);
                    if v == ZERO || i == j || k == l {
                        continue;
                    }
                    for nb in 0..dim as u64 {
                        if !(bit(nb, i) && bit(nb, j)) || bit(nb, k) || bit(nb, l) {
                            continue;
                        }
                        let mb = nb ^ (1 << i) ^ (1 << j) ^ (1 << k) ^ (1 << l);
                        let phase =
                            phase_count(i, j, &[k, l], nb) + phase_count(k, l, &[i, j], nb);
                        let w = weight_without(&weights[nb as usize], &[i, j, k, l]);
                        i3[(mb as usize, nb as usize)] +=
                            v * (-0.25 * parity(phase) * sgn(i, j) * sgn(k, l) * w);
                    }
                }
            }
        }
    }
    Ok((i1, i2, i3))
}

/// `G[m, n] = <m_c | n_d>`: frame Fock states expressed in the mode Fock basis.
pub fn frame_to_mode(frame: &DiagonalFrame) -> Result<CMatrix> {
    let n = frame.dim();
    let dim = 1usize << n;
    let v = frame.rotation();
    let columns: Vec<CVector> = (0..dim as u64)
        .into_par_iter()
        .map(|nb| {
            let mut state = CVector::zeros(dim);
            state[0] = ONE;
            // |n_d> = d†_{M-1}^{n} ... d†_0^{n} |0>, so d†_0 acts first
            for p in 0..n {
                if !bit(nb, p) {
                    continue;
                }
                let mut next = CVector::zeros(dim);
                for (src, &amp) in state.iter().enumerate() {
                    if amp == ZERO {
                        continue;
                    }
                    for b in 0..n {
                        let coef = v[(b, p)].conj();
                        if coef == ZERO {
                            continue;
                        }
                        if let Some((out, s)) =
                            fock::ladder_bits(src as u64, b, fock::Ladder::Create)
                        {
                            next[out as usize] += amp * coef * s;
                        }
                    }
                }
                state = next;
            }
            state
        })
        .collect();
    Ok(CMatrix::from_columns(&columns))
}

/// Euclidean projection of `v` onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Closest positive unit-trace state with the same eigenvectors.
pub fn project_positive(rho: &DensityMatrix) -> Result<DensityMatrix> {
    let (vals, vecs) = linalg::eigh(rho.elements())?;
    let p = project_simplex(&vals);
    let d: Vec<C64> = p.iter().map(|&x| C64::new(x, 0.0)).collect();
    DensityMatrix::new(rho.basis().clone(), linalg::from_spectrum(&d, &vecs))
}

/// Output of [`reconstruct`].
#[derive(Debug, Clone)]
pub struct ReconstructedState {
    pub gaussian: GaussianState,
    /// `delta rho` in the frame basis.
    pub correction: CMatrix,
    /// `rho_g + delta rho` in the frame basis.
    pub assembled: DensityMatrix,
    /// Positive projection of `assembled`, frame basis.
    pub projected: DensityMatrix,
    /// `max |C4~|`.
    pub max_rotated_c4: f64,
}

impl ReconstructedState {
    pub fn frame(&self) -> &DiagonalFrame {
        self.gaussian.frame()
    }

    /// True when `max |C4~|` exceeds [`ANSATZ_WARNING`].
    pub fn ansatz_warning(&self) -> bool {
        self.max_rotated_c4 > ANSATZ_WARNING
    }

    /// Gaussian part as a density matrix in the frame basis.
    pub fn gaussian_density(&self) -> Result<DensityMatrix> {
        DensityMatrix::new(self.gaussian.basis().clone(), self.gaussian.to_matrix())
    }

    /// Transform a frame-basis density matrix to the mode basis.
    pub fn to_mode_basis(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        let g = frame_to_mode(self.frame())?;
        DensityMatrix::new(rho.basis().clone(), &g * rho.elements() * g.adjoint())
    }

    /// Most negative eigenvalue of the assembled state (zero if positive).
    pub fn negativity(&self) -> Result<f64> {
        Ok(self
            .assembled
            .eigenvalues()?
            .first()
            .map(|&v| (-v).max(0.0))
            .unwrap_or(0.0))
    }
}

/// Full pipeline: frame, Gaussian part, correction, assembly and projection.
pub fn reconstruct(c2: &TwoPointMatrix, c4: &FourPointTensor) -> Result<ReconstructedState> {
    if c2.dim() != c4.dim() {
        return Err(Error::DimensionMismatch {
            expected: c2.dim(),
            got: c4.dim(),
        });
    }
    let frame = correlations::diagonalize_two_point(c2)?;
    let c4t = correlations::rotate_four_point(c4, &frame)?;
    let max_rotated_c4 = c4t.max_abs();
    if max_rotated_c4 > ANSATZ_WARNING {
        log::warn!("max |C4~| = {max_rotated_c4:.3} is outside the small-correlation regime");
    }
    let gaussian = gaussian_state(&frame)?;
    let correction = delta_rho(&c4t, &frame)?;
    let defect = linalg::hermiticity_defect(&correction);
    let trace = linalg::trace(&correction).norm();
    if defect > 1e-10 || trace > 1e-10 {
        return Err(Error::Consistency(format!(
            "correction not Hermitian/traceless (defect {defect:.2e}, trace {trace:.2e})"
        )));
    }
    let assembled = DensityMatrix::new(gaussian.basis().clone(), gaussian.to_matrix() + &correction)?;
    let projected = project_positive(&assembled)?;
    Ok(ReconstructedState {
        gaussian,
        correction,
        assembled,
        projected,
        max_rotated_c4,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionHeader {
    pub n_modes: usize,
    pub input_sha256: String,
    pub clamp_tolerance: f64,
    pub max_rotated_c4: f64,
    pub ansatz_warning: bool,
    pub basis: String,
}

/// JSON record of a reconstruction in the mode basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRecord {
    pub header: ReconstructionHeader,
    pub assembled: Vec<Vec<[f64; 2]>>,
    pub projected: Vec<Vec<[f64; 2]>>,
}

fn nest(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn unnest(rows: &[Vec<[f64; 2]>]) -> Result<CMatrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Format("density matrix is not square".into()));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
}

impl ReconstructionRecord {
    pub fn new(state: &ReconstructedState, input: &[u8]) -> Result<Self> {
        let assembled = state.to_mode_basis(&state.assembled)?;
        let projected = state.to_mode_basis(&state.projected)?;
        Ok(ReconstructionRecord {
            header: ReconstructionHeader {
                n_modes: state.frame().dim(),
                input_sha256: hex::encode(Sha256::digest(input)),
                clamp_tolerance: CLAMP_TOL,
                max_rotated_c4: state.max_rotated_c4,
                ansatz_warning: state.ansatz_warning(),
                basis: "mode".into(),
            },
            assembled: nest(assembled.elements()),
            projected: nest(projected.elements()),
        })
    }

    pub fn assembled(&self) -> Result<DensityMatrix> {
        DensityMatrix::new(
            FockBasis::shared(self.header.n_modes, None)?,
            unnest(&self.assembled)?,
        )
    }

    pub fn projected(&self) -> Result<DensityMatrix> {
        DensityMatrix::new(
            FockBasis::shared(self.header.n_modes, None)?,
            unnest(&self.projected)?,
        )
    }
}
