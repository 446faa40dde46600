//! Connected two- and four-point functions of a subsystem and their diagonal frame.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{apply_string, DensityMatrix, Ladder, StateVector};
use crate::linalg::{self, CMatrix, C64, ZERO};

/// Clamp applied to frame occupations before any logarithm.
pub const CLAMP_TOL: f64 = 1e-10;
/// Largest subsystem stored as a dense rank-4 array.
pub const MAX_SUBSYSTEM_MODES: usize = 12;

/// `C2_ij = <c†_i c_j>`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPointMatrix {
    entries: CMatrix,
}

impl TwoPointMatrix {
    pub fn new(entries: CMatrix) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                got: entries.ncols(),
            });
        }
        Ok(TwoPointMatrix { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.entries[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.entries).re
    }

    pub fn hermiticity_defect(&self) -> f64 {
        linalg::hermiticity_defect(&self.entries)
    }

    fn symmetrized(mut self) -> Self {
        self.entries = (&self.entries + self.entries.adjoint()).scale(0.5);
        self
    }
}

/// Dense rank-4 tensor `T_ijkl`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FourPointTensor {
    dim: usize,
    data: Vec<C64>,
}

impl FourPointTensor {
    pub fn zeros(dim: usize) -> Self {
        FourPointTensor {
            dim,
            data: vec![ZERO; dim.pow(4)],
        }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize, usize, usize) -> C64) -> Self {
        let mut t = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    for l in 0..dim {
                        let o = t.offset(i, j, k, l);
                        t.data[o] = f(i, j, k, l);
                    }
                }
            }
        }
        t
    }

    pub fn from_vec(dim: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != dim.pow(4) {
            return Err(Error::DimensionMismatch {
                expected: dim.pow(4),
                got: data.len(),
            });
        }
        Ok(FourPointTensor { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.dim + j) * self.dim + k) * self.dim + l
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> C64 {
        self.data[self.offset(i, j, k, l)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: C64) {
        let o = self.offset(i, j, k, l);
        self.data[o] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &FourPointTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Largest violation of antisymmetry, hermiticity and the vanishing of
    /// repeated creation or annihilation indices.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let v = self.get(i, j, k, l);
                        worst = worst
                            .max((v + self.get(j, i, k, l)).norm())
                            .max((v + self.get(i, j, l, k)).norm())
                            .max((v - self.get(l, k, j, i).conj()).norm());
                        if i == j || k == l {
                            worst = worst.max(v.norm());
                        }
                    }
                }
            }
        }
        worst
    }
}

/// Four-point function in the diagonal frame of `C2`.
pub type RotatedFourPoint = FourPointTensor;

/// Eigenframe of `C2`: `rotation† C2 rotation = diag(occupations)`, occupations descending.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalFrame {
    rotation: CMatrix,
    occupations: Vec<f64>,
    raw_occupations: Vec<f64>,
}

impl DiagonalFrame {
    /// Frame with an explicit rotation and occupations (clamped on construction).
    pub fn new(rotation: CMatrix, occupations: Vec<f64>) -> Result<Self> {
        if rotation.nrows() != occupations.len() || !rotation.is_square() {
            return Err(Error::DimensionMismatch {
                expected: occupations.len(),
                got: rotation.nrows(),
            });
        }
        let clamped = occupations
            .iter()
            .map(|g| g.clamp(CLAMP_TOL, 1.0 - CLAMP_TOL))
            .collect();
        Ok(DiagonalFrame {
            rotation,
            occupations: clamped,
            raw_occupations: occupations,
        })
    }

    /// Columns are the frame modes expressed in the original modes.
    pub fn rotation(&self) -> &CMatrix {
        &self.rotation
    }

    /// Clamped occupations `g_p`.
    pub fn occupations(&self) -> &[f64] {
        &self.occupations
    }

    /// Occupations before clamping.
    pub fn raw_occupations(&self) -> &[f64] {
        &self.raw_occupations
    }

    pub fn dim(&self) -> usize {
        self.occupations.len()
    }
}

/// `<c†_i c†_j c_k c_l>` evaluated through a generic expectation functional.
fn raw_four_point(
    n: usize,
    expect: impl Fn(&[(usize, Ladder)]) -> C64 + Sync,
) -> Vec<C64> {
    let n4 = n.pow(4);
    (0..n4)
        .into_par_iter()
        .map(|idx| {
            let l = idx % n;
            let k = (idx / n) % n;
            let j = (idx / n / n) % n;
            let i = idx / n / n / n;
            if i == j || k == l {
                return ZERO;
            }
            expect(&[
                (i, Ladder::Create),
                (j, Ladder::Create),
                (k, Ladder::Annihilate),
                (l, Ladder::Annihilate),
            ])
        })
        .collect()
}

fn two_point_with(n: usize, expect: impl Fn(&[(usize, Ladder)]) -> C64 + Sync) -> TwoPointMatrix {
    let vals: Vec<C64> = (0..n * n)
        .into_par_iter()
        .map(|idx| expect(&[(idx / n, Ladder::Create), (idx % n, Ladder::Annihilate)]))
        .collect();
    TwoPointMatrix {
        entries: CMatrix::from_row_slice(n, n, &vals),
    }
    .symmetrized()
}

fn connect(c2: &TwoPointMatrix, raw: Vec<C64>) -> FourPointTensor {
    let n = c2.dim();
    let mut t = FourPointTensor { dim: n, data: raw };
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let o = t.offset(i, j, k, l);
                    t.data[o] += -c2.get(i, l) * c2.get(j, k) + c2.get(i, k) * c2.get(j, l);
                }
            }
        }
    }
    antisymmetrize(t)
}

/// Remove numerical residue from the antisymmetry and hermiticity relations.
fn antisymmetrize(t: FourPointTensor) -> FourPointTensor {
    let n = t.dim;
    FourPointTensor::from_fn(n, |i, j, k, l| {
        let a = t.get(i, j, k, l) - t.get(j, i, k, l) - t.get(i, j, l, k) + t.get(j, i, l, k);
        let b = t.get(l, k, j, i) - t.get(l, k, i, j) - t.get(k, l, j, i) + t.get(k, l, i, j);
        (a + b.conj()) * 0.125
    })
}

fn check_modes(n_modes: usize, available: usize) -> Result<()> {
    if n_modes > available {
        return Err(Error::domain(format!(
            "subsystem of {n_modes} modes exceeds the {available} available"
        )));
    }
    if n_modes > MAX_SUBSYSTEM_MODES {
        return Err(Error::Capacity {
            what: "subsystem modes",
            got: n_modes,
            limit: MAX_SUBSYSTEM_MODES,
        });
    }
    Ok(())
}

fn state_functional(psi: &StateVector) -> impl Fn(&[(usize, Ladder)]) -> C64 + Sync + '_ {
    move |ops: &[(usize, Ladder)]| psi.expectation(|b| apply_string(b, ops))
}

fn density_functional(rho: &DensityMatrix) -> impl Fn(&[(usize, Ladder)]) -> C64 + Sync + '_ {
    move |ops: &[(usize, Ladder)]| rho.expectation(|b| apply_string(b, ops))
}

/// `C2` on the leading `n_modes` modes of a pure state.
pub fn measure_two_point(psi: &StateVector, n_modes: usize) -> Result<TwoPointMatrix> {
    check_modes(n_modes, psi.basis().mode_count())?;
    Ok(two_point_with(n_modes, state_functional(psi)))
}

/// Connected `C4` on the leading `n_modes` modes of a pure state.
pub fn measure_four_point_connected(psi: &StateVector, n_modes: usize) -> Result<FourPointTensor> {
    let c2 = measure_two_point(psi, n_modes)?;
    Ok(connect(&c2, raw_four_point(n_modes, state_functional(psi))))
}

/// `C2` on the leading `n_modes` modes of a density matrix.
pub fn two_point_from_density(rho: &DensityMatrix, n_modes: usize) -> Result<TwoPointMatrix> {
    check_modes(n_modes, rho.basis().mode_count())?;
    Ok(two_point_with(n_modes, density_functional(rho)))
}

/// Connected `C4` on the leading `n_modes` modes of a density matrix.
pub fn four_point_from_density(rho: &DensityMatrix, n_modes: usize) -> Result<FourPointTensor> {
    let c2 = two_point_from_density(rho, n_modes)?;
    Ok(connect(&c2, raw_four_point(n_modes, density_functional(rho))))
}

/// Both correlators of a density matrix over all of its modes.
pub fn measure_density(rho: &DensityMatrix) -> Result<(TwoPointMatrix, FourPointTensor)> {
    let n = rho.basis().mode_count();
    let c2 = two_point_from_density(rho, n)?;
    let c4 = connect(&c2, raw_four_point(n, density_functional(rho)));
    Ok((c2, c4))
}

/// Connected `C4` from a raw four-point function and `C2`.
pub fn connected_from_raw(c2: &TwoPointMatrix, raw: &FourPointTensor) -> Result<FourPointTensor> {
    if c2.dim() != raw.dim() {
        return Err(Error::DimensionMismatch {
            expected: c2.dim(),
            got: raw.dim(),
        });
    }
    Ok(connect(c2, raw.data.clone()))
}

const DEGENERACY_TOL: f64 = 1e-10;
const ROUNDING: f64 = 1e8;

/// Eigenframe of `C2` with deterministic ordering and phases.
pub fn diagonalize_two_point(c2: &TwoPointMatrix) -> Result<DiagonalFrame> {
    let n = c2.dim();
    let (vals, vecs) = linalg::eigh(c2.entries())?;
    let mut cols: Vec<(f64, Vec<C64>)> = (0..n)
        .rev()
        .map(|k| {
            let mut v: Vec<C64> = vecs.column(k).iter().copied().collect();
            fix_phase(&mut v);
            (vals[k], v)
        })
        .collect();
    // secondary order inside degenerate blocks
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (cols[start].0 - cols[end].0).abs() < DEGENERACY_TOL {
            end += 1;
        }
        cols[start..end].sort_by(|a, b| {
            for (x, y) in a.1.iter().zip(&b.1) {
                let kx = ((x.re * ROUNDING).round(), (x.im * ROUNDING).round());
                let ky = ((y.re * ROUNDING).round(), (y.im * ROUNDING).round());
                match ky.partial_cmp(&kx) {
                    Some(std::cmp::Ordering::Equal) | None => continue,
                    Some(o) => return o,
                }
            }
            std::cmp::Ordering::Equal
        });
        start = end;
    }
    let mut rotation = CMatrix::zeros(n, n);
    for (k, (_, v)) in cols.iter().enumerate() {
        for (r, z) in v.iter().enumerate() {
            rotation[(r, k)] = *z;
        }
    }
    DiagonalFrame::new(rotation, cols.into_iter().map(|c| c.0).collect())
}

/// Make the largest-magnitude component real and positive.
fn fix_phase(v: &mut [C64]) {
    let mut best = 0;
    for (k, z) in v.iter().enumerate() {
        if z.norm() > v[best].norm() + 1e-12 {
            best = k;
        }
    }
    let pivot = v[best];
    if pivot.norm() == 0.0 {
        return;
    }
    let phase = pivot.conj() / pivot.norm();
    for z in v.iter_mut() {
        *z *= phase;
    }
}

/// `sum W_ia W_jb T_abcd W†_ck W†_dl` by sequential contraction.
pub fn rotate_with(t: &FourPointTensor, w: &CMatrix) -> Result<FourPointTensor> {
    let n = t.dim();
    if w.nrows() != n || w.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: w.nrows(),
        });
    }
    let wd = w.adjoint();
    // contract one index at a time; `mats[pos]` maps old index -> new index
    let mut cur = t.data.clone();
    let stride = [n * n * n, n * n, n, 1];
    for (pos, &s) in stride.iter().enumerate() {
        let mut next = vec![ZERO; cur.len()];
        for (idx, slot) in next.iter_mut().enumerate() {
            let new_i = (idx / s) % n;
            let base = idx - new_i * s;
            let mut acc = ZERO;
            for old in 0..n {
                let coef = if pos < 2 { w[(new_i, old)] } else { wd[(old, new_i)] };
                acc += coef * cur[base + old * s];
            }
            *slot = acc;
        }
        cur = next;
    }
    FourPointTensor::from_vec(n, cur)
}

/// `C4` in the diagonal frame: `sum conj(V_ai) conj(V_bj) C4_abcd V_ck V_dl`.
pub fn rotate_four_point(c4: &FourPointTensor, frame: &DiagonalFrame) -> Result<RotatedFourPoint> {
    if c4.dim() != frame.dim() {
        return Err(Error::DimensionMismatch {
            expected: frame.dim(),
            got: c4.dim(),
        });
    }
    rotate_with(c4, &frame.rotation().adjoint())
}

/// Tolerances recorded in serialized correlation files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceStamps {
    pub hermiticity: f64,
    pub antisymmetry: f64,
    pub clamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHeader {
    pub n_modes: usize,
    pub convention: String,
    pub tolerances: ToleranceStamps,
}

/// Standard errors attached to estimated correlators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationErrors {
    pub c2: Vec<Vec<[f64; 2]>>,
    pub c4: Vec<Vec<Vec<Vec<[f64; 2]>>>>,
}

/// JSON interchange record for a `(C2, C4)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRecord {
    pub header: CorrelationHeader,
    pub c2: Vec<Vec<[f64; 2]>>,
    pub c4: Vec<Vec<Vec<Vec<[f64; 2]>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errors: Option<CorrelationErrors>,
}

pub const CONVENTION: &str = "descending-JW";

fn pair(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

fn nest2(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| pair(m[(i, j)])).collect())
        .collect()
}

fn nest4(t: &FourPointTensor) -> Vec<Vec<Vec<Vec<[f64; 2]>>>> {
    let n = t.dim();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    (0..n)
                        .map(|k| (0..n).map(|l| pair(t.get(i, j, k, l))).collect())
                        .collect()
                })
                .collect()
        })
        .collect()
}

impl CorrelationRecord {
    pub fn new(c2: &TwoPointMatrix, c4: &FourPointTensor) -> Result<Self> {
        if c2.dim() != c4.dim() {
            return Err(Error::DimensionMismatch {
                expected: c2.dim(),
                got: c4.dim(),
            });
        }
        Ok(CorrelationRecord {
            header: CorrelationHeader {
                n_modes: c2.dim(),
                convention: CONVENTION.into(),
                tolerances: ToleranceStamps {
                    hermiticity: c2.hermiticity_defect(),
                    antisymmetry: c4.symmetry_defect(),
                    clamp: CLAMP_TOL,
                },
            },
            c2: nest2(c2.entries()),
            c4: nest4(c4),
            errors: None,
        })
    }

    pub fn with_errors(mut self, c2: &CMatrix, c4: &FourPointTensor) -> Self {
        self.errors = Some(CorrelationErrors {
            c2: nest2(c2),
            c4: nest4(c4),
        });
        self
    }

    /// Decode and validate shape and convention.
    pub fn decode(&self) -> Result<(TwoPointMatrix, FourPointTensor)> {
        let n = self.header.n_modes;
        if self.header.convention != CONVENTION {
            return Err(Error::Format(format!(
                "unsupported convention {:?}",
                self.header.convention
            )));
        }
        let bad = || Error::Format("correlation arrays do not match n_modes".into());
        if self.c2.len() != n || self.c2.iter().any(|r| r.len() != n) {
            return Err(bad());
        }
        let c2 = CMatrix::from_fn(n, n, |i, j| C64::new(self.c2[i][j][0], self.c2[i][j][1]));
        let mut data = Vec::with_capacity(n.pow(4));
        if self.c4.len() != n {
            return Err(bad());
        }
        for a in &self.c4 {
            if a.len() != n {
                return Err(bad());
            }
            for b in a {
                if b.len() != n {
                    return Err(bad());
                }
                for c in b {
                    if c.len() != n {
                        return Err(bad());
                    }
                    data.extend(c.iter().map(|p| C64::new(p[0], p[1])));
                }
            }
        }
        Ok((TwoPointMatrix::new(c2)?, FourPointTensor::from_vec(n, data)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{self, FockBasis};
    use crate::model::{self, HubbardParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn state(bits: &[(u64, C64)], modes: usize) -> StateVector {
        let basis = FockBasis::shared(modes, None).unwrap();
        let mut amps = crate::linalg::CVector::zeros(basis.dim());
        for &(b, a) in bits {
            amps[basis.index_of(b).unwrap()] = a;
        }
        StateVector::new(basis, amps).unwrap()
    }

    #[test]
    fn two_point_examples() {
        let vac = StateVector::vacuum(2).unwrap();
        assert!(measure_two_point(&vac, 2).unwrap().entries().iter().all(|z| z.norm() == 0.0));
        let one = state(&[(0b01, C64::new(1.0, 0.0))], 2);
        let c = measure_two_point(&one, 2).unwrap();
        assert_eq!(c.get(0, 0), C64::new(1.0, 0.0));
        assert_eq!(c.get(1, 1), ZERO);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let sup = state(&[(0b01, C64::new(h, 0.0)), (0b10, C64::new(h, 0.0))], 2);
        let c = measure_two_point(&sup, 2).unwrap();
        for z in c.entries().iter() {
            assert!((z - C64::new(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn fock_states_have_no_connected_part() {
        let s = state(&[(0b0011, C64::new(1.0, 0.0))], 4);
        assert!(measure_four_point_connected(&s, 4).unwrap().max_abs() < 1e-12);
    }

    fn quench_state(u: f64, t: f64) -> StateVector {
        let p = HubbardParams::new(4, 1.0, 0.125, u);
        let spec = model::select_initial_state(&p, 3, 11).unwrap();
        let psi = model::plane_wave_state(&p, &spec.bitstring().unwrap()).unwrap();
        let h = model::build_hamiltonian(&p, 3, None).unwrap();
        model::evolve(&psi, &h, t, 1e-12).unwrap()
    }

    #[test]
    fn gaussian_states_have_no_connected_part() {
        for t in [0.0, 1.0, 5.0] {
            let psi = quench_state(0.0, t);
            assert!(measure_four_point_connected(&psi, 4).unwrap().max_abs() < 1e-12);
        }
    }

    /// Independent oracle: explicit ladder applications on the state vector.
    fn ladder_oracle(psi: &StateVector, ops: &[(usize, Ladder)]) -> C64 {
        let mut phi = psi.clone();
        for &(m, kind) in ops.iter().rev() {
            phi = fock::apply_ladder(&phi, m, kind).unwrap();
        }
        let back = StateVector::new(
            psi.basis().clone(),
            crate::linalg::CVector::from_fn(psi.basis().dim(), |k, _| {
                phi.amplitude(psi.basis().states()[k])
            }),
        )
        .unwrap();
        psi.inner(&back).unwrap()
    }

    #[test]
    fn interacting_four_point_matches_ladder_oracle() {
        let psi = quench_state(0.1, 5.0);
        let c4 = measure_four_point_connected(&psi, 4).unwrap();
        assert!(c4.symmetry_defect() < 1e-12);
        assert!(c4.max_abs() > 1e-6);
        let c2 = |i: usize, j: usize| ladder_oracle(&psi, &[(i, Ladder::Create), (j, Ladder::Annihilate)]);
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    for l in 0..4 {
                        let raw = ladder_oracle(
                            &psi,
                            &[
                                (i, Ladder::Create),
                                (j, Ladder::Create),
                                (k, Ladder::Annihilate),
                                (l, Ladder::Annihilate),
                            ],
                        );
                        let expect = raw - c2(i, l) * c2(j, k) + c2(i, k) * c2(j, l);
                        assert!((c4.get(i, j, k, l) - expect).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn reduced_density_gives_same_correlators() {
        let psi = quench_state(0.3, 2.0);
        let rho = fock::partial_trace(&psi, 4).unwrap();
        let (c2, c4) = measure_density(&rho).unwrap();
        assert!(crate::linalg::max_abs_diff(c2.entries(), measure_two_point(&psi, 4).unwrap().entries()) < 1e-12);
        assert!(c4.max_abs_diff(&measure_four_point_connected(&psi, 4).unwrap()) < 1e-12);
        // trace identity
        let n_a = rho.expectation(|b| Some((b, (b & 0xf).count_ones() as f64))).re;
        assert!((c2.trace() - n_a).abs() < 1e-10);
    }

    #[test]
    fn frame_examples() {
        let d = CMatrix::from_diagonal(&crate::linalg::CVector::from_vec(vec![
            C64::new(0.3, 0.0),
            C64::new(0.7, 0.0),
        ]));
        let f = diagonalize_two_point(&TwoPointMatrix::new(d).unwrap()).unwrap();
        assert!((f.occupations()[0] - 0.7).abs() < 1e-15 && (f.occupations()[1] - 0.3).abs() < 1e-15);
        assert!((f.rotation()[(1, 0)].re - 1.0).abs() < 1e-15);
        assert!((f.rotation()[(0, 1)].re - 1.0).abs() < 1e-15);
        let half = CMatrix::from_element(2, 2, C64::new(0.5, 0.0));
        let f = diagonalize_two_point(&TwoPointMatrix::new(half).unwrap()).unwrap();
        assert!((f.occupations()[0] - (1.0 - CLAMP_TOL)).abs() < 1e-15);
        assert!((f.occupations()[1] - CLAMP_TOL).abs() < 1e-15);
        assert!((f.raw_occupations()[0] - 1.0).abs() < 1e-14);
    }

    fn random_unitary(n: usize, rng: &mut impl Rng) -> CMatrix {
        let a = CMatrix::from_fn(n, n, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let h = (&a + a.adjoint()).scale(0.5);
        linalg::expm_hermitian(&h, 3.0).unwrap()
    }

    #[test]
    fn random_frame_diagonalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let u = random_unitary(6, &mut rng);
            let g: Vec<C64> = (0..6).map(|_| C64::new(rng.gen(), 0.0)).collect();
            let c2 = linalg::from_spectrum(&g, &u);
            let f = diagonalize_two_point(&TwoPointMatrix::new(c2.clone()).unwrap()).unwrap();
            let d = f.rotation().adjoint() * c2 * f.rotation();
            let diag = CMatrix::from_diagonal(&crate::linalg::CVector::from_iterator(
                6,
                f.occupations().iter().map(|&x| C64::new(x, 0.0)),
            ));
            assert!(linalg::max_abs_diff(&d, &diag) < 1e-10);
            assert!(f.occupations().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    fn random_valid_tensor(n: usize, rng: &mut impl Rng) -> FourPointTensor {
        let raw = FourPointTensor::from_fn(n, |_, _, _, _| {
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        antisymmetrize(raw)
    }

    /// Naive eight-fold loop.
    fn naive_rotate(t: &FourPointTensor, w: &CMatrix) -> FourPointTensor {
        let n = t.dim();
        let wd = w.adjoint();
        FourPointTensor::from_fn(n, |i, j, k, l| {
            let mut acc = ZERO;
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        for d in 0..n {
                            acc += w[(i, a)] * w[(j, b)] * t.get(a, b, c, d) * wd[(c, k)] * wd[(d, l)];
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn rotation_matches_naive_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mixer = CMatrix::from_row_slice(2, 2, &[C64::new(h, 0.0), C64::new(h, 0.0), C64::new(h, 0.0), C64::new(-h, 0.0)]);
        let mut two = FourPointTensor::zeros(2);
        let v = C64::new(0.3, 0.1);
        two.set(0, 1, 1, 0, v);
        two.set(1, 0, 0, 1, v);
        two.set(1, 0, 1, 0, -v);
        two.set(0, 1, 0, 1, -v);
        let two = antisymmetrize(two);
        assert!(rotate_with(&two, &mixer).unwrap().max_abs_diff(&naive_rotate(&two, &mixer)) < 1e-14);
        let t = random_valid_tensor(4, &mut rng);
        let u = random_unitary(4, &mut rng);
        assert!(rotate_with(&t, &u).unwrap().max_abs_diff(&naive_rotate(&t, &u)) < 1e-12);
        let id = CMatrix::identity(4, 4);
        assert!(rotate_with(&t, &id).unwrap().max_abs_diff(&t) < 1e-15);
    }

    #[test]
    fn rotated_tensor_is_frame_four_point() {
        // C4 in the frame equals the four-point function of the frame modes d_p = sum_b V_bp c_b
        let psi = quench_state(0.5, 3.0);
        let c2 = measure_two_point(&psi, 4).unwrap();
        let c4 = measure_four_point_connected(&psi, 4).unwrap();
        let frame = diagonalize_two_point(&c2).unwrap();
        let rot = rotate_four_point(&c4, &frame).unwrap();
        assert!(rot.symmetry_defect() < 1e-12);
        let v = frame.rotation();
        let c2f = v.adjoint() * c2.entries() * v;
        for p in 0..4 {
            assert!((c2f[(p, p)].re - frame.raw_occupations()[p]).abs() < 1e-10);
        }
    }

    #[test]
    fn json_round_trip() {
        let psi = quench_state(0.2, 1.0);
        let c2 = measure_two_point(&psi, 4).unwrap();
        let c4 = measure_four_point_connected(&psi, 4).unwrap();
        let rec = CorrelationRecord::new(&c2, &c4).unwrap();
        let back = CorrelationRecord::from_json(&rec.to_json().unwrap()).unwrap();
        let (a, b) = back.decode().unwrap();
        assert_eq!(a, c2);
        assert_eq!(b, c4);
        let mut bad = rec.clone();
        bad.header.convention = "ascending".into();
        assert!(matches!(bad.decode(), Err(Error::Format(_))));
        let mut bad = rec;
        bad.c2.pop();
        assert!(bad.decode().is_err());
    }

    #[test]
    fn subsystem_range_checked() {
        let psi = StateVector::vacuum(4).unwrap();
        assert!(measure_two_point(&psi, 5).is_err());
        let basis = Arc::new(FockBasis::new(4, None).unwrap());
        let rho = DensityMatrix::maximally_mixed(4).unwrap();
        assert_eq!(rho.basis().as_ref(), basis.as_ref());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn rotation_round_trip(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_valid_tensor(4, &mut rng);
            let u = random_unitary(4, &mut rng);
            let r = rotate_with(&t, &u).unwrap();
            prop_assert!(r.symmetry_defect() < 1e-12);
            let back = rotate_with(&r, &u.adjoint()).unwrap();
            prop_assert!(back.max_abs_diff(&t) < 1e-12);
        }
    }
}
