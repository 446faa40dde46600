//! Simulated correlation measurements: pairwise tunneling rotations, occupation
//! sampling and shot-noise estimators for `C2` and `C4`.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correlations::{FourPointTensor, TwoPointMatrix};
use crate::error::{Error, Result};
use crate::fock::{self, hop_bits, Bitstring, DensityMatrix, FockBasis, StateVector};
use crate::linalg::{self, CMatrix, CVector, C64};

/// Generator of a pairwise rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// `S^x_ij = (c†_i c_j + c†_j c_i) / 2`
    X,
    /// `S^y_ij = -i (c†_i c_j - c†_j c_i) / 2`
    Y,
}

/// `exp(-i angle S^axis_ij)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunnelingRotation {
    pub i: usize,
    pub j: usize,
    pub axis: Axis,
    pub angle: f64,
}

impl TunnelingRotation {
    pub fn new(i: usize, j: usize, axis: Axis, angle: f64) -> Result<Self> {
        if i == j {
            return Err(Error::Plan(format!("rotation needs two distinct modes, got ({i}, {i})")));
        }
        Ok(TunnelingRotation { i, j, axis, angle })
    }

    /// `<partner| S^axis |bits>` for a state with exactly one of `i`, `j` occupied.
    fn generator_element(&self, bits: u64) -> Option<(u64, C64)> {
        let (i, j) = (self.i, self.j);
        let forward = hop_bits(bits, i, j).map(|(o, s)| (o, s, 1.0));
        let backward = hop_bits(bits, j, i).map(|(o, s)| (o, s, -1.0));
        let (out, s, dir) = forward.or(backward)?;
        let v = match self.axis {
            Axis::X => C64::new(0.5 * s, 0.0),
            Axis::Y => C64::new(0.0, -0.5 * s * dir),
        };
        Some((out, v))
    }
}

fn check_modes(rot: &TunnelingRotation, modes: usize) -> Result<()> {
    if rot.i >= modes || rot.j >= modes {
        return Err(Error::Plan(format!(
            "rotation on ({}, {}) outside {modes} modes",
            rot.i, rot.j
        )));
    }
    Ok(())
}

/// Apply one rotation to the amplitudes of a number-conserving basis.
fn rotate_amplitudes(basis: &FockBasis, amps: &CVector, rot: &TunnelingRotation) -> CVector {
    let (c, s) = ((rot.angle / 2.0).cos(), (rot.angle / 2.0).sin());
    let mut out = amps.clone();
    for (k, &bits) in basis.states().iter().enumerate() {
        if let Some((partner, h)) = rot.generator_element(bits) {
            // block [[0, h*], [h, 0]] with h = <partner|S|bits>; exp(-i t H) = cos(t/2) - 2i sin(t/2) H
            if let Some(p) = basis.index_of(partner) {
                out[p] += C64::new(0.0, -2.0 * s) * h * amps[k];
                out[k] += (c - 1.0) * amps[k];
            }
        }
    }
    out
}

/// `U psi` for a tunneling rotation.
pub fn apply_rotation(psi: &StateVector, rot: &TunnelingRotation) -> Result<StateVector> {
    check_modes(rot, psi.basis().mode_count())?;
    StateVector::new(
        psi.basis().clone(),
        rotate_amplitudes(psi.basis(), psi.amplitudes(), rot),
    )
}

/// Apply a parallel layer of rotations on disjoint pairs.
pub fn apply_layer(psi: &StateVector, layer: &[TunnelingRotation]) -> Result<StateVector> {
    check_disjoint(layer)?;
    let mut out = psi.clone();
    for rot in layer {
        out = apply_rotation(&out, rot)?;
    }
    Ok(out)
}

/// `U rho U†` for a parallel layer.
pub fn apply_layer_density(rho: &DensityMatrix, layer: &[TunnelingRotation]) -> Result<DensityMatrix> {
    check_disjoint(layer)?;
    let basis = rho.basis();
    let mut m = rho.elements().clone();
    for rot in layer {
        check_modes(rot, basis.mode_count())?;
        let cols: Vec<CVector> = (0..m.ncols())
            .map(|c| rotate_amplitudes(basis, &m.column(c).into_owned(), rot))
            .collect();
        m = CMatrix::from_columns(&cols);
        let rows: Vec<CVector> = (0..m.nrows())
            .map(|r| rotate_amplitudes(basis, &m.row(r).transpose().map(|z| z.conj()), rot))
            .collect();
        m = CMatrix::from_columns(&rows).map(|z| z.conj()).transpose();
    }
    DensityMatrix::new(basis.clone(), m)
}

fn check_disjoint(layer: &[TunnelingRotation]) -> Result<()> {
    let mut used = std::collections::BTreeSet::new();
    for r in layer {
        for m in [r.i, r.j] {
            if !used.insert(m) {
                return Err(Error::Plan(format!("mode {m} appears in two rotations of one layer")));
            }
        }
    }
    Ok(())
}

/// Readout angle of every rotated basis.
pub const READOUT_ANGLE: f64 = std::f64::consts::FRAC_PI_2;

/// How `S^z_ij = (n_i - n_j)/2` after a rotation about `axis` relates to the original frame:
/// returns the component read out and the coefficient `a` with `U† S^z U = a S^component`.
pub fn readout(axis: Axis) -> (Axis, f64) {
    static TABLE: OnceLock<[(Axis, f64); 2]> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        [derive_readout(Axis::X).expect("readout derivation"), derive_readout(Axis::Y).expect("readout derivation")]
    });
    match axis {
        Axis::X => table[0],
        Axis::Y => table[1],
    }
}

/// Conjugate `S^z` through the rotation on two modes and identify the result.
fn derive_readout(axis: Axis) -> Result<(Axis, f64)> {
    let basis = FockBasis::new(2, None)?;
    let op = |a: Axis| {
        let rot = TunnelingRotation { i: 0, j: 1, axis: a, angle: 0.0 };
        fock::operator_matrix(&basis, move |b| rot.generator_element(b).into_iter().collect())
    };
    let sx = op(Axis::X);
    let sy = op(Axis::Y);
    let sz = fock::operator_matrix(&basis, |b| {
        let v = 0.5 * ((b & 1) as f64 - (b >> 1 & 1) as f64);
        vec![(b, C64::new(v, 0.0))]
    });
    let gen = if axis == Axis::X { &sx } else { &sy };
    let u = linalg::expm_hermitian(gen, READOUT_ANGLE)?;
    let m = u.adjoint() * &sz * &u;
    let norm = linalg::trace_product(&sx, &sx).re;
    let cx = linalg::trace_product(&m, &sx).re / norm;
    let cy = linalg::trace_product(&m, &sy).re / norm;
    let (component, coef) = if cx.abs() > cy.abs() { (Axis::X, cx) } else { (Axis::Y, cy) };
    let target = if component == Axis::X { &sx } else { &sy };
    let residual = linalg::max_abs_diff(&m, &(target * C64::new(coef, 0.0)));
    if residual > 1e-12 || (coef.abs() - 1.0).abs() > 1e-12 {
        return Err(Error::Consistency(format!(
            "rotated S^z is not a pure transverse component (residual {residual:.2e})"
        )));
    }
    Ok((component, coef))
}

/// Rotation axis that reads out `component`.
pub fn axis_for(component: Axis) -> Axis {
    if readout(Axis::X).0 == component {
        Axis::X
    } else {
        Axis::Y
    }
}

/// One measurement setting: a layer of disjoint rotations (empty for the occupation basis).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementBasis {
    pub id: String,
    /// Transverse component read on each rotated pair `(i, j)`, `i < j`.
    pub components: Vec<(usize, usize, Axis)>,
}

impl MeasurementBasis {
    pub fn identity() -> Self {
        MeasurementBasis { id: "I".into(), components: Vec::new() }
    }

    pub fn new(mut components: Vec<(usize, usize, Axis)>) -> Self {
        for c in components.iter_mut() {
            if c.0 > c.1 {
                *c = (c.1, c.0, c.2);
            }
        }
        components.sort();
        let id = components
            .iter()
            .map(|(i, j, a)| format!("{}{}-{}", if *a == Axis::X { "x" } else { "y" }, i, j))
            .collect::<Vec<_>>()
            .join(".");
        MeasurementBasis {
            id: if id.is_empty() { "I".into() } else { id },
            components,
        }
    }

    pub fn rotations(&self) -> Vec<TunnelingRotation> {
        self.components
            .iter()
            .map(|&(i, j, comp)| TunnelingRotation { i, j, axis: axis_for(comp), angle: READOUT_ANGLE })
            .collect()
    }
}

/// Bases needed for one- or two-body correlators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPlan {
    pub n_modes: usize,
    pub order: u8,
    pub bases: Vec<MeasurementBasis>,
    pub shots_per_basis: usize,
}

impl MeasurementPlan {
    /// Number of bases with at least one rotation.
    pub fn rotated_count(&self) -> usize {
        self.bases.iter().filter(|b| !b.components.is_empty()).count()
    }

    pub fn total_shots(&self) -> usize {
        self.bases.len() * self.shots_per_basis
    }

    /// `c` in `count = N(N-1)(N-2)(N-3) + c N^2` (order 2) or `count = c N(N-1)` (order 1).
    pub fn scaling_constant(&self) -> f64 {
        let n = self.n_modes as f64;
        let count = self.bases.len() as f64;
        match self.order {
            1 => count / (n * (n - 1.0)),
            _ => (count - n * (n - 1.0) * (n - 2.0) * (n - 3.0)) / (n * n),
        }
    }
}

/// Plan covering every Hermitian component needed at the given order.
pub fn plan_bases(n_modes: usize, order: u8, shots_per_basis: usize) -> Result<MeasurementPlan> {
    if !(1..=2).contains(&order) {
        return Err(Error::Plan(format!("order must be 1 or 2, got {order}")));
    }
    if n_modes < 2 {
        return Err(Error::Plan("need at least two modes".into()));
    }
    let mut bases = vec![MeasurementBasis::identity()];
    let pairs: Vec<(usize, usize)> = (0..n_modes)
        .flat_map(|i| (i + 1..n_modes).map(move |j| (i, j)))
        .collect();
    for &(i, j) in &pairs {
        for comp in [Axis::X, Axis::Y] {
            bases.push(MeasurementBasis::new(vec![(i, j, comp)]));
        }
    }
    if order == 2 {
        for (a, &(i, j)) in pairs.iter().enumerate() {
            for &(k, l) in &pairs[a + 1..] {
                if i == k || i == l || j == k || j == l {
                    continue;
                }
                for c1 in [Axis::X, Axis::Y] {
                    for c2 in [Axis::X, Axis::Y] {
                        bases.push(MeasurementBasis::new(vec![(i, j, c1), (k, l, c2)]));
                    }
                }
            }
        }
    }
    Ok(MeasurementPlan { n_modes, order, bases, shots_per_basis })
}

/// Sampled occupations in one basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub basis: MeasurementBasis,
    pub n_modes: usize,
    pub shots: usize,
    pub seed: u64,
    /// Bitstrings over the measured modes, `n_0` first.
    pub counts: BTreeMap<String, u64>,
}

/// Per-basis seed derived from the master seed and the basis id.
pub fn basis_seed(master: u64, basis_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(basis_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest length"))
}

/// Anything that yields occupation probabilities after a rotation layer.
pub trait Measurable {
    fn mode_count(&self) -> usize;
    /// `(bitstring, probability)` over the full basis after the layer.
    fn rotated_probabilities(&self, layer: &[TunnelingRotation]) -> Result<Vec<(u64, f64)>>;
}

impl Measurable for StateVector {
    fn mode_count(&self) -> usize {
        self.basis().mode_count()
    }

    fn rotated_probabilities(&self, layer: &[TunnelingRotation]) -> Result<Vec<(u64, f64)>> {
        let out = apply_layer(self, layer)?;
        Ok(out
            .basis()
            .states()
            .iter()
            .zip(out.amplitudes().iter())
            .map(|(&b, a)| (b, a.norm_sqr()))
            .collect())
    }
}

impl Measurable for DensityMatrix {
    fn mode_count(&self) -> usize {
        self.basis().mode_count()
    }

    fn rotated_probabilities(&self, layer: &[TunnelingRotation]) -> Result<Vec<(u64, f64)>> {
        let out = apply_layer_density(self, layer)?;
        Ok(out
            .basis()
            .states()
            .iter()
            .enumerate()
            .map(|(k, &b)| (b, out.elements()[(k, k)].re.max(0.0)))
            .collect())
    }
}

/// Draw `shots` occupation snapshots of the leading `n_modes` modes.
pub fn sample_occupations(
    state: &impl Measurable,
    basis: &MeasurementBasis,
    n_modes: usize,
    shots: usize,
    seed: u64,
) -> Result<ShotRecord> {
    if shots == 0 {
        return Err(Error::domain("at least one shot is required"));
    }
    if n_modes > state.mode_count() {
        return Err(Error::domain("measured modes exceed the state's modes"));
    }
    let probs = state.rotated_probabilities(&basis.rotations())?;
    let mask = if n_modes == 64 { u64::MAX } else { (1u64 << n_modes) - 1 };
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &(_, p) in &probs {
        acc += p;
        cumulative.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally: BTreeMap<u64, u64> = BTreeMap::new();
    for _ in 0..shots {
        let x = rng.gen::<f64>() * acc;
        let k = cumulative.partition_point(|&c| c <= x).min(probs.len() - 1);
        *tally.entry(probs[k].0 & mask).or_insert(0) += 1;
    }
    let counts = tally
        .into_iter()
        .map(|(b, c)| Ok((Bitstring::new(b, n_modes)?.to_string(), c)))
        .collect::<Result<_>>()?;
    Ok(ShotRecord { basis: basis.clone(), n_modes, shots, seed, counts })
}

/// Sample every basis of a plan with per-basis seeds.
pub fn run_plan(
    state: &(impl Measurable + Sync),
    plan: &MeasurementPlan,
    master_seed: u64,
) -> Result<Vec<ShotRecord>> {
    plan.bases
        .par_iter()
        .map(|b| {
            sample_occupations(
                state,
                b,
                plan.n_modes,
                plan.shots_per_basis,
                basis_seed(master_seed, &b.id),
            )
        })
        .collect()
}

/// Sample mean and standard error of a per-shot observable.
fn shot_mean(record: &ShotRecord, f: impl Fn(&[u8]) -> f64) -> Result<(f64, f64)> {
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut total = 0u64;
    for (key, &c) in &record.counts {
        let occ = Bitstring::parse(key)?;
        let n: Vec<u8> = (0..occ.len()).map(|m| occ.occupation(m)).collect();
        let v = f(&n);
        sum += v * c as f64;
        sq += v * v * c as f64;
        total += c;
    }
    let n = total as f64;
    let mean = sum / n;
    let var = if total > 1 { (sq / n - mean * mean).max(0.0) * n / (n - 1.0) } else { 0.0 };
    Ok((mean, (var / n).sqrt()))
}

/// An estimate and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Est {
    v: C64,
    /// Standard errors of the real and imaginary parts.
    se: (f64, f64),
}

impl Est {
    fn real(v: f64, se: f64) -> Self {
        Est { v: C64::new(v, 0.0), se: (se, 0.0) }
    }

    fn se_c(&self) -> C64 {
        C64::new(self.se.0, self.se.1)
    }
}

struct Lookup<'a> {
    by_id: BTreeMap<&'a str, &'a ShotRecord>,
}

impl<'a> Lookup<'a> {
    fn new(records: &'a [ShotRecord]) -> Self {
        Lookup { by_id: records.iter().map(|r| (r.basis.id.as_str(), r)).collect() }
    }

    fn get(&self, basis: &MeasurementBasis) -> Result<&'a ShotRecord> {
        self.by_id
            .get(basis.id.as_str())
            .copied()
            .ok_or_else(|| Error::Coverage(format!("basis {} was not measured", basis.id)))
    }
}

/// Per-shot value of the transverse component on a rotated pair.
fn pair_value(n: &[u8], i: usize, j: usize, comp: Axis) -> f64 {
    let (_, coef) = readout(axis_for(comp));
    0.5 * (n[i] as f64 - n[j] as f64) / coef
}

/// `<P_ij Q>` with `P = S^comp_ij` (`i < j`) and `Q` a product of diagonal occupations.
fn component_with_diag(
    lk: &Lookup,
    i: usize,
    j: usize,
    comp: Axis,
    diag: &[usize],
) -> Result<(f64, f64)> {
    let rec = lk.get(&MeasurementBasis::new(vec![(i, j, comp)]))?;
    shot_mean(rec, |n| pair_value(n, i, j, comp) * diag.iter().map(|&d| n[d] as f64).product::<f64>())
}

/// `<E_ab Q>` where `E_ab = c†_a c_b = S^x_ab + i S^y_ab` and `Q` diagonal on modes outside `{a, b}`.
fn hop_with_diag(lk: &Lookup, a: usize, b: usize, diag: &[usize]) -> Result<Est> {
    if a == b {
        let rec = lk.get(&MeasurementBasis::identity())?;
        let (m, se) = shot_mean(rec, |n| n[a] as f64 * diag.iter().map(|&d| n[d] as f64).product::<f64>())?;
        return Ok(Est::real(m, se));
    }
    let (i, j, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let (x, sx) = component_with_diag(lk, i, j, Axis::X, diag)?;
    let (y, sy) = component_with_diag(lk, i, j, Axis::Y, diag)?;
    // S^y is antisymmetric in its pair
    Ok(Est { v: C64::new(x, sign * y), se: (sx, sy) })
}

/// `<E_ab E_cd>` for disjoint `{a, b}` and `{c, d}`.
fn hop_pair(lk: &Lookup, a: usize, b: usize, c: usize, d: usize) -> Result<Est> {
    match (a == b, c == d) {
        (true, true) => {
            let rec = lk.get(&MeasurementBasis::identity())?;
            let (m, se) = shot_mean(rec, |n| n[a] as f64 * n[c] as f64)?;
            Ok(Est::real(m, se))
        }
        (true, false) => hop_with_diag(lk, c, d, &[a]),
        (false, true) => hop_with_diag(lk, a, b, &[c]),
        (false, false) => {
            let (i, j, s1) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
            let (k, l, s2) = if c < d { (c, d, 1.0) } else { (d, c, -1.0) };
            let mut parts = BTreeMap::new();
            for c1 in [Axis::X, Axis::Y] {
                for c2 in [Axis::X, Axis::Y] {
                    let rec = lk.get(&MeasurementBasis::new(vec![(i, j, c1), (k, l, c2)]))?;
                    let v = shot_mean(rec, |n| pair_value(n, i, j, c1) * pair_value(n, k, l, c2))?;
                    parts.insert((c1, c2), v);
                }
            }
            let xx = parts[&(Axis::X, Axis::X)];
            let yy = parts[&(Axis::Y, Axis::Y)];
            let xy = parts[&(Axis::X, Axis::Y)];
            let yx = parts[&(Axis::Y, Axis::X)];
            // (X1 + i s1 Y1)(X2 + i s2 Y2)
            let re = xx.0 - s1 * s2 * yy.0;
            let im = s2 * xy.0 + s1 * yx.0;
            Ok(Est {
                v: C64::new(re, im),
                se: ((xx.1.powi(2) + yy.1.powi(2)).sqrt(), (xy.1.powi(2) + yx.1.powi(2)).sqrt()),
            })
        }
    }
}

/// Estimated correlators with per-entry standard errors (real and imaginary parts).
#[derive(Debug, Clone)]
pub struct CorrelationEstimate {
    pub c2: TwoPointMatrix,
    pub c2_se: CMatrix,
    pub c4: Option<FourPointTensor>,
    pub c4_se: Option<FourPointTensor>,
}

/// Combine shot records into `C2` (order 1) or `C2` and connected `C4` (order 2).
pub fn estimate_correlations(records: &[ShotRecord], n_modes: usize, order: u8) -> Result<CorrelationEstimate> {
    let lk = Lookup::new(records);
    let mut c2 = CMatrix::zeros(n_modes, n_modes);
    let mut c2_se = CMatrix::zeros(n_modes, n_modes);
    for a in 0..n_modes {
        for b in 0..n_modes {
            let e = hop_with_diag(&lk, a, b, &[])?;
            c2[(a, b)] = e.v;
            c2_se[(a, b)] = e.se_c();
        }
    }
    let c2m = TwoPointMatrix::new(c2)?;
    if order < 2 {
        return Ok(CorrelationEstimate { c2: c2m, c2_se, c4: None, c4_se: None });
    }
    let n = n_modes;
    let mut raw = FourPointTensor::zeros(n);
    let mut raw_se = FourPointTensor::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            for k in 0..n {
                for l in 0..n {
                    if k == l {
                        continue;
                    }
                    // c†_i c†_j c_k c_l = -E_ik E_jl  (j != k)  or  E_il E_jk  (j != l), disjoint pairs
                    let a_ok = i != l && j != k;
                    let e = if a_ok {
                        let e = hop_pair(&lk, i, k, j, l)?;
                        Est { v: -e.v, se: e.se }
                    } else {
                        hop_pair(&lk, i, l, j, k)?
                    };
                    raw.set(i, j, k, l, e.v);
                    raw_se.set(i, j, k, l, e.se_c());
                }
            }
        }
    }
    let g = |i: usize, j: usize| c2m.get(i, j);
    let s = |i: usize, j: usize| c2_se[(i, j)];
    let abs2 = |z: C64| z.re * z.re + z.im * z.im;
    let c4 = FourPointTensor::from_fn(n, |i, j, k, l| {
        raw.get(i, j, k, l) - g(i, l) * g(j, k) + g(i, k) * g(j, l)
    });
    let c4_se = FourPointTensor::from_fn(n, |i, j, k, l| {
        let r = raw_se.get(i, j, k, l);
        let var = abs2(r)
            + abs2(g(j, k)) * abs2(s(i, l))
            + abs2(g(i, l)) * abs2(s(j, k))
            + abs2(g(j, l)) * abs2(s(i, k))
            + abs2(g(i, k)) * abs2(s(j, l));
        let scale = var.sqrt() / std::f64::consts::SQRT_2;
        C64::new(scale, scale)
    });
    Ok(CorrelationEstimate { c2: c2m, c2_se, c4: Some(c4), c4_se: Some(c4_se) })
}

/// Shot records as JSON lines.
pub fn records_to_jsonl(records: &[ShotRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn records_from_jsonl(s: &str) -> Result<Vec<ShotRecord>> {
    s.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlations::{measure_four_point_connected, measure_two_point};
    use crate::model::{self, HubbardParams};
    use std::sync::Arc;

    fn bell(modes: usize, a: u64, b: u64) -> StateVector {
        let basis = Arc::new(FockBasis::new(modes, Some(a.count_ones() as usize)).unwrap());
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = CVector::zeros(basis.dim());
        amps[basis.index_of(a).unwrap()] = C64::new(h, 0.0);
        amps[basis.index_of(b).unwrap()] = C64::new(h, 0.0);
        StateVector::new(basis, amps).unwrap()
    }

    fn random_state(modes: usize, n: usize, seed: u64) -> StateVector {
        let basis = Arc::new(FockBasis::new(modes, Some(n)).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amps = CVector::from_fn(basis.dim(), |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        StateVector::new(basis, amps).unwrap().normalized().unwrap()
    }

    #[test]
    fn rotation_matches_matrix_exponential() {
        let psi = random_state(5, 2, 1);
        for axis in [Axis::X, Axis::Y] {
            for (i, j) in [(0, 3), (4, 1), (2, 3)] {
                let rot = TunnelingRotation::new(i, j, axis, 0.7).unwrap();
                let gen = fock::operator_matrix(psi.basis(), |b| rot.generator_element(b).into_iter().collect());
                // the generator equals the bilinear definition
                let bil = fock::operator_matrix(psi.basis(), |b| {
                    let mut out = Vec::new();
                    for (x, y, c) in [(i, j, 1.0), (j, i, -1.0)] {
                        if let Some((o, s)) = hop_bits(b, x, y) {
                            let v = match axis {
                                Axis::X => C64::new(0.5 * s, 0.0),
                                Axis::Y => C64::new(0.0, -0.5 * s * c),
                            };
                            out.push((o, v));
                        }
                    }
                    out
                });
                assert!(linalg::max_abs_diff(&gen, &bil) < 1e-15);
                let u = linalg::expm_hermitian(&gen, 0.7).unwrap();
                let expect = &u * psi.amplitudes();
                let got = apply_rotation(&psi, &rot).unwrap();
                assert!((got.amplitudes() - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_identities() {
        let psi = random_state(4, 2, 2);
        let zero = TunnelingRotation::new(0, 2, Axis::X, 0.0).unwrap();
        assert!((apply_rotation(&psi, &zero).unwrap().amplitudes() - psi.amplitudes()).norm() < 1e-15);
        let fwd = TunnelingRotation::new(1, 3, Axis::Y, 1.1).unwrap();
        let back = TunnelingRotation { angle: -1.1, ..fwd };
        let round = apply_rotation(&apply_rotation(&psi, &fwd).unwrap(), &back).unwrap();
        assert!((round.amplitudes() - psi.amplitudes()).norm() < 1e-12);
        assert!(TunnelingRotation::new(1, 1, Axis::X, 0.1).is_err());
        let overlap = [fwd, TunnelingRotation::new(3, 0, Axis::X, 0.2).unwrap()];
        assert!(matches!(apply_layer(&psi, &overlap), Err(Error::Plan(_))));
    }

    #[test]
    fn readout_is_derived_and_consistent() {
        let (cx, ax) = readout(Axis::X);
        let (cy, ay) = readout(Axis::Y);
        assert_eq!(cx, Axis::Y);
        assert_eq!(cy, Axis::X);
        assert!((ax.abs() - 1.0).abs() < 1e-12 && (ay.abs() - 1.0).abs() < 1e-12);
        // <S^x_01> = 1/2 on (|10> + |01>)/sqrt 2, read as rotated occupation difference
        let psi = bell(2, 0b01, 0b10);
        let rot = TunnelingRotation::new(0, 1, axis_for(Axis::X), READOUT_ANGLE).unwrap();
        let out = apply_rotation(&psi, &rot).unwrap();
        let sz = out.expectation(|b| Some((b, 0.5 * ((b & 1) as f64 - (b >> 1 & 1) as f64)))).re;
        let coef = readout(axis_for(Axis::X)).1;
        assert!((sz / coef - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rotations_conserve_number() {
        let basis = FockBasis::shared(4, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let amps = CVector::from_fn(16, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>()));
        let psi = StateVector::new(basis, amps).unwrap().normalized().unwrap();
        let pops = |s: &StateVector| {
            let mut p = [0.0; 5];
            for (k, &b) in s.basis().states().iter().enumerate() {
                p[b.count_ones() as usize] += s.amplitudes()[k].norm_sqr();
            }
            p
        };
        let layer = [
            TunnelingRotation::new(0, 2, Axis::X, 0.9).unwrap(),
            TunnelingRotation::new(1, 3, Axis::Y, -0.4).unwrap(),
        ];
        let out = apply_layer(&psi, &layer).unwrap();
        for (a, b) in pops(&psi).iter().zip(pops(&out)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn plan_counts() {
        let p = plan_bases(2, 1, 10).unwrap();
        assert_eq!((p.rotated_count(), p.bases.len()), (2, 3));
        let p = plan_bases(4, 1, 10).unwrap();
        assert!(p.rotated_count() <= 12);
        let p = plan_bases(4, 2, 10).unwrap();
        assert!(p.rotated_count() <= 24 + (p.scaling_constant() * 16.0).ceil() as usize);
        assert!(p.scaling_constant() > 0.0);
        assert!(plan_bases(4, 3, 10).is_err());
        let ids: std::collections::BTreeSet<_> = p.bases.iter().map(|b| b.id.clone()).collect();
        assert_eq!(ids.len(), p.bases.len());
    }

    #[test]
    fn fock_state_single_outcome() {
        let basis = FockBasis::shared(4, None).unwrap();
        let psi = StateVector::basis_state(basis, 0b0101).unwrap();
        let rec = sample_occupations(&psi, &MeasurementBasis::identity(), 4, 100, 1).unwrap();
        assert_eq!(rec.counts.len(), 1);
        assert_eq!(rec.counts["1010"], 100);
    }

    #[test]
    fn frequencies_follow_born_rule() {
        let psi = random_state(4, 2, 4);
        let basis = MeasurementBasis::new(vec![(0, 2, Axis::X)]);
        let shots = 100_000;
        let rec = sample_occupations(&psi, &basis, 4, shots, 9).unwrap();
        let probs = psi.rotated_probabilities(&basis.rotations()).unwrap();
        for (b, p) in probs {
            let key = Bitstring::new(b, 4).unwrap().to_string();
            let f = *rec.counts.get(&key).unwrap_or(&0) as f64 / shots as f64;
            let se = (p * (1.0 - p) / shots as f64).sqrt().max(1e-9);
            assert!((f - p).abs() < 5.0 * se, "{key}: {f} vs {p}");
        }
        let other = sample_occupations(&psi, &basis, 4, shots, 10).unwrap();
        assert_ne!(rec.counts, other.counts);
    }

    #[test]
    fn bell_state_two_point() {
        let psi = bell(2, 0b01, 0b10);
        let plan = plan_bases(2, 1, 100_000).unwrap();
        let recs = run_plan(&psi, &plan, 5).unwrap();
        let est = estimate_correlations(&recs, 2, 1).unwrap();
        let z = est.c2.get(0, 1);
        let se = est.c2_se[(0, 1)];
        assert!((z.re - 0.5).abs() < 3.0 * se.re.max(1e-12));
        assert!(z.im.abs() < 3.0 * se.im.max(1e-12));
    }

    #[test]
    fn estimates_match_exact_correlators() {
        let p = HubbardParams::new(4, 1.0, 0.125, 1.0);
        let spec = model::select_initial_state(&p, 3, 2).unwrap();
        let psi = model::plane_wave_state(&p, &spec.bitstring().unwrap()).unwrap();
        let h = model::build_hamiltonian(&p, 3, None).unwrap();
        let psi = model::evolve(&psi, &h, 1.5, 1e-12).unwrap();
        let plan = plan_bases(4, 2, 20_000).unwrap();
        let recs = run_plan(&psi, &plan, 11).unwrap();
        let est = estimate_correlations(&recs, 4, 2).unwrap();
        let c2 = measure_two_point(&psi, 4).unwrap();
        let c4 = measure_four_point_connected(&psi, 4).unwrap();
        let mut worst: f64 = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                let d = est.c2.get(a, b) - c2.get(a, b);
                let s = est.c2_se[(a, b)];
                worst = worst.max(d.re.abs() / s.re.max(1e-9)).max(d.im.abs() / s.im.max(1e-9));
            }
        }
        assert!(worst < 5.0, "C2 deviation {worst} sigma");
        let (e4, s4) = (est.c4.unwrap(), est.c4_se.unwrap());
        let mut worst: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    for l in 0..4 {
                        let d = e4.get(i, j, k, l) - c4.get(i, j, k, l);
                        let s = s4.get(i, j, k, l);
                        worst = worst.max(d.re.abs() / s.re.max(1e-9)).max(d.im.abs() / s.im.max(1e-9));
                    }
                }
            }
        }
        assert!(worst < 6.0, "C4 deviation {worst} sigma");
    }

    #[test]
    fn missing_basis_is_reported() {
        let psi = bell(2, 0b01, 0b10);
        let plan = plan_bases(2, 1, 100).unwrap();
        let mut recs = run_plan(&psi, &plan, 5).unwrap();
        recs.retain(|r| r.basis.id != "x0-1");
        match estimate_correlations(&recs, 2, 1) {
            Err(Error::Coverage(msg)) => assert!(msg.contains("x0-1")),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn jsonl_round_trip_and_density_sampling() {
        let psi = random_state(4, 2, 6);
        let plan = plan_bases(4, 1, 500).unwrap();
        let recs = run_plan(&psi, &plan, 1).unwrap();
        let back = records_from_jsonl(&records_to_jsonl(&recs).unwrap()).unwrap();
        assert_eq!(recs, back);
        // a pure density matrix samples like its state vector
        let rho = psi.density_matrix();
        let a = psi.rotated_probabilities(&plan.bases[3].rotations()).unwrap();
        let b = rho.rotated_probabilities(&plan.bases[3].rotations()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.0, y.0);
            assert!((x.1 - y.1).abs() < 1e-12);
        }
    }
}
