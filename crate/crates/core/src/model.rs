//! Extended Fermi-Hubbard chain, initial states and exact time evolution.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{
    self, apply_string, hop_bits, Bitstring, DensityMatrix, FockBasis,
    Ladder, StateVector,
};
use crate::linalg::{self, CMatrix, CVector, C64, ONE, ZERO};

/// Boundary condition of the chain. Only periodic chains are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Periodic,
}

/// Parameters of `H(J, J', U)` on a periodic chain of `sites` sites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HubbardParams {
    pub sites: usize,
    /// Nearest-neighbour hopping `J`.
    pub j: f64,
    /// Next-nearest-neighbour hopping `J'`.
    pub jp: f64,
    /// On-site interaction `U`.
    pub u: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl HubbardParams {
    pub fn new(sites: usize, j: f64, jp: f64, u: f64) -> Self {
        HubbardParams {
            sites,
            j,
            jp,
            u,
            boundary: Boundary::Periodic,
        }
    }

    /// The free part `H(J, J', 0)`.
    pub fn free(&self) -> Self {
        HubbardParams { u: 0.0, ..*self }
    }

    pub fn with_u(&self, u: f64) -> Self {
        HubbardParams { u, ..*self }
    }

    pub fn mode_count(&self) -> usize {
        2 * self.sites
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites < 3 {
            return Err(Error::domain(format!(
                "periodic chain needs at least 3 sites, got {}",
                self.sites
            )));
        }
        if 2 * self.sites > fock::MAX_MODES {
            return Err(Error::Capacity {
                what: "modes",
                got: 2 * self.sites,
                limit: fock::MAX_MODES,
            });
        }
        if ![self.j, self.jp, self.u].iter().all(|v| v.is_finite()) {
            return Err(Error::domain("non-finite Hamiltonian parameter"));
        }
        Ok(())
    }

    /// Lattice momentum of momentum index `m`: `k = -pi + 2 pi m / L`.
    pub fn momentum(&self, m: usize) -> f64 {
        -PI + 2.0 * PI * m as f64 / self.sites as f64
    }

    /// Single-particle dispersion `2 [J cos k + J' cos 2k]`.
    pub fn dispersion(&self, k: f64) -> f64 {
        2.0 * (self.j * k.cos() + self.jp * (2.0 * k).cos())
    }
}

/// Sparse Hermitian matrix in compressed-row form over a Fock basis.
#[derive(Debug, Clone)]
pub struct SparseHamiltonian {
    basis: Arc<FockBasis>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<C64>,
}

impl SparseHamiltonian {
    /// Assemble from unsorted triplets; duplicates are summed.
    pub fn from_triplets(basis: Arc<FockBasis>, triplets: Vec<(usize, usize, C64)>) -> Self {
        let mut rows: Vec<BTreeMap<usize, C64>> = vec![BTreeMap::new(); basis.dim()];
        for (r, c, v) in triplets {
            *rows[r].entry(c).or_insert(ZERO) += v;
        }
        let mut row_ptr = Vec::with_capacity(basis.dim() + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                if v != ZERO {
                    cols.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseHamiltonian {
            basis,
            row_ptr,
            cols,
            values,
        }
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterate `(row, col, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim()).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.values[k]))
        })
    }

    pub fn matvec(&self, x: &CVector) -> CVector {
        let mut y = CVector::zeros(self.dim());
        for r in 0..self.dim() {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
        y
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim(), self.dim());
        for (r, c, v) in self.entries() {
            m[(r, c)] = v;
        }
        m
    }

    /// Largest `|H_rc - conj(H_cr)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let lookup = |r: usize, c: usize| -> C64 {
            let slice = &self.cols[self.row_ptr[r]..self.row_ptr[r + 1]];
            match slice.binary_search(&c) {
                Ok(k) => self.values[self.row_ptr[r] + k],
                Err(_) => ZERO,
            }
        };
        self.entries()
            .map(|(r, c, v)| (v - lookup(c, r).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// `<psi|H|psi>`.
    pub fn energy(&self, psi: &StateVector) -> f64 {
        psi.amplitudes().dotc(&self.matvec(psi.amplitudes())).re
    }
}

/// Hopping and interaction terms of `H(J, J', U)` acting on one bitstring.
fn hubbard_terms(params: &HubbardParams, bits: u64) -> Vec<(u64, C64)> {
    let l = params.sites;
    let mut out = Vec::new();
    let mut hop = |from: usize, to: usize, amp: f64| {
        if amp == 0.0 {
            return;
        }
        for spin in 0..2 {
            let a = 2 * to + spin;
            let b = 2 * from + spin;
            // c†_a c_b + h.c.
            if let Some((o, s)) = hop_bits(bits, a, b) {
                out.push((o, C64::new(amp * s, 0.0)));
            }
            if let Some((o, s)) = hop_bits(bits, b, a) {
                out.push((o, C64::new(amp * s, 0.0)));
            }
        }
    };
    for site in 0..l {
        hop(site, (site + 1) % l, params.j);
        hop(site, (site + 2) % l, params.jp);
    }
    if params.u != 0.0 {
        let doublons = (0..l).filter(|&s| bits >> (2 * s) & 0b11 == 0b11).count();
        if doublons > 0 {
            out.push((bits, C64::new(params.u * doublons as f64, 0.0)));
        }
    }
    out
}

/// Assemble `H(J, J', U)` in a fixed particle-number sector, optionally at fixed `2 S^z`.
pub fn build_hamiltonian(
    params: &HubbardParams,
    particles: usize,
    twice_sz: Option<i32>,
) -> Result<SparseHamiltonian> {
    params.validate()?;
    let m = params.mode_count();
    let basis = Arc::new(match twice_sz {
        None => FockBasis::new(m, Some(particles))?,
        Some(sz) => FockBasis::with_spin(m, particles, sz)?,
    });
    build_in_basis(params, basis)
}

/// Assemble `H(J, J', U)` in a given number-conserving basis.
pub fn build_in_basis(params: &HubbardParams, basis: Arc<FockBasis>) -> Result<SparseHamiltonian> {
    params.validate()?;
    if basis.mode_count() != params.mode_count() {
        return Err(Error::DimensionMismatch {
            expected: params.mode_count(),
            got: basis.mode_count(),
        });
    }
    let mut triplets = Vec::new();
    for (col, &bits) in basis.states().iter().enumerate() {
        for (out, v) in hubbard_terms(params, bits) {
            let row = basis
                .index_of(out)
                .ok_or_else(|| Error::Consistency("Hamiltonian left its sector".into()))?;
            triplets.push((row, col, v));
        }
    }
    Ok(SparseHamiltonian::from_triplets(basis, triplets))
}

/// Spin and particle-number operators on a block of sites, as bitstring maps.
pub mod spin {
    use super::*;

    /// `sum_l n_l` over the listed sites.
    pub fn number(bits: u64, sites: std::ops::Range<usize>) -> f64 {
        sites
            .map(|s| ((bits >> (2 * s)) & 1) + ((bits >> (2 * s + 1)) & 1))
            .sum::<u64>() as f64
    }

    /// `S^z = (1/2) sum_l (n_{l up} - n_{l down})`.
    pub fn sz(bits: u64, sites: std::ops::Range<usize>) -> f64 {
        sites
            .map(|s| ((bits >> (2 * s)) & 1) as f64 - ((bits >> (2 * s + 1)) & 1) as f64)
            .sum::<f64>()
            * 0.5
    }

    /// `S^2 = (S^z)^2 + (S^+ S^- + S^- S^+) / 2` on one bitstring.
    pub fn s_squared(bits: u64, sites: std::ops::Range<usize>) -> Vec<(u64, C64)> {
        let z = sz(bits, sites.clone());
        let mut out = vec![(bits, C64::new(z * z, 0.0))];
        for a in sites.clone() {
            for b in sites.clone() {
                // S+_a S-_b = c†_{a up} c_{a dn} c†_{b dn} c_{b up}
                let pm = [
                    (2 * a, Ladder::Create),
                    (2 * a + 1, Ladder::Annihilate),
                    (2 * b + 1, Ladder::Create),
                    (2 * b, Ladder::Annihilate),
                ];
                let mp = [
                    (2 * a + 1, Ladder::Create),
                    (2 * a, Ladder::Annihilate),
                    (2 * b, Ladder::Create),
                    (2 * b + 1, Ladder::Annihilate),
                ];
                for ops in [pm, mp] {
                    if let Some((o, s)) = apply_string(bits, &ops) {
                        out.push((o, C64::new(0.5 * s, 0.0)));
                    }
                }
            }
        }
        out
    }

    /// Dense `S^2` over `sites` in `basis`.
    pub fn s_squared_matrix(basis: &FockBasis, sites: std::ops::Range<usize>) -> CMatrix {
        fock::operator_matrix(basis, |b| s_squared(b, sites.clone()))
    }
}

/// Create the momentum-space mode `b†_{k sigma}` on a state.
fn apply_momentum_creation(
    params: &HubbardParams,
    psi: &StateVector,
    momentum_index: usize,
    spin: usize,
) -> Result<StateVector> {
    let l = params.sites;
    let k = params.momentum(momentum_index);
    let norm = (l as f64).sqrt();
    let mut acc: Option<StateVector> = None;
    for site in 0..l {
        let phase = C64::from_polar(1.0 / norm, k * site as f64);
        let term = fock::apply_ladder(psi, 2 * site + spin, Ladder::Create)?;
        let scaled = term.amplitudes() * phase;
        acc = Some(match acc {
            None => StateVector::new(term.basis().clone(), scaled)?,
            Some(prev) => {
                let sum = prev.amplitudes() + scaled;
                StateVector::new(prev.basis().clone(), sum)?
            }
        });
    }
    acc.ok_or_else(|| Error::domain("empty chain"))
}

/// Momentum-space Fock state `prod_k (b†_{k sigma})^{n_{k sigma}} |0>` in position space.
///
/// `occupation` has `2L` entries indexed by `2 m + spin`, with `k = -pi + 2 pi m / L`.
/// Creation operators are applied in descending index order, matching the
/// position-space convention.
pub fn plane_wave_state(params: &HubbardParams, occupation: &Bitstring) -> Result<StateVector> {
    params.validate()?;
    if occupation.len() != params.mode_count() {
        return Err(Error::domain(format!(
            "momentum occupation has {} modes, chain has {}",
            occupation.len(),
            params.mode_count()
        )));
    }
    let mut psi = StateVector::vacuum(params.mode_count())?;
    for mode in 0..params.mode_count() {
        if occupation.occupation(mode) == 1 {
            psi = apply_momentum_creation(params, &psi, mode / 2, mode % 2)?;
        }
    }
    psi.normalized()
}

/// Non-interacting energy of a momentum occupation.
pub fn plane_wave_energy(params: &HubbardParams, occupation: &Bitstring) -> f64 {
    (0..occupation.len())
        .filter(|&m| occupation.occupation(m) == 1)
        .map(|m| params.dispersion(params.momentum(m / 2)))
        .sum()
}

/// How the initial Fock state is specified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    Momentum,
    Position,
}

/// Initial Fock state used for a quench.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialStateSpec {
    pub kind: InitialKind,
    /// Occupations `n_0 n_1 ...` over momentum or position modes.
    pub occupation: String,
    /// Free pre-evolution time (position states only).
    pub t0: f64,
    pub seed: u64,
}

impl InitialStateSpec {
    pub fn bitstring(&self) -> Result<Bitstring> {
        Bitstring::parse(&self.occupation)
    }
}

/// Frobenius norm of `[|psi><psi|, O]` for Hermitian `O` given as a bitstring map.
fn pure_commutator_norm(psi: &CVector, basis: &FockBasis, op: impl Fn(u64) -> Vec<(u64, C64)>) -> f64 {
    let o = fock::operator_matrix(basis, op);
    let v = &o * psi;
    let mean = psi.dotc(&v);
    // ||[rho, O]||_F^2 = 2 (<O^2> - |<O>|^2) for a normalized pure state
    let var = v.norm_squared() - mean.norm_sqr();
    (2.0 * var.max(0.0)).sqrt()
}

/// Commutator norm `||[rho_0, S^2]||_F` of a momentum Fock state.
///
/// `S^2` has the same form in the plane-wave basis, so the check runs directly on
/// the momentum occupation.
pub fn spin_commutator_norm(occupation: &Bitstring) -> Result<f64> {
    let m = occupation.len();
    let sites = m / 2;
    let basis = FockBasis::new(m, Some(occupation.particle_count()))?;
    let k = basis
        .index_of(occupation.bits())
        .ok_or_else(|| Error::domain("occupation outside its own sector"))?;
    let mut psi = CVector::zeros(basis.dim());
    psi[k] = ONE;
    Ok(pure_commutator_norm(&psi, &basis, |b| spin::s_squared(b, 0..sites)))
}

const MAX_TRIALS: usize = 10_000;

/// Draw a random momentum Fock state with `target_n` particles that breaks `S^2`.
pub fn select_initial_state(
    params: &HubbardParams,
    target_n: usize,
    seed: u64,
) -> Result<InitialStateSpec> {
    params.validate()?;
    let m = params.mode_count();
    if target_n == params.sites {
        return Err(Error::domain(
            "half filling is excluded; choose a particle number away from L",
        ));
    }
    if target_n > m {
        return Err(Error::domain(format!("{target_n} particles exceed {m} modes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modes: Vec<usize> = (0..m).collect();
    for _ in 0..MAX_TRIALS {
        modes.shuffle(&mut rng);
        let bits = modes[..target_n].iter().fold(0u64, |acc, &i| acc | (1 << i));
        let occ = Bitstring::new(bits, m)?;
        if spin_commutator_norm(&occ)? > 1e-8 {
            return Ok(InitialStateSpec {
                kind: InitialKind::Momentum,
                occupation: occ.to_string(),
                t0: 0.0,
                seed,
            });
        }
    }
    Err(Error::SearchExhausted { trials: MAX_TRIALS })
}

/// Random position-space Fock state with `target_n` particles that breaks `S^2`.
pub fn select_position_state(
    params: &HubbardParams,
    target_n: usize,
    t0: f64,
    seed: u64,
) -> Result<InitialStateSpec> {
    let mut spec = select_initial_state(params, target_n, seed)?;
    spec.kind = InitialKind::Position;
    spec.t0 = t0;
    Ok(spec)
}

/// How [`Propagator`] computes `exp(-iHt)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvolutionMethod {
    /// Dense eigendecomposition for small sectors, Krylov otherwise.
    Auto,
    Dense,
    Krylov,
}

/// Largest sector handled by dense diagonalization under [`EvolutionMethod::Auto`].
pub const DENSE_LIMIT: usize = 4096;
/// Krylov subspace dimension.
pub const KRYLOV_DIM: usize = 30;
const MAX_SUBSTEPS: usize = 100_000;

enum Engine {
    Dense { energies: Vec<f64>, vectors: CMatrix },
    Krylov,
}

/// Reusable `exp(-iHt)` for one Hamiltonian.
pub struct Propagator<'a> {
    hamiltonian: &'a SparseHamiltonian,
    tol: f64,
    engine: Engine,
}

impl<'a> Propagator<'a> {
    pub fn new(hamiltonian: &'a SparseHamiltonian, tol: f64, method: EvolutionMethod) -> Result<Self> {
        let dense = match method {
            EvolutionMethod::Dense => true,
            EvolutionMethod::Krylov => false,
            EvolutionMethod::Auto => hamiltonian.dim() <= DENSE_LIMIT,
        };
        let engine = if dense {
            let (energies, vectors) = linalg::eigh(&hamiltonian.to_dense())?;
            Engine::Dense { energies, vectors }
        } else {
            Engine::Krylov
        };
        Ok(Propagator {
            hamiltonian,
            tol,
            engine,
        })
    }

    /// `exp(-iHt) psi`.
    pub fn evolve(&self, psi: &StateVector, t: f64) -> Result<StateVector> {
        if psi.basis().as_ref() != self.hamiltonian.basis().as_ref() {
            return Err(Error::domain("state and Hamiltonian live in different bases"));
        }
        if t == 0.0 {
            return Ok(psi.clone());
        }
        let out = match &self.engine {
            Engine::Dense { energies, vectors } => {
                let mut coeffs = vectors.adjoint() * psi.amplitudes();
                for (c, &e) in coeffs.iter_mut().zip(energies) {
                    *c *= C64::from_polar(1.0, -e * t);
                }
                vectors * coeffs
            }
            Engine::Krylov => krylov_evolve(self.hamiltonian, psi.amplitudes(), t, self.tol)?,
        };
        let state = StateVector::new(psi.basis().clone(), out)?;
        let drift = (state.norm() - psi.norm()).abs();
        if drift > 1e-10 {
            return Err(Error::Evolution {
                residual: drift,
                steps: 0,
            });
        }
        Ok(state)
    }
}

/// `exp(-iHt) psi` to accuracy `tol`.
pub fn evolve(psi: &StateVector, h: &SparseHamiltonian, t: f64, tol: f64) -> Result<StateVector> {
    Propagator::new(h, tol, EvolutionMethod::Auto)?.evolve(psi, t)
}

/// Lanczos propagation with adaptive substeps.
fn krylov_evolve(h: &SparseHamiltonian, v0: &CVector, t: f64, tol: f64) -> Result<CVector> {
    let mut v = v0.clone();
    let mut remaining = t;
    let mut steps = 0usize;
    let mut dt = t;
    while remaining.abs() > 0.0 {
        let beta0 = v.norm();
        if beta0 == 0.0 {
            return Ok(v);
        }
        let m = KRYLOV_DIM.min(h.dim());
        let mut q: Vec<CVector> = Vec::with_capacity(m + 1);
        q.push(&v / C64::new(beta0, 0.0));
        let mut alpha = Vec::with_capacity(m);
        let mut beta = Vec::with_capacity(m);
        let mut residual_beta = 0.0;
        for j in 0..m {
            let mut w = h.matvec(&q[j]);
            alpha.push(q[j].dotc(&w).re);
            // full re-orthogonalization, twice
            for _ in 0..2 {
                for qk in &q {
                    let proj = qk.dotc(&w);
                    w -= qk * proj;
                }
            }
            let b = w.norm();
            if j + 1 == m || b < 1e-13 * beta0.max(1.0) {
                residual_beta = if j + 1 == m { b } else { 0.0 };
                break;
            }
            beta.push(b);
            q.push(w / C64::new(b, 0.0));
        }
        let k = alpha.len();
        let mut tri = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            tri[(i, i)] = alpha[i];
            if i + 1 < k {
                tri[(i, i + 1)] = beta[i];
                tri[(i + 1, i)] = beta[i];
            }
        }
        let eig = nalgebra::linalg::SymmetricEigen::new(tri);
        let small = |step: f64| -> DVector<C64> {
            let mut c = DVector::<C64>::zeros(k);
            for p in 0..k {
                let w = eig.eigenvectors[(0, p)];
                let ph = C64::from_polar(1.0, -eig.eigenvalues[p] * step) * w;
                for r in 0..k {
                    c[r] += ph * eig.eigenvectors[(r, p)];
                }
            }
            c
        };
        dt = dt.abs().min(remaining.abs()).copysign(t);
        let mut coeffs;
        loop {
            coeffs = small(dt);
            let err = beta0 * residual_beta * coeffs[k - 1].norm();
            if err <= tol * dt.abs() / t.abs() || residual_beta == 0.0 {
                break;
            }
            dt *= 0.5;
            if dt.abs() < 1e-14 * t.abs() {
                return Err(Error::Evolution {
                    residual: err,
                    steps,
                });
            }
        }
        let mut next = CVector::zeros(v.len());
        for (r, qr) in q.iter().enumerate().take(k) {
            next += qr * (coeffs[r] * beta0);
        }
        v = next;
        remaining -= dt;
        if remaining.abs() < 1e-15 * t.abs() {
            remaining = 0.0;
        }
        steps += 1;
        if steps > MAX_SUBSTEPS {
            return Err(Error::Evolution {
                residual: remaining.abs(),
                steps,
            });
        }
        // let the next substep grow again
        dt *= 2.0;
    }
    Ok(v)
}

/// Number of eigenvalues above `tol`; the `alpha -> 0` Renyi limit.
pub fn effective_rank(rho: &DensityMatrix, tol: f64) -> Result<usize> {
    Ok(rho.eigenvalues()?.into_iter().filter(|&v| v > tol).count())
}

/// Largest reduced-state rank reachable by free evolution of a Fock state.
///
/// Each spin species is an independent Slater determinant, so at most
/// `min(N_A, N_s, L - N_s, L - N_A)` modes per species are fractionally occupied.
pub fn gaussian_rank_bound(sites: usize, subsystem_sites: usize, up: usize, down: usize) -> usize {
    let per = |n: usize| {
        subsystem_sites
            .min(n)
            .min(sites - n)
            .min(sites - subsystem_sites)
    };
    1usize << (per(up) + per(down))
}

/// Free pre-evolution `exp(-i t0 H0) |n~0>` of a position Fock state.
///
/// Fails unless the reduced state on the leading `subsystem_sites` sites has
/// reached its full rank at `t0`.
pub fn prepare_position_quench(
    params: &HubbardParams,
    spec: &InitialStateSpec,
    subsystem_sites: usize,
    tol: f64,
) -> Result<StateVector> {
    if spec.kind != InitialKind::Position {
        return Err(Error::domain("position quench requires a position-space initial state"));
    }
    let occ = spec.bitstring()?;
    if occ.len() != params.mode_count() {
        return Err(Error::domain("occupation length does not match the chain"));
    }
    let h0 = build_hamiltonian(&params.free(), occ.particle_count(), None)?;
    let psi0 = StateVector::basis_state(h0.basis().clone(), occ.bits())?;
    let psi = evolve(&psi0, &h0, spec.t0, tol)?;
    let rho = fock::partial_trace(&psi, 2 * subsystem_sites)?;
    let rank = effective_rank(&rho, 1e-10)?;
    let up = (0..params.sites).filter(|&s| occ.occupation(2 * s) == 1).count();
    let down = occ.particle_count() - up;
    let full = gaussian_rank_bound(params.sites, subsystem_sites, up, down);
    if rank < full {
        return Err(Error::Precondition(format!(
            "reduced rank {rank} < {full} at t0 = {}; increase t0",
            spec.t0
        )));
    }
    Ok(psi)
}

/// Particle number `N` over `sites`, as a bitstring map (diagonal).
pub fn number_op(bits: u64, sites: std::ops::Range<usize>) -> Vec<(u64, C64)> {
    vec![(bits, C64::new(spin::number(bits, sites), 0.0))]
}

/// `[A, B]` max-norm for operators on the same basis.
pub fn commutator_norm(a: &CMatrix, b: &CMatrix) -> f64 {
    linalg::max_abs(&(a * b - b * a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn single_particle_spectrum(params: &HubbardParams) -> Vec<f64> {
        let h = build_hamiltonian(params, 1, Some(1)).unwrap();
        linalg::eigvalsh(&h.to_dense()).unwrap()
    }

    #[test]
    fn three_site_band() {
        let ev = single_particle_spectrum(&HubbardParams::new(3, 1.0, 0.0, 0.0));
        let expect = [-1.0, -1.0, 2.0];
        for (a, b) in ev.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{ev:?}");
        }
    }

    #[test]
    fn four_site_band_with_next_neighbour() {
        let ev = single_particle_spectrum(&HubbardParams::new(4, 1.0, 0.125, 0.0));
        let expect = [-1.75, -0.25, -0.25, 2.25];
        for (a, b) in ev.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{ev:?}");
        }
    }

    #[test]
    fn doublon_energy() {
        let p = HubbardParams::new(3, 1.0, 0.125, 0.7);
        let h = build_hamiltonian(&p, 2, None).unwrap();
        let k = h.basis().index_of(0b11).unwrap();
        assert!((h.to_dense()[(k, k)].re - 0.7).abs() < 1e-14);
    }

    #[test]
    fn rejects_short_chain() {
        assert!(build_hamiltonian(&HubbardParams::new(2, 1.0, 0.0, 0.0), 1, None).is_err());
    }

    #[test]
    fn hamiltonian_symmetries() {
        let p = HubbardParams::new(5, 1.0, 0.125, 0.9);
        let h = build_hamiltonian(&p, 4, None).unwrap();
        assert!(h.hermiticity_defect() < 1e-14);
        let dense = h.to_dense();
        let basis = h.basis();
        let sz = fock::operator_matrix(basis, |b| vec![(b, C64::new(spin::sz(b, 0..5), 0.0))]);
        let s2 = spin::s_squared_matrix(basis, 0..5);
        assert!(commutator_norm(&dense, &sz) < 1e-10);
        assert!(commutator_norm(&dense, &s2) < 1e-10);
        // N commutes trivially inside a sector; check on the full space
        let full = Arc::new(FockBasis::new(8, None).unwrap());
        let p4 = HubbardParams::new(4, 1.0, 0.125, 0.9);
        let hf = build_in_basis(&p4, full.clone()).unwrap().to_dense();
        let n = fock::operator_matrix(&full, |b| number_op(b, 0..4));
        assert!(commutator_norm(&hf, &n) < 1e-12);
    }

    #[test]
    fn s_squared_casimir_values() {
        // one site, one up + one down: singlet
        let basis = FockBasis::new(2, Some(2)).unwrap();
        let s2 = spin::s_squared_matrix(&basis, 0..1);
        assert!(s2[(0, 0)].norm() < 1e-14);
        // one site, single particle: s = 1/2
        let basis = FockBasis::new(2, Some(1)).unwrap();
        let s2 = spin::s_squared_matrix(&basis, 0..1);
        assert!((s2[(0, 0)].re - 0.75).abs() < 1e-14);
        // two sites, two up spins: triplet
        let basis = FockBasis::new(4, Some(2)).unwrap();
        let k = basis.index_of(0b0101).unwrap();
        let s2 = spin::s_squared_matrix(&basis, 0..2);
        assert!((s2[(k, k)].re - 2.0).abs() < 1e-14);
    }

    #[test]
    fn plane_wave_k_zero() {
        let p = HubbardParams::new(3, 1.0, 0.0, 0.0);
        // k = -pi + 2 pi m / 3 is zero only for odd L... use the m with k closest to 0
        let m = (0..3).min_by(|&a, &b| p.momentum(a).abs().total_cmp(&p.momentum(b).abs())).unwrap();
        assert!(p.momentum(m).abs() > 0.0);
        let p4 = HubbardParams::new(4, 1.0, 0.0, 0.0);
        assert!(p4.momentum(2).abs() < 1e-15);
        let occ = Bitstring::new(1 << 4, 8).unwrap();
        let psi = plane_wave_state(&p4, &occ).unwrap();
        for site in 0..4 {
            let a = psi.amplitude(1 << (2 * site));
            assert!((a - C64::new(0.5, 0.0)).norm() < 1e-14, "{a}");
        }
    }

    #[test]
    fn plane_waves_are_free_eigenstates() {
        let p = HubbardParams::new(4, 1.0, 0.125, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let n = rng.gen_range(1..8);
            let spec = {
                let mut modes: Vec<usize> = (0..8).collect();
                modes.shuffle(&mut rng);
                modes[..n].iter().fold(0u64, |a, &i| a | 1 << i)
            };
            let occ = Bitstring::new(spec, 8).unwrap();
            let psi = plane_wave_state(&p, &occ).unwrap();
            let h = build_hamiltonian(&p, n, None).unwrap();
            let e = plane_wave_energy(&p, &occ);
            let r = h.matvec(psi.amplitudes()) - psi.amplitudes() * C64::new(e, 0.0);
            assert!(r.norm() < 1e-10, "residual {}", r.norm());
        }
    }

    #[test]
    fn filled_band_is_unique() {
        let p = HubbardParams::new(4, 1.0, 0.125, 0.0);
        let occ = Bitstring::new(0b0101_0101, 8).unwrap();
        let psi = plane_wave_state(&p, &occ).unwrap();
        assert!((psi.amplitude(0b0101_0101).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn initial_state_selection() {
        let p = HubbardParams::new(5, 1.0, 0.125, 0.0);
        assert!(matches!(select_initial_state(&p, 5, 1), Err(Error::Domain(_))));
        let a = select_initial_state(&p, 4, 9).unwrap();
        let b = select_initial_state(&p, 4, 9).unwrap();
        assert_eq!(a, b);
        let occ = a.bitstring().unwrap();
        assert_eq!(occ.particle_count(), 4);
        assert!(spin_commutator_norm(&occ).unwrap() > 1e-8);
        // cross-check the commutator on the position-space state
        let psi = plane_wave_state(&p, &occ).unwrap();
        let s2 = spin::s_squared_matrix(psi.basis(), 0..5);
        let v = &s2 * psi.amplitudes();
        let var = v.norm_squared() - psi.amplitudes().dotc(&v).norm_sqr();
        assert!((2.0 * var).sqrt() > 1e-8);
    }

    #[test]
    fn fully_polarized_state_commutes_with_s2() {
        let occ = Bitstring::parse("1010100000").unwrap();
        assert!(spin_commutator_norm(&occ).unwrap() < 1e-12);
    }

    fn random_hamiltonian_70() -> SparseHamiltonian {
        // L = 4, 2 up + 2 down would be 36; 8 modes with 4 particles gives 70
        let p = HubbardParams::new(4, 1.0, 0.125, 1.3);
        build_hamiltonian(&p, 4, None).unwrap()
    }

    #[test]
    fn krylov_matches_dense() {
        let h = random_hamiltonian_70();
        assert_eq!(h.dim(), 70);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let amps = CVector::from_fn(70, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let psi = StateVector::new(h.basis().clone(), amps).unwrap().normalized().unwrap();
        let dense = Propagator::new(&h, 1e-12, EvolutionMethod::Dense).unwrap();
        let krylov = Propagator::new(&h, 1e-12, EvolutionMethod::Krylov).unwrap();
        let a = dense.evolve(&psi, 1.0).unwrap();
        let b = krylov.evolve(&psi, 1.0).unwrap();
        let overlap = a.inner(&b).unwrap().norm();
        assert!(1.0 - overlap < 1e-9, "deficit {}", 1.0 - overlap);
        // and against an independently built dense exponential
        let u = linalg::expm_hermitian(&h.to_dense(), 1.0).unwrap();
        let c = &u * psi.amplitudes();
        assert!((c - b.amplitudes()).norm() < 1e-9);
        // long times take several substeps
        let a = dense.evolve(&psi, 25.0).unwrap();
        let b = krylov.evolve(&psi, 25.0).unwrap();
        assert!((a.amplitudes() - b.amplitudes()).norm() < 1e-8);
    }

    #[test]
    fn evolution_edge_cases() {
        let p = HubbardParams::new(4, 1.0, 0.125, 0.0);
        let occ = Bitstring::parse("11000000").unwrap();
        let psi = plane_wave_state(&p, &occ).unwrap();
        let h = build_hamiltonian(&p, 2, None).unwrap();
        let same = evolve(&psi, &h, 0.0, 1e-12).unwrap();
        assert_eq!(same.amplitudes(), psi.amplitudes());
        let e = plane_wave_energy(&p, &occ);
        for method in [EvolutionMethod::Dense, EvolutionMethod::Krylov] {
            let prop = Propagator::new(&h, 1e-12, method).unwrap();
            let out = prop.evolve(&psi, 3.0).unwrap();
            let expect = psi.amplitudes() * C64::from_polar(1.0, -e * 3.0);
            assert!((out.amplitudes() - expect).norm() < 1e-10);
        }
    }

    #[test]
    fn energy_is_conserved() {
        let p = HubbardParams::new(5, 1.0, 0.125, 0.4);
        let spec = select_initial_state(&p, 4, 3).unwrap();
        let psi = plane_wave_state(&p, &spec.bitstring().unwrap()).unwrap();
        let h = build_hamiltonian(&p, 4, None).unwrap();
        let e0 = h.energy(&psi);
        let prop = Propagator::new(&h, 1e-12, EvolutionMethod::Krylov).unwrap();
        for t in [0.5, 2.0, 7.0] {
            let out = prop.evolve(&psi, t).unwrap();
            assert!((h.energy(&out) - e0).abs() < 1e-8);
            assert!((out.norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn effective_rank_examples() {
        let pure = StateVector::basis_state(FockBasis::shared(4, None).unwrap(), 3)
            .unwrap()
            .density_matrix();
        assert_eq!(effective_rank(&pure, 1e-10).unwrap(), 1);
        let mixed = DensityMatrix::maximally_mixed(4).unwrap();
        assert_eq!(effective_rank(&mixed, 1e-10).unwrap(), 16);
    }

    #[test]
    fn rank_grows_under_free_evolution() {
        let p = HubbardParams::new(6, 1.0, 0.125, 0.0);
        let spec = select_position_state(&p, 5, 0.0, 4).unwrap();
        let occ = spec.bitstring().unwrap();
        let h0 = build_hamiltonian(&p, 5, None).unwrap();
        let psi0 = StateVector::basis_state(h0.basis().clone(), occ.bits()).unwrap();
        let prop = Propagator::new(&h0, 1e-12, EvolutionMethod::Auto).unwrap();
        let mut last = 0;
        for t in [0.0, 0.05, 0.2, 0.5, 1.0, 2.0, 5.0, 20.0] {
            let rho = fock::partial_trace(&prop.evolve(&psi0, t).unwrap(), 6).unwrap();
            let r = effective_rank(&rho, 1e-10).unwrap();
            assert!(r >= last, "rank dropped from {last} to {r} at t = {t}");
            last = r;
        }
        assert_eq!(last, 32);
    }

    #[test]
    fn position_quench_preparation() {
        let p = HubbardParams::new(6, 1.0, 0.125, 0.0);
        let spec = select_position_state(&p, 5, 0.0, 4).unwrap();
        assert!(matches!(
            prepare_position_quench(&p, &spec, 3, 1e-12),
            Err(Error::Precondition(_))
        ));
        let spec = InitialStateSpec { t0: 20.0, ..spec };
        let psi = prepare_position_quench(&p, &spec, 3, 1e-12).unwrap();
        assert!((psi.norm() - 1.0).abs() < 1e-10);
    }
}
