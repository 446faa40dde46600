//! Entanglement spectra, non-Gaussianity, symmetry sectors and gap-ratio statistics.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::correlations;
use crate::error::{Error, Result};
use crate::fock::{self, DensityMatrix, FockBasis};
use crate::linalg::{self, CMatrix, C64};
use crate::model::spin;
use crate::reconstruction;

/// Default eigenvalue cutoff below which levels are dropped.
pub const DEFAULT_CUTOFF: f64 = 1e-12;
/// Cutoff for comparing exact and reconstructed spectra: sits above the
/// weights generated by clamped Gaussian occupations.
pub const COMPARISON_CUTOFF: f64 = 1e-9;
/// Spacings below this are treated as exact degeneracies.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Quantum numbers of a symmetry block: particle number, `2 S^z` and `2 s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SectorLabel {
    pub n: usize,
    pub twice_m: i32,
    pub twice_s: Option<i32>,
}

impl SectorLabel {
    pub fn m(&self) -> f64 {
        self.twice_m as f64 / 2.0
    }

    pub fn s(&self) -> Option<f64> {
        self.twice_s.map(|v| v as f64 / 2.0)
    }
}

/// `eps_i = -log lambda_i`, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementSpectrum {
    pub levels: Vec<f64>,
    /// Number of eigenvalues above the cutoff.
    pub rank: usize,
    pub sector: Option<SectorLabel>,
}

/// Entanglement spectrum of the eigenvalues of a Hermitian matrix.
pub fn spectrum_of(m: &CMatrix, cutoff: f64) -> Result<EntanglementSpectrum> {
    let mut levels: Vec<f64> = linalg::eigvalsh(m)?
        .into_iter()
        .filter(|&l| l > cutoff)
        .map(|l| -l.ln())
        .collect();
    levels.sort_by(f64::total_cmp);
    Ok(EntanglementSpectrum {
        rank: levels.len(),
        levels,
        sector: None,
    })
}

pub fn entanglement_spectrum(rho: &DensityMatrix, cutoff: f64) -> Result<EntanglementSpectrum> {
    spectrum_of(rho.elements(), cutoff)
}

/// Spectrum of a Gaussian state read off its product weights, without a dense eigensolve.
pub fn gaussian_spectrum(state: &reconstruction::GaussianState, cutoff: f64) -> EntanglementSpectrum {
    let mut levels: Vec<f64> = state
        .weights()
        .iter()
        .filter(|&&w| w > cutoff)
        .map(|w| -w.ln())
        .collect();
    levels.sort_by(f64::total_cmp);
    EntanglementSpectrum {
        rank: levels.len(),
        levels,
        sector: None,
    }
}

/// `|eps_i - eps'_i|` at each requested index; `None` beyond the common rank.
pub fn spectral_error(
    a: &EntanglementSpectrum,
    b: &EntanglementSpectrum,
    indices: &[usize],
) -> Vec<Option<f64>> {
    indices
        .iter()
        .map(|&i| match (a.levels.get(i), b.levels.get(i)) {
            (Some(x), Some(y)) => Some((x - y).abs()),
            _ => None,
        })
        .collect()
}

/// `F = Tr[s s'] / max(Tr s^2, Tr s'^2)`.
pub fn max_fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let overlap = linalg::trace_product(a.elements(), b.elements()).re;
    Ok(overlap / a.purity().max(b.purity()))
}

/// Gaussian state sharing the two-point function of `sigma`.
pub fn gaussian_reference(sigma: &DensityMatrix) -> Result<DensityMatrix> {
    let n = sigma.basis().mode_count();
    let c2 = correlations::two_point_from_density(sigma, n)?;
    reconstruction::gaussian_density(&c2)
}

/// Non-Gaussianity `theta = arccos sqrt F(sigma | sigma_g)` in `[0, pi/2]`.
pub fn non_gaussianity(sigma: &DensityMatrix) -> Result<f64> {
    let f = max_fidelity(sigma, &gaussian_reference(sigma)?)?;
    Ok(f.clamp(0.0, 1.0).sqrt().acos())
}

/// `1 - F(sigma | sigma_g)`.
pub fn gaussian_infidelity(sigma: &DensityMatrix) -> Result<f64> {
    Ok(1.0 - max_fidelity(sigma, &gaussian_reference(sigma)?)?)
}

/// Which quantum numbers resolve the symmetry blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SectorResolution {
    /// `N` and `S^z`.
    NumberSpin,
    /// `N`, `S^z` and the `S^2` Casimir.
    #[default]
    Full,
}

/// Orthonormal basis of one symmetry block (columns in the mode Fock basis).
#[derive(Debug, Clone)]
pub struct Sector {
    pub label: SectorLabel,
    pub basis: CMatrix,
}

impl Sector {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// Simultaneous eigenbasis of `N`, `S^z` (and `S^2`) on `sites` sites.
pub fn build_sectors(sites: usize, resolution: SectorResolution) -> Result<Vec<Sector>> {
    let basis = FockBasis::new(2 * sites, None)?;
    let mut groups: BTreeMap<(usize, i32), Vec<usize>> = BTreeMap::new();
    for (k, &b) in basis.states().iter().enumerate() {
        groups
            .entry((b.count_ones() as usize, fock::twice_sz_of(b)))
            .or_default()
            .push(k);
    }
    let dim = basis.dim();
    let s2 = spin::s_squared_matrix(&basis, 0..sites);
    let n_op = fock::operator_matrix(&basis, |b| vec![(b, C64::new(b.count_ones() as f64, 0.0))]);
    let sz = fock::operator_matrix(&basis, |b| vec![(b, C64::new(spin::sz(b, 0..sites), 0.0))]);
    let comm = linalg::max_abs(&(&s2 * &n_op - &n_op * &s2))
        .max(linalg::max_abs(&(&s2 * &sz - &sz * &s2)));
    if comm > 1e-10 {
        return Err(Error::Consistency(format!("S^2 fails to commute with N, S^z ({comm:.2e})")));
    }
    let mut sectors = Vec::new();
    for ((n, twice_m), members) in groups {
        let select = CMatrix::from_fn(dim, members.len(), |r, c| {
            if members[c] == r {
                linalg::ONE
            } else {
                linalg::ZERO
            }
        });
        match resolution {
            SectorResolution::NumberSpin => sectors.push(Sector {
                label: SectorLabel {
                    n,
                    twice_m,
                    twice_s: None,
                },
                basis: select,
            }),
            SectorResolution::Full => {
                let block = select.adjoint() * &s2 * &select;
                let (vals, vecs) = linalg::eigh(&block)?;
                let mut by_s: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
                for (k, &lambda) in vals.iter().enumerate() {
                    let s = (-1.0 + (1.0 + 4.0 * lambda).sqrt()) / 2.0;
                    let twice_s = (2.0 * s).round() as i32;
                    let half = twice_s as f64 / 2.0;
                    if (half * (half + 1.0) - lambda).abs() > 1e-8 {
                        return Err(Error::Consistency(format!(
                            "S^2 eigenvalue {lambda} is not a Casimir value"
                        )));
                    }
                    by_s.entry(twice_s).or_default().push(k);
                }
                for (twice_s, cols) in by_s {
                    let local = CMatrix::from_fn(members.len(), cols.len(), |r, c| vecs[(r, cols[c])]);
                    sectors.push(Sector {
                        label: SectorLabel {
                            n,
                            twice_m,
                            twice_s: Some(twice_s),
                        },
                        basis: &select * local,
                    });
                }
            }
        }
    }
    Ok(sectors)
}

/// A projected symmetry block.
#[derive(Debug, Clone)]
pub struct SectorBlock {
    pub label: SectorLabel,
    pub block: CMatrix,
}

impl SectorBlock {
    /// Fewer than two states: no gap ratios possible.
    pub fn is_trivial(&self) -> bool {
        self.block.nrows() < 2
    }
}

/// Extract `Q† rho Q` for every sector.
pub fn sector_project(rho: &DensityMatrix, sectors: &[Sector]) -> Result<Vec<SectorBlock>> {
    if let Some(s) = sectors.first() {
        if s.basis.nrows() != rho.dim() {
            return Err(Error::DimensionMismatch {
                expected: s.basis.nrows(),
                got: rho.dim(),
            });
        }
    }
    Ok(sectors
        .iter()
        .map(|s| SectorBlock {
            label: s.label,
            block: s.basis.adjoint() * rho.elements() * &s.basis,
        })
        .collect())
}

/// Sector-resolved spectra of `rho`.
pub fn sector_spectra(
    rho: &DensityMatrix,
    sectors: &[Sector],
    cutoff: f64,
) -> Result<Vec<EntanglementSpectrum>> {
    sector_project(rho, sectors)?
        .into_iter()
        .map(|b| {
            let mut s = spectrum_of(&b.block, cutoff)?;
            s.sector = Some(b.label);
            Ok(s)
        })
        .collect()
}

/// Largest `|rho_ab|` connecting different particle-number sectors.
pub fn number_leakage(rho: &DensityMatrix) -> f64 {
    let states = rho.basis().states();
    let mut worst: f64 = 0.0;
    for (r, &a) in states.iter().enumerate() {
        for (c, &b) in states.iter().enumerate() {
            if a.count_ones() != b.count_ones() {
                worst = worst.max(rho.elements()[(r, c)].norm());
            }
        }
    }
    worst
}

/// Gap ratios of one ascending level list and the number of dropped degenerate spacings.
pub fn gap_ratios(levels: &[f64], degeneracy_tol: f64) -> (Vec<f64>, usize) {
    let mut sorted = levels.to_vec();
    sorted.sort_by(f64::total_cmp);
    let spacings: Vec<f64> = sorted.windows(2).map(|w| w[1] - w[0]).collect();
    let kept: Vec<f64> = spacings.iter().copied().filter(|&d| d >= degeneracy_tol).collect();
    let dropped = spacings.len() - kept.len();
    let ratios = kept
        .windows(2)
        .map(|w| w[0].min(w[1]) / w[0].max(w[1]))
        .collect();
    (ratios, dropped)
}

/// Settings for [`gap_statistics`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatisticsOptions {
    pub bins: usize,
    pub bootstrap_resamples: usize,
    pub degeneracy_tol: f64,
    pub seed: u64,
}

impl Default for StatisticsOptions {
    fn default() -> Self {
        StatisticsOptions {
            bins: 24,
            bootstrap_resamples: 1000,
            degeneracy_tol: DEGENERACY_TOL,
            seed: 0,
        }
    }
}

/// Pooled gap-ratio statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStatistics {
    pub ratios: Vec<f64>,
    /// Normalized density per bin on `[0, 1]`.
    pub histogram: Vec<f64>,
    pub mean_r: f64,
    pub ci: (f64, f64),
    pub dropped_degenerate: usize,
    pub sectors_used: usize,
}

impl GapStatistics {
    /// Build statistics from a pool of ratios.
    pub fn from_ratios(ratios: Vec<f64>, opts: &StatisticsOptions) -> Result<Self> {
        if ratios.is_empty() {
            return Err(Error::StatisticsUnavailable("no gap ratios in pool".into()));
        }
        let mean_r = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let ci = bootstrap_mean_ci(&ratios, opts.bootstrap_resamples, opts.seed);
        Ok(GapStatistics {
            histogram: histogram(&ratios, opts.bins),
            ratios,
            mean_r,
            ci,
            dropped_degenerate: 0,
            sectors_used: 0,
        })
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        let n = self.histogram.len();
        (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect()
    }
}

/// Normalized histogram on `[0, 1]`.
pub fn histogram(values: &[f64], bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = ((v * bins as f64) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let scale = bins as f64 / values.len() as f64;
    counts.iter().map(|&c| c as f64 * scale).collect()
}

/// Percentile bootstrap 95% interval of the mean.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    if values.is_empty() || resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    (at(0.025), at(0.975))
}

/// Pool ratios over sector spectra with at least three levels.
pub fn gap_statistics(
    spectra: &[EntanglementSpectrum],
    opts: &StatisticsOptions,
) -> Result<GapStatistics> {
    let mut pool = Vec::new();
    let mut dropped = 0;
    let mut used = 0;
    for s in spectra {
        if s.levels.len() < 3 {
            continue;
        }
        let (r, d) = gap_ratios(&s.levels, opts.degeneracy_tol);
        dropped += d;
        if !r.is_empty() {
            used += 1;
        }
        pool.extend(r);
    }
    let mut stats = GapStatistics::from_ratios(pool, opts)?;
    stats.dropped_degenerate = dropped;
    stats.sectors_used = used;
    Ok(stats)
}

/// Reference level statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    Poisson,
    Gue,
}

/// `2 ln 2 - 1`.
pub const POISSON_MEAN_R: f64 = 0.386_294_361_119_890_6;
/// Large-matrix GUE value.
pub const GUE_MEAN_R: f64 = 0.5996;
/// Matrix size used for sampled GUE spectra.
pub const GUE_DIM: usize = 150;

/// Sampled reference statistics with `samples` ratios.
pub fn reference_distribution(
    kind: ReferenceKind,
    samples: usize,
    seed: u64,
    opts: &StatisticsOptions,
) -> Result<GapStatistics> {
    if samples < 1000 {
        return Err(Error::domain("reference distributions need at least 1000 samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(samples);
    match kind {
        ReferenceKind::Poisson => {
            let mut prev: f64 = Exp1.sample(&mut rng);
            while ratios.len() < samples {
                let next: f64 = Exp1.sample(&mut rng);
                ratios.push(prev.min(next) / prev.max(next));
                prev = next;
            }
        }
        ReferenceKind::Gue => {
            while ratios.len() < samples {
                let levels = gue_levels(GUE_DIM, &mut rng)?;
                let bulk = &levels[GUE_DIM / 3..2 * GUE_DIM / 3];
                let (r, _) = gap_ratios(bulk, 0.0);
                ratios.extend(r.into_iter().take(samples - ratios.len()));
            }
        }
    }
    GapStatistics::from_ratios(ratios, opts)
}

/// Eigenvalues of a GUE matrix, ascending.
pub fn gue_levels(dim: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let mut h = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        let d: f64 = StandardNormal.sample(rng);
        h[(i, i)] = C64::new(d, 0.0);
        for j in i + 1..dim {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            let z = C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
        }
    }
    linalg::eigvalsh(&h)
}

/// Mean of per-member means with a bootstrap over members; the alternative to pooling ratios.
pub fn member_averaged_mean(
    members: &[Vec<EntanglementSpectrum>],
    opts: &StatisticsOptions,
) -> Result<(f64, (f64, f64))> {
    let means: Vec<f64> = members
        .iter()
        .filter_map(|m| gap_statistics(m, opts).ok().map(|s| s.mean_r))
        .collect();
    if means.is_empty() {
        return Err(Error::StatisticsUnavailable("no member produced ratios".into()));
    }
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    Ok((mean, bootstrap_mean_ci(&means, opts.bootstrap_resamples, opts.seed)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlations::{DiagonalFrame, TwoPointMatrix};
    use crate::fock::StateVector;
    use crate::linalg::CVector;
    use crate::model::{self, HubbardParams};
    use proptest::prelude::*;

    #[test]
    fn gaussian_spectrum_matches_dense_eigensolve() {
        let c2 = TwoPointMatrix::new(CMatrix::from_fn(4, 4, |i, j| {
            if i == j {
                C64::new(0.2 + 0.15 * i as f64, 0.0)
            } else {
                C64::new(0.03, 0.01 * (j as f64 - i as f64))
            }
        }))
        .unwrap();
        let frame = correlations::diagonalize_two_point(&c2).unwrap();
        let g = reconstruction::gaussian_state(&frame).unwrap();
        let fast = gaussian_spectrum(&g, DEFAULT_CUTOFF);
        let dense = entanglement_spectrum(&reconstruction::gaussian_density(&c2).unwrap(), DEFAULT_CUTOFF).unwrap();
        assert_eq!(fast.rank, dense.rank);
        for (a, b) in fast.levels.iter().zip(&dense.levels) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn spectrum_examples() {
        let mixed = DensityMatrix::maximally_mixed(2).unwrap();
        let s = entanglement_spectrum(&mixed, DEFAULT_CUTOFF).unwrap();
        assert_eq!(s.levels.len(), 4);
        assert!(s.levels.iter().all(|l| (l - 4f64.ln()).abs() < 1e-12));
        let pure = StateVector::basis_state(FockBasis::shared(2, None).unwrap(), 1)
            .unwrap()
            .density_matrix();
        let s = entanglement_spectrum(&pure, DEFAULT_CUTOFF).unwrap();
        assert_eq!(s.levels.len(), 1);
        assert!(s.levels[0].abs() < 1e-12);
    }

    #[test]
    fn gaussian_levels_follow_product_formula() {
        let g = [0.8, 0.35, 0.1];
        let frame = DiagonalFrame::new(CMatrix::identity(3, 3), g.to_vec()).unwrap();
        let gs = reconstruction::gaussian_state(&frame).unwrap();
        let rho = DensityMatrix::new(gs.basis().clone(), gs.to_matrix()).unwrap();
        let s = entanglement_spectrum(&rho, DEFAULT_CUTOFF).unwrap();
        let mut expect: Vec<f64> = (0..8u64)
            .map(|b| {
                (0..3)
                    .map(|p| if b >> p & 1 == 1 { -g[p].ln() } else { -(1.0 - g[p]).ln() })
                    .sum()
            })
            .collect();
        expect.sort_by(f64::total_cmp);
        for (a, b) in s.levels.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn spectral_error_examples() {
        let a = EntanglementSpectrum { levels: vec![0.1, 0.5, 2.0], rank: 3, sector: None };
        let b = EntanglementSpectrum {
            levels: a.levels.iter().map(|x| x + 0.3).collect(),
            rank: 3,
            sector: None,
        };
        assert_eq!(spectral_error(&a, &a, &[0, 2]), vec![Some(0.0), Some(0.0)]);
        let e = spectral_error(&a, &b, &[0, 1, 2, 5]);
        assert!(e[..3].iter().all(|d| (d.unwrap() - 0.3).abs() < 1e-12));
        assert_eq!(e[3], None);
    }

    proptest! {
        #[test]
        fn spectral_error_is_a_pseudometric(
            a in proptest::collection::vec(0.0f64..10.0, 5),
            b in proptest::collection::vec(0.0f64..10.0, 5),
            c in proptest::collection::vec(0.0f64..10.0, 5),
        ) {
            let mk = |v: &Vec<f64>| {
                let mut l = v.clone();
                l.sort_by(f64::total_cmp);
                EntanglementSpectrum { rank: l.len(), levels: l, sector: None }
            };
            let (a, b, c) = (mk(&a), mk(&b), mk(&c));
            let idx: Vec<usize> = (0..5).collect();
            let ab = spectral_error(&a, &b, &idx);
            let ba = spectral_error(&b, &a, &idx);
            let bc = spectral_error(&b, &c, &idx);
            let ac = spectral_error(&a, &c, &idx);
            for i in 0..5 {
                prop_assert_eq!(ab[i], ba[i]);
                prop_assert!(ac[i].unwrap() <= ab[i].unwrap() + bc[i].unwrap() + 1e-12);
            }
        }
    }

    fn quench_rho(u: f64, t: f64, seed: u64) -> DensityMatrix {
        let p = HubbardParams::new(4, 1.0, 0.125, u);
        let spec = model::select_initial_state(&p, 3, seed).unwrap();
        let psi = model::plane_wave_state(&p, &spec.bitstring().unwrap()).unwrap();
        let h = model::build_hamiltonian(&p, 3, None).unwrap();
        fock::partial_trace(&model::evolve(&psi, &h, t, 1e-12).unwrap(), 4).unwrap()
    }

    #[test]
    fn theta_vanishes_for_gaussian_states() {
        for t in [0.0, 2.0, 6.0] {
            assert!(non_gaussianity(&quench_rho(0.0, t, 2)).unwrap() < 1e-6);
        }
        assert!(non_gaussianity(&quench_rho(2.0, 3.0, 2)).unwrap() > 1e-3);
    }

    #[test]
    fn gaussian_reference_matches_eh_construction() {
        let rho = quench_rho(1.0, 2.0, 3);
        let c2 = correlations::two_point_from_density(&rho, 4).unwrap();
        let eh = reconstruction::gaussian_eh(&c2).unwrap();
        let via_eh = linalg::hermitian_function(eh.elements(), |e| C64::new((-e).exp(), 0.0)).unwrap();
        let via_frame = gaussian_reference(&rho).unwrap();
        assert!(linalg::max_abs_diff(&via_eh, via_frame.elements()) < 1e-9);
    }

    #[test]
    fn theta_is_basis_independent() {
        let rho = quench_rho(1.5, 2.5, 4);
        let theta = non_gaussianity(&rho).unwrap();
        // single-particle unitary lifted to Fock space through a frame rotation
        let a = CMatrix::from_fn(4, 4, |i, j| C64::new(((i * 7 + j * 3) % 5) as f64 * 0.1, ((i + 2 * j) % 3) as f64 * 0.1));
        let u = linalg::expm_hermitian(&(&a + a.adjoint()), 1.0).unwrap();
        let frame = DiagonalFrame::new(u, vec![0.5; 4]).unwrap();
        let g = reconstruction::frame_to_mode(&frame).unwrap();
        let rotated = DensityMatrix::new(rho.basis().clone(), &g * rho.elements() * g.adjoint()).unwrap();
        assert!((non_gaussianity(&rotated).unwrap() - theta).abs() < 1e-8);
    }

    #[test]
    fn single_site_sectors() {
        let sectors = build_sectors(1, SectorResolution::Full).unwrap();
        let labels: Vec<(usize, i32, Option<i32>, usize)> = sectors
            .iter()
            .map(|s| (s.label.n, s.label.twice_m, s.label.twice_s, s.dim()))
            .collect();
        assert_eq!(
            labels,
            vec![(0, 0, Some(0), 1), (1, -1, Some(1), 1), (1, 1, Some(1), 1), (2, 0, Some(0), 1)]
        );
    }

    #[test]
    fn two_site_sectors_complete() {
        for res in [SectorResolution::NumberSpin, SectorResolution::Full] {
            let sectors = build_sectors(2, res).unwrap();
            assert_eq!(sectors.iter().map(Sector::dim).sum::<usize>(), 16);
        }
        let full = build_sectors(2, SectorResolution::Full).unwrap();
        // two particles, m = 0: singlets (s = 0) twice and one triplet member
        let s0 = full
            .iter()
            .filter(|s| s.label.n == 2 && s.label.twice_m == 0 && s.label.twice_s == Some(0))
            .map(Sector::dim)
            .sum::<usize>();
        assert_eq!(s0, 3);
    }

    #[test]
    fn reduced_states_respect_number_superselection() {
        assert!(number_leakage(&quench_rho(1.0, 3.0, 5)) < 1e-12);
    }

    #[test]
    fn gap_ratio_examples() {
        let (r, d) = gap_ratios(&[0.0, 1.0, 3.0], DEGENERACY_TOL);
        assert_eq!((r, d), (vec![0.5], 0));
        let ladder: Vec<f64> = (0..10).map(|k| k as f64 * 0.7).collect();
        assert!(gap_ratios(&ladder, DEGENERACY_TOL).0.iter().all(|&r| (r - 1.0).abs() < 1e-12));
        let (_, d) = gap_ratios(&[0.0, 1.0, 1.0, 2.5], DEGENERACY_TOL);
        assert_eq!(d, 1);
        let empty = gap_statistics(&[], &StatisticsOptions::default());
        assert!(matches!(empty, Err(Error::StatisticsUnavailable(_))));
    }

    #[test]
    fn poisson_levels_oracle() {
        // pooled i.i.d. exponential spacings, 1e4 draws
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut levels = vec![0.0];
        for _ in 0..10_000 {
            let d: f64 = Exp1.sample(&mut rng);
            levels.push(levels.last().unwrap() + d);
        }
        let spec = EntanglementSpectrum { rank: levels.len(), levels, sector: None };
        let stats = gap_statistics(&[spec], &StatisticsOptions::default()).unwrap();
        assert!((stats.mean_r - POISSON_MEAN_R).abs() < 0.01);
    }

    #[test]
    fn references_are_normalized() {
        let opts = StatisticsOptions { bootstrap_resamples: 50, ..Default::default() };
        for kind in [ReferenceKind::Poisson, ReferenceKind::Gue] {
            let s = reference_distribution(kind, 5000, 1, &opts).unwrap();
            let integral: f64 = s.histogram.iter().sum::<f64>() / s.histogram.len() as f64;
            assert!((integral - 1.0).abs() < 1e-12);
            assert!(s.ratios.iter().all(|&r| (0.0..=1.0).contains(&r)));
            assert_eq!(s.ratios.len(), 5000);
        }
        assert!(reference_distribution(ReferenceKind::Poisson, 10, 1, &opts).is_err());
    }

    #[test]
    fn sector_spectra_cover_full_spectrum() {
        let rho = quench_rho(1.0, 3.0, 6);
        let sectors = build_sectors(2, SectorResolution::NumberSpin).unwrap();
        let spectra = sector_spectra(&rho, &sectors, DEFAULT_CUTOFF).unwrap();
        let mut pooled: Vec<f64> = spectra.iter().flat_map(|s| s.levels.clone()).collect();
        pooled.sort_by(f64::total_cmp);
        let full = entanglement_spectrum(&rho, DEFAULT_CUTOFF).unwrap();
        assert_eq!(pooled.len(), full.levels.len());
        for (a, b) in pooled.iter().zip(&full.levels) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn fidelity_of_identical_states_is_one() {
        let rho = quench_rho(0.5, 1.0, 7);
        assert!((max_fidelity(&rho, &rho).unwrap() - 1.0).abs() < 1e-12);
        let tp = TwoPointMatrix::new(CMatrix::from_diagonal(&CVector::from_element(2, C64::new(0.5, 0.0)))).unwrap();
        let g = reconstruction::gaussian_density(&tp).unwrap();
        assert!(non_gaussianity(&g).unwrap() < 1e-6);
    }
}
