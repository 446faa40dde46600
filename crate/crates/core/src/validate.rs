//! Fast self-checks against independent oracles, run by `nongauss validate`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{self, ReferenceKind, StatisticsOptions};
use crate::correlations::{self, measure_four_point_connected, measure_two_point};
use crate::error::Result;
use crate::fock::{DensityMatrix, FockBasis, StateVector};
use crate::linalg::{self, CMatrix, CVector, C64};
use crate::measurement;
use crate::model::{self, EvolutionMethod, HubbardParams, Propagator};
use crate::reconstruction;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, value: f64, limit: f64) -> Check {
    Check {
        name,
        passed: value.is_finite() && value <= limit,
        detail: format!("{value:.3e} (limit {limit:.1e})"),
    }
}

fn quench_state(l: usize, n: usize, u: f64, t: f64, seed: u64) -> Result<StateVector> {
    let p = HubbardParams::new(l, 1.0, 0.125, u);
    let spec = model::select_initial_state(&p, n, seed)?;
    let psi = model::plane_wave_state(&p, &spec.bitstring()?)?;
    let h = model::build_in_basis(&p, psi.basis().clone())?;
    model::evolve(&psi, &h, t, 1e-12)
}

/// Correlations of `rho~` match the input on a few weak-coupling snapshots.
fn reproduction(tol: f64) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for (seed, t) in [(0, 2.0), (1, 5.0), (2, 10.0)] {
        let psi = quench_state(4, 3, 0.05, t, seed)?;
        let c2 = measure_two_point(&psi, 4)?;
        let c4 = measure_four_point_connected(&psi, 4)?;
        let rec = reconstruction::reconstruct(&c2, &c4)?;
        let rho = rec.to_mode_basis(&rec.assembled)?;
        let (r2, r4) = correlations::measure_density(&rho)?;
        worst = worst
            .max(linalg::max_abs_diff(r2.entries(), c2.entries()))
            .max(r4.max_abs_diff(&c4));
    }
    Ok(check("correlation reproduction", worst, tol))
}

fn random_density(modes: usize, rng: &mut ChaCha8Rng) -> Result<DensityMatrix> {
    let basis = FockBasis::shared(modes, None)?;
    let d = basis.dim();
    let mut rho = CMatrix::zeros(d, d);
    for n in 0..=modes {
        let members: Vec<usize> = (0..d).filter(|&k| basis.states()[k].count_ones() as usize == n).collect();
        let a = CMatrix::from_fn(members.len(), members.len(), |_, _| {
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let block = &a * a.adjoint();
        for (r, &i) in members.iter().enumerate() {
            for (c, &j) in members.iter().enumerate() {
                rho[(i, j)] = block[(r, c)];
            }
        }
    }
    let tr = linalg::trace(&rho);
    DensityMatrix::new(basis, rho / tr)
}

/// Diagrammatic decomposition agrees with the direct matrix elements.
fn decomposition() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let rho = random_density(2 + k % 3, &mut rng)?;
        let (c2, c4) = correlations::measure_density(&rho)?;
        let frame = correlations::diagonalize_two_point(&c2)?;
        let c4t = correlations::rotate_four_point(&c4, &frame)?;
        let direct = reconstruction::delta_rho(&c4t, &frame)?;
        let (i1, i2, i3) = reconstruction::delta_rho_decomposed(&c4t, &frame)?;
        let sum = i1 * C64::new(2.0, 0.0) + i2 * C64::new(4.0, 0.0) + i3;
        worst = worst.max(linalg::max_abs_diff(&direct, &sum));
    }
    Ok(check("decomposition identity", worst, 1e-12))
}

fn simplex() -> Check {
    let p = reconstruction::project_simplex(&[0.6, 0.5, -0.1]);
    let err = p
        .iter()
        .zip([0.55, 0.45, 0.0])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    check("simplex projection worked case", err, 1e-12)
}

fn gaussian_witness() -> Result<Check> {
    let mut worst: f64 = 0.0;
    for t in [0.0, 1.0, 7.0] {
        let psi = quench_state(4, 3, 0.0, t, 3)?;
        worst = worst.max(measure_four_point_connected(&psi, 4)?.max_abs());
    }
    Ok(check("free evolution stays Gaussian", worst, 1e-12))
}

fn krylov_vs_dense() -> Result<Check> {
    let p = HubbardParams::new(4, 1.0, 0.125, 0.7);
    let h = model::build_hamiltonian(&p, 3, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let amps = CVector::from_fn(h.dim(), |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    let psi = StateVector::new(h.basis().clone(), amps)?.normalized()?;
    let dense = Propagator::new(&h, 1e-12, EvolutionMethod::Dense)?.evolve(&psi, 3.0)?;
    let krylov = Propagator::new(&h, 1e-12, EvolutionMethod::Krylov)?.evolve(&psi, 3.0)?;
    Ok(check(
        "Krylov matches dense propagation",
        (dense.amplitudes() - krylov.amplitudes()).norm(),
        1e-9,
    ))
}

fn bell_measurement() -> Result<Check> {
    let basis = Arc::new(FockBasis::new(4, Some(2))?);
    let mut amps = CVector::zeros(basis.dim());
    let h = std::f64::consts::FRAC_1_SQRT_2;
    amps[basis.index_of(0b0101).expect("in sector")] = C64::new(h, 0.0);
    amps[basis.index_of(0b1010).expect("in sector")] = C64::new(0.0, h);
    let psi = StateVector::new(basis, amps)?;
    let plan = measurement::plan_bases(4, 1, 100_000)?;
    let records = measurement::run_plan(&psi, &plan, 2)?;
    let est = measurement::estimate_correlations(&records, 4, 1)?;
    let exact = measure_two_point(&psi, 4)?;
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let d = est.c2.get(i, j) - exact.get(i, j);
            let s = est.c2_se[(i, j)];
            let z = |x: f64, e: f64| if e > 0.0 { x.abs() / e } else { x.abs() * 1e12 };
            worst = worst.max(z(d.re, s.re)).max(z(d.im, s.im));
        }
    }
    Ok(check("protocol estimate within 3 sigma", worst, 3.0))
}

fn poisson_reference() -> Result<Check> {
    let opts = StatisticsOptions::default();
    let s = analysis::reference_distribution(ReferenceKind::Poisson, 100_000, 9, &opts)?;
    Ok(check(
        "Poisson reference mean gap ratio",
        (s.mean_r - analysis::POISSON_MEAN_R).abs(),
        0.005,
    ))
}

fn readout() -> Check {
    let x = measurement::readout(measurement::Axis::X);
    let y = measurement::readout(measurement::Axis::Y);
    Check {
        name: "rotation readout derivation",
        passed: x.0 != y.0 && (x.1.abs() - 1.0).abs() < 1e-12 && (y.1.abs() - 1.0).abs() < 1e-12,
        detail: format!("x rotation reads {:?} ({:+}), y rotation reads {:?} ({:+})", x.0, x.1, y.0, y.1),
    }
}

/// Run every check; `tol` bounds the reproduction residual.
pub fn run_suite(tol: f64) -> Vec<Check> {
    let wrap = |name: &'static str, r: Result<Check>| {
        r.unwrap_or_else(|e| Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        })
    };
    vec![
        wrap("correlation reproduction", reproduction(tol)),
        wrap("decomposition identity", decomposition()),
        simplex(),
        wrap("free evolution stays Gaussian", gaussian_witness()),
        wrap("Krylov matches dense propagation", krylov_vs_dense()),
        wrap("protocol estimate within 3 sigma", bell_measurement()),
        wrap("Poisson reference mean gap ratio", poisson_reference()),
        readout(),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn suite_passes() {
        for c in super::run_suite(1e-10) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
