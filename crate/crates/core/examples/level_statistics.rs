//! Sector-resolved gap-ratio statistics of the entanglement spectrum after a quench,
//! against Poisson and GUE references.

use nongauss::analysis::{self, ReferenceKind, SectorResolution, StatisticsOptions};
use nongauss::model::{self, HubbardParams};
use nongauss::{correlations, fock, reconstruction};

fn main() -> nongauss::Result<()> {
    let opts = StatisticsOptions::default();
    for kind in [ReferenceKind::Poisson, ReferenceKind::Gue] {
        let r = analysis::reference_distribution(kind, 20_000, 1, &opts)?;
        println!("{kind:?} reference <r> = {:.4}", r.mean_r);
    }

    let params = HubbardParams::new(5, 1.0, 0.125, 1.0);
    let sectors = analysis::build_sectors(3, SectorResolution::NumberSpin)?;
    let cut = analysis::COMPARISON_CUTOFF;
    println!("{:>7} {:>8} {:>8}", "t", "exact", "recon");
    for t in [0.01, 0.1, 1.0, 10.0, 100.0] {
        let mut exact = Vec::new();
        let mut recon = Vec::new();
        for seed in 0..10 {
            let spec = model::select_initial_state(&params, 4, seed)?;
            let psi0 = model::plane_wave_state(&params, &spec.bitstring()?)?;
            let h = model::build_in_basis(&params, psi0.basis().clone())?;
            let psi = model::evolve(&psi0, &h, t, 1e-12)?;
            let rho = fock::partial_trace(&psi, 6)?;
            let rec = reconstruction::reconstruct(
                &correlations::measure_two_point(&psi, 6)?,
                &correlations::measure_four_point_connected(&psi, 6)?,
            )?;
            exact.extend(analysis::sector_spectra(&rho, &sectors, cut)?);
            recon.extend(analysis::sector_spectra(&rec.to_mode_basis(&rec.projected)?, &sectors, cut)?);
        }
        let e = analysis::gap_statistics(&exact, &opts)?;
        let r = analysis::gap_statistics(&recon, &opts)?;
        println!("{t:>7} {:>8.3} {:>8.3}", e.mean_r, r.mean_r);
    }
    Ok(())
}
