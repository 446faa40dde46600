//! Reconstruct a subsystem density matrix from its two- and four-point correlations.

use nongauss::{analysis, correlations, fock, model, reconstruction};
use nongauss::linalg;
use nongauss::model::HubbardParams;

fn main() -> nongauss::Result<()> {
    let params = HubbardParams::new(5, 1.0, 0.125, 0.05);
    let spec = model::select_initial_state(&params, 4, 1)?;
    let psi0 = model::plane_wave_state(&params, &spec.bitstring()?)?;
    let h = model::build_in_basis(&params, psi0.basis().clone())?;
    let psi = model::evolve(&psi0, &h, 10.0, 1e-12)?;

    let modes = 4;
    let exact = fock::partial_trace(&psi, modes)?;
    let c2 = correlations::measure_two_point(&psi, modes)?;
    let c4 = correlations::measure_four_point_connected(&psi, modes)?;
    let rec = reconstruction::reconstruct(&c2, &c4)?;

    let assembled = rec.to_mode_basis(&rec.assembled)?;
    let projected = rec.to_mode_basis(&rec.projected)?;
    let gaussian = rec.to_mode_basis(&rec.gaussian_density()?)?;
    let (r2, r4) = correlations::measure_density(&assembled)?;
    println!("max |C4~| = {:.3e} (warning above {})", rec.max_rotated_c4, reconstruction::ANSATZ_WARNING);
    println!("residuals: C2 {:.2e}, C4 {:.2e}", linalg::max_abs_diff(r2.entries(), c2.entries()), r4.max_abs_diff(&c4));
    println!("negativity before projection {:.2e}", rec.negativity()?);
    println!("theta exact {:.4e}, reconstructed {:.4e}", analysis::non_gaussianity(&exact)?, analysis::non_gaussianity(&assembled)?);

    let cut = analysis::DEFAULT_CUTOFF;
    let e = analysis::entanglement_spectrum(&exact, cut)?;
    let levels = [0, 1, 2, 3];
    for (name, rho) in [("gaussian", &gaussian), ("projected", &projected)] {
        let s = analysis::entanglement_spectrum(rho, cut)?;
        let err: Vec<String> = analysis::spectral_error(&e, &s, &levels)
            .iter()
            .map(|d| d.map_or("-".into(), |d| format!("{d:.2e}")))
            .collect();
        println!("{name:>9} spectral error at levels {levels:?}: {}", err.join(" "));
    }
    Ok(())
}
