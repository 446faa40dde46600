//! Quench from a position Fock state after free pre-evolution to full reduced rank.

use nongauss::model::{self, HubbardParams};
use nongauss::{correlations, reconstruction};

fn main() -> nongauss::Result<()> {
    let params = HubbardParams::new(5, 1.0, 0.125, 0.5);
    for t0 in [0.0, 5.0] {
        let spec = model::select_position_state(&params, 4, t0, 3)?;
        match model::prepare_position_quench(&params, &spec, 2, 1e-12) {
            Err(e) => println!("t0 = {t0}: {e}"),
            Ok(psi0) => {
                println!("t0 = {t0}: prepared from {}", spec.occupation);
                let h = model::build_in_basis(&params, psi0.basis().clone())?;
                for t in [0.0, 1.0, 5.0] {
                    let psi = model::evolve(&psi0, &h, t, 1e-12)?;
                    let rec = reconstruction::reconstruct(
                        &correlations::measure_two_point(&psi, 4)?,
                        &correlations::measure_four_point_connected(&psi, 4)?,
                    )?;
                    println!("  t = {t}: max |C4~| {:.3e}, negativity {:.2e}", rec.max_rotated_c4, rec.negativity()?);
                }
            }
        }
    }
    Ok(())
}
