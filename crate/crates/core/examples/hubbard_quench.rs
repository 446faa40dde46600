//! Interaction quench of a momentum Fock state in the Hubbard chain with next-nearest hopping.

use nongauss::correlations;
use nongauss::model::{self, HubbardParams};

fn main() -> nongauss::Result<()> {
    let params = HubbardParams::new(5, 1.0, 0.125, 0.5);
    let spec = model::select_initial_state(&params, 4, 7)?;
    println!("initial momentum occupation {}", spec.occupation);
    let psi0 = model::plane_wave_state(&params, &spec.bitstring()?)?;
    let h = model::build_in_basis(&params, psi0.basis().clone())?;
    println!("sector dimension {}, {} nonzeros", h.dim(), h.nnz());

    let e0 = h.energy(&psi0);
    println!("{:>6} {:>12} {:>12} {:>12}", "t", "energy", "n_A", "max|C4|");
    for t in [0.0, 0.5, 1.0, 2.0, 5.0, 10.0] {
        let psi = model::evolve(&psi0, &h, t, 1e-12)?;
        let c2 = correlations::measure_two_point(&psi, 4)?;
        let c4 = correlations::measure_four_point_connected(&psi, 4)?;
        println!("{t:>6.1} {:>12.8} {:>12.6} {:>12.3e}", h.energy(&psi) - e0, c2.trace(), c4.max_abs());
    }
    Ok(())
}
