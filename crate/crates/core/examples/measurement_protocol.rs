//! Estimate two- and four-point correlations from simulated rotation-and-imaging shots.

use nongauss::correlations;
use nongauss::measurement;
use nongauss::model::{self, HubbardParams};

fn main() -> nongauss::Result<()> {
    let params = HubbardParams::new(4, 1.0, 0.125, 1.0);
    let spec = model::select_initial_state(&params, 3, 2)?;
    let psi0 = model::plane_wave_state(&params, &spec.bitstring()?)?;
    let h = model::build_in_basis(&params, psi0.basis().clone())?;
    let psi = model::evolve(&psi0, &h, 3.0, 1e-12)?;
    let rho = nongauss::fock::partial_trace(&psi, 4)?;

    let plan = measurement::plan_bases(4, 2, 20_000)?;
    println!(
        "{} bases ({} rotated), {} shots in total",
        plan.bases.len(),
        plan.rotated_count(),
        plan.total_shots()
    );
    for x in [measurement::Axis::X, measurement::Axis::Y] {
        let (reads, coef) = measurement::readout(x);
        println!("{x:?} rotation reads the {reads:?} component with coefficient {coef:+}");
    }

    let records = measurement::run_plan(&rho, &plan, 42)?;
    let est = measurement::estimate_correlations(&records, 4, 2)?;
    let c2 = correlations::measure_two_point(&psi, 4)?;
    let c4 = correlations::measure_four_point_connected(&psi, 4)?;
    let d2 = nongauss::linalg::max_abs_diff(est.c2.entries(), c2.entries());
    let d4 = est.c4.as_ref().map(|e| e.max_abs_diff(&c4)).unwrap_or(f64::NAN);
    println!("max |C2 estimate - exact| = {d2:.3e}");
    println!("max |C4 estimate - exact| = {d4:.3e} (exact max {:.3e})", c4.max_abs());
    Ok(())
}
