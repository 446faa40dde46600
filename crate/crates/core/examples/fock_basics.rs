//! Fermionic Fock space: bitstring bases, Jordan-Wigner signs and reduced states.

use nongauss::fock::{self, Bitstring, FockBasis, Ladder, Spin, StateVector};
use nongauss::linalg::C64;

fn main() -> nongauss::Result<()> {
    // two sites, four modes, two particles
    let basis = FockBasis::shared(4, Some(2))?;
    println!("{} states with 2 particles in 4 modes:", basis.dim());
    for k in 0..basis.dim() {
        println!("  {}", basis.state(k));
    }

    // occupations print as n_0 n_1 ...; the sign counts occupied modes above the target
    let (bits, sign) = fock::ladder_bits(0b0100, 0, Ladder::Create).expect("mode 0 empty");
    println!(
        "c†_0 |{}> = {sign:+} |{}>",
        Bitstring::new(0b0100, 4)?,
        Bitstring::new(bits, 4)?
    );

    let up = fock::mode_index(1, Spin::Up);
    let down = fock::mode_index(1, Spin::Down);
    println!("site 1 holds modes {up} (up) and {down} (down)");

    // singlet-like superposition over the two sites
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut amps = nongauss::linalg::CVector::zeros(basis.dim());
    amps[basis.index_of(0b1001).expect("in sector")] = C64::new(h, 0.0);
    amps[basis.index_of(0b0110).expect("in sector")] = C64::new(-h, 0.0);
    let psi = StateVector::new(basis, amps)?;
    let rho = fock::partial_trace(&psi, 2)?;
    println!("site-0 reduced state: purity {:.3}, eigenvalues {:?}", rho.purity(), rho.eigenvalues()?);
    Ok(())
}
