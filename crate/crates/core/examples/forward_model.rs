//! Kramers spectra, the transform I(x) and its Jacobian for a dual-energy
//! bone/water setup, with a quadrature check against a 0.01 keV grid.

use mect::atten::MaterialSet;
use mect::error::Result;
use mect::forward::MectSetup;
use mect::spectra::EnergyGrid;

fn main() -> Result<()> {
    let tps = [80.0, 140.0];
    let setup = MectSetup::kramers(&["bone", "water"], &tps)?;
    for (tp, s) in tps.iter().zip(setup.spectra()) {
        println!("{tp} kVp: mean energy {:.2} keV, integral {:.15}", s.mean_energy(), s.integral());
    }

    let x = [1.0, 10.0];
    let (y, j) = setup.transform_and_jacobian(&x)?;
    println!("I({x:?}) = {y:?}");
    println!("J = {j}");
    println!("I(0) = {:?}", setup.transform(&[0.0, 0.0])?);

    let fine = EnergyGrid::uniform(10.0, 150.0, 0.01)?;
    let materials = MaterialSet::bundled(&["bone", "water"])?;
    let oracle = MectSetup::kramers_with(materials.clone(), &tps, 2.5, &fine.with_edges(&materials))?;
    let reference = oracle.transform(&x)?;
    for (a, b) in y.iter().zip(&reference) {
        println!("1 keV {a:.10} vs 0.01 keV {b:.10}: relative difference {:.2e}", (a - b).abs() / b);
    }
    Ok(())
}
