//! Recovering line integrals from measurements, and a multi-start probe
//! that exposes non-injectivity when the Jacobian determinant changes sign.

use mect::error::Result;
use mect::forward::MectSetup;
use mect::inversion::{invert, verify_unique_inversion, InversionOptions, Method};
use mect::scan::default_rectangle;

fn main() -> Result<()> {
    let setup = MectSetup::kramers(&["bone", "water"], &[80.0, 140.0])?;
    let rect = default_rectangle(&setup);
    let truth = [0.2, 1.2];
    let y = setup.transform(&truth)?;
    for method in [Method::Newton, Method::GaussSeidel] {
        let options = InversionOptions { method, tol: 1e-13, max_iter: 200 };
        let r = invert(&setup, &rect, &y, &rect.center(), &options)?;
        println!("{method:?}: x = {:?}, residual {:.1e}, {} iterations", r.x, r.residual, r.iterations);
    }
    let u = verify_unique_inversion(&setup, &rect, &y, 100, 1, &InversionOptions::default())?;
    println!("bone/water: {} of 100 starts converged, {} cluster(s)", u.converged, u.clusters.len());

    // det J changes sign for this iodine/water pair; two preimages exist
    let setup = MectSetup::kramers(&["iodine", "water"], &[50.0, 120.0])?;
    let rect = default_rectangle(&setup);
    let y = setup.transform(&[0.0, rect.upper()[1] * 0.625])?;
    let u = verify_unique_inversion(&setup, &rect, &y, 100, 1, &InversionOptions::default())?;
    println!("iodine/water: {} cluster(s):", u.clusters.len());
    for c in &u.clusters {
        println!("  x = {c:?} -> I(x) = {:?}", setup.transform(c)?);
    }
    Ok(())
}
