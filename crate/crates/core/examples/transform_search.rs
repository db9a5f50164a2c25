//! Searching for A with det A = 1 such that A·J(x) is a P-matrix on the
//! whole rectangle, for a setup where J itself is not.

use mect::domain::ScanGrid;
use mect::error::Result;
use mect::forward::MectSetup;
use mect::linmap::{search_transform, SearchOptions, Strategy};
use mect::scan::{default_rectangle, scan};

fn main() -> Result<()> {
    let setup = MectSetup::kramers(&["bone", "iodine", "water"], &[58.0, 61.0, 91.0])?;
    let rect = default_rectangle(&setup);
    let grid = ScanGrid::default();
    let plain = scan(&setup, &rect, &grid, None)?;
    let failing: Vec<String> = plain.failing_minors().iter().map(|k| k.to_string()).collect();
    println!("untransformed: failing minors {failing:?}");

    for (strategy, budget) in [(Strategy::Adaptive, 100), (Strategy::Random, 1000)] {
        let outcome = search_transform(&setup, &rect, &grid, &SearchOptions { budget, strategy, seed: 7 })?;
        println!(
            "{strategy:?}: {} trials, {} passes, first pass at trial {:?}",
            outcome.trials, outcome.passes, outcome.first_pass
        );
        if let Some(cert) = &outcome.certificate {
            println!("  mu = {:.4e} at {:?}", cert.mu, cert.argmin);
            println!("  A = {}", cert.a.as_ref().expect("search certificates carry A"));
            let check = scan(&setup, &rect, &grid, cert.a.as_ref())?;
            println!("{}", check.minor_table());
        }
    }
    Ok(())
}
