//! Minor extrema of J over the default rectangle for a three-material
//! setup, and the boundary-only check on an analytic map.

use mect::domain::ScanGrid;
use mect::error::Result;
use mect::fixtures::BoundaryOnlyP;
use mect::forward::MectSetup;
use mect::scan::{boundary_scan, default_rectangle, scan};

fn main() -> Result<()> {
    for tps in [[40.0, 60.0, 140.0], [58.0, 61.0, 91.0]] {
        let setup = MectSetup::kramers(&["bone", "iodine", "water"], &tps)?;
        let rect = default_rectangle(&setup);
        let report = scan(&setup, &rect, &ScanGrid::default(), None)?;
        println!("tube potentials {tps:?}, upper bounds {:?}", rect.upper());
        println!("{}", report.minor_table());
        println!("{:?}\n", report.flags);
    }

    let rect = BoundaryOnlyP::rectangle();
    let report = boundary_scan(&BoundaryOnlyP, &rect, &ScanGrid::new(21, 2)?, None)?;
    println!("analytic map: det min {:.3}, p_everywhere {}, boundary_p {:?}",
        report.det().min, report.flags.p_everywhere, report.flags.boundary_p);
    Ok(())
}
