//! Overdetermined systems: P-families over a cover and the averaged map.

use mect::domain::ScanGrid;
use mect::error::Result;
use mect::fixtures::staircase_pair;
use mect::forward::MectSetup;
use mect::inversion::verify_norm_bound;
use mect::redundant::{certify_p_family, AveragedMap};
use mect::scan::default_rectangle;

fn main() -> Result<()> {
    let eps = 0.01;
    let (pair, rect) = staircase_pair(3, eps)?;
    let cert = certify_p_family(&pair, &rect, &ScanGrid::new(5, 0)?, 6)?.expect("staircase is a P-family");
    for s in &cert.subsystems {
        println!("staircase {}: mu {:.6}", s.k, s.mu);
    }
    println!("family mu {:.9}, mu0 {:.6}, bound {:.6}", cert.mu, cert.mu0, cert.bound);
    let avg = AveragedMap::new(&pair, &cert.used)?;
    let r = verify_norm_bound(&avg, &rect, cert.bound, 10_000, 3)?;
    println!("averaged map: min ratio {:.6}, violations {}", r.min_ratio, r.violations);

    let setup = MectSetup::kramers(&["bone", "water"], &[60.0, 90.0, 140.0])?;
    let rect = default_rectangle(&setup);
    let cert = certify_p_family(&setup, &rect, &ScanGrid::new(6, 1)?, 4)?.expect("bone/water subsystems are P");
    for s in &cert.subsystems {
        println!("subsystem {}: P {}, mu {:.4e}", s.k, s.p_everywhere, s.mu);
    }
    let used: Vec<String> = cert.used.iter().map(|k| k.to_string()).collect();
    println!("family mu {:.4e} using {used:?}, bound {:.4e}", cert.mu, cert.bound);
    Ok(())
}
