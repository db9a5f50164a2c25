//! Exhaustive dual-energy sweeps over integer tube potentials 40..150 kVp:
//! where can the Jacobian vanish?

use mect::atten::MaterialSet;
use mect::domain::ScanGrid;
use mect::error::Result;
use mect::scan::{sweep_tube_potentials, Sampling, SweepCheck, SweepConfig};
use mect::spectra::EnergyGrid;

fn main() -> Result<()> {
    let config = SweepConfig {
        tp_min: 40,
        tp_max: 150,
        n: 2,
        check: SweepCheck::DetVanishes,
        sampling: Sampling::ExhaustivePairs,
        grid: ScanGrid::default(),
        filtration_mm_al: 2.5,
        energy_grid: EnergyGrid::default(),
    };
    for pair in [["bone", "water"], ["iodine", "water"]] {
        let result = sweep_tube_potentials(&MaterialSet::bundled(&pair)?, &config)?;
        let distinct: Vec<_> = result
            .rows
            .iter()
            .filter(|r| r.flag && r.tube_potentials[0] != r.tube_potentials[1])
            .collect();
        println!("{pair:?}: {}", result.summary());
        println!("  distinct pairs with vanishing det: {}", distinct.len());
        if let Some(first) = distinct.first() {
            println!("  e.g. {:?}", first.tube_potentials);
        }
    }

    let three = SweepConfig {
        n: 3,
        check: SweepCheck::PEverywhere,
        sampling: Sampling::Random { samples: 200, seed: 1 },
        grid: ScanGrid::new(9, 1)?,
        ..config
    };
    let result = sweep_tube_potentials(&MaterialSet::bundled(&["bone", "iodine", "water"])?, &three)?;
    println!("[bone, iodine, water], 200 random triples: {}", result.summary());
    Ok(())
}
