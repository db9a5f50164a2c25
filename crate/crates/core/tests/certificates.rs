//! Grid certificates, transform search, P-families and the non-injective
//! iodine fixtures, checked against independent recomputation.

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mect::atten::MaterialSet;
use mect::domain::{Rectangle, ScanGrid};
use mect::forward::{ForwardMap, LinearMap, MectSetup, Transformed};
use mect::inversion::{invert, verify_lipschitz, verify_norm_bound, verify_unique_inversion, FlippedMap, InversionOptions};
use mect::linmap::{injectivity_constant, search_transform, SearchOptions, Strategy};
use mect::pmatrix::{p_check, p_matrix_margin, MARGIN_TOL};
use mect::redundant::{certify_p_family, subsystem_map, AveragedMap};
use mect::scan::{default_rectangle, scan};
use mect::spectra::EnergyGrid;

fn search_fixture() -> MectSetup {
    // J fails only the 2×2 minor with row and column 1 deleted
    MectSetup::kramers(&["bone", "iodine", "water"], &[58.0, 61.0, 91.0]).unwrap()
}

#[test]
fn p_everywhere_excludes_vanishing_determinants() {
    let names = ["water", "bone", "iodine", "gadolinium"];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let m = rng.random_range(2..=3);
        let materials: Vec<&str> = names.choose_multiple(&mut rng, m).copied().collect();
        let tps: Vec<f64> = (0..m).map(|_| rng.random_range(40..=150) as f64).collect();
        let setup = MectSetup::kramers(&materials, &tps).unwrap();
        let r = scan(&setup, &default_rectangle(&setup), &ScanGrid::new(6, 1).unwrap(), None).unwrap();
        if r.flags.p_everywhere {
            assert!(!r.flags.det_sign_changes && !r.flags.det_vanishes, "{materials:?} {tps:?}");
        }
    }
}

#[test]
fn nested_lattices_widen_minor_ranges() {
    let setup = search_fixture();
    let rect = default_rectangle(&setup);
    let reports: Vec<_> = [3, 5, 9]
        .iter()
        .map(|&n| scan(&setup, &rect, &ScanGrid::new(n, 0).unwrap(), None).unwrap())
        .collect();
    for pair in reports.windows(2) {
        for (coarse, fine) in pair[0].minors.iter().zip(&pair[1].minors) {
            assert_eq!(coarse.deleted, fine.deleted);
            assert!(fine.min <= coarse.min && fine.max >= coarse.max, "{}", coarse.deleted);
        }
    }
}

#[test]
fn swapping_rows_repairs_negative_determinant() {
    let setup = MectSetup::kramers(&["bone", "water"], &[140.0, 80.0]).unwrap();
    let rect = default_rectangle(&setup);
    let grid = ScanGrid::default();
    let r = scan(&setup, &rect, &grid, None).unwrap();
    assert!(r.det().max < 0.0);
    let swapped = setup.select_spectra(&[1, 0]).unwrap();
    assert!(scan(&swapped, &rect, &grid, None).unwrap().flags.p_everywhere);
}

#[test]
fn determinant_sign_change_matches_fine_quadrature_at_corners() {
    let names = ["iodine", "water"];
    let tps = [50.0, 120.0];
    let setup = MectSetup::kramers(&names, &tps).unwrap();
    let rect = default_rectangle(&setup);
    let report = scan(&setup, &rect, &ScanGrid::default(), None).unwrap();
    assert!(report.flags.det_sign_changes);

    let set = MaterialSet::bundled(&names).unwrap();
    let fine = EnergyGrid::uniform(10.0, 150.0, 0.01).unwrap().with_edges(&set);
    let oracle = MectSetup::kramers_with(set, &tps, 2.5, &fine).unwrap();
    let dets: Vec<f64> = rect.lattice(2).iter().map(|c| oracle.jacobian(c).unwrap().determinant()).collect();
    println!("corner determinants {dets:?}");
    assert!(dets.iter().any(|d| *d > 0.0) && dets.iter().any(|d| *d < 0.0));
}

#[test]
fn sign_changing_setup_has_two_preimages() {
    let setup = MectSetup::kramers(&["iodine", "water"], &[50.0, 120.0]).unwrap();
    let rect = default_rectangle(&setup);
    let y = setup.transform(&[0.0, 0.625 * rect.upper()[1]]).unwrap();
    let u = verify_unique_inversion(&setup, &rect, &y, 100, 1, &InversionOptions::default()).unwrap();
    assert!(u.clusters.len() >= 2, "{:?}", u.clusters);
    for c in &u.clusters {
        let fc = setup.transform(c).unwrap();
        assert!(fc.iter().zip(&y).all(|(a, b)| (a - b).abs() <= 1e-9 * b.abs().max(1.0)));
    }
    let spread = (u.clusters[0][0] - u.clusters[1][0]).abs().max((u.clusters[0][1] - u.clusters[1][1]).abs());
    assert!(spread > 1e-3);
}

#[test]
fn flipping_preserves_certificates_and_is_an_involution() {
    let setup = MectSetup::kramers(&["bone", "water"], &[80.0, 140.0]).unwrap();
    let rect = default_rectangle(&setup);
    let grid = ScanGrid::new(6, 1).unwrap();
    assert!(scan(&setup, &rect, &grid, None).unwrap().flags.p_everywhere);
    for signs in [[1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]] {
        let flipped = FlippedMap::new(&setup, signs.to_vec()).unwrap();
        let domain = flipped.domain(&rect);
        assert!(scan(&flipped, &domain, &grid, None).unwrap().flags.p_everywhere, "{signs:?}");
        let twice = FlippedMap::new(&flipped, signs.to_vec()).unwrap();
        for x in rect.lattice(4) {
            let (a, b) = (setup.transform(&x).unwrap(), twice.evaluate(&x).unwrap());
            assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() <= 1e-15 * u.abs().max(1.0)));
        }
    }
}

fn mean_first_pass(strategy: Strategy, budget: usize) -> f64 {
    let setup = search_fixture();
    let rect = default_rectangle(&setup);
    let total: usize = (0..10u64)
        .map(|seed| {
            let o = search_transform(&setup, &rect, &ScanGrid::default(), &SearchOptions { budget, strategy, seed }).unwrap();
            // an unsuccessful search counts as one more than its budget
            o.first_pass.unwrap_or(budget + 1)
        })
        .sum();
    total as f64 / 10.0
}

#[test]
fn adaptive_search_needs_far_fewer_trials() {
    let adaptive = mean_first_pass(Strategy::Adaptive, 100);
    let random = mean_first_pass(Strategy::Random, 1000);
    println!("mean first passing trial: adaptive {adaptive}, random {random}");
    assert!(random >= 10.0 * adaptive, "adaptive {adaptive}, random {random}");
}

#[test]
fn search_certificate_is_valid_and_sharp() {
    let setup = search_fixture();
    let rect = default_rectangle(&setup);
    let grid = ScanGrid::default();
    let options = SearchOptions { budget: 60, strategy: Strategy::Adaptive, seed: 3 };
    let outcome = search_transform(&setup, &rect, &grid, &options).unwrap();
    let cert = outcome.certificate.as_ref().expect("adaptive search finds a transform");
    let a = cert.a.clone().unwrap();
    assert!((a.determinant() - 1.0).abs() < 1e-10);
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let nodes = rect.lattice(grid.nodes_per_axis);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let x = nodes.choose(&mut rng).unwrap();
        let aj = &a * setup.jacobian(x).unwrap();
        assert!(p_check(&(&aj - &id * cert.mu)).unwrap(), "not P at {x:?}");
    }
    let aj = &a * setup.jacobian(&cert.argmin).unwrap();
    let top = (0..n).map(|i| aj[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
    let past = cert.mu + 2.0 * MARGIN_TOL * (1.0 + top);
    assert!(!p_check(&(&aj - &id * past)).unwrap());

    let again = search_transform(&setup, &rect, &grid, &options).unwrap();
    assert_eq!(serde_json::to_string(&outcome).unwrap(), serde_json::to_string(&again).unwrap());
}

#[test]
fn transformed_and_plain_maps_invert_alike() {
    let setup = search_fixture();
    let rect = default_rectangle(&setup);
    let options = SearchOptions { budget: 30, strategy: Strategy::Adaptive, seed: 1 };
    let outcome = search_transform(&setup, &rect, &ScanGrid::default(), &options).unwrap();
    let a = outcome.certificate.unwrap().a.unwrap();
    let transformed = Transformed::new(&setup, a).unwrap();
    let opts = InversionOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let truth = rect.sample(&mut rng);
        for map in [&setup as &dyn ForwardMap, &transformed as &dyn ForwardMap] {
            let y = map.evaluate(&truth).unwrap();
            let r = invert(map, &rect, &y, &rect.center(), &opts).unwrap();
            let err = r.x.iter().zip(&truth).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            assert!(r.converged && err < 1e-8, "error {err:e}");
            let u = verify_unique_inversion(map, &rect, &y, 20, 2, &opts).unwrap();
            assert_eq!(u.clusters.len(), 1);
        }
    }
}

#[test]
fn p_family_dominates_and_covers() {
    let setup = MectSetup::kramers(&["bone", "water"], &[60.0, 90.0, 140.0]).unwrap();
    let rect = default_rectangle(&setup);
    let cert = certify_p_family(&setup, &rect, &ScanGrid::new(4, 1).unwrap(), 2)
        .unwrap()
        .expect("bone/water subsystems are P");

    let global = ScanGrid::new(cert.grid.nodes_per_axis, cert.grid.refinement_levels).unwrap();
    for k in &cert.used {
        let single = injectivity_constant(&subsystem_map(&setup, k).unwrap(), &rect, &global, None).unwrap();
        assert!(cert.mu >= single - 1e-12, "{k}: family {} < single {single}", cert.mu);
    }

    for x in rect.lattice(cert.grid.nodes_per_axis) {
        let covered = cert
            .assignments
            .iter()
            .any(|a| cert.cover[a.alpha].contains(&x, 1e-12 * rect.widths().iter().fold(0.0, |m, w| w.max(m))));
        assert!(covered, "{x:?} is in no assigned element");
    }

    // the certified property is the shifted P-function form; the Euclidean
    // bound is only reported (see the shear counterexample below)
    let averaged = AveragedMap::new(&setup, &cert.used).unwrap();
    let shifted = verify_lipschitz(&averaged, &rect, None, cert.bound, 10_000, 4).unwrap();
    let norm = verify_norm_bound(&averaged, &rect, cert.bound, 10_000, 4).unwrap();
    println!(
        "family mu {:.4e}, bound {:.4e}: shifted P-function violations {}, norm bound violations {} (min ratio {:.4e})",
        cert.mu, cert.bound, shifted.p_function_violations, norm.violations, norm.min_ratio
    );
    assert_eq!(cert.used.len(), 1);
    assert_eq!(shifted.p_function_violations, 0);
}

/// `J = [[1, 1], [0, 1]]` has margin 1, yet `Δx = (1, −1)` gives `ΔI = (0, −1)`:
/// neither the componentwise nor the Euclidean lower bound holds, while the
/// shifted P-function form does.
#[test]
fn componentwise_bounds_fail_for_a_shear() {
    let map = LinearMap { matrix: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]) };
    let rect = Rectangle::from_origin(vec![1.0, 1.0]).unwrap();
    let mu = p_matrix_margin(&map.matrix).unwrap();
    // det = (1 − λ)² meets the minor threshold about 1e-6 below 1
    assert!((mu - 1.0).abs() < 1e-5);
    let dx = [1.0, -1.0];
    let di = &map.matrix * nalgebra::DVector::from_column_slice(&dx);
    assert_eq!(di[0], 0.0);
    assert!(di.norm() < mu * 2f64.sqrt());
    let r = verify_lipschitz(&map, &rect, None, mu, 10_000, 6).unwrap();
    assert!(r.violations > 0);
    assert!(verify_norm_bound(&map, &rect, mu, 10_000, 6).unwrap().violations > 0);
    assert_eq!(r.p_function_violations, 0);
}
