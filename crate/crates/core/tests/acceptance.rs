//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line with
//! the measured quantities, then asserts.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use itertools::Itertools;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mect::atten::MaterialSet;
use mect::domain::ScanGrid;
use mect::fixtures::staircase_pair;
use mect::forward::{ForwardMap, MectSetup};
use mect::inversion::{verify_lipschitz, verify_norm_bound, verify_unique_inversion, InversionOptions};
use mect::linmap::{adaptive_candidate, certify};
use mect::pmatrix::{
    find_sign_reversal_witness, is_p_matrix, minor, p_check, p_matrix_margin, principal_minor, product_minor,
    MinorIndex,
};
use mect::redundant::{certify_p_family, AveragedMap};
use mect::scan::{default_rectangle, scan, sweep_tube_potentials, Sampling, SweepCheck, SweepConfig};
use mect::spectra::EnergyGrid;

fn verdict(n: usize, pass: bool, detail: impl AsRef<str>) {
    println!("criterion {n}: {} {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    assert!(pass, "criterion {n} failed: {}", detail.as_ref());
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_matrix(n: usize, diag_shift: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    if diag_shift > 0.0 {
        for i in 0..n {
            a[(i, i)] += rng.random_range(0.0..diag_shift);
        }
    }
    a
}

/// P test by explicit submatrix determinants, independent of the library.
fn oracle_is_p(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    (1..=n).all(|k| {
        (0..n).combinations(k).all(|keep| {
            let sub = DMatrix::from_fn(k, k, |r, c| a[(keep[r], keep[c])]);
            sub.determinant() > 0.0
        })
    })
}

fn bundled_setups() -> Vec<(&'static str, MectSetup)> {
    vec![
        ("bone/water", MectSetup::kramers(&["bone", "water"], &[80.0, 140.0]).unwrap()),
        ("bone/iodine/water", MectSetup::kramers(&["bone", "iodine", "water"], &[40.0, 60.0, 140.0]).unwrap()),
        (
            "gadolinium/bone/iodine/water",
            MectSetup::kramers(&["gadolinium", "bone", "iodine", "water"], &[40.0, 55.0, 80.0, 140.0]).unwrap(),
        ),
    ]
}

#[test]
fn criterion_01_jacobian_matches_finite_differences() {
    let t = Instant::now();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut r = rng(1);
    for (_, setup) in bundled_setups() {
        let rect = default_rectangle(&setup);
        for _ in 0..100 {
            let mut x = rect.sample(&mut r);
            for (v, u) in x.iter_mut().zip(rect.upper()) {
                *v = v.clamp(h, u - h);
            }
            let j = setup.jacobian(&x).unwrap();
            let scale = j.amax();
            for c in 0..x.len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[c] += h;
                xm[c] -= h;
                let (fp, fm) = (setup.transform(&xp).unwrap(), setup.transform(&xm).unwrap());
                for row in 0..fp.len() {
                    let fd = (fp[row] - fm[row]) / (2.0 * h);
                    worst = worst.max((fd - j[(row, c)]).abs() / scale);
                }
            }
        }
    }
    let elapsed = t.elapsed();
    verdict(
        1,
        worst < 1e-6 && elapsed < Duration::from_secs(10),
        format!("max relative error {worst:.2e} over 3 setups x 100 points, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_02_quadrature_matches_fine_oracle() {
    let t = Instant::now();
    let materials = MaterialSet::bundled(&["bone", "water"]).unwrap();
    let fine = EnergyGrid::uniform(10.0, 150.0, 0.01).unwrap().with_edges(&materials);
    let oracle = MectSetup::kramers_with(materials, &[80.0, 140.0], 2.5, &fine).unwrap();
    let setup = MectSetup::kramers(&["bone", "water"], &[80.0, 140.0]).unwrap();
    let rect = default_rectangle(&setup);
    let mut r = rng(2);
    let mut points: Vec<Vec<f64>> = (0..20).map(|_| rect.sample(&mut r)).collect();
    points.push(vec![1.0, 10.0]);
    let mut worst = 0.0f64;
    for x in &points {
        let (a, b) = (setup.transform(x).unwrap(), oracle.transform(x).unwrap());
        for (u, v) in a.iter().zip(&b) {
            if *v != 0.0 {
                worst = worst.max((u - v).abs() / v.abs());
            }
        }
    }
    let elapsed = t.elapsed();
    verdict(
        2,
        worst < 1e-4 && elapsed < Duration::from_secs(30),
        format!("bone/water (80,140): max relative error {worst:.2e} at {} points, {elapsed:.2?}", points.len()),
    );
}

fn crafted_matrices() -> Vec<DMatrix<f64>> {
    let m = |n: usize, v: &[f64]| DMatrix::from_row_slice(n, n, v);
    let tridiag = m(3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]);
    let flip = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0, 1.0]));
    let mut skew5 = DMatrix::identity(5, 5);
    let mut neg5 = DMatrix::identity(5, 5);
    for i in 0..4 {
        skew5[(i, i + 1)] = 0.7;
        skew5[(i + 1, i)] = -0.7;
        neg5[(i, i + 1)] = 0.1;
    }
    neg5[(3, 3)] = -0.5;
    vec![
        DMatrix::identity(3, 3),
        -DMatrix::identity(3, 3),
        m(2, &[0.0, 1.0, -1.0, 0.0]),
        m(2, &[1.0, 2.0, 0.0, 1.0]),
        m(2, &[1.0, -3.0, 3.0, 1.0]),
        m(2, &[1.0, 2.0, 2.0, 1.0]),
        m(2, &[-1.0, 0.0, 0.0, -1.0]),
        m(2, &[1.0, 1.0, 1.0, 1.0]),
        DMatrix::zeros(3, 3),
        tridiag.clone(),
        m(3, &[1.0, 2.0, 0.0, 0.0, 1.0, 2.0, 2.0, 0.0, 1.0]),
        m(3, &[1.0, -3.0, 0.0, 0.0, 1.0, -3.0, -3.0, 0.0, 1.0]),
        m(4, &[0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0]),
        m(4, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0]),
        m(3, &[1.0, 0.0, 0.0, 0.0, 1e-3, 0.0, 0.0, 0.0, 1e3]),
        &flip * &tridiag * &flip,
        m(3, &[1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
        skew5,
        neg5,
        m(2, &[1.0, 1.0, 1.0, 1.0 + 1e-6]),
    ]
}

#[test]
fn criterion_03_minor_test_agrees_with_witness_search() {
    let t = Instant::now();
    let mut r = rng(3);
    let mut cases: Vec<DMatrix<f64>> = (0..1000).map(|_| uniform_matrix(3, 3.0, &mut r)).collect();
    cases.extend((0..200).map(|_| uniform_matrix(4, 4.0, &mut r)));
    let crafted = crafted_matrices();
    assert_eq!(crafted.len(), 20);
    cases.extend(crafted);
    let (mut disagree, mut p_count) = (0, 0);
    for a in &cases {
        let is_p = is_p_matrix(a).unwrap().is_p;
        let witness = find_sign_reversal_witness(a).unwrap();
        p_count += is_p as usize;
        if is_p == witness.is_some() {
            disagree += 1;
            println!("  disagreement: P = {is_p}, matrix {a}");
        }
    }
    let elapsed = t.elapsed();
    verdict(
        3,
        disagree == 0 && elapsed < Duration::from_secs(60),
        format!("{} matrices ({p_count} P), {disagree} disagreements, {elapsed:.2?}", cases.len()),
    );
}

#[test]
fn criterion_04_cauchy_binet() {
    let mut r = rng(4);
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for pair in 0..500 {
        let n = if pair % 2 == 0 { 3 } else { 4 };
        let a = uniform_matrix(n, 0.0, &mut r);
        let j = uniform_matrix(n, 0.0, &mut r);
        let aj = &a * &j;
        for size in 0..=n {
            for (k, l) in (0..n).combinations(size).cartesian_product((0..n).combinations(size).collect_vec()) {
                let (k, l) = (MinorIndex::from_zero_based(&k), MinorIndex::from_zero_based(&l));
                let direct = minor(&aj, k, l).unwrap();
                let sum = product_minor(&a, &j, k, l).unwrap();
                worst = worst.max((direct - sum).abs() / direct.abs().max(1.0));
                checked += 1;
            }
        }
    }
    let mut adaptive_worst = 0.0f64;
    for trial in 0..100u64 {
        let n = 3 + (trial % 2) as usize;
        let i = 1 + (trial as usize % n);
        let a = adaptive_candidate(n, i, trial).unwrap().a;
        let j = uniform_matrix(n, 0.0, &mut r).map(f64::abs);
        let aj = &a * &j;
        for k in MinorIndex::table_order(n).into_iter().filter(|k| !k.contains(i - 1)) {
            let (x, y) = (principal_minor(&aj, k).unwrap(), principal_minor(&j, k).unwrap());
            adaptive_worst = adaptive_worst.max((x - y).abs() / y.abs().max(1.0));
        }
    }
    verdict(
        4,
        worst < 1e-10 && adaptive_worst < 1e-10,
        format!("{checked} minor identities, max relative error {worst:.2e}; adaptive family preservation error {adaptive_worst:.2e}"),
    );
}

/// Last passing point of a sweep with step 1e-4, by the independent oracle.
fn swept_margin(a: &DMatrix<f64>) -> f64 {
    let step = 1e-4;
    let n = a.nrows();
    let mut lambda = 0.0;
    loop {
        let next = lambda + step;
        let shifted = a - DMatrix::identity(n, n) * next;
        if !oracle_is_p(&shifted) {
            return lambda;
        }
        lambda = next;
    }
}

#[test]
fn criterion_05_margin_certification() {
    let mut r = rng(5);
    let (mut bad, mut worst, mut found) = (0, 0.0f64, 0);
    while found < 100 {
        let n = 2 + found % 3;
        let a = uniform_matrix(n, 3.0, &mut r);
        if !oracle_is_p(&a) {
            continue;
        }
        found += 1;
        let lambda = p_matrix_margin(&a).unwrap();
        let id = DMatrix::identity(n, n);
        let inside = p_check(&(&a - &id * lambda)).unwrap();
        let outside = p_check(&(&a - &id * (lambda + 1e-6 * (1.0 + a.norm())))).unwrap();
        let gap = (lambda - swept_margin(&a)).abs();
        worst = worst.max(gap);
        if !inside || outside || gap >= 1e-4 {
            bad += 1;
        }
    }
    verdict(5, bad == 0, format!("100 P-matrices, {bad} failures, max gap to sweep {worst:.2e}"));
}

#[test]
fn criterion_06_dual_energy_inversion_is_unique() {
    let t = Instant::now();
    let setup = MectSetup::kramers(&["bone", "water"], &[80.0, 140.0]).unwrap();
    let rect = default_rectangle(&setup);
    let report = scan(&setup, &rect, &ScanGrid::default(), None).unwrap();
    assert!(report.det().min > 0.0);
    let mut r = rng(6);
    let (mut multi, mut worst) = (0, 0.0f64);
    for target in 0..20 {
        let truth = rect.sample(&mut r);
        let y = setup.transform(&truth).unwrap();
        let u = verify_unique_inversion(&setup, &rect, &y, 100, target, &InversionOptions::default()).unwrap();
        multi += (u.clusters.len() != 1) as usize;
        for c in &u.clusters {
            let err = c.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(err);
        }
    }
    let elapsed = t.elapsed();
    verdict(
        6,
        multi == 0 && worst < 1e-8 && elapsed < Duration::from_secs(120),
        format!(
            "bone/water (80,140), det min {:.3e}: {multi} of 20 targets with != 1 cluster, round-trip error {worst:.2e}, {elapsed:.2?}",
            report.det().min
        ),
    );
}

#[test]
fn criterion_07_dual_energy_p_iff_positive_det() {
    let names = ["water", "bone", "iodine", "gadolinium"];
    let mut r = rng(7);
    let (mut mismatches, mut p_count) = (0, 0);
    for _ in 0..50 {
        let i = r.random_range(0..names.len());
        let j = (i + r.random_range(1..names.len())) % names.len();
        let tp = [r.random_range(40..=150) as f64, r.random_range(40..=150) as f64];
        let setup = MectSetup::kramers(&[names[i], names[j]], &tp).unwrap();
        let report = scan(&setup, &default_rectangle(&setup), &ScanGrid::default(), None).unwrap();
        p_count += report.flags.p_everywhere as usize;
        if report.flags.p_everywhere != (report.det().min > 0.0) {
            mismatches += 1;
            println!("  mismatch: {}/{} at {tp:?}, det min {:e}", names[i], names[j], report.det().min);
        }
    }
    verdict(7, mismatches == 0, format!("50 setups ({p_count} P everywhere), {mismatches} mismatches"));
}

#[test]
fn criterion_08_componentwise_lipschitz_bound() {
    let setup = MectSetup::kramers(&["bone", "water"], &[80.0, 140.0]).unwrap();
    let rect = default_rectangle(&setup);
    let cert = certify(&setup, &rect, &ScanGrid::default(), None).unwrap();
    assert!(cert.mu > 0.0);
    let r = verify_lipschitz(&setup, &rect, None, cert.mu, 10_000, 8).unwrap();
    verdict(
        8,
        r.violations == 0 && r.inverse_violations == 0,
        format!(
            "bone/water (80,140), mu {:.4e}: {} componentwise and {} inverse violations in {} pairs \
             (min ratio {:.3e}); P-function form violations {}",
            cert.mu, r.violations, r.inverse_violations, r.pairs, r.min_ratio, r.p_function_violations
        ),
    );
}

#[test]
fn criterion_09_staircase_family() {
    let eps = 0.01;
    let (pair, rect) = staircase_pair(3, eps).unwrap();
    let cert = certify_p_family(&pair, &rect, &ScanGrid::new(5, 0).unwrap(), 6)
        .unwrap()
        .expect("staircase pair is a P-family");
    let per_function_ok = cert.subsystems.iter().all(|s| (s.mu - eps).abs() < 1e-9);
    let expected = (1.0 - eps) / 2.0 + eps;
    let avg = AveragedMap::new(&pair, &cert.used).unwrap();
    let r = verify_norm_bound(&avg, &rect, expected, 10_000, 9).unwrap();
    let pass = (cert.mu - 1.0).abs() < 1e-9
        && per_function_ok
        && cert.used.len() == 2
        && (cert.mu0 - eps).abs() < 1e-9
        && (cert.bound - expected).abs() < 1e-9
        && r.violations == 0;
    let constants: Vec<f64> = cert.subsystems.iter().map(|s| s.mu).collect();
    verdict(
        9,
        pass,
        format!(
            "family mu {:.12}, per-function {constants:?}, bound {:.6}, averaged map min ratio {:.6}, {} violations",
            cert.mu, cert.bound, r.min_ratio, r.violations
        ),
    );
}

fn exhaustive(materials: &[&str]) -> mect::scan::SweepResult {
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
    sweep_tube_potentials(&MaterialSet::bundled(materials).unwrap(), &config).unwrap()
}

#[test]
fn criterion_10_tube_potential_sweeps() {
    let t = Instant::now();
    let split = |res: &mect::scan::SweepResult| {
        let distinct = res.rows.iter().filter(|r| r.tube_potentials[0] != r.tube_potentials[1]);
        let identical = res.rows.iter().filter(|r| r.tube_potentials[0] == r.tube_potentials[1]);
        (
            distinct.filter(|r| r.flag).count(),
            identical.clone().filter(|r| r.flag).count(),
            identical.count(),
        )
    };
    let (bw_hits, bw_same, bw_same_total) = split(&exhaustive(&["bone", "water"]));
    let (iw_hits, iw_same, iw_same_total) = split(&exhaustive(&["iodine", "water"]));
    let elapsed = t.elapsed();
    verdict(
        10,
        bw_hits == 0
            && iw_hits >= 1
            && bw_same == bw_same_total
            && iw_same == iw_same_total
            && elapsed < Duration::from_secs(1200),
        format!(
            "bone/water distinct det-vanishing {bw_hits}, iodine/water {iw_hits}; identical flagged {bw_same}/{bw_same_total} and {iw_same}/{iw_same_total}, {elapsed:.2?}"
        ),
    );
}

fn run_cli(dir: &Path, args: &[&str], out: &Path) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_mect"))
        .current_dir(dir)
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{args:?}: {}", String::from_utf8_lossy(&status.stderr));
    std::fs::read(out).unwrap()
}

#[test]
fn criterion_11_cli_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{
  "materials": ["bone", "water"],
  "tube_potentials": [80, 140],
  "grid": {"nodes_per_axis": 6, "refinement_levels": 1},
  "budget": 20,
  "sweep": {"tp_min": 70, "tp_max": 80, "check": "det_vanishes", "sampling": "exhaustive_pairs"},
  "inversion": {"method": "newton", "tol": 1e-12, "max_iter": 100, "y": [0.5, 0.4], "starts": 10}
}"#,
    )
    .unwrap();
    let family = dir.path().join("family.json");
    std::fs::write(
        &family,
        r#"{"materials": ["bone", "water"], "tube_potentials": [60, 90, 140],
            "grid": {"nodes_per_axis": 4, "refinement_levels": 0}, "cover_splits": 2}"#,
    )
    .unwrap();
    let commands: [(&str, &Path); 7] = [
        ("scan", &config),
        ("sweep", &config),
        ("search-a", &config),
        ("mu", &config),
        ("invert", &config),
        ("spectrum", &config),
        ("family", &family),
    ];
    let mut differing = Vec::new();
    for (cmd, cfg) in commands {
        let args = [cmd, "--config", cfg.to_str().unwrap(), "--seed", "11"];
        let first = run_cli(dir.path(), &args, &dir.path().join(format!("{cmd}-1.out")));
        let second = run_cli(dir.path(), &args, &dir.path().join(format!("{cmd}-2.out")));
        if first != second || first.is_empty() {
            differing.push(cmd);
        }
    }
    verdict(
        11,
        differing.is_empty(),
        format!("7 subcommands run twice with seed 11, differing payloads: {differing:?}"),
    );
}
