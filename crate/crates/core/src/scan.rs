//! Grid certificates over a rectangle: per-minor extrema of `A·J(x)`,
//! classification flags and tube-potential sweeps.
//!
//! "For all x in the rectangle" is checked on a lattice with local refinement
//! around each minor's minimizer. Reports say so in their grid metadata;
//! they are numerical evidence, not enclosures.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atten::MaterialSet;
use crate::domain::{Rectangle, ScanGrid};
use crate::error::{Error, Result};
use crate::forward::{ForwardMap, MectSetup};
use crate::pmatrix::{self, minor_threshold, MinorIndex};
use crate::spectra::{kramers_spectrum, EnergyGrid, Spectrum};

pub const CERTIFICATE_KIND: &str = "grid certificate";

/// Nodes per axis in each refinement window (half the parent spacing).
const REFINE_NODES: usize = 5;

/// `0 ≤ x_j ≤ 10 / max_E M_j(E)`, so that `exp(−M_j(E) x_j) ≥ e^{−10}`.
pub fn default_rectangle(setup: &MectSetup) -> Rectangle {
    let upper = setup.max_attenuation().iter().map(|m| 10.0 / m).collect();
    Rectangle::from_origin(upper).expect("attenuation maxima are positive")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinorStats {
    pub deleted: MinorIndex,
    pub min: f64,
    pub max: f64,
    pub argmin: Vec<f64>,
    pub argmax: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanFlags {
    pub det_vanishes: bool,
    pub det_sign_changes: bool,
    pub p_everywhere: bool,
    pub pqd_everywhere: bool,
    pub sdd_everywhere: bool,
    /// Set only by [`boundary_scan`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_p: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridInfo {
    pub kind: &'static str,
    pub nodes_per_axis: usize,
    pub refinement_levels: usize,
    pub nodes_visited: usize,
    /// Largest entry magnitude of `A·J` seen; sets the minor thresholds.
    pub entry_scale: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl GridInfo {
    pub fn new(rect: &Rectangle, grid: &ScanGrid, nodes_visited: usize, entry_scale: f64) -> Self {
        Self {
            kind: CERTIFICATE_KIND,
            nodes_per_axis: grid.nodes_per_axis,
            refinement_levels: grid.refinement_levels,
            nodes_visited,
            entry_scale,
            lower: rect.lower().to_vec(),
            upper: rect.upper().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    pub minors: Vec<MinorStats>,
    pub flags: ScanFlags,
    pub grid: GridInfo,
}

impl ScanReport {
    pub fn minor(&self, k: MinorIndex) -> Option<&MinorStats> {
        self.minors.iter().find(|m| m.deleted == k)
    }

    pub fn det(&self) -> &MinorStats {
        &self.minors[0]
    }

    /// Minors whose grid minimum is not positive.
    pub fn failing_minors(&self) -> Vec<MinorIndex> {
        let scale = self.grid.entry_scale;
        let n = self.order();
        self.minors
            .iter()
            .filter(|s| s.min <= minor_threshold(scale, n - s.deleted.len()))
            .map(|s| s.deleted)
            .collect()
    }

    fn order(&self) -> usize {
        // 2^n − 1 minors
        (self.minors.len() + 1).trailing_zeros() as usize
    }

    /// Plain-text table: one row per deleted-index set with min and max.
    pub fn minor_table(&self) -> String {
        let mut out = String::from("minor assoc. to          min             max\n");
        for s in &self.minors {
            out.push_str(&format!("{:<12} {:>15.6e} {:>15.6e}\n", s.deleted.to_string(), s.min, s.max));
        }
        out
    }
}

struct NodeEval {
    x: Vec<f64>,
    minors: Vec<f64>,
    scale: f64,
    pqd: bool,
    sdd: bool,
    boundary: bool,
}

fn eval_node<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    a: Option<&DMatrix<f64>>,
    x: Vec<f64>,
) -> Result<NodeEval> {
    let j = map.jacobian_on(&x, rect)?;
    let m = match a {
        Some(a) => a * j,
        None => j,
    };
    let minors = pmatrix::principal_minors(&m)?.into_iter().map(|(_, v)| v).collect();
    Ok(NodeEval {
        boundary: rect.on_boundary(&x),
        minors,
        scale: pmatrix::scale(&m),
        pqd: pmatrix::is_positive_quasidefinite(&m)?,
        sdd: pmatrix::is_strictly_diag_dominant(&m)?,
        x,
    })
}

struct Accumulator {
    order: usize,
    stats: Vec<MinorStats>,
    boundary_min: Vec<f64>,
    scale: f64,
    pqd: bool,
    sdd: bool,
    visited: usize,
}

impl Accumulator {
    fn new(order: usize) -> Self {
        Self {
            order,
            stats: MinorIndex::table_order(order)
                .into_iter()
                .map(|k| MinorStats {
                    deleted: k,
                    min: f64::INFINITY,
                    max: f64::NEG_INFINITY,
                    argmin: vec![],
                    argmax: vec![],
                })
                .collect(),
            boundary_min: vec![f64::INFINITY; (1 << order) - 1],
            scale: 0.0,
            pqd: true,
            sdd: true,
            visited: 0,
        }
    }

    fn push(&mut self, e: &NodeEval) {
        self.visited += 1;
        self.scale = self.scale.max(e.scale);
        self.pqd &= e.pqd;
        self.sdd &= e.sdd;
        for (k, (s, &v)) in self.stats.iter_mut().zip(&e.minors).enumerate() {
            if v < s.min {
                s.min = v;
                s.argmin = e.x.clone();
            }
            if v > s.max {
                s.max = v;
                s.argmax = e.x.clone();
            }
            if e.boundary && v < self.boundary_min[k] {
                self.boundary_min[k] = v;
            }
        }
    }

    fn threshold(&self, k: MinorIndex) -> f64 {
        minor_threshold(self.scale, self.order - k.len())
    }

    fn finish(self, rect: &Rectangle, grid: &ScanGrid, boundary_mode: bool) -> ScanReport {
        let det = &self.stats[0];
        let det_thr = self.threshold(MinorIndex::EMPTY);
        let p_everywhere = self.stats.iter().all(|s| s.min > self.threshold(s.deleted));
        let boundary_p = boundary_mode.then(|| {
            det.min > det_thr
                && self
                    .stats
                    .iter()
                    .zip(&self.boundary_min)
                    .all(|(s, &b)| b > self.threshold(s.deleted))
        });
        let flags = ScanFlags {
            det_vanishes: det.min <= det_thr && det.max >= -det_thr,
            det_sign_changes: det.min < -det_thr && det.max > det_thr,
            p_everywhere,
            pqd_everywhere: self.pqd,
            sdd_everywhere: self.sdd,
            boundary_p,
        };
        ScanReport {
            grid: GridInfo::new(rect, grid, self.visited, self.scale),
            minors: self.stats,
            flags,
        }
    }
}

fn check_square<F: ForwardMap + ?Sized>(map: &F, a: Option<&DMatrix<f64>>) -> Result<usize> {
    let (n, m) = (map.output_dim(), map.input_dim());
    if n != m {
        return Err(Error::shape(format!("n != m ({n} measurements, {m} unknowns)")));
    }
    if let Some(a) = a {
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::shape(format!("transform must be {n}x{n}")));
        }
    }
    Ok(n)
}

fn evaluate_all<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    a: Option<&DMatrix<f64>>,
    nodes: Vec<Vec<f64>>,
) -> Result<Vec<NodeEval>> {
    nodes
        .into_par_iter()
        .map(|x| eval_node(map, rect, a, x))
        .collect()
}

fn scan_impl<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    grid: &ScanGrid,
    a: Option<&DMatrix<f64>>,
    boundary_mode: bool,
) -> Result<ScanReport> {
    let n = check_square(map, a)?;
    if rect.dim() != n {
        return Err(Error::shape("rectangle dimension does not match the map"));
    }
    let mut acc = Accumulator::new(n);
    for e in evaluate_all(map, rect, a, rect.lattice(grid.nodes_per_axis))? {
        acc.push(&e);
    }
    let mut radius = grid.spacing(rect);
    for _ in 0..grid.refinement_levels {
        let mut centers: Vec<Vec<f64>> = Vec::new();
        for s in &acc.stats {
            if !centers.contains(&s.argmin) {
                centers.push(s.argmin.clone());
            }
        }
        let nodes: Vec<Vec<f64>> = centers
            .iter()
            .flat_map(|c| rect.window(c, &radius).lattice(REFINE_NODES))
            .collect();
        for e in evaluate_all(map, rect, a, nodes)? {
            acc.push(&e);
        }
        radius.iter_mut().for_each(|r| *r *= 0.5);
    }
    Ok(acc.finish(rect, grid, boundary_mode))
}

/// Per-minor extrema of `A·J(x)` over the lattice (A = 𝕀 when absent),
/// refined `grid.refinement_levels` times around each minor's minimizer.
pub fn scan<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    grid: &ScanGrid,
    transform: Option<&DMatrix<f64>>,
) -> Result<ScanReport> {
    scan_impl(map, rect, grid, transform, false)
}

/// Like [`scan`], additionally setting `boundary_p`: det positive on the
/// whole grid and every principal minor positive on the boundary nodes.
pub fn boundary_scan<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    grid: &ScanGrid,
    transform: Option<&DMatrix<f64>>,
) -> Result<ScanReport> {
    scan_impl(map, rect, grid, transform, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepCheck {
    DetVanishes,
    PEverywhere,
    PqdEverywhere,
    SddEverywhere,
}

impl SweepCheck {
    pub fn read(self, flags: &ScanFlags) -> bool {
        match self {
            SweepCheck::DetVanishes => flags.det_vanishes,
            SweepCheck::PEverywhere => flags.p_everywhere,
            SweepCheck::PqdEverywhere => flags.pqd_everywhere,
            SweepCheck::SddEverywhere => flags.sdd_everywhere,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepCheck::DetVanishes => "det_vanishes",
            SweepCheck::PEverywhere => "p_everywhere",
            SweepCheck::PqdEverywhere => "pqd_everywhere",
            SweepCheck::SddEverywhere => "sdd_everywhere",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Every nondecreasing pair `tp_1 ≤ tp_2` in the range (n = 2 only).
    ExhaustivePairs,
    /// Distinct nondecreasing tuples drawn uniformly without replacement.
    Random { samples: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub tp_min: u32,
    pub tp_max: u32,
    pub n: usize,
    pub check: SweepCheck,
    pub sampling: Sampling,
    pub grid: ScanGrid,
    pub filtration_mm_al: f64,
    pub energy_grid: EnergyGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub tube_potentials: Vec<u32>,
    pub flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub check: SweepCheck,
    pub rows: Vec<SweepRow>,
    pub hits: usize,
    pub fraction: f64,
    pub wilson95: (f64, f64),
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let n = self.rows.first().map_or(0, |r| r.tube_potentials.len());
        let mut out: String = (1..=n).map(|i| format!("tp_{i},")).collect();
        out.push_str("flag\n");
        for r in &self.rows {
            for tp in &r.tube_potentials {
                out.push_str(&format!("{tp},"));
            }
            out.push_str(if r.flag { "1\n" } else { "0\n" });
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {}/{} hits, fraction {:.4}, Wilson 95% [{:.4}, {:.4}]",
            self.check.name(),
            self.hits,
            self.rows.len(),
            self.fraction,
            self.wilson95.0,
            self.wilson95.1
        )
    }
}

/// Wilson score interval at 95% confidence.
pub fn wilson_interval(hits: usize, total: usize) -> (f64, f64) {
    if total == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n = total as f64;
    let p = hits as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if hits == total { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Tuples to evaluate, in a deterministic order.
pub fn sweep_tuples(config: &SweepConfig) -> Result<Vec<Vec<u32>>> {
    if config.tp_min > config.tp_max {
        return Err(Error::domain("empty tube potential range"));
    }
    if config.tp_min < 40 || config.tp_max > 150 {
        return Err(Error::domain("tube potentials must lie in [40, 150] kVp"));
    }
    if config.n == 0 {
        return Err(Error::domain("need at least one tube potential per tuple"));
    }
    let range = config.tp_max - config.tp_min + 1;
    match config.sampling {
        Sampling::ExhaustivePairs => {
            if config.n != 2 {
                return Err(Error::domain("exhaustive pair sampling requires n = 2"));
            }
            Ok((config.tp_min..=config.tp_max)
                .flat_map(|a| (a..=config.tp_max).map(move |b| vec![a, b]))
                .collect())
        }
        Sampling::Random { samples, seed } => {
            // nondecreasing n-tuples over `range` values ↔ n-subsets of
            // range + n − 1 values (t_k = s_k − k)
            let universe = (range as usize) + config.n - 1;
            let available = binomial(universe, config.n);
            if (samples as f64) > available {
                return Err(Error::domain(format!(
                    "{samples} samples requested but only {available} distinct tuples exist"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut seen = HashSet::new();
            let mut out = Vec::with_capacity(samples);
            while out.len() < samples {
                let mut s = index::sample(&mut rng, universe, config.n).into_vec();
                s.sort_unstable();
                let t: Vec<u32> = s
                    .iter()
                    .enumerate()
                    .map(|(k, v)| config.tp_min + (*v - k) as u32)
                    .collect();
                if seen.insert(t.clone()) {
                    out.push(t);
                }
            }
            Ok(out)
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Builds Kramers spectra for each tuple (on `energy_grid` plus the
/// materials' edge nodes), scans the default rectangle and
/// records the requested flag.
pub fn sweep_tube_potentials(materials: &MaterialSet, config: &SweepConfig) -> Result<SweepResult> {
    if materials.len() != config.n {
        return Err(Error::shape(format!(
            "n != m ({} tube potentials, {} materials)",
            config.n,
            materials.len()
        )));
    }
    let tuples = sweep_tuples(config)?;
    let al = crate::atten::bundled_table("aluminum")?;
    let energy_grid = config.energy_grid.with_edges(materials);
    let spectra: Vec<Spectrum> = (config.tp_min..=config.tp_max)
        .map(|tp| kramers_spectrum(tp as f64, config.filtration_mm_al, &energy_grid, &al))
        .collect::<Result<_>>()?;
    let spectrum = |tp: u32| spectra[(tp - config.tp_min) as usize].clone();
    let first = MectSetup::new(tuples[0].iter().map(|&t| spectrum(t)).collect(), materials.clone())?;
    let rect = default_rectangle(&first);
    let rows = tuples
        .into_par_iter()
        .map(|tp| {
            let setup = MectSetup::new(tp.iter().map(|&t| spectrum(t)).collect(), materials.clone())?;
            let report = scan(&setup, &rect, &config.grid, None)?;
            Ok(SweepRow {
                flag: config.check.read(&report.flags),
                tube_potentials: tp,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hits = rows.iter().filter(|r| r.flag).count();
    Ok(SweepResult {
        check: config.check,
        fraction: hits as f64 / rows.len() as f64,
        wilson95: wilson_interval(hits, rows.len()),
        hits,
        rows,
    })
}
