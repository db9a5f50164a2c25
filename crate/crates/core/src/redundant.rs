//! Overdetermined setups (`n` measurements, `m < n` materials): square
//! subsystems, P-family certificates over a rectangle cover, and the
//! averaged map with its stability bound.
//!
//! Convention: `m` materials, `n ≥ m` measurements; a subsystem keeps `m`
//! of the `n` measurements and all material coordinates in their original
//! order.

use std::fmt;

use itertools::Itertools;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Rectangle, ScanGrid};
use crate::error::{Error, Result};
use crate::forward::{ForwardMap, MectSetup};
use crate::pmatrix;
use crate::scan;

/// Sorted 1-based measurement indices of a square subsystem.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SubsystemIndex(Vec<usize>);

impl SubsystemIndex {
    pub fn new(mut rows: Vec<usize>) -> Result<Self> {
        rows.sort_unstable();
        if rows.is_empty() || rows[0] == 0 || rows.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::domain("subsystem indices must be distinct and 1-based"));
        }
        Ok(Self(rows))
    }

    pub fn rows(&self) -> &[usize] {
        &self.0
    }

    pub fn zero_based(&self) -> Vec<usize> {
        self.0.iter().map(|r| r - 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<usize>> for SubsystemIndex {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SubsystemIndex> for Vec<usize> {
    fn from(k: SubsystemIndex) -> Self {
        k.0
    }
}

impl fmt::Display for SubsystemIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.0.iter().join(","))
    }
}

/// All `C(n, m)` subsystems in lexicographic order.
pub fn enumerate_subsystems(n: usize, m: usize) -> Result<Vec<SubsystemIndex>> {
    if m == 0 || n < m {
        return Err(Error::domain(format!("need n >= m >= 1, got n = {n}, m = {m}")));
    }
    Ok((1..=n).combinations(m).map(SubsystemIndex).collect())
}

/// The setup restricted to the spectra in `k`.
pub fn subsystem_map(setup: &MectSetup, k: &SubsystemIndex) -> Result<MectSetup> {
    if k.len() != setup.n_materials() {
        return Err(Error::domain(format!(
            "subsystem {k} has {} rows, setup has {} materials",
            k.len(),
            setup.n_materials()
        )));
    }
    setup.select_spectra(&k.zero_based())
}

/// Rows `k` of any map.
#[derive(Debug, Clone)]
pub struct SubsystemMap<F> {
    inner: F,
    rows: Vec<usize>,
}

impl<F: ForwardMap> SubsystemMap<F> {
    pub fn new(inner: F, k: &SubsystemIndex) -> Result<Self> {
        if k.rows().iter().any(|&r| r > inner.output_dim()) {
            return Err(Error::domain(format!(
                "subsystem {k} out of range 1..={}",
                inner.output_dim()
            )));
        }
        Ok(Self {
            inner,
            rows: k.zero_based(),
        })
    }
}

impl<F: ForwardMap> ForwardMap for SubsystemMap<F> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.rows.len()
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.inner.evaluate(x)?;
        Ok(self.rows.iter().map(|&r| y[r]).collect())
    }
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.inner.jacobian(x)?.select_rows(&self.rows))
    }
    fn jacobian_on(&self, x: &[f64], region: &Rectangle) -> Result<DMatrix<f64>> {
        Ok(self.inner.jacobian_on(x, region)?.select_rows(&self.rows))
    }
}

/// Continuous piecewise-affine `ℝ → ℝ`, affine beyond the end breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseMap1D {
    breakpoints: Vec<f64>,
    /// `slopes[k]` applies on `[breakpoints[k], breakpoints[k + 1]]`.
    slopes: Vec<f64>,
    /// Value at `breakpoints[0]`.
    offset: f64,
}

impl PiecewiseMap1D {
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>, offset: f64) -> Result<Self> {
        if breakpoints.len() < 2 || slopes.len() + 1 != breakpoints.len() {
            return Err(Error::shape("need k + 1 breakpoints for k slopes, k >= 1"));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("breakpoints must be strictly increasing"));
        }
        Ok(Self {
            breakpoints,
            slopes,
            offset,
        })
    }

    /// Slope `high` on `[2k, 2k+1]` and `low` on `[2k+1, 2k+2]` over
    /// `[0, 2·periods]`, or the reverse when `phase` is odd.
    pub fn staircase(periods: usize, high: f64, low: f64, phase: usize) -> Result<Self> {
        let pieces = 2 * periods.max(1);
        let breakpoints = (0..=pieces).map(|k| k as f64).collect();
        let slopes = (0..pieces)
            .map(|k| if (k + phase).is_multiple_of(2) { high } else { low })
            .collect();
        Self::new(breakpoints, slopes, 0.0)
    }

    /// Index of the piece containing `x`; at a breakpoint, the piece on
    /// the right unless `left` is set.
    fn piece(&self, x: f64, left: bool) -> usize {
        let last = self.slopes.len() - 1;
        let k = if left {
            self.breakpoints.partition_point(|&b| b < x)
        } else {
            self.breakpoints.partition_point(|&b| b <= x)
        };
        k.saturating_sub(1).min(last)
    }

    pub fn value(&self, x: f64) -> f64 {
        let k = self.piece(x, false);
        let mut v = self.offset;
        for j in 0..k {
            v += self.slopes[j] * (self.breakpoints[j + 1] - self.breakpoints[j]);
        }
        v + self.slopes[k] * (x - self.breakpoints[k])
    }

    pub fn slope(&self, x: f64, left: bool) -> f64 {
        self.slopes[self.piece(x, left)]
    }
}

/// Scalar piecewise-affine functions stacked into an `n`-output map of one
/// variable.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedMap1D {
    pub components: Vec<PiecewiseMap1D>,
}

impl ForwardMap for StackedMap1D {
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        self.components.len()
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_scalar(x)?;
        Ok(self.components.iter().map(|c| c.value(x[0])).collect())
    }
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_scalar(x)?;
        Ok(DMatrix::from_iterator(
            self.components.len(),
            1,
            self.components.iter().map(|c| c.slope(x[0], false)),
        ))
    }
    /// One-sided slope from inside `region`: at a breakpoint, the side
    /// facing the region's center.
    fn jacobian_on(&self, x: &[f64], region: &Rectangle) -> Result<DMatrix<f64>> {
        check_scalar(x)?;
        let left = x[0] > region.center()[0];
        Ok(DMatrix::from_iterator(
            self.components.len(),
            1,
            self.components.iter().map(|c| c.slope(x[0], left)),
        ))
    }
}

fn check_scalar(x: &[f64]) -> Result<()> {
    if x.len() != 1 {
        return Err(Error::shape(format!("expected 1 coordinate, got {}", x.len())));
    }
    Ok(())
}

/// `(μ − μ₀)/|𝒦′| + μ₀`.
pub fn family_lipschitz_bound(mu: f64, mu0: f64, family_size: usize) -> Result<f64> {
    if family_size < 1 {
        return Err(Error::domain("family must contain at least one subsystem"));
    }
    if !(mu0 >= 0.0 && mu >= mu0) {
        return Err(Error::domain(format!("need mu >= mu0 >= 0, got mu = {mu}, mu0 = {mu0}")));
    }
    Ok((mu - mu0) / family_size as f64 + mu0)
}

/// `x ↦ (1/|𝒦′|) Σ_K I_K(x)`.
#[derive(Debug, Clone)]
pub struct AveragedMap<F> {
    inner: F,
    family: Vec<Vec<usize>>,
}

impl<F: ForwardMap> AveragedMap<F> {
    pub fn new(inner: F, family: &[SubsystemIndex]) -> Result<Self> {
        if family.is_empty() {
            return Err(Error::domain("averaged map needs a nonempty family"));
        }
        let m = inner.input_dim();
        for k in family {
            if k.len() != m || k.rows().iter().any(|&r| r > inner.output_dim()) {
                return Err(Error::domain(format!("subsystem {k} invalid for this map")));
            }
        }
        Ok(Self {
            inner,
            family: family.iter().map(SubsystemIndex::zero_based).collect(),
        })
    }

    fn average_rows(&self, y: &[f64]) -> Vec<f64> {
        let m = self.inner.input_dim();
        let w = 1.0 / self.family.len() as f64;
        (0..m)
            .map(|r| self.family.iter().map(|k| y[k[r]]).sum::<f64>() * w)
            .collect()
    }

    fn average_jacobian(&self, j: &DMatrix<f64>) -> DMatrix<f64> {
        let w = 1.0 / self.family.len() as f64;
        let mut out = DMatrix::zeros(j.ncols(), j.ncols());
        for k in &self.family {
            out += j.select_rows(k);
        }
        out * w
    }
}

impl<F: ForwardMap> ForwardMap for AveragedMap<F> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.average_rows(&self.inner.evaluate(x)?))
    }
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.average_jacobian(&self.inner.jacobian(x)?))
    }
    fn jacobian_on(&self, x: &[f64], region: &Rectangle) -> Result<DMatrix<f64>> {
        Ok(self.average_jacobian(&self.inner.jacobian_on(x, region)?))
    }
}

/// Best subsystem on one cover element.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    pub alpha: usize,
    #[serde(rename = "K")]
    pub k: SubsystemIndex,
    pub local_mu: f64,
}

/// Injectivity constant of one subsystem over the whole rectangle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsystemConstant {
    #[serde(rename = "K")]
    pub k: SubsystemIndex,
    pub p_everywhere: bool,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyGrid {
    pub kind: &'static str,
    pub cover_splits: usize,
    pub nodes_per_element: usize,
    pub nodes_per_axis: usize,
    pub refinement_levels: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PFamilyCertificate {
    pub mu: f64,
    pub mu0: f64,
    /// Subsystems assigned to at least one cover element (`𝒦′`).
    pub used: Vec<SubsystemIndex>,
    pub bound: f64,
    pub cover: Vec<Rectangle>,
    pub assignments: Vec<Assignment>,
    pub subsystems: Vec<SubsystemConstant>,
    pub grid: FamilyGrid,
}

/// Axis coordinates of the global lattice with `cover_splits·(p − 1) + 1`
/// nodes, so each cover element's `p`-node lattice is a sub-lattice of it.
fn fine_axes(rect: &Rectangle, splits: usize, p: usize) -> Vec<Vec<f64>> {
    let total = splits * (p - 1);
    (0..rect.dim())
        .map(|a| {
            let (l, u) = (rect.lower()[a], rect.upper()[a]);
            (0..=total)
                .map(|k| if k == total { u } else { l + (u - l) * k as f64 / total as f64 })
                .collect()
        })
        .collect()
}

/// Lattice points with per-axis index ranges `[lo_a, hi_a]` (inclusive),
/// first axis slowest.
fn index_lattice(axes: &[Vec<f64>], lo: &[usize], hi: &[usize]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for (a, axis) in axes.iter().enumerate() {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (lo[a]..=hi[a]).map(move |k| {
                    let mut p = prefix.clone();
                    p.push(axis[k]);
                    p
                })
            })
            .collect();
    }
    out
}

fn min_margin<F: ForwardMap + ?Sized>(map: &F, region: &Rectangle, nodes: &[Vec<f64>]) -> Result<f64> {
    let margins = nodes
        .par_iter()
        .map(|x| pmatrix::p_matrix_margin(&map.jacobian_on(x, region)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(margins.into_iter().fold(f64::INFINITY, f64::min))
}

/// P-family certificate on a regular cover of `rect` with `cover_splits`
/// elements per axis, or `None` when some element has no subsystem with a
/// positive local margin.
///
/// Subsystems whose grid scan is not P everywhere are discarded. All
/// margins are taken on one global lattice whose restriction to each cover
/// element is that element's `grid.nodes_per_axis` lattice; the family
/// constant therefore dominates every single-subsystem constant.
pub fn certify_p_family<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    grid: &ScanGrid,
    cover_splits: usize,
) -> Result<Option<PFamilyCertificate>> {
    let (n, m) = (map.output_dim(), map.input_dim());
    if rect.dim() != m {
        return Err(Error::shape("rectangle dimension does not match the map"));
    }
    if cover_splits == 0 {
        return Err(Error::domain("cover needs at least one element per axis"));
    }
    let p = grid.nodes_per_axis.max(2);
    let axes = fine_axes(rect, cover_splits, p);
    let all_nodes = index_lattice(&axes, &vec![0; m], &vec![cover_splits * (p - 1); m]);

    let mut subsystems = Vec::new();
    let mut surviving = Vec::new();
    for k in enumerate_subsystems(n, m)? {
        let sub = SubsystemMap::new(map, &k)?;
        let p_everywhere = scan::scan(&sub, rect, grid, None)?.flags.p_everywhere;
        let mu = if p_everywhere { min_margin(&sub, rect, &all_nodes)? } else { 0.0 };
        if p_everywhere {
            surviving.push(k.clone());
        }
        subsystems.push(SubsystemConstant { k, p_everywhere, mu });
    }

    let mut cover = Vec::new();
    let mut assignments = Vec::new();
    for alpha in 0..cover_splits.pow(m as u32) {
        let mut idx = vec![0; m];
        let mut rest = alpha;
        for a in (0..m).rev() {
            idx[a] = rest % cover_splits;
            rest /= cover_splits;
        }
        let lo: Vec<usize> = idx.iter().map(|i| i * (p - 1)).collect();
        let hi: Vec<usize> = lo.iter().map(|l| l + p - 1).collect();
        let element = Rectangle::new(
            (0..m).map(|a| axes[a][lo[a]]).collect(),
            (0..m).map(|a| axes[a][hi[a]]).collect(),
        )?;
        let nodes = index_lattice(&axes, &lo, &hi);
        let mut best: Option<(f64, &SubsystemIndex)> = None;
        for k in &surviving {
            let local = min_margin(&SubsystemMap::new(map, k)?, &element, &nodes)?;
            if best.is_none_or(|(b, _)| local > b) {
                best = Some((local, k));
            }
        }
        match best {
            Some((local, k)) if local > 0.0 => assignments.push(Assignment {
                alpha,
                k: k.clone(),
                local_mu: local,
            }),
            _ => return Ok(None),
        }
        cover.push(element);
    }

    let mu = assignments.iter().map(|a| a.local_mu).fold(f64::INFINITY, f64::min);
    let used: Vec<SubsystemIndex> = assignments.iter().map(|a| a.k.clone()).sorted().dedup().collect();
    let mu0 = subsystems
        .iter()
        .filter(|s| used.contains(&s.k))
        .map(|s| s.mu)
        .fold(f64::INFINITY, f64::min);
    Ok(Some(PFamilyCertificate {
        bound: family_lipschitz_bound(mu, mu0.min(mu), used.len())?,
        mu,
        mu0,
        used,
        cover,
        assignments,
        subsystems,
        grid: FamilyGrid {
            kind: scan::CERTIFICATE_KIND,
            cover_splits,
            nodes_per_element: p,
            nodes_per_axis: axes[0].len(),
            refinement_levels: grid.refinement_levels,
            lower: rect.lower().to_vec(),
            upper: rect.upper().to_vec(),
        },
    }))
}
