//! Search for a linear transform `A` (det 1) that makes `A·J(x)` a P-matrix
//! on a rectangle, and the injectivity constant of the transformed map.
//!
//! Two candidate families are drawn. Global candidates have i.i.d. standard
//! normal entries rescaled to det 1. Adaptive candidates live in `𝓜_i`: unit
//! diagonal, off-diagonal entries only in column `i`. By Cauchy–Binet such an
//! `A` leaves every principal minor `[AJ]_K` with `i ∉ K` equal to `[J]_K`,
//! so a failing minor `K` is attacked with some `i ∈ K` without disturbing
//! the minors that do not involve `i`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::domain::{Rectangle, ScanGrid};
use crate::error::{Error, Result};
use crate::forward::ForwardMap;
use crate::pmatrix::{self, MinorIndex};
use crate::scan::{self, GridInfo, ScanFlags};

const MAX_DRAWS: usize = 100;
const SINGULAR_DET: f64 = 1e-12;
/// Nodes per axis of the fast-reject subgrid (corners and center).
pub const FAST_REJECT_NODES: usize = 3;
const REFINE_NODES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[serde(alias = "global_random")]
    Random,
    Adaptive,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "global_random" => Ok(Strategy::Random),
            "adaptive" => Ok(Strategy::Adaptive),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Where a candidate came from. Adaptive targets are 1-based, in the order
/// the factors were applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Identity,
    GlobalRandom,
    Adaptive { targets: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformCandidate {
    #[serde(rename = "A", serialize_with = "serialize_rows")]
    pub a: DMatrix<f64>,
    pub det: f64,
    pub family: Family,
}

impl TransformCandidate {
    fn identity(n: usize) -> Self {
        Self {
            a: DMatrix::identity(n, n),
            det: 1.0,
            family: Family::Identity,
        }
    }

    /// Frobenius distance to the identity, used to break ties.
    pub fn distance_to_identity(&self) -> f64 {
        let n = self.a.nrows();
        (&self.a - DMatrix::<f64>::identity(n, n)).norm()
    }
}

pub fn rows_of(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::shape("matrix rows must be nonempty and of equal length"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

pub(crate) fn serialize_rows<S: Serializer>(a: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    rows_of(a).serialize(s)
}

fn serialize_opt_rows<S: Serializer>(
    a: &Option<DMatrix<f64>>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    a.as_ref().map(rows_of).serialize(s)
}

/// Generator for trial `t` of a search seeded with `seed`. Trial 0 shares
/// its stream with [`random_unimodular`].
fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Standard normal `n×n` matrix rescaled to det 1 (first two rows swapped
/// when the draw has negative determinant).
pub fn random_unimodular(n: usize, seed: u64) -> Result<TransformCandidate> {
    random_unimodular_with(n, &mut trial_rng(seed, 0))
}

pub fn random_unimodular_with<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<TransformCandidate> {
    if n < 2 {
        return Err(Error::domain("random transforms need n >= 2"));
    }
    for _ in 0..MAX_DRAWS {
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut det = a.determinant();
        if det.abs() < SINGULAR_DET {
            continue;
        }
        if det < 0.0 {
            a.swap_rows(0, 1);
            det = -det;
        }
        a /= det.powf(1.0 / n as f64);
        return Ok(TransformCandidate {
            det: a.determinant(),
            a,
            family: Family::GlobalRandom,
        });
    }
    Err(Error::SearchExhausted(format!("{MAX_DRAWS} singular draws in a row")))
}

/// Member of `𝓜_i` (1-based `i`): unit diagonal, standard normal entries in
/// column `i` off the diagonal, zeros elsewhere. det is exactly 1.
pub fn adaptive_candidate(n: usize, i: usize, seed: u64) -> Result<TransformCandidate> {
    adaptive_candidate_with(n, i, &mut trial_rng(seed, 0))
}

pub fn adaptive_candidate_with<R: Rng + ?Sized>(n: usize, i: usize, rng: &mut R) -> Result<TransformCandidate> {
    if i == 0 || i > n {
        return Err(Error::domain(format!("target index {i} outside 1..={n}")));
    }
    let mut a = DMatrix::identity(n, n);
    for k in (0..n).filter(|&k| k != i - 1) {
        a[(k, i - 1)] = rng.sample(StandardNormal);
    }
    Ok(TransformCandidate {
        a,
        det: 1.0,
        family: Family::Adaptive { targets: vec![i] },
    })
}

/// Jacobians at fixed nodes, evaluated once and reused by every candidate.
struct JacobianCache {
    nodes: Vec<Vec<f64>>,
    jacobians: Vec<DMatrix<f64>>,
}

impl JacobianCache {
    fn build<F: ForwardMap + ?Sized>(map: &F, rect: &Rectangle, nodes: Vec<Vec<f64>>) -> Result<Self> {
        let jacobians = nodes
            .par_iter()
            .map(|x| map.jacobian_on(x, rect))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { nodes, jacobians })
    }

    fn first_failure(&self, a: &DMatrix<f64>) -> Option<MinorIndex> {
        self.jacobians
            .iter()
            .find_map(|j| pmatrix::failing_minor(&(a * j)).ok().flatten())
    }

    /// Smallest margin over the nodes and where it occurs.
    fn min_margin(&self, a: &DMatrix<f64>) -> Result<(f64, usize)> {
        let margins = self
            .jacobians
            .par_iter()
            .map(|j| pmatrix::p_matrix_margin(&(a * j)))
            .collect::<Result<Vec<_>>>()?;
        Ok(margins
            .iter()
            .enumerate()
            .fold((f64::INFINITY, 0), |best, (k, &v)| if v < best.0 { (v, k) } else { best }))
    }
}

fn check_square<F: ForwardMap + ?Sized>(map: &F, rect: &Rectangle, a: Option<&DMatrix<f64>>) -> Result<usize> {
    let (n, m) = (map.output_dim(), map.input_dim());
    if n != m {
        return Err(Error::shape(format!("n != m ({n} measurements, {m} unknowns)")));
    }
    if rect.dim() != m {
        return Err(Error::shape("rectangle dimension does not match the map"));
    }
    if let Some(a) = a {
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::shape(format!("transform must be {n}x{n}")));
        }
    }
    Ok(n)
}

/// Injectivity constant of `x ↦ A·F(x)` with its location.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginMinimum {
    pub mu: f64,
    pub argmin: Vec<f64>,
    pub nodes_visited: usize,
}

/// Smallest [`pmatrix::p_matrix_margin`] of `A·J(x)` over the grid lattice,
/// refined around the minimizer. 0 when some node is not P.
pub fn injectivity_constant<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    grid: &ScanGrid,
    a: Option<&DMatrix<f64>>,
) -> Result<f64> {
    Ok(injectivity_minimum(map, rect, grid, a)?.mu)
}

pub fn injectivity_minimum<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    grid: &ScanGrid,
    a: Option<&DMatrix<f64>>,
) -> Result<MarginMinimum> {
    let n = check_square(map, rect, a)?;
    let a = a.cloned().unwrap_or_else(|| DMatrix::identity(n, n));
    let cache = JacobianCache::build(map, rect, rect.lattice(grid.nodes_per_axis))?;
    let (mu, k) = cache.min_margin(&a)?;
    refine_minimum(map, rect, grid, &a, mu, cache.nodes[k].clone(), cache.nodes.len())
}

fn refine_minimum<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    grid: &ScanGrid,
    a: &DMatrix<f64>,
    mut mu: f64,
    mut argmin: Vec<f64>,
    mut visited: usize,
) -> Result<MarginMinimum> {
    let mut radius = grid.spacing(rect);
    for _ in 0..grid.refinement_levels {
        if mu <= 0.0 {
            break;
        }
        let cache = JacobianCache::build(map, rect, rect.window(&argmin, &radius).lattice(REFINE_NODES))?;
        visited += cache.nodes.len();
        let (m, k) = cache.min_margin(a)?;
        if m < mu {
            mu = m;
            argmin = cache.nodes[k].clone();
        }
        radius.iter_mut().for_each(|r| *r *= 0.5);
    }
    Ok(MarginMinimum {
        mu,
        argmin,
        nodes_visited: visited,
    })
}

/// A transform with its certified constant on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InjectivityCertificate {
    #[serde(rename = "A", serialize_with = "serialize_opt_rows")]
    pub a: Option<DMatrix<f64>>,
    pub mu: f64,
    pub argmin: Vec<f64>,
    pub flags: ScanFlags,
    pub grid: GridInfo,
}

/// Injectivity constant and scan flags of `A·F` on `rect` (`A = 𝕀` when
/// absent). `mu > 0` only when every visited node is P.
pub fn certify<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    grid: &ScanGrid,
    a: Option<&DMatrix<f64>>,
) -> Result<InjectivityCertificate> {
    let report = scan::scan(map, rect, grid, a)?;
    let min = injectivity_minimum(map, rect, grid, a)?;
    let mu = if report.flags.p_everywhere { min.mu } else { 0.0 };
    Ok(InjectivityCertificate {
        a: a.cloned(),
        mu,
        argmin: min.argmin,
        flags: report.flags,
        grid: report.grid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub budget: usize,
    pub strategy: Strategy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub found: bool,
    pub strategy: Strategy,
    pub seed: u64,
    pub budget: usize,
    /// Candidates evaluated, the identity included.
    pub trials: usize,
    /// Candidates that passed the full grid check.
    pub passes: usize,
    /// Index of the first passing candidate (0 is the identity).
    pub first_pass: Option<usize>,
    pub family: Option<Family>,
    #[serde(flatten)]
    pub certificate: Option<InjectivityCertificate>,
}

struct Trial {
    index: usize,
    candidate: TransformCandidate,
    passed: bool,
}

fn adaptive_trial(
    n: usize,
    coarse: &JacobianCache,
    full: &JacobianCache,
    rng: &mut ChaCha8Rng,
) -> Result<(TransformCandidate, bool)> {
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut targets = Vec::new();
    // one factor per minor at most; a fixed det can never be repaired
    for _ in 0..(1usize << n) - 1 {
        let failing = coarse.first_failure(&a).or_else(|| full.first_failure(&a));
        let Some(k) = failing else {
            return Ok((
                TransformCandidate {
                    det: a.determinant(),
                    a,
                    family: Family::Adaptive { targets },
                },
                true,
            ));
        };
        if k.is_empty() {
            break;
        }
        let choices = k.deleted();
        let i = choices[rng.random_range(0..choices.len())];
        let step = adaptive_candidate_with(n, i, rng)?;
        a = step.a * a;
        let det = a.determinant();
        a /= det.abs().powf(1.0 / n as f64);
        targets.push(i);
    }
    let passed = full.first_failure(&a).is_none();
    Ok((
        TransformCandidate {
            det: a.determinant(),
            a,
            family: Family::Adaptive { targets },
        },
        passed,
    ))
}

fn run_trial(
    n: usize,
    index: usize,
    options: &SearchOptions,
    coarse: &JacobianCache,
    full: &JacobianCache,
) -> Result<Trial> {
    let mut rng = trial_rng(options.seed, index as u64);
    let (candidate, passed) = match options.strategy {
        Strategy::Random => {
            let c = random_unimodular_with(n, &mut rng)?;
            let passed = coarse.first_failure(&c.a).is_none() && full.first_failure(&c.a).is_none();
            (c, passed)
        }
        Strategy::Adaptive => adaptive_trial(n, coarse, full, &mut rng)?,
    };
    Ok(Trial {
        index,
        candidate,
        passed,
    })
}

/// Tries the identity, then `budget` random candidates, and certifies the
/// passing candidate with the largest injectivity constant (ties: closest
/// to 𝕀, then earliest). `found` is false when nothing passes; that is a
/// result, not an error.
pub fn search_transform<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    grid: &ScanGrid,
    options: &SearchOptions,
) -> Result<SearchOutcome> {
    if options.budget == 0 {
        return Err(Error::domain("search budget must be positive"));
    }
    let n = check_square(map, rect, None)?;
    let coarse = JacobianCache::build(map, rect, rect.lattice(FAST_REJECT_NODES))?;
    let full = JacobianCache::build(map, rect, rect.lattice(grid.nodes_per_axis))?;
    let mut outcome = SearchOutcome {
        found: false,
        strategy: options.strategy,
        seed: options.seed,
        budget: options.budget,
        trials: 1,
        passes: 0,
        first_pass: None,
        family: None,
        certificate: None,
    };

    let identity = TransformCandidate::identity(n);
    if full.first_failure(&identity.a).is_none() {
        let cert = certify(map, rect, grid, Some(&identity.a))?;
        if cert.mu > 0.0 {
            outcome.found = true;
            outcome.passes = 1;
            outcome.first_pass = Some(0);
            outcome.family = Some(Family::Identity);
            outcome.certificate = Some(cert);
            return Ok(outcome);
        }
    }

    let trials = (1..=options.budget)
        .into_par_iter()
        .map(|t| run_trial(n, t, options, &coarse, &full))
        .collect::<Result<Vec<_>>>()?;
    outcome.trials += trials.len();
    let passing: Vec<&Trial> = trials.iter().filter(|t| t.passed).collect();
    outcome.passes = passing.len();
    outcome.first_pass = passing.first().map(|t| t.index);

    let mut ranked = passing
        .par_iter()
        .map(|t| Ok((full.min_margin(&t.candidate.a)?.0, *t)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|(ma, a), (mb, b)| {
        mb.total_cmp(ma)
            .then(a.candidate.distance_to_identity().total_cmp(&b.candidate.distance_to_identity()))
            .then(a.index.cmp(&b.index))
    });
    for (_, t) in ranked {
        let cert = certify(map, rect, grid, Some(&t.candidate.a))?;
        if cert.mu > 0.0 {
            outcome.found = true;
            outcome.family = Some(t.candidate.family.clone());
            outcome.certificate = Some(cert);
            break;
        }
    }
    Ok(outcome)
}
