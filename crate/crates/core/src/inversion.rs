//! Numerical inversion of a square map on a rectangle and empirical checks
//! of injectivity and the Lipschitz-type lower bounds.
//!
//! Newton converges locally for any nonsingular Jacobian; Gauss–Seidel
//! sweeps are only guaranteed to converge for positive quasi-definite or
//! diagonally dominant Jacobians. Both are best effort: a run that does not
//! converge reports `converged = false` rather than failing.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::Rectangle;
use crate::error::{Error, Result};
use crate::forward::ForwardMap;

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MIN_STEP: f64 = 1e-12;
const BISECTION_STEPS: usize = 200;
/// Converged runs closer than this belong to the same solution.
pub const CLUSTER_RADIUS: f64 = 1e-6;
/// Slack allowed in the componentwise and norm bounds.
pub const BOUND_TOL: f64 = 1e-9;
/// Slack allowed in the inverse bound.
pub const INVERSE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Newton,
    GaussSeidel,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newton" => Ok(Method::Newton),
            "gauss_seidel" | "gauss-seidel" => Ok(Method::GaussSeidel),
            other => Err(Error::Config(format!("unknown inversion method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionOptions {
    pub method: Method,
    /// Sup-norm residual at which a run counts as converged.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            method: Method::Newton,
            tol: 1e-12,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InversionResult {
    pub x: Vec<f64>,
    /// `max_i |F_i(x) − y_i|`
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

fn residual<F: ForwardMap + ?Sized>(map: &F, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    Ok(map.evaluate(x)?.iter().zip(y).map(|(f, t)| f - t).collect())
}

fn check_problem<F: ForwardMap + ?Sized>(map: &F, rect: &Rectangle, y: &[f64], x0: &[f64]) -> Result<()> {
    let (n, m) = (map.output_dim(), map.input_dim());
    if n != m {
        return Err(Error::shape(format!("n != m ({n} measurements, {m} unknowns)")));
    }
    if y.len() != n || x0.len() != m || rect.dim() != m {
        return Err(Error::shape("y, x0 and the rectangle must match the map dimensions"));
    }
    if y.iter().chain(x0).any(|v| !v.is_finite()) {
        return Err(Error::domain("y and x0 must be finite"));
    }
    Ok(())
}

/// Solves `F(x) = y` for `x` in `rect`, starting from `x0` (clamped).
pub fn invert<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    y: &[f64],
    x0: &[f64],
    options: &InversionOptions,
) -> Result<InversionResult> {
    check_problem(map, rect, y, x0)?;
    let mut x = x0.to_vec();
    rect.clamp(&mut x);
    match options.method {
        Method::Newton => newton(map, rect, y, x, options),
        Method::GaussSeidel => gauss_seidel(map, rect, y, x, options),
    }
}

fn newton<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    y: &[f64],
    mut x: Vec<f64>,
    options: &InversionOptions,
) -> Result<InversionResult> {
    let mut iterations = 0;
    loop {
        let (f, j) = map.evaluate_with_jacobian(&x)?;
        let r = DVector::from_iterator(f.len(), f.iter().zip(y).map(|(a, b)| a - b));
        let res = r.amax();
        if res <= options.tol || iterations >= options.max_iter {
            return Ok(InversionResult {
                converged: res <= options.tol,
                x,
                residual: res,
                iterations,
            });
        }
        iterations += 1;
        // J⁻¹r, or the steepest-descent direction Jᵀr when J is singular
        let direction = j
            .clone()
            .lu()
            .solve(&r)
            .filter(|d| d.iter().all(|v| v.is_finite()))
            .unwrap_or_else(|| j.transpose() * &r);
        let norm = r.norm();
        let mut step = 1.0;
        let mut accepted = None;
        while step >= MIN_STEP {
            let mut trial: Vec<f64> = x.iter().zip(direction.iter()).map(|(a, d)| a - step * d).collect();
            rect.clamp(&mut trial);
            let tr = residual(map, &trial, y)?;
            let tnorm = tr.iter().map(|v| v * v).sum::<f64>().sqrt();
            if tnorm <= (1.0 - ARMIJO_C * step) * norm {
                accepted = Some(trial);
                break;
            }
            step *= BACKTRACK;
        }
        match accepted {
            Some(next) => x = next,
            // no decrease along the clamped direction: stalled
            None => {
                return Ok(InversionResult {
                    x,
                    residual: res,
                    iterations,
                    converged: false,
                })
            }
        }
    }
}

/// Root of `F_i(x) = y_i` in coordinate `i` by bisection on the rectangle's
/// interval; returns the nearer end when the interval has no sign change.
fn solve_coordinate<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    y: &[f64],
    x: &mut [f64],
    i: usize,
) -> Result<()> {
    let g = |t: f64, x: &mut [f64]| -> Result<f64> {
        x[i] = t;
        Ok(map.evaluate(x)?[i] - y[i])
    };
    let (mut lo, mut hi) = (rect.lower()[i], rect.upper()[i]);
    let (glo, ghi) = (g(lo, x)?, g(hi, x)?);
    if glo >= 0.0 || ghi <= 0.0 {
        x[i] = if glo.abs() <= ghi.abs() { lo } else { hi };
        return Ok(());
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid, x)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    x[i] = 0.5 * (lo + hi);
    Ok(())
}

fn gauss_seidel<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    y: &[f64],
    mut x: Vec<f64>,
    options: &InversionOptions,
) -> Result<InversionResult> {
    let mut iterations = 0;
    loop {
        let res = sup_norm(&residual(map, &x, y)?);
        if res <= options.tol || iterations >= options.max_iter {
            return Ok(InversionResult {
                converged: res <= options.tol,
                x,
                residual: res,
                iterations,
            });
        }
        iterations += 1;
        for i in 0..x.len() {
            solve_coordinate(map, rect, y, &mut x, i)?;
        }
    }
}

/// Per-run generator `(seed, index)`.
fn run_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    /// Exactly one solution cluster among converged runs.
    pub unique: bool,
    /// Representative (first converged) solution of each cluster.
    pub clusters: Vec<Vec<f64>>,
    pub starts: usize,
    pub converged: usize,
}

/// Multi-start Newton from uniform random points of `rect`; converged
/// solutions within [`CLUSTER_RADIUS`] (sup norm) are merged.
pub fn verify_unique_inversion<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    y: &[f64],
    starts: usize,
    seed: u64,
    options: &InversionOptions,
) -> Result<UniquenessReport> {
    let runs = (0..starts)
        .into_par_iter()
        .map(|s| {
            let x0 = rect.sample(&mut run_rng(seed, s));
            invert(map, rect, y, &x0, options)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    let mut converged = 0;
    for r in runs.iter().filter(|r| r.converged) {
        converged += 1;
        let near = clusters.iter().any(|c| {
            c.iter().zip(&r.x).all(|(a, b)| (a - b).abs() <= CLUSTER_RADIUS)
        });
        if !near {
            clusters.push(r.x.clone());
        }
    }
    if converged == 0 {
        return Err(Error::Inconclusive(format!("none of {starts} starts converged")));
    }
    Ok(UniquenessReport {
        unique: clusters.len() == 1,
        clusters,
        starts,
        converged,
    })
}

/// Componentwise check `|(A·F)_i(x) − (A·F)_i(a)| ≥ λ|x_i − a_i|` on random
/// pairs. Coordinates with `|x_i − a_i|` below `1e-12·width_i` are skipped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub pairs: usize,
    /// Smallest `|ΔF_i| / |Δx_i|` over pairs and coordinates.
    pub min_ratio: f64,
    /// Pairs with some coordinate below `λ|Δx_i| − tol`.
    pub violations: usize,
    /// Pairs with some coordinate where `|Δx_i| > |ΔF_i|/λ + 1e-8`.
    pub inverse_violations: usize,
    pub lambda: f64,
    /// Pairs violating the P-function form: no `k` with
    /// `Δx_k (ΔF_k − λ Δx_k) > 0`.
    pub p_function_violations: usize,
}

/// `(x, a, F(x), F(a))`, with `F` premultiplied by the transform if any.
type ImagePair = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

fn image_pairs<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    a: Option<&DMatrix<f64>>,
    pairs: usize,
    seed: u64,
) -> Result<Vec<ImagePair>> {
    (0..pairs)
        .into_par_iter()
        .map(|p| {
            let mut rng = run_rng(seed, p);
            let x = rect.sample(&mut rng);
            let b = rect.sample(&mut rng);
            let apply = |v: Vec<f64>| -> Vec<f64> {
                match a {
                    Some(a) => (a * DVector::from_vec(v)).iter().copied().collect(),
                    None => v,
                }
            };
            let fx = apply(map.evaluate(&x)?);
            let fb = apply(map.evaluate(&b)?);
            Ok((x, b, fx, fb))
        })
        .collect()
}

pub fn verify_lipschitz<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    a: Option<&DMatrix<f64>>,
    lambda: f64,
    pairs: usize,
    seed: u64,
) -> Result<StabilityReport> {
    if map.output_dim() != map.input_dim() || rect.dim() != map.input_dim() {
        return Err(Error::shape("square map and matching rectangle required"));
    }
    let tol = BOUND_TOL * (1.0 + a.map_or(1.0, |a| a.norm()));
    let widths = rect.widths();
    let mut report = StabilityReport {
        pairs,
        min_ratio: f64::INFINITY,
        violations: 0,
        inverse_violations: 0,
        lambda,
        p_function_violations: 0,
    };
    for (x, b, fx, fb) in image_pairs(map, rect, a, pairs, seed)? {
        let (mut bad, mut bad_inverse, mut witnessed) = (false, false, false);
        for i in 0..x.len() {
            let dx = x[i] - b[i];
            let df = fx[i] - fb[i];
            if dx * (df - lambda * dx) > 0.0 {
                witnessed = true;
            }
            if dx.abs() <= 1e-12 * widths[i] {
                continue;
            }
            report.min_ratio = report.min_ratio.min(df.abs() / dx.abs());
            bad |= df.abs() < lambda * dx.abs() - tol;
            bad_inverse |= lambda > 0.0 && dx.abs() > df.abs() / lambda + INVERSE_TOL;
        }
        report.violations += bad as usize;
        report.inverse_violations += bad_inverse as usize;
        report.p_function_violations += (!witnessed && x != b) as usize;
    }
    Ok(report)
}

/// Euclidean check `‖F(x) − F(a)‖ ≥ bound·‖x − a‖ − 1e-9` on random pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormBoundReport {
    pub pairs: usize,
    pub min_ratio: f64,
    pub violations: usize,
    pub bound: f64,
}

pub fn verify_norm_bound<F: ForwardMap + ?Sized>(
    map: &F,
    rect: &Rectangle,
    bound: f64,
    pairs: usize,
    seed: u64,
) -> Result<NormBoundReport> {
    let dist = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let mut report = NormBoundReport {
        pairs,
        min_ratio: f64::INFINITY,
        violations: 0,
        bound,
    };
    for (x, b, fx, fb) in image_pairs(map, rect, None, pairs, seed)? {
        let (dx, df) = (dist(&x, &b), dist(&fx, &fb));
        if dx > 0.0 {
            report.min_ratio = report.min_ratio.min(df / dx);
        }
        report.violations += (df < bound * dx - BOUND_TOL) as usize;
    }
    Ok(report)
}

/// `x ↦ D·F(D·x)` for a diagonal sign matrix `D`, defined on `D·𝓡`.
#[derive(Debug, Clone)]
pub struct FlippedMap<F> {
    inner: F,
    signs: Vec<f64>,
}

impl<F: ForwardMap> FlippedMap<F> {
    pub fn new(inner: F, signs: Vec<f64>) -> Result<Self> {
        if signs.len() != inner.input_dim() || inner.input_dim() != inner.output_dim() {
            return Err(Error::shape("one sign per coordinate of a square map"));
        }
        if signs.iter().any(|s| *s != 1.0 && *s != -1.0) {
            return Err(Error::domain("signs must be +1 or -1"));
        }
        Ok(Self { inner, signs })
    }

    /// `D·rect`
    pub fn domain(&self, rect: &Rectangle) -> Rectangle {
        rect.flipped(&self.signs)
    }

    fn flip(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.signs).map(|(v, s)| v * s).collect()
    }

    fn conjugate(&self, j: DMatrix<f64>) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&DVector::from_vec(self.signs.clone()));
        &d * j * &d
    }
}

impl<F: ForwardMap> ForwardMap for FlippedMap<F> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.flip(&self.inner.evaluate(&self.flip(x))?))
    }
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.conjugate(self.inner.jacobian(&self.flip(x))?))
    }
    fn jacobian_on(&self, x: &[f64], region: &Rectangle) -> Result<DMatrix<f64>> {
        let inner = self.inner.jacobian_on(&self.flip(x), &region.flipped(&self.signs))?;
        Ok(self.conjugate(inner))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{LinearMap, MectSetup};
    use crate::scan::default_rectangle;

    #[test]
    fn round_trip_both_methods() {
        let setup = MectSetup::kramers(&["bone", "water"], &[80.0, 140.0]).unwrap();
        let rect = default_rectangle(&setup);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let truth = rect.sample(&mut rng);
            let y = setup.transform(&truth).unwrap();
            let mut results = Vec::new();
            for method in [Method::Newton, Method::GaussSeidel] {
                let opts = InversionOptions {
                    method,
                    tol: 1e-13,
                    max_iter: 500,
                };
                let r = invert(&setup, &rect, &y, &rect.center(), &opts).unwrap();
                assert!(r.converged, "{method:?} {r:?}");
                for (a, b) in r.x.iter().zip(&truth) {
                    assert!((a - b).abs() < 1e-8, "{method:?}: {a} vs {b}");
                }
                results.push(r.x);
            }
            for (a, b) in results[0].iter().zip(&results[1]) {
                assert!((a - b).abs() < 1e-7);
            }
        }
        let zero = invert(&setup, &rect, &[0.0, 0.0], &rect.center(), &InversionOptions::default()).unwrap();
        assert!(zero.converged);
        assert!(zero.x.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn linear_map_needs_one_newton_step() {
        let map = LinearMap {
            matrix: DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]),
        };
        let rect = Rectangle::from_origin(vec![2.0, 2.0]).unwrap();
        let r = invert(&map, &rect, &[2.5, 3.5], &[0.0, 0.0], &InversionOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        let u = verify_unique_inversion(&map, &rect, &[2.5, 3.5], 20, 1, &InversionOptions::default()).unwrap();
        assert!(u.unique);
    }

    #[test]
    fn unreachable_target_reports_nonconvergence() {
        let map = LinearMap {
            matrix: DMatrix::identity(2, 2),
        };
        let rect = Rectangle::from_origin(vec![1.0, 1.0]).unwrap();
        let r = invert(&map, &rect, &[5.0, 5.0], &[0.5, 0.5], &InversionOptions::default()).unwrap();
        assert!(!r.converged);
        let err = verify_unique_inversion(&map, &rect, &[5.0, 5.0], 4, 0, &InversionOptions::default());
        assert!(matches!(err, Err(Error::Inconclusive(_))));
    }

    #[test]
    fn lambda_zero_never_violates() {
        let setup = MectSetup::kramers(&["bone", "water"], &[80.0, 140.0]).unwrap();
        let rect = default_rectangle(&setup);
        let r = verify_lipschitz(&setup, &rect, None, 0.0, 500, 2).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.p_function_violations, 0);
        assert_eq!(r, verify_lipschitz(&setup, &rect, None, 0.0, 500, 2).unwrap());
    }

    #[test]
    fn flips() {
        let setup = MectSetup::kramers(&["bone", "water"], &[80.0, 140.0]).unwrap();
        let plus = FlippedMap::new(&setup, vec![1.0, 1.0]).unwrap();
        let x = [0.3, 2.0];
        assert_eq!(plus.evaluate(&x).unwrap(), setup.transform(&x).unwrap());
        let signs = vec![-1.0, 1.0];
        let once = FlippedMap::new(&setup, signs.clone()).unwrap();
        let twice = FlippedMap::new(&once, signs).unwrap();
        let a = twice.evaluate(&x).unwrap();
        let b = setup.transform(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-15);
        }
        let j = once.jacobian(&[-0.3, 2.0]).unwrap();
        let j0 = setup.jacobian(&x).unwrap();
        assert_eq!(j[(0, 1)], -j0[(0, 1)]);
        assert_eq!(j[(1, 1)], j0[(1, 1)]);
    }
}
