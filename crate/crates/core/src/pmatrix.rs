//! Principal-minor algebra and P-matrix classification.
//!
//! Minors are indexed by the set of *deleted* rows/columns, so `[A]_∅` is
//! `det A` and `[A]_{i}` is the minor obtained by striking row and column `i`.
//! A minor of a `k×k` submatrix counts as positive when it exceeds
//! `1e-12 · scale^k`, where `scale` is the largest entry magnitude of `A`.

use std::fmt;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest order handled by minor enumeration.
pub const MAX_ORDER: usize = 12;
/// Largest order handled by the orthant witness search.
pub const MAX_WITNESS_ORDER: usize = 8;
pub const MINOR_REL_TOL: f64 = 1e-12;
/// Bisection width for [`p_matrix_margin`].
pub const MARGIN_TOL: f64 = 1e-10;

/// Set of deleted indices, stored as a bit mask over 0-based positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MinorIndex(u32);

impl MinorIndex {
    pub const EMPTY: MinorIndex = MinorIndex(0);

    /// From 1-based indices, as printed in reports.
    pub fn from_one_based(deleted: &[usize]) -> Self {
        MinorIndex(deleted.iter().fold(0, |acc, &i| acc | 1 << (i - 1)))
    }

    pub fn from_zero_based(deleted: &[usize]) -> Self {
        MinorIndex(deleted.iter().fold(0, |acc, &i| acc | 1 << i))
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Whether 0-based index `i` is deleted.
    pub fn contains(self, i: usize) -> bool {
        self.0 & (1 << i) != 0
    }

    /// Deleted indices, 1-based and ascending.
    pub fn deleted(self) -> Vec<usize> {
        (0..32).filter(|&i| self.contains(i)).map(|i| i + 1).collect()
    }

    /// Retained 0-based indices for an `n×n` matrix.
    pub fn retained(self, n: usize) -> Vec<usize> {
        (0..n).filter(|&i| !self.contains(i)).collect()
    }

    /// Row labels of a minor report: `∅`, then deleted sets by size. Sizes
    /// below `n − 1` are lexicographic; the 1×1 minors (size `n − 1`, `n ≥ 3`)
    /// are listed by the index they keep.
    pub fn table_order(n: usize) -> Vec<MinorIndex> {
        let mut out = vec![MinorIndex::EMPTY];
        for size in 1..n {
            let mut level: Vec<MinorIndex> = (0..n)
                .combinations(size)
                .map(|c| MinorIndex::from_zero_based(&c))
                .collect();
            if size == n - 1 && n >= 3 {
                level.reverse();
            }
            out.extend(level);
        }
        out
    }

    /// Order in which [`is_p_matrix`] tests minors: smallest submatrix first,
    /// retained sets lexicographic. The first failure is the one reported.
    pub fn evaluation_order(n: usize) -> Vec<MinorIndex> {
        let full = (1u32 << n) - 1;
        (1..=n)
            .flat_map(|k| {
                (0..n).combinations(k).map(move |kept| {
                    MinorIndex(full & !MinorIndex::from_zero_based(&kept).0)
                })
            })
            .collect()
    }
}

impl fmt::Display for MinorIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "∅");
        }
        write!(f, "{{{}}}", self.deleted().iter().join(","))
    }
}

impl Serialize for MinorIndex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.deleted().serialize(s)
    }
}

impl<'de> Deserialize<'de> for MinorIndex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        if v.iter().any(|&i| i == 0 || i > 32) {
            return Err(serde::de::Error::custom("minor indices are 1-based"));
        }
        Ok(MinorIndex::from_one_based(&v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub is_p: bool,
    pub is_pqd: bool,
    pub is_sdd: bool,
    pub failing_minor: Option<MinorIndex>,
    pub witness: Option<Vec<f64>>,
}

fn check_square(a: &DMatrix<f64>) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::shape(format!("matrix is {}x{}, not square", a.nrows(), a.ncols())));
    }
    Ok(a.nrows())
}

fn check_order(n: usize) -> Result<()> {
    if n > MAX_ORDER {
        return Err(Error::domain(format!("order {n} exceeds minor enumeration limit {MAX_ORDER}")));
    }
    Ok(())
}

/// Largest entry magnitude.
pub fn scale(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Positivity threshold for a `k×k` minor of a matrix with the given scale.
pub fn minor_threshold(scale: f64, k: usize) -> f64 {
    MINOR_REL_TOL * scale.powi(k as i32)
}

/// Determinant of the `k×k` row-major block in `buf`, destroying it.
fn det_in_place(buf: &mut [f64], k: usize) -> f64 {
    let mut det = 1.0;
    for c in 0..k {
        let (mut p, mut best) = (c, buf[c * k + c].abs());
        for r in c + 1..k {
            let v = buf[r * k + c].abs();
            if v > best {
                p = r;
                best = v;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if p != c {
            for j in 0..k {
                buf.swap(c * k + j, p * k + j);
            }
            det = -det;
        }
        let pivot = buf[c * k + c];
        det *= pivot;
        for r in c + 1..k {
            let f = buf[r * k + c] / pivot;
            if f != 0.0 {
                for j in c + 1..k {
                    buf[r * k + j] -= f * buf[c * k + j];
                }
            }
        }
    }
    det
}

fn minor_unchecked(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    let k = rows.len();
    if k == 0 {
        return 1.0;
    }
    let mut buf = [0.0; MAX_ORDER * MAX_ORDER];
    for (r, &i) in rows.iter().enumerate() {
        for (c, &j) in cols.iter().enumerate() {
            buf[r * k + c] = a[(i, j)];
        }
    }
    det_in_place(&mut buf[..k * k], k)
}

/// `[A]_{K,L}`: determinant after deleting rows `K` and columns `L`.
/// Deleting everything yields the empty determinant 1.
pub fn minor(a: &DMatrix<f64>, rows_deleted: MinorIndex, cols_deleted: MinorIndex) -> Result<f64> {
    let n = check_square(a)?;
    check_order(n)?;
    let limit = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    if rows_deleted.0 & !limit != 0 || cols_deleted.0 & !limit != 0 {
        return Err(Error::shape(format!("minor index outside 1..={n}")));
    }
    if rows_deleted.len() != cols_deleted.len() {
        return Err(Error::shape("row and column deletion sets differ in size"));
    }
    Ok(minor_unchecked(a, &rows_deleted.retained(n), &cols_deleted.retained(n)))
}

/// `[A]_K`.
pub fn principal_minor(a: &DMatrix<f64>, k: MinorIndex) -> Result<f64> {
    minor(a, k, k)
}

/// Every principal minor in [`MinorIndex::table_order`].
pub fn principal_minors(a: &DMatrix<f64>) -> Result<Vec<(MinorIndex, f64)>> {
    let n = check_square(a)?;
    check_order(n)?;
    Ok(MinorIndex::table_order(n)
        .into_iter()
        .map(|k| {
            let kept = k.retained(n);
            (k, minor_unchecked(a, &kept, &kept))
        })
        .collect())
}

/// First failing principal minor in evaluation order, if any.
fn first_failing_minor(a: &DMatrix<f64>) -> Option<MinorIndex> {
    let n = a.nrows();
    let s = scale(a);
    MinorIndex::evaluation_order(n).into_iter().find(|k| {
        let kept = k.retained(n);
        minor_unchecked(a, &kept, &kept) <= minor_threshold(s, kept.len())
    })
}

/// First non-positive principal minor in [`MinorIndex::evaluation_order`].
pub fn failing_minor(a: &DMatrix<f64>) -> Result<Option<MinorIndex>> {
    check_square(a)?;
    check_order(a.nrows())?;
    Ok(first_failing_minor(a))
}

/// True iff every principal minor is positive.
pub fn p_check(a: &DMatrix<f64>) -> Result<bool> {
    check_square(a)?;
    check_order(a.nrows())?;
    Ok(first_failing_minor(a).is_none())
}

/// Minor-based classification. The witness is left empty; see
/// [`find_sign_reversal_witness`].
pub fn is_p_matrix(a: &DMatrix<f64>) -> Result<Classification> {
    check_square(a)?;
    check_order(a.nrows())?;
    let failing_minor = first_failing_minor(a);
    Ok(Classification {
        is_p: failing_minor.is_none(),
        is_pqd: is_positive_quasidefinite(a)?,
        is_sdd: is_strictly_diag_dominant(a)?,
        failing_minor,
        witness: None,
    })
}

/// Symmetric part positive definite, with smallest eigenvalue above
/// `1e-12·‖A‖_F`.
pub fn is_positive_quasidefinite(a: &DMatrix<f64>) -> Result<bool> {
    check_square(a)?;
    let sym = (a + a.transpose()) * 0.5;
    let min_eig = sym.symmetric_eigenvalues().min();
    Ok(min_eig > MINOR_REL_TOL * a.norm())
}

/// `a_ii > 0` and `a_ii > Σ_{j≠i} |a_ij|` on every row.
pub fn is_strictly_diag_dominant(a: &DMatrix<f64>) -> Result<bool> {
    let n = check_square(a)?;
    Ok((0..n).all(|i| {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
        a[(i, i)] > 0.0 && a[(i, i)] > off
    }))
}

/// Nonzero `x` with `x_i (A x)_i ≤ 0` for all `i`, or `None` when `A`
/// reverses the sign of no vector.
///
/// Per orthant `D = diag(s)` the witness set is the polytope
/// `{y ≥ 0, Σy = 1, (DAD) y ≤ 0}`; when nonempty it has a vertex, so all
/// vertices (choices of `n − 1` active inequalities) are enumerated.
pub fn find_sign_reversal_witness(a: &DMatrix<f64>) -> Result<Option<DVector<f64>>> {
    let n = check_square(a)?;
    if n == 0 {
        return Ok(None);
    }
    if n > MAX_WITNESS_ORDER {
        return Err(Error::domain(format!(
            "witness search limited to order {MAX_WITNESS_ORDER}, got {n}"
        )));
    }
    let s = scale(a).max(f64::MIN_POSITIVE);
    let tol_y = 1e-12;
    let tol_b = MINOR_REL_TOL * s;
    let mut sys = vec![0.0; n * (n + 1)];
    let mut y = vec![0.0; n];
    for pattern in 0u32..(1 << (n - 1)) {
        // s_0 = +1; the opposite orthant gives the same polytope
        let sign = |i: usize| if i > 0 && pattern & (1 << (i - 1)) != 0 { -1.0 } else { 1.0 };
        let b = DMatrix::from_fn(n, n, |i, j| sign(i) * a[(i, j)] * sign(j));
        for active in (0..2 * n).combinations(n - 1) {
            // rows: active constraints = 0, last row Σy = 1; augmented column n
            for (r, &c) in active.iter().enumerate() {
                for j in 0..n {
                    sys[r * (n + 1) + j] = if c < n {
                        if j == c { 1.0 } else { 0.0 }
                    } else {
                        b[(c - n, j)] / s
                    };
                }
                sys[r * (n + 1) + n] = 0.0;
            }
            for j in 0..n {
                sys[(n - 1) * (n + 1) + j] = 1.0;
            }
            sys[(n - 1) * (n + 1) + n] = 1.0;
            if !solve_augmented(&mut sys, n, &mut y) {
                continue;
            }
            if y.iter().any(|v| *v < -tol_y) {
                continue;
            }
            let by = &b * DVector::from_column_slice(&y);
            if by.iter().all(|v| *v <= tol_b) {
                let x = DVector::from_fn(n, |i, _| sign(i) * y[i].max(0.0));
                return Ok(Some(x));
            }
        }
    }
    Ok(None)
}

/// Gaussian elimination on an `n×(n+1)` augmented system; false if singular.
fn solve_augmented(sys: &mut [f64], n: usize, out: &mut [f64]) -> bool {
    let w = n + 1;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| sys[i * w + c].abs().total_cmp(&sys[j * w + c].abs()))
            .unwrap();
        if sys[p * w + c].abs() < 1e-13 {
            return false;
        }
        if p != c {
            for j in 0..w {
                sys.swap(c * w + j, p * w + j);
            }
        }
        let pivot = sys[c * w + c];
        for r in 0..n {
            if r != c {
                let f = sys[r * w + c] / pivot;
                if f != 0.0 {
                    for j in c..w {
                        sys[r * w + j] -= f * sys[c * w + j];
                    }
                }
            }
        }
    }
    for i in 0..n {
        out[i] = sys[i * w + n] / sys[i * w + i];
    }
    true
}

/// `[AJ]_{K,L}` via the Cauchy–Binet sum `Σ_M [A]_{K,M} [J]_{M,L}`.
pub fn product_minor(
    a: &DMatrix<f64>,
    j: &DMatrix<f64>,
    k: MinorIndex,
    l: MinorIndex,
) -> Result<f64> {
    let n = check_square(a)?;
    if check_square(j)? != n {
        return Err(Error::shape("factors differ in size"));
    }
    if k.len() != l.len() {
        return Err(Error::shape("|K| != |L|"));
    }
    check_order(n)?;
    let mut total = 0.0;
    for m in (0..n).combinations(k.len()) {
        let m = MinorIndex::from_zero_based(&m);
        total += minor(a, k, m)? * minor(j, m, l)?;
    }
    Ok(total)
}

/// Certified lower bound on `sup{λ ≥ 0 : A − λ𝕀 is a P-matrix}`; 0 when `A`
/// is not a P-matrix.
///
/// The admissible set is an interval starting at 0 (adding a nonnegative
/// diagonal preserves the P property) and ends before the smallest diagonal
/// entry, so bisection on that bracket returns the last passing endpoint.
pub fn p_matrix_margin(a: &DMatrix<f64>) -> Result<f64> {
    let n = check_square(a)?;
    check_order(n)?;
    if first_failing_minor(a).is_some() {
        return Ok(0.0);
    }
    let shifted = |lambda: f64| {
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] -= lambda;
        }
        b
    };
    let mut lo = 0.0;
    let mut hi = (0..n).map(|i| a[(i, i)]).fold(f64::INFINITY, f64::min);
    while hi - lo > MARGIN_TOL * (1.0 + hi) {
        let mid = 0.5 * (lo + hi);
        if first_failing_minor(&shifted(mid)).is_none() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
