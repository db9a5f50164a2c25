//! Small analytic maps with known minor structure, for tests and examples.

use nalgebra::DMatrix;

use crate::domain::Rectangle;
use crate::error::{Error, Result};
use crate::forward::ForwardMap;
use crate::redundant::{PiecewiseMap1D, StackedMap1D};

/// Map on `[0, 2]²` whose Jacobian has positive determinant everywhere and
/// is a P-matrix on the boundary, but whose `(1,1)` entry is `−1/2` at the
/// center. With `u = x − 1` and `g(s) = s − s³/3`:
///
/// ```text
/// F₁ = u₁ − 1.5·g(u₁)(1 − u₂²) − 3u₂      F₂ = u₁ + u₂
/// J  = [[1 − 1.5(1 − u₁²)(1 − u₂²),  3u₂·g(u₁) − 3],
///       [1,                          1           ]]
/// ```
///
/// `det J = 4 − 1.5(1 − u₁²)(1 − u₂²) − 3u₂·g(u₁) ≥ 1/2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BoundaryOnlyP;

impl BoundaryOnlyP {
    pub fn rectangle() -> Rectangle {
        Rectangle::from_origin(vec![2.0, 2.0]).expect("valid bounds")
    }
}

fn shifted(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() != 2 {
        return Err(Error::Shape(format!("expected 2 coordinates, got {}", x.len())));
    }
    Ok((x[0] - 1.0, x[1] - 1.0))
}

impl ForwardMap for BoundaryOnlyP {
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        2
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (u1, u2) = shifted(x)?;
        let g = u1 - u1.powi(3) / 3.0;
        Ok(vec![u1 - 1.5 * g * (1.0 - u2 * u2) - 3.0 * u2, u1 + u2])
    }
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let (u1, u2) = shifted(x)?;
        let g = u1 - u1.powi(3) / 3.0;
        Ok(DMatrix::from_row_slice(
            2,
            2,
            &[
                1.0 - 1.5 * (1.0 - u1 * u1) * (1.0 - u2 * u2),
                3.0 * u2 * g - 3.0,
                1.0,
                1.0,
            ],
        ))
    }
}

/// The pair `x ↦ (f(x), g(x))` on `[0, 2·periods]`: `f` has slope 1 on
/// `[2k, 2k+1]` and `eps` on `[2k+1, 2k+2]`, `g` the reverse. Each alone
/// has injectivity constant `eps`; together they form a P-family with
/// constant 1 on the unit-interval cover.
pub fn staircase_pair(periods: usize, eps: f64) -> Result<(StackedMap1D, Rectangle)> {
    let map = StackedMap1D {
        components: vec![
            PiecewiseMap1D::staircase(periods, 1.0, eps, 0)?,
            PiecewiseMap1D::staircase(periods, 1.0, eps, 1)?,
        ],
    };
    let rect = Rectangle::new(vec![0.0], vec![2.0 * periods as f64])?;
    Ok((map, rect))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ScanGrid;
    use crate::scan::boundary_scan;

    #[test]
    fn boundary_only_fixture() {
        let rect = BoundaryOnlyP::rectangle();
        let r = boundary_scan(&BoundaryOnlyP, &rect, &ScanGrid::new(21, 2).unwrap(), None).unwrap();
        assert_eq!(r.flags.boundary_p, Some(true));
        assert!(!r.flags.p_everywhere);
        assert!(r.det().min >= 0.5 - 1e-12);
        let x = [1.3, 0.6];
        let h = 1e-6;
        let j = BoundaryOnlyP.jacobian(&x).unwrap();
        for c in 0..2 {
            let mut p = x;
            let mut m = x;
            p[c] += h;
            m[c] -= h;
            let (fp, fm) = (BoundaryOnlyP.evaluate(&p).unwrap(), BoundaryOnlyP.evaluate(&m).unwrap());
            for r in 0..2 {
                assert!(((fp[r] - fm[r]) / (2.0 * h) - j[(r, c)]).abs() < 1e-8);
            }
        }
    }
}
