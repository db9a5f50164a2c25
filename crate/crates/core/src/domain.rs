//! Axis-aligned rectangles and the lattices used to sample them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed box `lower ≤ x ≤ upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Rectangle {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::shape("rectangle bounds must have equal, nonzero length"));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return Err(Error::domain(format!("invalid interval [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[0, upper]`; requires `upper ≥ 0`.
    pub fn from_origin(upper: Vec<f64>) -> Result<Self> {
        Self::new(vec![0.0; upper.len()], upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_nonnegative(&self) -> bool {
        self.lower.iter().all(|&l| l >= 0.0)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= l - slack && *v <= u + slack)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    /// True when some coordinate sits on a face.
    pub fn on_boundary(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .any(|(v, (l, u))| v == l || v == u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| if u > l { rng.random_range(*l..=*u) } else { *l })
            .collect()
    }

    /// Intersection with the box of half-width `radius` around `center`.
    pub fn window(&self, center: &[f64], radius: &[f64]) -> Rectangle {
        let (lower, upper) = center
            .iter()
            .zip(radius)
            .zip(self.lower.iter().zip(&self.upper))
            .map(|((c, r), (l, u))| ((c - r).max(*l), (c + r).min(*u)))
            .unzip();
        Rectangle { lower, upper }
    }

    /// Image under `x ↦ D x` for a diagonal sign matrix `D`.
    pub fn flipped(&self, signs: &[f64]) -> Rectangle {
        let (lower, upper) = signs
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(s, (l, u))| if *s < 0.0 { (-u, -l) } else { (*l, *u) })
            .unzip();
        Rectangle { lower, upper }
    }

    /// Regular partition into `splits` pieces per axis, in lattice order
    /// (first axis slowest).
    pub fn partition(&self, splits: usize) -> Vec<Rectangle> {
        let splits = splits.max(1);
        let m = self.dim();
        let total = splits.pow(m as u32);
        (0..total)
            .map(|mut idx| {
                let mut lower = vec![0.0; m];
                let mut upper = vec![0.0; m];
                for axis in (0..m).rev() {
                    let k = idx % splits;
                    idx /= splits;
                    let (l, u) = (self.lower[axis], self.upper[axis]);
                    lower[axis] = l + (u - l) * k as f64 / splits as f64;
                    upper[axis] = if k + 1 == splits {
                        u
                    } else {
                        l + (u - l) * (k + 1) as f64 / splits as f64
                    };
                }
                Rectangle { lower, upper }
            })
            .collect()
    }

    /// All points of the `nodes`-per-axis lattice including the faces,
    /// first axis slowest. Degenerate axes contribute a single coordinate.
    pub fn lattice(&self, nodes: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim()).map(|a| self.axis_nodes(a, nodes)).collect();
        let mut out = vec![Vec::with_capacity(self.dim())];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        out
    }

    fn axis_nodes(&self, axis: usize, nodes: usize) -> Vec<f64> {
        let (l, u) = (self.lower[axis], self.upper[axis]);
        if u == l || nodes < 2 {
            return vec![l];
        }
        (0..nodes)
            .map(|k| {
                if k + 1 == nodes {
                    u
                } else {
                    l + (u - l) * k as f64 / (nodes - 1) as f64
                }
            })
            .collect()
    }
}

/// Sampling resolution for grid certificates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub nodes_per_axis: usize,
    pub refinement_levels: usize,
}

impl ScanGrid {
    pub fn new(nodes_per_axis: usize, refinement_levels: usize) -> Result<Self> {
        if nodes_per_axis < 2 {
            return Err(Error::domain("nodes_per_axis must be at least 2"));
        }
        Ok(Self {
            nodes_per_axis,
            refinement_levels,
        })
    }

    /// Node spacing on the base lattice.
    pub fn spacing(&self, rect: &Rectangle) -> Vec<f64> {
        rect.widths()
            .iter()
            .map(|w| w / (self.nodes_per_axis - 1) as f64)
            .collect()
    }
}

impl Default for ScanGrid {
    fn default() -> Self {
        Self {
            nodes_per_axis: 11,
            refinement_levels: 2,
        }
    }
}
