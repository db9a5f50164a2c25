//! The multi-energy transform `I_i(x) = −ln ∫ S_i(E) exp(−M(E)·x) dE` and
//! its Jacobian.

use nalgebra::DMatrix;

use crate::atten::{bundled_table, MaterialSet};
use crate::domain::Rectangle;
use crate::error::{Error, Result};
use crate::spectra::{kramers_spectrum, EnergyGrid, Spectrum, DEFAULT_FILTRATION_MM_AL};

/// A differentiable map from `input_dim` unknowns to `output_dim` measurements.
///
/// Everything downstream (scans, transform search, inversion) is written
/// against this trait so that analytic fixtures can stand in for a full
/// spectral setup.
pub trait ForwardMap: Sync {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>>;

    /// Jacobian of the restriction to `region`. Maps with kinks override
    /// this to return the one-sided derivative from inside the region.
    fn jacobian_on(&self, x: &[f64], _region: &Rectangle) -> Result<DMatrix<f64>> {
        self.jacobian(x)
    }

    fn evaluate_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        Ok((self.evaluate(x)?, self.jacobian(x)?))
    }
}

impl<T: ForwardMap + ?Sized> ForwardMap for &T {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).evaluate(x)
    }
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        (**self).jacobian(x)
    }
    fn jacobian_on(&self, x: &[f64], region: &Rectangle) -> Result<DMatrix<f64>> {
        (**self).jacobian_on(x, region)
    }
    fn evaluate_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        (**self).evaluate_with_jacobian(x)
    }
}

/// `n` spectra and `m` materials on one energy grid (`n ≥ m ≥ 1`).
#[derive(Debug, Clone)]
pub struct MectSetup {
    spectra: Vec<Spectrum>,
    materials: MaterialSet,
    grid: EnergyGrid,
    /// `basis[e * m + j] = M_j(E_e)`
    basis: Vec<f64>,
    /// trapezoid weight × S_i(E_e), one row per spectrum
    weighted: Vec<Vec<f64>>,
    /// Σ_e weighted[i][e]; 1 up to rounding
    totals: Vec<f64>,
}

impl MectSetup {
    pub fn new(spectra: Vec<Spectrum>, materials: MaterialSet) -> Result<Self> {
        let m = materials.len();
        let n = spectra.len();
        if n < m {
            return Err(Error::shape(format!(
                "{n} spectra for {m} materials; need n >= m"
            )));
        }
        let grid = spectra[0].grid().clone();
        if spectra.iter().any(|s| s.grid() != &grid) {
            return Err(Error::shape("all spectra must share one energy grid"));
        }
        for t in materials.tables() {
            if !t.covers(grid.min(), grid.max()) {
                return Err(Error::domain(format!(
                    "table `{}` covers [{}, {}] keV, grid needs [{}, {}]",
                    t.name(),
                    t.min_energy(),
                    t.max_energy(),
                    grid.min(),
                    grid.max()
                )));
            }
        }
        let mut basis = Vec::with_capacity(grid.len() * m);
        for &e in grid.energies() {
            for t in materials.tables() {
                basis.push(t.mass_attenuation(e)?);
            }
        }
        let tw = grid.trapezoid_weights();
        let weighted: Vec<Vec<f64>> = spectra
            .iter()
            .map(|s| s.weights().iter().zip(&tw).map(|(w, t)| w * t).collect())
            .collect();
        let totals = weighted.iter().map(|row| row.iter().sum()).collect();
        Ok(Self {
            spectra,
            materials,
            grid,
            basis,
            weighted,
            totals,
        })
    }

    /// Filtered Kramers spectra at the given tube potentials over bundled
    /// materials, with 2.5 mm Al, on the 1 keV grid plus absorption-edge nodes.
    pub fn kramers(materials: &[&str], tube_potentials: &[f64]) -> Result<Self> {
        let materials = MaterialSet::bundled(materials)?;
        let grid = EnergyGrid::default().with_edges(&materials);
        Self::kramers_with(materials, tube_potentials, DEFAULT_FILTRATION_MM_AL, &grid)
    }

    pub fn kramers_with(
        materials: MaterialSet,
        tube_potentials: &[f64],
        filtration_mm_al: f64,
        grid: &EnergyGrid,
    ) -> Result<Self> {
        let al = bundled_table("aluminum")?;
        let spectra = tube_potentials
            .iter()
            .map(|&tp| kramers_spectrum(tp, filtration_mm_al, grid, &al))
            .collect::<Result<Vec<_>>>()?;
        Self::new(spectra, materials)
    }

    /// One near-delta spectrum per energy; the transform is exactly
    /// `I(x) = B x` with `B_ij = M_j(E_i)` taken at the nearest grid nodes.
    pub fn monochromatic(materials: MaterialSet, energies: &[f64], grid: &EnergyGrid) -> Result<Self> {
        let spectra = energies
            .iter()
            .map(|&e| Spectrum::monochromatic(grid.clone(), e))
            .collect::<Result<Vec<_>>>()?;
        Self::new(spectra, materials)
    }

    pub fn n_spectra(&self) -> usize {
        self.spectra.len()
    }

    pub fn n_materials(&self) -> usize {
        self.materials.len()
    }

    pub fn spectra(&self) -> &[Spectrum] {
        &self.spectra
    }

    pub fn materials(&self) -> &MaterialSet {
        &self.materials
    }

    pub fn grid(&self) -> &EnergyGrid {
        &self.grid
    }

    pub fn tube_potentials(&self) -> Vec<Option<f64>> {
        self.spectra.iter().map(|s| s.tube_potential()).collect()
    }

    /// `M_j` at grid node `e`.
    pub fn basis(&self, e: usize, j: usize) -> f64 {
        self.basis[e * self.n_materials() + j]
    }

    /// Largest tabulated attenuation of each material over the grid nodes.
    pub fn max_attenuation(&self) -> Vec<f64> {
        let m = self.n_materials();
        (0..m)
            .map(|j| {
                (0..self.grid.len())
                    .map(|e| self.basis(e, j))
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Setup restricted to the spectra in `rows` (0-based, any order).
    pub fn select_spectra(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_spectra()) {
            return Err(Error::domain(format!(
                "spectrum index {} out of range 1..={}",
                bad + 1,
                self.n_spectra()
            )));
        }
        Self::new(
            rows.iter().map(|&r| self.spectra[r].clone()).collect(),
            self.materials.clone(),
        )
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_materials() {
            return Err(Error::shape(format!(
                "x has {} components, setup has {} materials",
                x.len(),
                self.n_materials()
            )));
        }
        if let Some(v) = x.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain(format!("line integrals must be >= 0, got {v}")));
        }
        Ok(())
    }

    /// exp(−M(E_e)·x) at every grid node.
    fn transmission(&self, x: &[f64]) -> Vec<f64> {
        let m = self.n_materials();
        self.basis
            .chunks_exact(m)
            .map(|row| (-row.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()).exp())
            .collect()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let t = self.transmission(x);
        Ok(self
            .weighted
            .iter()
            .zip(&self.totals)
            .map(|(w, total)| {
                let s: f64 = w.iter().zip(&t).map(|(a, b)| a * b).sum();
                0.0 - (s / total).ln()
            })
            .collect())
    }

    /// `J_ij = e^{I_i} ∫ S_i M_j e^{−M·x} dE`, sharing the transmission pass
    /// with the transform.
    pub fn transform_and_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.check_point(x)?;
        let m = self.n_materials();
        let t = self.transmission(x);
        let mut values = Vec::with_capacity(self.n_spectra());
        let mut jac = DMatrix::zeros(self.n_spectra(), m);
        let mut moment = vec![0.0; m];
        for (i, (w, total)) in self.weighted.iter().zip(&self.totals).enumerate() {
            let mut s = 0.0;
            moment.iter_mut().for_each(|v| *v = 0.0);
            for (e, (wi, ti)) in w.iter().zip(&t).enumerate() {
                let a = wi * ti;
                s += a;
                for (j, mj) in moment.iter_mut().enumerate() {
                    *mj += a * self.basis[e * m + j];
                }
            }
            values.push(0.0 - (s / total).ln());
            for j in 0..m {
                jac[(i, j)] = moment[j] / s;
            }
        }
        Ok((values, jac))
    }
}

impl ForwardMap for MectSetup {
    fn input_dim(&self) -> usize {
        self.n_materials()
    }

    fn output_dim(&self) -> usize {
        self.n_spectra()
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.transform(x)
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.transform_and_jacobian(x).map(|(_, j)| j)
    }

    fn evaluate_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.transform_and_jacobian(x)
    }
}

/// `x ↦ A·F(x)` for a fixed square `A`.
#[derive(Debug, Clone)]
pub struct Transformed<F> {
    inner: F,
    a: DMatrix<f64>,
}

impl<F: ForwardMap> Transformed<F> {
    pub fn new(inner: F, a: DMatrix<f64>) -> Result<Self> {
        let n = inner.output_dim();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::shape(format!(
                "transform is {}x{}, map has {n} outputs",
                a.nrows(),
                a.ncols()
            )));
        }
        Ok(Self { inner, a })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl<F: ForwardMap> ForwardMap for Transformed<F> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = nalgebra::DVector::from_vec(self.inner.evaluate(x)?);
        Ok((&self.a * y).iter().copied().collect())
    }
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(&self.a * self.inner.jacobian(x)?)
    }
    fn jacobian_on(&self, x: &[f64], region: &Rectangle) -> Result<DMatrix<f64>> {
        Ok(&self.a * self.inner.jacobian_on(x, region)?)
    }
    fn evaluate_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let (y, j) = self.inner.evaluate_with_jacobian(x)?;
        let y = &self.a * nalgebra::DVector::from_vec(y);
        Ok((y.iter().copied().collect(), &self.a * j))
    }
}

/// Linear map `x ↦ B x`; handy as a test fixture and for monochromatic limits.
#[derive(Debug, Clone)]
pub struct LinearMap {
    pub matrix: DMatrix<f64>,
}

impl ForwardMap for LinearMap {
    fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("dimension mismatch"));
        }
        let v = &self.matrix * nalgebra::DVector::from_column_slice(x);
        Ok(v.iter().copied().collect())
    }
    fn jacobian(&self, _x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.matrix.clone())
    }
}
