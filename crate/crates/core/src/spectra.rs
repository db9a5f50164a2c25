//! Source×detector energy weights on a shared energy grid.

use std::io::{Read, Write};

use crate::atten::{AttenuationTable, MaterialSet, ALUMINUM_DENSITY};
use crate::error::{Error, Result};

pub const SPECTRUM_HEADER: [&str; 2] = ["energy_keV", "weight"];

pub const DEFAULT_MIN_KEV: f64 = 10.0;
pub const DEFAULT_MAX_KEV: f64 = 150.0;
pub const DEFAULT_STEP_KEV: f64 = 1.0;
pub const DEFAULT_FILTRATION_MM_AL: f64 = 2.5;

const UNIT_TOTAL_TOL: f64 = 1e-13;

/// Strictly increasing quadrature nodes in keV.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGrid {
    energies: Vec<f64>,
}

impl EnergyGrid {
    pub fn new(energies: Vec<f64>) -> Result<Self> {
        if energies.len() < 2 {
            return Err(Error::domain("energy grid needs at least 2 nodes"));
        }
        if energies.iter().any(|e| !e.is_finite() || *e <= 0.0) {
            return Err(Error::domain("energy grid nodes must be positive and finite"));
        }
        if energies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("energy grid must be strictly increasing"));
        }
        Ok(Self { energies })
    }

    /// Uniform grid `lo, lo + step, ..., hi`. `hi - lo` must be a multiple
    /// of `step` up to rounding.
    pub fn uniform(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && hi > lo) {
            return Err(Error::domain("uniform grid needs hi > lo and step > 0"));
        }
        let intervals = ((hi - lo) / step).round() as usize;
        if ((intervals as f64) * step - (hi - lo)).abs() > 1e-9 * (hi - lo) {
            return Err(Error::domain(format!(
                "step {step} does not divide [{lo}, {hi}]"
            )));
        }
        Self::new(
            (0..=intervals)
                .map(|k| lo + (hi - lo) * k as f64 / intervals as f64)
                .collect(),
        )
    }

    /// Copy of this grid with both sides of every absorption edge of
    /// `materials` inserted as nodes, so no trapezoid cell straddles a jump.
    pub fn with_edges(&self, materials: &MaterialSet) -> Self {
        let mut energies = self.energies.clone();
        for t in materials.tables() {
            for (below, above) in t.edges() {
                for e in [below, above] {
                    if e > self.min() && e < self.max() {
                        energies.push(e);
                    }
                }
            }
        }
        energies.sort_by(f64::total_cmp);
        energies.dedup();
        Self { energies }
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.energies[0]
    }

    pub fn max(&self) -> f64 {
        *self.energies.last().unwrap()
    }

    /// Composite trapezoid weights: `quadrature(v) = Σ w_e v_e`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let e = &self.energies;
        let n = e.len();
        let mut w = vec![0.0; n];
        for k in 0..n - 1 {
            let h = 0.5 * (e[k + 1] - e[k]);
            w[k] += h;
            w[k + 1] += h;
        }
        w
    }
}

impl Default for EnergyGrid {
    /// 10–150 keV at 1 keV spacing.
    fn default() -> Self {
        Self::uniform(DEFAULT_MIN_KEV, DEFAULT_MAX_KEV, DEFAULT_STEP_KEV).unwrap()
    }
}

/// Composite trapezoid rule over the grid nodes.
pub fn quadrature(grid: &EnergyGrid, values: &[f64]) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(Error::shape(format!(
            "{} values for a {}-node grid",
            values.len(),
            grid.len()
        )));
    }
    let e = grid.energies();
    Ok(e.windows(2)
        .zip(values.windows(2))
        .map(|(e, v)| 0.5 * (e[1] - e[0]) * (v[0] + v[1]))
        .sum())
}

/// Nonnegative weights S(E) on grid nodes, normalized to unit integral.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: EnergyGrid,
    weights: Vec<f64>,
    tube_potential: Option<f64>,
}

impl Spectrum {
    /// Builds a spectrum from raw weights and normalizes it.
    pub fn from_weights(grid: EnergyGrid, weights: Vec<f64>, tube_potential: Option<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::shape(format!(
                "{} weights for a {}-node grid",
                weights.len(),
                grid.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::MalformedSpectrum("weights must be finite and nonnegative".into()));
        }
        Spectrum {
            grid,
            weights,
            tube_potential,
        }
        .normalize()
    }

    /// Unit-integral spectrum concentrated on the single grid node nearest
    /// to `energy`. Transforms built from it are exactly linear in x.
    pub fn monochromatic(grid: EnergyGrid, energy: f64) -> Result<Self> {
        if energy < grid.min() || energy > grid.max() {
            return Err(Error::domain(format!("{energy} keV outside the grid")));
        }
        let k = grid
            .energies()
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - energy).abs().total_cmp(&(b.1 - energy).abs()))
            .map(|(k, _)| k)
            .unwrap();
        let mut weights = vec![0.0; grid.len()];
        weights[k] = 1.0;
        Self::from_weights(grid, weights, None)
    }

    pub fn grid(&self) -> &EnergyGrid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn tube_potential(&self) -> Option<f64> {
        self.tube_potential
    }

    pub fn integral(&self) -> f64 {
        quadrature(&self.grid, &self.weights).unwrap()
    }

    pub fn mean_energy(&self) -> f64 {
        let first: Vec<f64> = self
            .grid
            .energies()
            .iter()
            .zip(&self.weights)
            .map(|(e, w)| e * w)
            .collect();
        quadrature(&self.grid, &first).unwrap() / self.integral()
    }

    /// Rescales to unit trapezoid integral. Idempotent.
    pub fn normalize(self) -> Result<Self> {
        let total = quadrature(&self.grid, &self.weights)?;
        if !(total > 0.0) {
            return Err(Error::EmptySpectrum("total weight is zero".into()));
        }
        // rescaling by a total that is 1 up to summation rounding would only
        // perturb the last bits; skipping it makes normalize exactly idempotent
        if (total - 1.0).abs() <= UNIT_TOTAL_TOL {
            return Ok(self);
        }
        let weights = self.weights.iter().map(|w| w / total).collect();
        Ok(Spectrum { weights, ..self })
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(SPECTRUM_HEADER)?;
        for (e, w) in self.grid.energies().iter().zip(&self.weights) {
            writer.write_record([e.to_string(), w.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Filtered Kramers bremsstrahlung: `max(tp/E − 1, 0)·exp(−μ_Al(E)·ρ_Al·t)`,
/// normalized on `grid`.
pub fn kramers_spectrum(
    tube_potential: f64,
    filtration_mm_al: f64,
    grid: &EnergyGrid,
    aluminum: &AttenuationTable,
) -> Result<Spectrum> {
    if !(tube_potential > grid.min()) {
        return Err(Error::EmptySpectrum(format!(
            "tube potential {tube_potential} kVp is at or below the grid minimum {} keV",
            grid.min()
        )));
    }
    if !(40.0..=150.0).contains(&tube_potential) {
        return Err(Error::domain(format!(
            "tube potential {tube_potential} kVp outside [40, 150]"
        )));
    }
    if !(filtration_mm_al >= 0.0) {
        return Err(Error::domain("filtration must be nonnegative"));
    }
    let thickness_cm = filtration_mm_al / 10.0;
    let weights = grid
        .energies()
        .iter()
        .map(|&e| {
            if e >= tube_potential {
                return Ok(0.0);
            }
            let filter = if thickness_cm > 0.0 {
                (-aluminum.mass_attenuation(e)? * ALUMINUM_DENSITY * thickness_cm).exp()
            } else {
                1.0
            };
            Ok((tube_potential / e - 1.0) * filter)
        })
        .collect::<Result<Vec<_>>>()?;
    Spectrum::from_weights(grid.clone(), weights, Some(tube_potential))
}

/// Reads `energy_keV,weight` pairs, resamples them onto `grid` by linear
/// interpolation (zero outside the given support) and normalizes.
pub fn load_spectrum<R: Read>(source: R, grid: &EnergyGrid) -> Result<Spectrum> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || headers[0] != *SPECTRUM_HEADER[0] || headers[1] != *SPECTRUM_HEADER[1] {
        return Err(Error::MalformedSpectrum(format!(
            "expected header `{}`",
            SPECTRUM_HEADER.join(",")
        )));
    }
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: Option<Vec<f64>> = record.iter().map(|s| s.parse().ok()).collect();
        match parsed.as_deref() {
            Some([e, w]) => pairs.push((*e, *w)),
            _ => {
                return Err(Error::MalformedSpectrum(format!(
                    "line {}: expected two numbers",
                    line + 2
                )))
            }
        }
    }
    if pairs.len() < 2 {
        return Err(Error::MalformedSpectrum("need at least 2 samples to interpolate".into()));
    }
    if pairs.iter().any(|&(e, w)| !e.is_finite() || !w.is_finite() || w < 0.0) {
        return Err(Error::MalformedSpectrum("weights must be finite and nonnegative".into()));
    }
    if pairs.windows(2).any(|p| p[1].0 <= p[0].0) {
        return Err(Error::MalformedSpectrum("energies must be strictly increasing".into()));
    }
    let weights = grid
        .energies()
        .iter()
        .map(|&e| {
            let k = pairs.partition_point(|p| p.0 < e);
            if k < pairs.len() && pairs[k].0 == e {
                pairs[k].1
            } else if k == 0 || k == pairs.len() {
                0.0
            } else {
                let (e0, w0) = pairs[k - 1];
                let (e1, w1) = pairs[k];
                w0 + (w1 - w0) * (e - e0) / (e1 - e0)
            }
        })
        .collect::<Vec<_>>();
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::EmptySpectrum("no weight on the grid".into()));
    }
    Spectrum::from_weights(grid.clone(), weights, None)
}
