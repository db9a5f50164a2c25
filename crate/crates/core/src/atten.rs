//! Tabulated mass attenuation coefficients and their log-log interpolation.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Samples closer than this are read as the two sides of an absorption edge.
pub const EDGE_MAX_WIDTH_KEV: f64 = 0.01;

pub const TABLE_HEADER: [&str; 2] = ["energy_keV", "mass_attenuation_cm2_g"];

/// Mass attenuation M(E) of one material, sampled at strictly increasing
/// energies (keV) with strictly positive values (cm²/g).
///
/// An absorption edge is stored as two samples at nearly identical energies.
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationTable {
    material_name: String,
    energies: Vec<f64>,
    values: Vec<f64>,
}

impl AttenuationTable {
    pub fn new(material_name: impl Into<String>, samples: &[(f64, f64)]) -> Result<Self> {
        let material_name = material_name.into();
        if samples.len() < 2 {
            return Err(Error::MalformedTable(format!(
                "{material_name}: need at least 2 samples, got {}",
                samples.len()
            )));
        }
        for (k, &(e, m)) in samples.iter().enumerate() {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::MalformedTable(format!(
                    "{material_name}: row {k}: energy {e} must be positive"
                )));
            }
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::MalformedTable(format!(
                    "{material_name}: row {k}: attenuation {m} must be positive"
                )));
            }
            if k > 0 && e <= samples[k - 1].0 {
                return Err(Error::MalformedTable(format!(
                    "{material_name}: row {k}: energies must be strictly increasing ({} then {e})",
                    samples[k - 1].0
                )));
            }
        }
        Ok(Self {
            material_name,
            energies: samples.iter().map(|s| s.0).collect(),
            values: samples.iter().map(|s| s.1).collect(),
        })
    }

    pub fn name(&self) -> &str {
        &self.material_name
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.energies.iter().copied().zip(self.values.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn min_energy(&self) -> f64 {
        self.energies[0]
    }

    pub fn max_energy(&self) -> f64 {
        *self.energies.last().unwrap()
    }

    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        self.min_energy() <= lo && hi <= self.max_energy()
    }

    /// Mass attenuation at `energy`, linear in (ln E, ln M) between samples.
    /// No extrapolation.
    pub fn mass_attenuation(&self, energy: f64) -> Result<f64> {
        let (lo, hi) = (self.min_energy(), self.max_energy());
        if !(energy >= lo && energy <= hi) {
            return Err(Error::OutOfRange {
                energy,
                min: lo,
                max: hi,
            });
        }
        // first index with energies[k] > energy
        let k = self.energies.partition_point(|&e| e <= energy);
        if k > 0 && self.energies[k - 1] == energy {
            return Ok(self.values[k - 1]);
        }
        let (e0, e1) = (self.energies[k - 1], self.energies[k]);
        let (m0, m1) = (self.values[k - 1], self.values[k]);
        let t = (energy.ln() - e0.ln()) / (e1.ln() - e0.ln());
        Ok(((1.0 - t) * m0.ln() + t * m1.ln()).exp())
    }

    /// Absorption edges: consecutive samples closer than [`EDGE_MAX_WIDTH_KEV`],
    /// returned as (below, above) energy pairs.
    pub fn edges(&self) -> Vec<(f64, f64)> {
        self.energies
            .windows(2)
            .filter(|w| w[1] - w[0] < EDGE_MAX_WIDTH_KEV)
            .map(|w| (w[0], w[1]))
            .collect()
    }

    pub fn max_over(&self, energies: &[f64]) -> Result<f64> {
        energies
            .iter()
            .map(|&e| self.mass_attenuation(e))
            .try_fold(0.0_f64, |acc, m| m.map(|m| acc.max(m)))
    }

    /// Reads the two-column CSV format (`energy_keV,mass_attenuation_cm2_g`).
    pub fn from_csv<R: Read>(material_name: impl Into<String>, source: R) -> Result<Self> {
        let material_name = material_name.into();
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let headers = reader.headers()?.clone();
        if headers.len() != 2 || headers[0] != *TABLE_HEADER[0] || headers[1] != *TABLE_HEADER[1] {
            return Err(Error::MalformedTable(format!(
                "{material_name}: expected header `{}`",
                TABLE_HEADER.join(",")
            )));
        }
        let mut samples = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let parse = |field: Option<&str>| -> Result<f64> {
                field
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::MalformedTable(format!(
                            "{material_name}: line {}: expected two numbers",
                            line + 2
                        ))
                    })
            };
            if record.len() != 2 {
                return Err(Error::MalformedTable(format!(
                    "{material_name}: line {}: expected two columns",
                    line + 2
                )));
            }
            samples.push((parse(record.get(0))?, parse(record.get(1))?));
        }
        Self::new(material_name, &samples)
    }

    /// Writes the table in the same CSV format; reloading reproduces every
    /// sample bit for bit.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(TABLE_HEADER)?;
        for (e, m) in self.samples() {
            writer.write_record([e.to_string(), m.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Ordered list of materials; names must be distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialSet {
    materials: Vec<AttenuationTable>,
}

impl MaterialSet {
    pub fn new(materials: Vec<AttenuationTable>) -> Result<Self> {
        if materials.is_empty() {
            return Err(Error::domain("material set must not be empty"));
        }
        for (i, a) in materials.iter().enumerate() {
            if materials[..i].iter().any(|b| b.name() == a.name()) {
                return Err(Error::domain(format!("duplicate material `{}`", a.name())));
            }
        }
        Ok(Self { materials })
    }

    /// Bundled tables by name, in the given order.
    pub fn bundled(names: &[&str]) -> Result<Self> {
        Self::new(
            names
                .iter()
                .map(|n| bundled_table(n))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn len(&self) -> usize {
        self.materials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.materials.is_empty()
    }

    pub fn tables(&self) -> &[AttenuationTable] {
        &self.materials
    }

    pub fn names(&self) -> Vec<&str> {
        self.materials.iter().map(|t| t.name()).collect()
    }
}

const WATER_CSV: &str = include_str!("../data/water.csv");
const BONE_CSV: &str = include_str!("../data/bone.csv");
const IODINE_CSV: &str = include_str!("../data/iodine.csv");
const GADOLINIUM_CSV: &str = include_str!("../data/gadolinium.csv");
const ALUMINUM_CSV: &str = include_str!("../data/aluminum.csv");

pub const BUNDLED_MATERIALS: [&str; 5] = ["water", "bone", "iodine", "gadolinium", "aluminum"];

/// Aluminum density used for filtration (g/cm³).
pub const ALUMINUM_DENSITY: f64 = 2.699;

pub fn bundled_table(name: &str) -> Result<AttenuationTable> {
    let csv = match name {
        "water" => WATER_CSV,
        "bone" => BONE_CSV,
        "iodine" => IODINE_CSV,
        "gadolinium" => GADOLINIUM_CSV,
        "aluminum" => ALUMINUM_CSV,
        other => {
            return Err(Error::Config(format!(
                "unknown bundled material `{other}` (available: {})",
                BUNDLED_MATERIALS.join(", ")
            )))
        }
    };
    AttenuationTable::from_csv(name, csv.as_bytes())
}
