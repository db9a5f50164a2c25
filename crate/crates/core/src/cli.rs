//! Experiment configs and the command functions behind the `mect` binary.
//!
//! Every command validates the whole config before computing anything and
//! returns its payload as a string, so repeated runs with the same config
//! and seed are byte-identical.

use std::fs::File;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::atten::{bundled_table, AttenuationTable, MaterialSet, BUNDLED_MATERIALS};
use crate::domain::{Rectangle, ScanGrid};
use crate::error::{Error, Result};
use crate::forward::MectSetup;
use crate::inversion::{self, InversionOptions, Method};
use crate::linmap::{self, SearchOptions, Strategy};
use crate::redundant;
use crate::scan::{self, Sampling, SweepCheck, SweepConfig};
use crate::spectra::{load_spectrum, EnergyGrid, DEFAULT_FILTRATION_MM_AL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

/// Exit code for an error: 2 when the request itself is invalid, 3 when
/// input data could not be used or a computation could not conclude.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Shape(_) | Error::Domain(_) | Error::Json(_) => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumModel {
    Kramers,
    /// One spectrum CSV per measurement.
    File(Vec<PathBuf>),
    /// Near-delta spectra at these energies (keV); the map is linear.
    Monochromatic(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RectangleSpec {
    Default,
    Explicit { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyGridSpec {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for EnergyGridSpec {
    fn default() -> Self {
        Self {
            min: crate::spectra::DEFAULT_MIN_KEV,
            max: crate::spectra::DEFAULT_MAX_KEV,
            step: crate::spectra::DEFAULT_STEP_KEV,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub tp_min: u32,
    pub tp_max: u32,
    pub check: SweepCheck,
    pub sampling: Sampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionSpec {
    pub method: Method,
    pub tol: f64,
    pub max_iter: usize,
    /// Measurement vector; may be overridden on the command line.
    pub y: Option<Vec<f64>>,
    /// 1 runs a single inversion from the rectangle center; more runs the
    /// multi-start uniqueness check.
    pub starts: usize,
}

impl Default for InversionSpec {
    fn default() -> Self {
        let d = InversionOptions::default();
        Self {
            method: d.method,
            tol: d.tol,
            max_iter: d.max_iter,
            y: None,
            starts: 1,
        }
    }
}

/// JSON experiment description. Only `materials` is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Bundled material names or paths to attenuation CSVs.
    pub materials: Vec<String>,
    pub tube_potentials: Vec<f64>,
    pub spectrum_model: SpectrumModel,
    pub filtration_mm_al: f64,
    pub energy_grid: EnergyGridSpec,
    pub rectangle: RectangleSpec,
    pub grid: ScanGrid,
    pub seed: u64,
    pub budget: usize,
    pub strategy: Strategy,
    /// Transform for `mu`; identity when absent.
    pub transform: Option<Vec<Vec<f64>>>,
    pub cover_splits: usize,
    pub sweep: Option<SweepSpec>,
    pub inversion: InversionSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            materials: Vec::new(),
            tube_potentials: Vec::new(),
            spectrum_model: SpectrumModel::Kramers,
            filtration_mm_al: DEFAULT_FILTRATION_MM_AL,
            energy_grid: EnergyGridSpec::default(),
            rectangle: RectangleSpec::Default,
            grid: ScanGrid::default(),
            seed: 0,
            budget: 1000,
            strategy: Strategy::Adaptive,
            transform: None,
            cover_splits: 4,
            sweep: None,
            inversion: InversionSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Scan,
    Sweep,
    SearchA,
    Mu,
    Invert,
    Spectrum,
    Family,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let file = File::open(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_reader(file).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    fn n_spectra(&self) -> usize {
        match &self.spectrum_model {
            SpectrumModel::Kramers => self.tube_potentials.len(),
            SpectrumModel::File(paths) => paths.len(),
            SpectrumModel::Monochromatic(e) => e.len(),
        }
    }

    /// Checks everything `command` will need, without loading tables or
    /// computing spectra.
    pub fn validate(&self, command: Command) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.materials.is_empty() {
            return cfg("`materials` is empty".into());
        }
        for m in &self.materials {
            if !BUNDLED_MATERIALS.contains(&m.as_str()) && !Path::new(m).is_file() {
                return cfg(format!("material `{m}` is neither bundled nor an existing file"));
            }
        }
        if let SpectrumModel::File(paths) = &self.spectrum_model {
            if let Some(p) = paths.iter().find(|p| !p.is_file()) {
                return cfg(format!("spectrum file {} does not exist", p.display()));
            }
        }
        if !(self.filtration_mm_al >= 0.0) {
            return cfg("`filtration_mm_al` must be >= 0".into());
        }
        EnergyGrid::uniform(self.energy_grid.min, self.energy_grid.max, self.energy_grid.step)?;
        ScanGrid::new(self.grid.nodes_per_axis, self.grid.refinement_levels)?;
        let (n, m) = (self.n_spectra(), self.materials.len());
        if let RectangleSpec::Explicit { lower, upper } = &self.rectangle {
            let r = Rectangle::new(lower.clone(), upper.clone())?;
            if r.dim() != m || !r.is_nonnegative() {
                return cfg(format!("rectangle must be {m}-dimensional with nonnegative bounds"));
            }
        }
        let square = matches!(
            command,
            Command::Scan | Command::SearchA | Command::Mu | Command::Invert
        );
        if square && n != m {
            return Err(Error::Shape(format!("n != m ({n} spectra, {m} materials)")));
        }
        if command == Command::Family && n < m {
            return Err(Error::Shape(format!("family needs n >= m ({n} spectra, {m} materials)")));
        }
        if command == Command::Spectrum && n == 0 {
            return cfg("no spectra configured".into());
        }
        match command {
            Command::SearchA if self.budget == 0 => return cfg("`budget` must be positive".into()),
            Command::Family if self.cover_splits == 0 => {
                return cfg("`cover_splits` must be positive".into())
            }
            Command::Mu => {
                if let Some(a) = &self.transform {
                    let a = linmap::from_rows(a)?;
                    if a.nrows() != n || a.ncols() != n {
                        return Err(Error::Shape(format!("transform must be {n}x{n}")));
                    }
                }
            }
            Command::Sweep => {
                let Some(s) = &self.sweep else {
                    return cfg("`sweep` section required".into());
                };
                if !(2..=4).contains(&m) {
                    return cfg(format!("sweeps need 2 to 4 materials, got {m}"));
                }
                scan::sweep_tuples(&self.sweep_config(s))?;
            }
            Command::Invert => {
                let inv = &self.inversion;
                if inv.starts == 0 || !(inv.tol > 0.0) {
                    return cfg("inversion needs starts >= 1 and tol > 0".into());
                }
                if let Some(y) = &inv.y {
                    if y.len() != n {
                        return Err(Error::Shape(format!("y has {} values, setup has {n} spectra", y.len())));
                    }
                } else {
                    return cfg("inversion needs `y`".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn energy_grid(&self) -> Result<EnergyGrid> {
        EnergyGrid::uniform(self.energy_grid.min, self.energy_grid.max, self.energy_grid.step)
    }

    pub fn material_set(&self) -> Result<MaterialSet> {
        let tables = self
            .materials
            .iter()
            .map(|m| {
                if BUNDLED_MATERIALS.contains(&m.as_str()) {
                    bundled_table(m)
                } else {
                    let name = Path::new(m).file_stem().map_or(m.clone(), |s| s.to_string_lossy().into_owned());
                    AttenuationTable::from_csv(name, File::open(m)?)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        MaterialSet::new(tables)
    }

    pub fn setup(&self) -> Result<MectSetup> {
        let materials = self.material_set()?;
        let grid = self.energy_grid()?.with_edges(&materials);
        match &self.spectrum_model {
            SpectrumModel::Kramers => {
                MectSetup::kramers_with(materials, &self.tube_potentials, self.filtration_mm_al, &grid)
            }
            SpectrumModel::File(paths) => {
                let spectra = paths
                    .iter()
                    .map(|p| load_spectrum(File::open(p)?, &grid))
                    .collect::<Result<Vec<_>>>()?;
                MectSetup::new(spectra, materials)
            }
            SpectrumModel::Monochromatic(energies) => MectSetup::monochromatic(materials, energies, &grid),
        }
    }

    pub fn rectangle(&self, setup: &MectSetup) -> Result<Rectangle> {
        match &self.rectangle {
            RectangleSpec::Default => Ok(scan::default_rectangle(setup)),
            RectangleSpec::Explicit { lower, upper } => Rectangle::new(lower.clone(), upper.clone()),
        }
    }

    fn sweep_config(&self, s: &SweepSpec) -> SweepConfig {
        SweepConfig {
            tp_min: s.tp_min,
            tp_max: s.tp_max,
            n: self.materials.len(),
            check: s.check,
            sampling: s.sampling,
            grid: self.grid,
            filtration_mm_al: self.filtration_mm_al,
            energy_grid: self.energy_grid().unwrap_or_default(),
        }
    }
}

/// What a command produced: the payload for `--out` (or stdout) and an
/// optional human-readable summary for stdout.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub payload: String,
    pub summary: Option<String>,
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn cmd_scan(config: &ExperimentConfig) -> Result<Output> {
    config.validate(Command::Scan)?;
    let setup = config.setup()?;
    let rect = config.rectangle(&setup)?;
    let report = scan::scan(&setup, &rect, &config.grid, None)?;
    Ok(Output {
        payload: to_json(&report)?,
        summary: Some(report.minor_table()),
    })
}

pub fn cmd_sweep(config: &ExperimentConfig) -> Result<Output> {
    config.validate(Command::Sweep)?;
    let sweep = config.sweep.as_ref().expect("validated");
    let result = scan::sweep_tube_potentials(&config.material_set()?, &config.sweep_config(sweep))?;
    Ok(Output {
        payload: result.to_csv(),
        summary: Some(result.summary()),
    })
}

pub fn cmd_search_a(config: &ExperimentConfig) -> Result<Output> {
    config.validate(Command::SearchA)?;
    let setup = config.setup()?;
    let rect = config.rectangle(&setup)?;
    let options = SearchOptions {
        budget: config.budget,
        strategy: config.strategy,
        seed: config.seed,
    };
    let outcome = linmap::search_transform(&setup, &rect, &config.grid, &options)?;
    let summary = match &outcome.certificate {
        Some(c) => format!("found after {} trials, mu = {:e}", outcome.trials, c.mu),
        None => format!("none found in {} trials ({} passes)", outcome.trials, outcome.passes),
    };
    Ok(Output {
        payload: to_json(&outcome)?,
        summary: Some(summary),
    })
}

pub fn cmd_mu(config: &ExperimentConfig) -> Result<Output> {
    config.validate(Command::Mu)?;
    let setup = config.setup()?;
    let rect = config.rectangle(&setup)?;
    let a: Option<DMatrix<f64>> = config.transform.as_deref().map(linmap::from_rows).transpose()?;
    let cert = linmap::certify(&setup, &rect, &config.grid, a.as_ref())?;
    Ok(Output {
        summary: Some(format!("mu = {:e}", cert.mu)),
        payload: to_json(&cert)?,
    })
}

pub fn cmd_invert(config: &ExperimentConfig) -> Result<Output> {
    config.validate(Command::Invert)?;
    let setup = config.setup()?;
    let rect = config.rectangle(&setup)?;
    let inv = &config.inversion;
    let y = inv.y.as_ref().expect("validated");
    let options = InversionOptions {
        method: inv.method,
        tol: inv.tol,
        max_iter: inv.max_iter,
    };
    if inv.starts == 1 {
        let r = inversion::invert(&setup, &rect, y, &rect.center(), &options)?;
        let summary = format!("converged = {}, residual = {:e}", r.converged, r.residual);
        return Ok(Output {
            payload: to_json(&r)?,
            summary: Some(summary),
        });
    }
    let u = inversion::verify_unique_inversion(&setup, &rect, y, inv.starts, config.seed, &options)?;
    Ok(Output {
        summary: Some(format!(
            "{} of {} starts converged into {} cluster(s)",
            u.converged,
            u.starts,
            u.clusters.len()
        )),
        payload: to_json(&u)?,
    })
}

/// One column per spectrum on the setup's energy grid.
pub fn cmd_spectrum(config: &ExperimentConfig) -> Result<Output> {
    config.validate(Command::Spectrum)?;
    let setup = config.setup()?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["energy_keV".to_string()];
    header.extend((1..=setup.n_spectra()).map(|i| format!("S_{i}")));
    writer.write_record(&header)?;
    for (e, energy) in setup.grid().energies().iter().enumerate() {
        let mut row = vec![energy.to_string()];
        row.extend(setup.spectra().iter().map(|s| s.weights()[e].to_string()));
        writer.write_record(&row)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let means: Vec<String> = setup.spectra().iter().map(|s| format!("{:.2}", s.mean_energy())).collect();
    Ok(Output {
        payload: String::from_utf8(bytes).expect("csv output is utf-8"),
        summary: Some(format!("mean energies (keV): {}", means.join(", "))),
    })
}

pub fn cmd_family(config: &ExperimentConfig) -> Result<Output> {
    config.validate(Command::Family)?;
    let setup = config.setup()?;
    let rect = config.rectangle(&setup)?;
    match redundant::certify_p_family(&setup, &rect, &config.grid, config.cover_splits)? {
        Some(cert) => {
            let summary = format!(
                "family mu = {:e}, mu0 = {:e}, |K'| = {}, bound = {:e}",
                cert.mu,
                cert.mu0,
                cert.used.len(),
                cert.bound
            );
            let mut value = serde_json::to_value(&cert)?;
            value["found"] = json!(true);
            Ok(Output {
                payload: to_json(&value)?,
                summary: Some(summary),
            })
        }
        None => Ok(Output {
            payload: to_json(&json!({ "found": false }))?,
            summary: Some("no P-family on this cover".into()),
        }),
    }
}

pub fn run(command: Command, config: &ExperimentConfig) -> Result<Output> {
    match command {
        Command::Scan => cmd_scan(config),
        Command::Sweep => cmd_sweep(config),
        Command::SearchA => cmd_search_a(config),
        Command::Mu => cmd_mu(config),
        Command::Invert => cmd_invert(config),
        Command::Spectrum => cmd_spectrum(config),
        Command::Family => cmd_family(config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(text).unwrap()
    }

    #[test]
    fn mismatched_counts_exit_2() {
        let c = config(r#"{"materials": ["bone", "water"], "tube_potentials": [80]}"#);
        let err = cmd_scan(&c).unwrap_err();
        assert!(err.to_string().contains("n != m"));
        assert_eq!(exit_code(&err), EXIT_CONFIG);
    }

    #[test]
    fn unknown_fields_and_materials_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"materials": ["water"], "bogus": 1}"#).is_err());
        let c = config(r#"{"materials": ["unobtainium"], "tube_potentials": [80]}"#);
        assert!(matches!(c.validate(Command::Scan), Err(Error::Config(_))));
    }

    #[test]
    fn monochromatic_scan_is_flat() {
        let c = config(
            r#"{"materials": ["bone", "iodine", "water"],
                "spectrum_model": {"monochromatic": [40, 60, 100]},
                "grid": {"nodes_per_axis": 3, "refinement_levels": 1}}"#,
        );
        let out = cmd_scan(&c).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out.payload).unwrap();
        let minors = v["minors"].as_array().unwrap();
        assert_eq!(minors.len(), 7);
        for m in minors {
            let (lo, hi) = (m["min"].as_f64().unwrap(), m["max"].as_f64().unwrap());
            assert!((lo - hi).abs() <= 1e-12 * hi.abs().max(1e-300));
        }
        assert_eq!(out.summary.unwrap().lines().count(), 8);
    }

    #[test]
    fn exhausted_search_is_not_an_error() {
        let c = config(
            r#"{"materials": ["iodine", "water"], "tube_potentials": [60, 60],
                "budget": 3, "strategy": "random",
                "grid": {"nodes_per_axis": 3, "refinement_levels": 0}}"#,
        );
        let out = cmd_search_a(&c).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out.payload).unwrap();
        assert_eq!(v["found"], false);
        assert_eq!(v["trials"], 4);
    }
}
