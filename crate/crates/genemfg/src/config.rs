//! JSON run configuration: parsing, defaulting, validation, and assembly
//! into ready-to-run problem data. Every block may be omitted; every error
//! names the offending key.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beetle::{population_models, BeetleModel, BeetleParams};
use crate::calculus::{discrete_gradient, trapezoid};
use crate::driver::{DriverConfig, InitialGuess, InitialP};
use crate::error::{Error, Result};
use crate::fp::DriftSign;
use crate::gene_ode::{ClampMode, Integrator, OdeConfig};
use crate::grid::{affine_profile, gaussian_density, BoundaryData, SpaceTimeGrid};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridBlock,
    pub params: BeetleParams,
    pub boundary: BoundaryBlock,
    pub driver: DriverBlock,
    pub ode: OdeBlock,
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridBlock {
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_t: usize,
}

impl Default for GridBlock {
    fn default() -> Self {
        GridBlock {
            x_min: -4.0,
            x_max: 4.0,
            n_x: 201,
            horizon: 1.0,
            n_t: 201,
        }
    }
}

/// Spatial profile: either an affine closed form or a node table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSpec {
    Affine { slope: f64, intercept: f64 },
    Table(Vec<f64>),
}

/// Density profile: a truncated-and-renormalized Gaussian or a node table
/// (tables are renormalized to unit mass by the loader).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensitySpec {
    Gaussian { mean: f64, sd: f64 },
    Table(Vec<f64>),
}

/// Time series: constant or one value per time level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesSpec {
    Constant(f64),
    Table(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryBlock {
    /// Terminal value profile, applied to both populations.
    pub terminal_u: ProfileSpec,
    pub initial_m1: DensitySpec,
    pub initial_m2: DensitySpec,
    /// Resource budget over time.
    #[serde(rename = "Q")]
    pub q: SeriesSpec,
    /// Budget derivative; omitted means differentiate `Q` numerically
    /// (central differences inside, one-sided at the ends).
    pub q_dot: Option<SeriesSpec>,
}

impl Default for BoundaryBlock {
    fn default() -> Self {
        BoundaryBlock {
            terminal_u: ProfileSpec::Affine {
                slope: 0.5,
                intercept: 0.0,
            },
            initial_m1: DensitySpec::Gaussian { mean: 0.0, sd: 1.0 },
            initial_m2: DensitySpec::Gaussian { mean: 0.0, sd: 1.0 },
            q: SeriesSpec::Constant(-0.1),
            q_dot: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriverBlock {
    pub omega: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub initial_p: InitialP,
    pub initial_guess: InitialGuess,
}

impl Default for DriverBlock {
    fn default() -> Self {
        DriverBlock {
            omega: 0.5,
            tol: 1e-6,
            max_iters: 200,
            initial_p: InitialP::Solve,
            initial_guess: InitialGuess::SolveP0ThenConstant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeBlock {
    pub denominator_floor: f64,
    pub drift_sign: DriftSign,
    pub integrator: Integrator,
    pub clamp: ClampMode,
}

impl Default for OdeBlock {
    fn default() -> Self {
        OdeBlock {
            denominator_floor: 1e-8,
            drift_sign: DriftSign::Pde,
            integrator: Integrator::Rk4,
            clamp: ClampMode::ClampToUnitInterval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: String,
    pub emit_svg: bool,
    /// Field snapshot cadence in time steps; omitted means `n_t / 10`.
    pub snapshot_stride: Option<usize>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            directory: "out".into(),
            emit_svg: false,
            snapshot_stride: None,
        }
    }
}

/// Fully validated, ready-to-run problem data.
#[derive(Debug)]
pub struct RunSetup {
    pub grid: SpaceTimeGrid,
    pub params: BeetleParams,
    pub models: (BeetleModel, BeetleModel),
    pub boundary: BoundaryData,
    pub driver: DriverConfig,
    pub ode: OdeConfig,
    pub drift_sign: DriftSign,
    pub initial_p: InitialP,
    pub output_dir: PathBuf,
    pub emit_svg: bool,
    pub snapshot_stride: usize,
}

/// Parse a config file, rejecting unknown keys and naming the key on every
/// structural error.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut deserializer = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut deserializer).map_err(|e| {
        let path = e.path().to_string();
        if path.is_empty() || path == "." {
            Error::Config(e.into_inner().to_string())
        } else {
            Error::Config(format!("{path}: {}", e.into_inner()))
        }
    })
}

fn key_err(key: &str, message: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {message}"))
}

fn profile(spec: &ProfileSpec, grid: &SpaceTimeGrid, key: &str) -> Result<Vec<f64>> {
    match spec {
        ProfileSpec::Affine { slope, intercept } => {
            if !slope.is_finite() || !intercept.is_finite() {
                return Err(key_err(key, "affine coefficients must be finite"));
            }
            Ok(affine_profile(grid, *slope, *intercept))
        }
        ProfileSpec::Table(values) => {
            if values.len() != grid.n_x {
                return Err(key_err(
                    key,
                    format!("table has {} values, grid has {}", values.len(), grid.n_x),
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(key_err(key, "table contains non-finite values"));
            }
            Ok(values.clone())
        }
    }
}

fn density(spec: &DensitySpec, grid: &SpaceTimeGrid, key: &str) -> Result<Vec<f64>> {
    match spec {
        DensitySpec::Gaussian { mean, sd } => {
            gaussian_density(grid, *mean, *sd).map_err(|e| key_err(key, e))
        }
        DensitySpec::Table(values) => {
            if values.len() != grid.n_x {
                return Err(key_err(
                    key,
                    format!("table has {} values, grid has {}", values.len(), grid.n_x),
                ));
            }
            if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(key_err(key, "table must be nonnegative and finite"));
            }
            let mass = trapezoid(values, grid.dx);
            if !(mass > 0.0) {
                return Err(key_err(key, "table has no mass"));
            }
            if (mass - 1.0).abs() > 1e-12 {
                log::info!("{key}: renormalizing table from mass {mass:.6e} to 1");
            }
            Ok(values.iter().map(|v| v / mass).collect())
        }
    }
}

fn series(spec: &SeriesSpec, grid: &SpaceTimeGrid, key: &str) -> Result<Vec<f64>> {
    match spec {
        SeriesSpec::Constant(v) => {
            if !v.is_finite() {
                return Err(key_err(key, "constant must be finite"));
            }
            Ok(vec![*v; grid.n_t])
        }
        SeriesSpec::Table(values) => {
            if values.len() != grid.n_t {
                return Err(key_err(
                    key,
                    format!(
                        "table has {} values, grid has {} time levels",
                        values.len(),
                        grid.n_t
                    ),
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(key_err(key, "table contains non-finite values"));
            }
            Ok(values.clone())
        }
    }
}

impl RunConfig {
    /// Validate every block and assemble the runnable problem data.
    pub fn build(&self) -> Result<RunSetup> {
        if self.grid.n_x < 3 {
            return Err(key_err("grid.n_x", format!("must be at least 3, got {}", self.grid.n_x)));
        }
        if self.grid.n_t < 2 {
            return Err(key_err("grid.n_t", format!("must be at least 2, got {}", self.grid.n_t)));
        }
        let grid = SpaceTimeGrid::new(
            self.grid.x_min,
            self.grid.x_max,
            self.grid.n_x,
            self.grid.horizon,
            self.grid.n_t,
        )
        .map_err(|e| key_err("grid", e))?;

        self.params.validate().map_err(|e| key_err("params", e))?;
        let models = population_models(&self.params);

        let terminal = profile(&self.boundary.terminal_u, &grid, "boundary.terminal_u")?;
        let m1 = density(&self.boundary.initial_m1, &grid, "boundary.initial_m1")?;
        let m2 = density(&self.boundary.initial_m2, &grid, "boundary.initial_m2")?;
        let q = series(&self.boundary.q, &grid, "boundary.Q")?;
        let q_dot = match &self.boundary.q_dot {
            Some(spec) => series(spec, &grid, "boundary.q_dot")?,
            None => match &self.boundary.q {
                SeriesSpec::Constant(_) => vec![0.0; grid.n_t],
                SeriesSpec::Table(_) => discrete_gradient(&q, grid.dt)?,
            },
        };
        let boundary = BoundaryData::new(&grid, [terminal.clone(), terminal], [m1, m2], q, q_dot)
            .map_err(|e| key_err("boundary", e))?;

        let driver = DriverConfig {
            omega: self.driver.omega,
            tol: self.driver.tol,
            max_iters: self.driver.max_iters,
            initial_guess: self.driver.initial_guess,
        };
        driver.validate().map_err(|e| key_err("driver", e))?;
        match self.driver.initial_p {
            InitialP::Value(v) if !(0.0..=1.0).contains(&v) => {
                return Err(key_err(
                    "driver.initial_p",
                    format!("value must lie in [0, 1], got {v}"),
                ));
            }
            InitialP::Scan(range) => range
                .validate()
                .map_err(|e| key_err("driver.initial_p", e))?,
            _ => {}
        }

        let ode = OdeConfig {
            denominator_floor: self.ode.denominator_floor,
            integrator: self.ode.integrator,
            clamp: self.ode.clamp,
        };
        ode.validate().map_err(|e| key_err("ode", e))?;

        let snapshot_stride = match self.output.snapshot_stride {
            Some(0) => return Err(key_err("output.snapshot_stride", "must be at least 1")),
            Some(s) => s,
            None => (grid.n_t / 10).max(1),
        };

        Ok(RunSetup {
            grid,
            params: self.params,
            models,
            boundary,
            driver,
            ode,
            drift_sign: self.ode.drift_sign,
            initial_p: self.driver.initial_p,
            output_dir: PathBuf::from(&self.output.directory),
            emit_svg: self.output.emit_svg,
            snapshot_stride,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_yields_the_documented_defaults() {
        let cfg = parse_config_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let setup = cfg.build().unwrap();
        assert_eq!(setup.grid.n_x, 201);
        assert_eq!(setup.grid.n_t, 201);
        assert!((setup.grid.dx - 0.04).abs() < 1e-15);
        assert_eq!(setup.snapshot_stride, 20);
        assert_eq!(setup.drift_sign, DriftSign::Pde);
        assert!(matches!(setup.initial_p, InitialP::Solve));
        assert_eq!(setup.boundary.q, vec![-0.1; 201]);
        assert_eq!(setup.boundary.q_dot, vec![0.0; 201]);
        assert_eq!(setup.boundary.terminal_u[0], setup.boundary.terminal_u[1]);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = parse_config_str(r#"{"grid": {"n_q": 5}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("grid") && msg.contains("n_q"), "{msg}");

        let err = parse_config_str(r#"{"grandiose": true}"#).unwrap_err();
        assert!(err.to_string().contains("grandiose"), "{err}");
    }

    #[test]
    fn constraint_violations_name_the_key() {
        let cfg = parse_config_str(r#"{"grid": {"n_x": 2}}"#).unwrap();
        let err = cfg.build().unwrap_err();
        assert!(err.to_string().contains("grid.n_x"), "{err}");

        let cfg = parse_config_str(r#"{"driver": {"omega": 1.5}}"#).unwrap();
        let err = cfg.build().unwrap_err();
        assert!(err.to_string().contains("driver"), "{err}");

        let cfg = parse_config_str(r#"{"boundary": {"initial_m1": {"table": [1.0, 2.0]}}}"#).unwrap();
        let err = cfg.build().unwrap_err();
        assert!(err.to_string().contains("boundary.initial_m1"), "{err}");
    }

    #[test]
    fn density_tables_are_renormalized() {
        let mut cfg = RunConfig::default();
        cfg.grid.n_x = 5;
        cfg.grid.n_t = 3;
        cfg.boundary.initial_m1 = DensitySpec::Table(vec![2.0; 5]);
        let setup = cfg.build().unwrap();
        let mass = trapezoid(&setup.boundary.initial_m[0], setup.grid.dx);
        assert!((mass - 1.0).abs() < 1e-14);
    }

    #[test]
    fn omitted_budget_derivative_is_differenced_from_the_table() {
        let mut cfg = RunConfig::default();
        cfg.grid.n_t = 5;
        cfg.grid.n_x = 11;
        // Q linear in t: the numerical derivative is exact.
        let q: Vec<f64> = (0..5).map(|j| -0.1 + 0.2 * (j as f64 * 0.25)).collect();
        cfg.boundary.q = SeriesSpec::Table(q);
        let setup = cfg.build().unwrap();
        for v in &setup.boundary.q_dot {
            assert!((v - 0.2).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut cfg = RunConfig::default();
        cfg.driver.initial_p = InitialP::Scan(crate::driver::ScanRange {
            start: 0.0,
            stop: 1.0,
            step: 0.1,
        });
        cfg.boundary.q = SeriesSpec::Constant(-0.2);
        cfg.output.emit_svg = true;
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = parse_config_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn scan_block_parses_and_enumerates() {
        let cfg = parse_config_str(
            r#"{"driver": {"initial_p": {"scan": {"start": 0.0, "stop": 1.0, "step": 0.1}}}}"#,
        )
        .unwrap();
        let setup = cfg.build().unwrap();
        match setup.initial_p {
            InitialP::Scan(range) => assert_eq!(range.values().len(), 11),
            other => panic!("expected scan, got {other:?}"),
        }
    }
}
