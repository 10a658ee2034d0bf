//! Space-time discretization and the field containers that live on it.

use ndarray::Array2;
use serde::Serialize;

use crate::calculus::trapezoid;
use crate::error::{Error, Result};

/// Uniform grid on `[x_min, x_max] x [0, horizon]` with `n_x` space nodes
/// (including both endpoints) and `n_t` time levels (including both ends).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpaceTimeGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub horizon: f64,
    pub n_t: usize,
    pub dx: f64,
    pub dt: f64,
}

impl SpaceTimeGrid {
    pub fn new(x_min: f64, x_max: f64, n_x: usize, horizon: f64, n_t: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return Err(Error::Parameter(format!(
                "need finite x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if n_x < 3 {
            return Err(Error::Parameter(format!(
                "n_x must be at least 3, got {n_x}"
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Parameter(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if n_t < 2 {
            return Err(Error::Parameter(format!(
                "n_t must be at least 2, got {n_t}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            n_x,
            horizon,
            n_t,
            dx: (x_max - x_min) / (n_x - 1) as f64,
            dt: horizon / (n_t - 1) as f64,
        })
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + self.dx * i as f64
    }

    pub fn t(&self, j: usize) -> f64 {
        self.dt * j as f64
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        (0..self.n_x).map(|i| self.x(i)).collect()
    }

    pub fn t_nodes(&self) -> Vec<f64> {
        (0..self.n_t).map(|j| self.t(j)).collect()
    }
}

/// A scalar field sampled on the full space-time grid, row `j` = time level.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: SpaceTimeGrid,
    pub values: Array2<f64>,
}

impl ScalarField {
    pub fn new(grid: SpaceTimeGrid, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.n_t, grid.n_x) {
            return Err(Error::Dimension(format!(
                "field shape {:?} does not match grid ({}, {})",
                values.dim(),
                grid.n_t,
                grid.n_x
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            let (j, i) = (bad / grid.n_x, bad % grid.n_x);
            return Err(Error::Blowup {
                time_index: j,
                context: format!("non-finite field value at node {i}"),
            });
        }
        Ok(Self { grid, values })
    }

    /// Time slice as a contiguous slice of node values.
    pub fn slice(&self, j: usize) -> &[f64] {
        self.values.row(j).to_slice().expect("row-major layout")
    }
}

/// A probability density on the space-time grid: nonnegative, unit trapezoid
/// mass at every time level.
#[derive(Debug, Clone)]
pub struct DensityField {
    pub grid: SpaceTimeGrid,
    pub values: Array2<f64>,
}

impl DensityField {
    pub const MASS_TOLERANCE: f64 = 1e-8;

    pub fn new(grid: SpaceTimeGrid, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.n_t, grid.n_x) {
            return Err(Error::Dimension(format!(
                "density shape {:?} does not match grid ({}, {})",
                values.dim(),
                grid.n_t,
                grid.n_x
            )));
        }
        for j in 0..grid.n_t {
            let row = values.row(j);
            let slice = row.to_slice().expect("row-major layout");
            if let Some(i) = slice.iter().position(|v| !v.is_finite()) {
                return Err(Error::Blowup {
                    time_index: j,
                    context: format!("non-finite density at node {i}"),
                });
            }
            if let Some(i) = slice.iter().position(|&v| v < 0.0) {
                return Err(Error::Precondition(format!(
                    "negative density {} at time level {j}, node {i}",
                    slice[i]
                )));
            }
            let mass = trapezoid(slice, grid.dx);
            if (mass - 1.0).abs() > Self::MASS_TOLERANCE {
                return Err(Error::Conservation {
                    time_index: j,
                    drift: mass - 1.0,
                });
            }
        }
        Ok(Self { grid, values })
    }

    pub fn slice(&self, j: usize) -> &[f64] {
        self.values.row(j).to_slice().expect("row-major layout")
    }
}

/// The gene-expression probability as a function of time, one value per time
/// level. `values` are clamped to `[0, 1]`; `raw` keeps the unclamped
/// integrator output for diagnostics.
#[derive(Debug, Clone)]
pub struct ProbabilityPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub raw: Vec<f64>,
}

impl ProbabilityPath {
    pub fn constant(grid: &SpaceTimeGrid, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "probability must lie in [0, 1], got {p}"
            )));
        }
        Ok(Self {
            times: grid.t_nodes(),
            values: vec![p; grid.n_t],
            raw: vec![p; grid.n_t],
        })
    }
}

/// Problem data on the time boundary: terminal costs for both populations,
/// initial densities for both populations, and the resource budget path.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    pub terminal_u: [Vec<f64>; 2],
    pub initial_m: [Vec<f64>; 2],
    /// Resource budget `Q` at every time level.
    pub q: Vec<f64>,
    /// Time derivative of the budget at every time level.
    pub q_dot: Vec<f64>,
}

impl BoundaryData {
    /// Tight tolerance for caller-supplied initial masses; loaders are
    /// expected to renormalize before constructing.
    pub const INITIAL_MASS_TOLERANCE: f64 = 1e-10;

    pub fn new(
        grid: &SpaceTimeGrid,
        terminal_u: [Vec<f64>; 2],
        initial_m: [Vec<f64>; 2],
        q: Vec<f64>,
        q_dot: Vec<f64>,
    ) -> Result<Self> {
        for (name, v) in [("terminal_u[0]", &terminal_u[0]), ("terminal_u[1]", &terminal_u[1])] {
            if v.len() != grid.n_x {
                return Err(Error::Dimension(format!(
                    "{name} has {} nodes, grid has {}",
                    v.len(),
                    grid.n_x
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Precondition(format!("{name} contains non-finite values")));
            }
        }
        for (name, v) in [("initial_m[0]", &initial_m[0]), ("initial_m[1]", &initial_m[1])] {
            if v.len() != grid.n_x {
                return Err(Error::Dimension(format!(
                    "{name} has {} nodes, grid has {}",
                    v.len(),
                    grid.n_x
                )));
            }
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Precondition(format!(
                    "{name} must be nonnegative and finite"
                )));
            }
            let mass = trapezoid(v, grid.dx);
            if (mass - 1.0).abs() > Self::INITIAL_MASS_TOLERANCE {
                return Err(Error::Precondition(format!(
                    "{name} has trapezoid mass {mass}, expected 1"
                )));
            }
        }
        for (name, v) in [("q", &q), ("q_dot", &q_dot)] {
            if v.len() != grid.n_t {
                return Err(Error::Dimension(format!(
                    "{name} has {} levels, grid has {}",
                    v.len(),
                    grid.n_t
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Precondition(format!("{name} contains non-finite values")));
            }
        }
        Ok(Self {
            terminal_u,
            initial_m,
            q,
            q_dot,
        })
    }
}

/// Gaussian density sampled on the grid nodes and renormalized to unit
/// trapezoid mass, so truncation to the box never costs mass.
pub fn gaussian_density(grid: &SpaceTimeGrid, mean: f64, sd: f64) -> Result<Vec<f64>> {
    if !(sd > 0.0) {
        return Err(Error::Parameter(format!(
            "standard deviation must be positive, got {sd}"
        )));
    }
    let mut v: Vec<f64> = (0..grid.n_x)
        .map(|i| {
            let z = (grid.x(i) - mean) / sd;
            (-0.5 * z * z).exp()
        })
        .collect();
    let mass = trapezoid(&v, grid.dx);
    if !(mass > 0.0) {
        return Err(Error::Parameter(format!(
            "gaussian(mean={mean}, sd={sd}) has no mass on the grid"
        )));
    }
    for x in &mut v {
        *x /= mass;
    }
    Ok(v)
}

/// Affine profile `slope * x + intercept` sampled on the grid nodes.
pub fn affine_profile(grid: &SpaceTimeGrid, slope: f64, intercept: f64) -> Vec<f64> {
    (0..grid.n_x).map(|i| slope * grid.x(i) + intercept).collect()
}
