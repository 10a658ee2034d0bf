//! Forward density solver, density metrics, and the particle oracle.
//!
//! The forward equation is posed as
//!
//! ```text
//! dm/dt - d/dx(m * dH/dh) = d2m/dx2
//! ```
//!
//! so the transport velocity is `-dH/dh`. The discretization is a
//! node-centered conservative finite volume: interior cells have width `dx`,
//! the two boundary cells width `dx/2`, which makes cell mass equal trapezoid
//! mass node for node. Advective face fluxes are explicit donor-cell upwind,
//! diffusion is implicit (tridiagonal M-matrix), and both boundary faces
//! carry zero total flux, so mass is conserved by telescoping rather than by
//! correction.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::trapezoid;
use crate::error::{Error, Result};
use crate::grid::{DensityField, ProbabilityPath, SpaceTimeGrid};
use crate::model::HamiltonianModel;

/// Orientation of the drift term. The two readings of the model disagree
/// about this sign (the density equation as posed versus the agent-level
/// dynamics `dX = (dH/dh) dt + sqrt(2) dW`), so it is a config switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftSign {
    /// Forward equation exactly as posed: `dm/dt - d/dx(m * dH/dh) = d2m/dx2`,
    /// transport velocity `-dH/dh`. Default.
    #[default]
    Pde,
    /// Sign flipped to match the agent-level dynamics: velocity `+dH/dh`.
    Sde,
}

impl DriftSign {
    /// Factor `sigma` in the solved form `dm/dt = d/dx(sigma * m * dH/dh) + d2m/dx2`.
    fn divergence_factor(self) -> f64 {
        match self {
            DriftSign::Pde => 1.0,
            DriftSign::Sde => -1.0,
        }
    }

    /// Transport velocity of a particle at `x`: the same drift the density
    /// solver uses, read off as `-sigma * dH/dh`.
    pub fn velocity<M: HamiltonianModel + ?Sized>(self, model: &M, x: f64, p: f64) -> f64 {
        -self.divergence_factor() * model.d_h(x, p)
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct FpDiagnostics {
    /// Number of cells clipped from negative to zero across the run.
    pub clip_events: usize,
    /// Total clipped magnitude, trapezoid-weighted.
    pub clipped_mass: f64,
    /// Largest per-step deviation of raw (pre-renormalization) mass from 1.
    pub max_mass_drift: f64,
}

/// Hard limit on per-step raw mass drift; the scheme conserves mass by
/// telescoping, so anything past roundoff scale means the solve is garbage.
const MASS_DRIFT_LIMIT: f64 = 1e-6;

/// Solve the forward equation for one population given the probability path.
pub fn solve_fp<M: HamiltonianModel>(
    model: &M,
    grid: &SpaceTimeGrid,
    initial: &[f64],
    p: &ProbabilityPath,
    drift_sign: DriftSign,
) -> Result<(DensityField, FpDiagnostics)> {
    if initial.len() != grid.n_x {
        return Err(Error::Dimension(format!(
            "initial density has {} nodes, grid has {}",
            initial.len(),
            grid.n_x
        )));
    }
    if p.values.len() != grid.n_t {
        return Err(Error::Dimension(format!(
            "probability path has {} levels, grid has {}",
            p.values.len(),
            grid.n_t
        )));
    }
    if initial.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Precondition(
            "initial density must be nonnegative and finite".into(),
        ));
    }
    let initial_mass = trapezoid(initial, grid.dx);
    if (initial_mass - 1.0).abs() > 1e-8 {
        return Err(Error::Precondition(format!(
            "initial density has trapezoid mass {initial_mass}, expected 1"
        )));
    }

    let n = grid.n_x;
    let dx = grid.dx;
    let dt = grid.dt;
    let sigma = drift_sign.divergence_factor();

    // Cell widths: half cells at the boundary so cell mass = trapezoid mass.
    let cell = |i: usize| if i == 0 || i == n - 1 { dx / 2.0 } else { dx };

    // Implicit diffusion matrix (zero diffusive flux through the outer faces).
    let mut diag = vec![0.0; n];
    let mut lower = vec![0.0; n - 1];
    let mut upper = vec![0.0; n - 1];
    for i in 0..n {
        let k = dt / (cell(i) * dx);
        let left = if i > 0 { k } else { 0.0 };
        let right = if i < n - 1 { k } else { 0.0 };
        diag[i] = 1.0 + left + right;
        if i > 0 {
            lower[i - 1] = -k;
        }
        if i < n - 1 {
            upper[i] = -k;
        }
    }

    let mut values = Array2::zeros((grid.n_t, n));
    {
        // Normalize away the (≤ 1e-8) input mass slack so the invariant is
        // exact from the start.
        let mut row = values.row_mut(0);
        for (dst, src) in row.iter_mut().zip(initial) {
            *dst = src / initial_mass;
        }
    }

    let mut diagnostics = FpDiagnostics::default();
    let mut rhs = vec![0.0; n];
    let mut adv_flux = vec![0.0; n - 1];

    for j in 0..grid.n_t - 1 {
        let p_now = p.values[j];
        let old: Vec<f64> = values.row(j).to_vec();

        // Advective flux through interior faces, donor-cell upwind. The flux
        // convention is G = m*w + dm/dx with w = sigma * dH/dh, so the donor
        // sits upstream of the transport velocity -w.
        for i in 0..n - 1 {
            let w = sigma * model.d_h(grid.x(i) + dx / 2.0, p_now);
            let donor = if w < 0.0 { old[i] } else { old[i + 1] };
            adv_flux[i] = w * donor;
        }

        for i in 0..n {
            let right = if i < n - 1 { adv_flux[i] } else { 0.0 };
            let left = if i > 0 { adv_flux[i - 1] } else { 0.0 };
            rhs[i] = old[i] + dt / cell(i) * (right - left);
        }

        let mut new = crate::calculus::solve_tridiagonal(&lower, &diag, &upper, &rhs);
        if new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Blowup {
                time_index: j + 1,
                context: "forward density solve produced non-finite values".into(),
            });
        }

        let raw_mass = trapezoid(&new, dx);
        let drift = raw_mass - 1.0;
        diagnostics.max_mass_drift = diagnostics.max_mass_drift.max(drift.abs());
        if drift.abs() > MASS_DRIFT_LIMIT {
            return Err(Error::Conservation {
                time_index: j + 1,
                drift,
            });
        }

        for (i, v) in new.iter_mut().enumerate() {
            if *v < 0.0 {
                diagnostics.clip_events += 1;
                diagnostics.clipped_mass += -*v * cell(i);
                *v = 0.0;
            }
        }
        let clipped_mass = trapezoid(&new, dx);
        if !(clipped_mass > 0.0) {
            return Err(Error::Blowup {
                time_index: j + 1,
                context: "density lost all mass after clipping".into(),
            });
        }
        for v in &mut new {
            *v /= clipped_mass;
        }

        values
            .row_mut(j + 1)
            .assign(&ndarray::ArrayView1::from(&new[..]));
    }

    if diagnostics.clip_events > 0 {
        log::warn!(
            "clipped {} negative density cells (total mass {:.3e})",
            diagnostics.clip_events,
            diagnostics.clipped_mass
        );
    }

    Ok((DensityField::new(*grid, values)?, diagnostics))
}

/// Trapezoid mass of a density slice.
pub fn mass(slice: &[f64], dx: f64) -> f64 {
    trapezoid(slice, dx)
}

/// First moment of a density slice (its mean when the slice has unit mass).
pub fn mean(slice: &[f64], grid: &SpaceTimeGrid) -> f64 {
    let weighted: Vec<f64> = slice
        .iter()
        .enumerate()
        .map(|(i, &m)| grid.x(i) * m)
        .collect();
    trapezoid(&weighted, grid.dx)
}

/// 1-D Wasserstein-1 distance between two same-grid density slices:
/// the integral of the absolute difference of their CDFs.
pub fn wasserstein1(m_a: &[f64], m_b: &[f64], dx: f64) -> Result<f64> {
    if m_a.len() != m_b.len() {
        return Err(Error::Dimension(format!(
            "slices have different lengths: {} vs {}",
            m_a.len(),
            m_b.len()
        )));
    }
    let mass_a = trapezoid(m_a, dx);
    let mass_b = trapezoid(m_b, dx);
    if (mass_a - mass_b).abs() > 1e-6 {
        return Err(Error::Precondition(format!(
            "mass mismatch: {mass_a} vs {mass_b}"
        )));
    }
    let n = m_a.len();
    let mut cdf_gap = vec![0.0; n];
    let mut ca = 0.0;
    let mut cb = 0.0;
    for i in 1..n {
        ca += dx * (m_a[i - 1] + m_a[i]) / 2.0;
        cb += dx * (m_b[i - 1] + m_b[i]) / 2.0;
        cdf_gap[i] = (ca - cb).abs();
    }
    Ok(trapezoid(&cdf_gap, dx))
}

/// Simulate `n_particles` agents with the same drift the density solver uses
/// (`velocity = -sigma * dH/dh`) and diffusion `sqrt(2) dW`, reflecting at the
/// box edges, and histogram their terminal positions onto the grid.
///
/// Each particle owns its own counter-mode RNG stream keyed by its index, so
/// the result is bit-identical for a fixed seed regardless of how the work is
/// split across threads.
pub fn particle_oracle<M: HamiltonianModel + ?Sized>(
    model: &M,
    grid: &SpaceTimeGrid,
    initial: &[f64],
    p: &ProbabilityPath,
    n_particles: usize,
    seed: u64,
    drift_sign: DriftSign,
) -> Result<Vec<f64>> {
    if n_particles == 0 {
        return Err(Error::Parameter("n_particles must be at least 1".into()));
    }
    if initial.len() != grid.n_x {
        return Err(Error::Dimension(format!(
            "initial density has {} nodes, grid has {}",
            initial.len(),
            grid.n_x
        )));
    }

    // Inverse-CDF sampler for the initial positions: cumulative trapezoid,
    // linear interpolation inside each segment.
    let n = grid.n_x;
    let mut cdf = vec![0.0; n];
    for i in 1..n {
        cdf[i] = cdf[i - 1] + grid.dx * (initial[i - 1] + initial[i]) / 2.0;
    }
    let total = cdf[n - 1];
    if !(total > 0.0) {
        return Err(Error::Precondition("initial density has no mass".into()));
    }
    for c in &mut cdf {
        *c /= total;
    }

    let sample_initial = |u: f64| -> f64 {
        let idx = cdf.partition_point(|&c| c < u).min(n - 1).max(1);
        let (lo, hi) = (cdf[idx - 1], cdf[idx]);
        let frac = if hi > lo { (u - lo) / (hi - lo) } else { 0.0 };
        grid.x(idx - 1) + frac * grid.dx
    };

    let counts = (0..n_particles)
        .into_par_iter()
        .fold(
            || vec![0u64; n],
            |mut hist, particle| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(particle as u64);
                let mut x = sample_initial(rng.gen::<f64>());
                let root_2dt = (2.0 * grid.dt).sqrt();
                for j in 0..grid.n_t - 1 {
                    let v = drift_sign.velocity(model, x, p.values[j]);
                    let noise: f64 = rng.sample(StandardNormal);
                    x += v * grid.dt + root_2dt * noise;
                    // Reflect at the box edges to match the no-flux boundary.
                    loop {
                        if x < grid.x_min {
                            x = 2.0 * grid.x_min - x;
                        } else if x > grid.x_max {
                            x = 2.0 * grid.x_max - x;
                        } else {
                            break;
                        }
                    }
                }
                let bin = ((x - grid.x_min) / grid.dx).round() as usize;
                hist[bin.min(n - 1)] += 1;
                hist
            },
        )
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );

    // Node-centered bins have the same half-width boundary cells as the
    // solver, so dividing by the cell width gives unit trapezoid mass exactly.
    let slice: Vec<f64> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let cell = if i == 0 || i == n - 1 {
                grid.dx / 2.0
            } else {
                grid.dx
            };
            c as f64 / (n_particles as f64 * cell)
        })
        .collect();
    Ok(slice)
}
