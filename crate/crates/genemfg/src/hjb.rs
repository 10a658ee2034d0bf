//! Backward value-function solver.
//!
//! The equation, solved backward from terminal data, is
//!
//! ```text
//! -du/dt + H(x, p(t), du/dx) = d2u/dx2
//! ```
//!
//! Using the factorization `H(x, p, h) = s(x, p) * h - s(x, p)` with
//! `s = dH/dh`, each backward step treats diffusion implicitly and the
//! advection/source part explicitly with upwinding:
//!
//! ```text
//! u^j - dt * D2 u^j = u^{j+1} - dt * s * upwind_grad(u^{j+1}) + dt * s
//! ```
//!
//! At the walls the solution is extended linearly at the far-field slope.
//! Terminal data are affine outside the box, and an affine far field keeps
//! zero curvature forever while its slope follows the closed recursion
//! `b <- b + dt * d_hx * (1 - b)` (independent of `p`, since only the
//! x-derivative of the drift enters). Each wall node is slaved to its
//! neighbour, `u_wall = u_neighbour -/+ dx * b`, which keeps affine data
//! exactly affine and the whole update monotone. Extrapolating the wall from
//! its two local neighbours instead is unstable here: the drift flows inward
//! at both walls, so the wall-adjacent recursion picks up an undamped
//! `1 + dt*|s|/dx` factor and terminal-tail roundoff grows by orders of
//! magnitude over a run.

use ndarray::Array2;

use crate::calculus::{discrete_gradient, second_difference, solve_tridiagonal};
use crate::error::{Error, Result};
use crate::grid::{ProbabilityPath, ScalarField, SpaceTimeGrid};
use crate::model::HamiltonianModel;

#[derive(Debug, Clone, Copy)]
pub struct HjbConfig {
    /// Advisory threshold: log if the solution gradient ever exceeds this.
    /// Purely diagnostic; nothing is clipped.
    pub gradient_warn_threshold: f64,
}

impl Default for HjbConfig {
    fn default() -> Self {
        Self {
            gradient_warn_threshold: 0.75,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HjbSolution {
    pub field: ScalarField,
    /// Largest `|du/dx|` over all nodes and time levels.
    pub max_gradient: f64,
}

/// Solve the backward equation for one population given the probability path.
pub fn solve_hjb<M: HamiltonianModel>(
    model: &M,
    grid: &SpaceTimeGrid,
    terminal: &[f64],
    p: &ProbabilityPath,
    config: &HjbConfig,
) -> Result<HjbSolution> {
    if terminal.len() != grid.n_x {
        return Err(Error::Dimension(format!(
            "terminal data has {} nodes, grid has {}",
            terminal.len(),
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
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("terminal data contains non-finite values".into()));
    }

    let n = grid.n_x;
    let dx = grid.dx;
    let dt = grid.dt;
    let r = dt / (dx * dx);

    // Far-field slopes, seeded from the terminal data's one-sided slopes and
    // recursed per step. The wall nodes are slaved to their neighbours at
    // these slopes, so the wall columns are eliminated from the implicit
    // system: the first and last interior rows lose one off-diagonal and `r`
    // from their diagonal, and carry the slope offset on the right-hand side.
    let d_hx = model.d_hx();
    let mut b_left = (terminal[1] - terminal[0]) / dx;
    let mut b_right = (terminal[n - 1] - terminal[n - 2]) / dx;

    // Implicit diffusion matrix: strict M-matrix on the interior rows; the
    // wall rows are placeholders (slaved after each solve). On a 3-node grid
    // both wall eliminations land on the single interior row, which is still
    // the correct reduction.
    let mut diag = vec![1.0 + 2.0 * r; n];
    let mut lower = vec![-r; n - 1];
    let mut upper = vec![-r; n - 1];
    diag[0] = 1.0;
    upper[0] = 0.0;
    diag[n - 1] = 1.0;
    lower[n - 2] = 0.0;
    diag[1] -= r;
    lower[0] = 0.0;
    diag[n - 2] -= r;
    upper[n - 2] = 0.0;

    let mut values = Array2::zeros((grid.n_t, n));
    values.row_mut(grid.n_t - 1).assign(
        &ndarray::ArrayView1::from(terminal),
    );

    let mut max_gradient = max_abs(&discrete_gradient(terminal, dx)?);
    let mut worst_cfl = 0.0f64;

    let mut rhs = vec![0.0; n];
    for j in (0..grid.n_t - 1).rev() {
        let p_next = p.values[j + 1];
        let prev_owned: Vec<f64> = values.row(j + 1).to_vec();
        let prev = &prev_owned;

        b_left += dt * d_hx * (1.0 - b_left);
        b_right += dt * d_hx * (1.0 - b_right);

        for i in 1..n - 1 {
            let s = model.d_h(grid.x(i), p_next);
            worst_cfl = worst_cfl.max(dt * s.abs() / dx);
            // Upwind one-sided difference against the transport direction;
            // interior nodes always have their upwind neighbour.
            let grad = if s > 0.0 {
                (prev[i] - prev[i - 1]) / dx
            } else if s < 0.0 {
                (prev[i + 1] - prev[i]) / dx
            } else {
                0.0
            };
            rhs[i] = prev[i] - dt * s * grad + dt * s;
        }
        rhs[1] -= r * dx * b_left;
        rhs[n - 2] += r * dx * b_right;
        rhs[0] = 0.0;
        rhs[n - 1] = 0.0;

        let mut solved = solve_tridiagonal(&lower, &diag, &upper, &rhs);
        solved[0] = solved[1] - dx * b_left;
        solved[n - 1] = solved[n - 2] + dx * b_right;
        if solved.iter().any(|v| !v.is_finite()) {
            return Err(Error::Blowup {
                time_index: j,
                context: "backward value solve produced non-finite values".into(),
            });
        }
        max_gradient = max_gradient.max(max_abs(&discrete_gradient(&solved, dx)?));
        values
            .row_mut(j)
            .assign(&ndarray::ArrayView1::from(&solved[..]));
    }

    if worst_cfl > 1.0 {
        log::warn!(
            "explicit advection ran past its stability bound: dt*|s|/dx reached {worst_cfl:.3}"
        );
    }
    if max_gradient > config.gradient_warn_threshold {
        log::warn!(
            "value-function gradient reached {max_gradient:.6}, above the advisory threshold {}",
            config.gradient_warn_threshold
        );
    }

    Ok(HjbSolution {
        field: ScalarField::new(*grid, values)?,
        max_gradient,
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Largest positive second difference per time level.
#[derive(Debug, Clone)]
pub struct SemiconcavityScan {
    pub per_time_max: Vec<f64>,
    pub bound: f64,
    pub within_bound: bool,
}

/// Scan a solved field for semiconcavity: the positive part of its second
/// differences must stay below `bound` at every time level.
pub fn check_semiconcavity(field: &ScalarField, bound: f64) -> Result<SemiconcavityScan> {
    let mut per_time_max = Vec::with_capacity(field.grid.n_t);
    for j in 0..field.grid.n_t {
        let second = second_difference(field.slice(j), field.grid.dx)?;
        per_time_max.push(second.iter().cloned().fold(0.0f64, f64::max));
    }
    let within_bound = per_time_max.iter().all(|&v| v <= bound);
    Ok(SemiconcavityScan {
        per_time_max,
        bound,
        within_bound,
    })
}
