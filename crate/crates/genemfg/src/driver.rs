//! Damped fixed-point iteration coupling the three solvers.
//!
//! One sweep maps a probability path p to a new candidate theta: solve both
//! backward value problems under p, both forward density problems under p,
//! then integrate the probability ODE from the anchored initial value through
//! the fresh densities. A fixed point of this map is a solution of the
//! coupled system; the iteration damps updates by `omega` and measures
//! `sup_t |theta - p|` as its residual.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp::{solve_fp, DriftSign};
use crate::gene_ode::{constraint_residual, integrate_theta, OdeConfig};
use crate::grid::{BoundaryData, DensityField, ProbabilityPath, ScalarField, SpaceTimeGrid};
use crate::hjb::{solve_hjb, HjbConfig, HjbSolution};
use crate::model::HamiltonianModel;

/// How the anchored initial probability is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialP {
    /// Root-solve the resource constraint at time zero.
    Solve,
    /// Use a fixed value.
    Value(f64),
    /// Sweep a range of fixed values (one solve per value).
    Scan(ScanRange),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl ScanRange {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.start)
            && (0.0..=1.0).contains(&self.stop)
            && self.stop >= self.start
            && self.step > 0.0
            && self.step.is_finite();
        if !ok {
            return Err(Error::Parameter(format!(
                "scan range must satisfy 0 <= start <= stop <= 1 with step > 0, \
                 got start {} stop {} step {}",
                self.start, self.stop, self.step
            )));
        }
        Ok(())
    }

    /// The swept values: `start + i * step` for `i = 0 ..= round((stop-start)/step)`.
    pub fn values(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step).round() as usize + 1;
        (0..count)
            .map(|i| (self.start + i as f64 * self.step).clamp(0.0, 1.0))
            .collect()
    }
}

/// First iterate of the probability path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    /// Constant path at the given value.
    Constant(f64),
    /// Constant path at the anchored initial probability.
    SolveP0ThenConstant,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriverConfig {
    /// Damping weight on the update, in (0, 1]; 1 is undamped.
    pub omega: f64,
    /// Convergence threshold on `sup_t |theta - p|`.
    pub tol: f64,
    pub max_iters: usize,
    pub initial_guess: InitialGuess,
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig {
            omega: 0.5,
            tol: 1e-6,
            max_iters: 200,
            initial_guess: InitialGuess::SolveP0ThenConstant,
        }
    }
}

impl DriverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::Parameter(format!(
                "omega must lie in (0, 1], got {}",
                self.omega
            )));
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::Parameter(format!(
                "tol must be positive and finite, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Parameter("max_iters must be at least 1".into()));
        }
        if let InitialGuess::Constant(v) = self.initial_guess {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parameter(format!(
                    "initial guess must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct IterationReport {
    pub converged: bool,
    /// Sweeps performed before stopping (not counting the final recompute).
    pub iterations: usize,
    /// `sup_t |theta - p|` per sweep.
    pub residuals: Vec<f64>,
    /// `max_t |r(t)|` of the resource constraint along the final solution.
    pub constraint_residual_max: f64,
    /// Largest value-gradient magnitude per population, final solve.
    pub max_gradient: [f64; 2],
    /// Density cells clipped negative, totaled over every forward solve.
    pub clip_events: usize,
    pub clipped_mass: f64,
    /// Probability steps clamped into [0, 1], totaled over every integration.
    pub clamp_events: usize,
    /// Denominator-floor activations, totaled over every integration.
    pub floor_events: usize,
    pub wall_time_secs: f64,
}

pub struct SolutionBundle {
    pub u1: HjbSolution,
    pub u2: HjbSolution,
    pub m1: DensityField,
    pub m2: DensityField,
    /// The converged probability path (best iterate when not converged).
    pub p: ProbabilityPath,
    /// One more ODE pass through the final fields; `sup |theta - p|` is at
    /// most twice the tolerance when converged.
    pub theta: ProbabilityPath,
    /// Pointwise resource-constraint residual along the final solution.
    pub constraint: Vec<f64>,
    pub report: IterationReport,
}

/// Borrowed view of one solution's fields, for comparing two of them.
#[derive(Clone, Copy)]
pub struct SolutionView<'a> {
    pub u1: &'a ScalarField,
    pub u2: &'a ScalarField,
    pub m1: &'a DensityField,
    pub m2: &'a DensityField,
    pub p: &'a ProbabilityPath,
}

impl SolutionBundle {
    pub fn view(&self) -> SolutionView<'_> {
        SolutionView {
            u1: &self.u1.field,
            u2: &self.u2.field,
            m1: &self.m1,
            m2: &self.m2,
            p: &self.p,
        }
    }
}

/// Run the damped fixed-point iteration from the anchored initial
/// probability `p0`. Non-convergence is reported in the bundle, not an
/// error: the best iterate is recomputed and returned.
pub fn fixed_point_solve<M1, M2>(
    models: (&M1, &M2),
    grid: &SpaceTimeGrid,
    boundary: &BoundaryData,
    driver: &DriverConfig,
    ode: &OdeConfig,
    drift_sign: DriftSign,
    p0: f64,
) -> Result<SolutionBundle>
where
    M1: HamiltonianModel,
    M2: HamiltonianModel,
{
    driver.validate()?;
    ode.validate()?;
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::Parameter(format!(
            "anchored initial probability must lie in [0, 1], got {p0}"
        )));
    }

    let start = Instant::now();
    let hjb_cfg = HjbConfig::default();
    let mut report = IterationReport::default();

    let guess = match driver.initial_guess {
        InitialGuess::Constant(v) => v,
        InitialGuess::SolveP0ThenConstant => p0,
    };
    let mut p_current = ProbabilityPath::constant(grid, guess)?;

    // One sweep of the composed map at a fixed probability path.
    let sweep = |p_path: &ProbabilityPath,
                     report: &mut IterationReport|
     -> Result<(
        HjbSolution,
        HjbSolution,
        DensityField,
        DensityField,
        ProbabilityPath,
    )> {
        let (u1, u2) = rayon::join(
            || solve_hjb(models.0, grid, &boundary.terminal_u[0], p_path, &hjb_cfg),
            || solve_hjb(models.1, grid, &boundary.terminal_u[1], p_path, &hjb_cfg),
        );
        let (u1, u2) = (u1?, u2?);
        let (m1, m2) = rayon::join(
            || solve_fp(models.0, grid, &boundary.initial_m[0], p_path, drift_sign),
            || solve_fp(models.1, grid, &boundary.initial_m[1], p_path, drift_sign),
        );
        let (m1, d1) = m1?;
        let (m2, d2) = m2?;
        report.clip_events += d1.clip_events + d2.clip_events;
        report.clipped_mass += d1.clipped_mass + d2.clipped_mass;
        let (theta, tdiag) = integrate_theta(models, &m1, &m2, &boundary.q_dot, p0, grid, ode)?;
        report.clamp_events += tdiag.clamp_events;
        report.floor_events += tdiag.floor_events;
        Ok((u1, u2, m1, m2, theta))
    };

    let mut converged = false;
    let mut best: Option<(f64, ProbabilityPath)> = None;
    let mut final_p: Option<ProbabilityPath> = None;

    for _ in 0..driver.max_iters {
        let (_, _, _, _, theta) = sweep(&p_current, &mut report)?;
        let residual = theta
            .values
            .iter()
            .zip(&p_current.values)
            .map(|(t, p)| (t - p).abs())
            .fold(0.0f64, f64::max);
        report.residuals.push(residual);
        report.iterations += 1;

        if best.as_ref().is_none_or(|(r, _)| residual < *r) {
            best = Some((residual, theta.clone()));
        }
        if residual <= driver.tol {
            converged = true;
            final_p = Some(theta);
            break;
        }

        let blended: Vec<f64> = p_current
            .values
            .iter()
            .zip(&theta.values)
            .map(|(p, t)| (1.0 - driver.omega) * p + driver.omega * t)
            .collect();
        p_current = ProbabilityPath {
            times: grid.t_nodes(),
            raw: blended.clone(),
            values: blended,
        };
    }

    let final_p = final_p.unwrap_or_else(|| best.expect("at least one sweep ran").1);
    if !converged {
        log::warn!(
            "fixed point not reached in {} sweeps (best residual {:.3e})",
            report.iterations,
            report.residuals.iter().cloned().fold(f64::INFINITY, f64::min)
        );
    }

    // Recompute every field on the final path; the extra ODE pass doubles as
    // a fixed-point certificate.
    let (u1, u2, m1, m2, theta_star) = sweep(&final_p, &mut report)?;
    let constraint = constraint_residual(models, &m1, &m2, &boundary.q, &final_p, grid)?;

    report.converged = converged;
    report.constraint_residual_max = constraint.iter().fold(0.0f64, |acc, r| acc.max(r.abs()));
    report.max_gradient = [u1.max_gradient, u2.max_gradient];
    report.wall_time_secs = start.elapsed().as_secs_f64();

    Ok(SolutionBundle {
        u1,
        u2,
        m1,
        m2,
        p: final_p,
        theta: theta_star,
        constraint,
        report,
    })
}

/// The sign-definite functional separating two candidate solutions. Writing
/// the second candidate's fields and path with primes, it accumulates
///
/// ```text
/// sum_i int int  (p'-p)   [ m_i dH_i/dp(x, p, du_i'/dx) - m_i' dH_i/dp(x, p', du_i/dx) ]
///              + (p'-p)   [ m_i' dH_i/dh(x, p') - m_i dH_i/dh(x, p) ]
///              + (p'-p)^2 [ m_i d2H_i/dp2(x, pm, du_i'/dx) + m_i' d2H_i/dp2(x, pm, du_i/dx) ]
/// ```
///
/// over space and time (trapezoid both ways), where `pm` is the midpoint of
/// the two probabilities at that instant. Equal probability paths make every
/// term vanish identically.
pub fn monotonicity_gap<M1, M2>(
    models: (&M1, &M2),
    a: SolutionView<'_>,
    b: SolutionView<'_>,
    grid: &SpaceTimeGrid,
) -> Result<f64>
where
    M1: HamiltonianModel,
    M2: HamiltonianModel,
{
    for view in [&a, &b] {
        if view.p.values.len() != grid.n_t || view.m1.slice(0).len() != grid.n_x {
            return Err(Error::Dimension(
                "candidate fields do not match the grid".into(),
            ));
        }
    }

    let mut gap = 0.0;
    for j in 0..grid.n_t {
        let p_a = a.p.values[j];
        let p_b = b.p.values[j];
        let dp = p_b - p_a;
        let p_mid = (p_a + p_b) / 2.0;

        let mut integrand = vec![0.0; grid.n_x];
        for (model, (ua, ub), (ma, mb)) in [
            (
                models.0 as &dyn HamiltonianModel,
                (a.u1, b.u1),
                (a.m1, b.m1),
            ),
            (
                models.1 as &dyn HamiltonianModel,
                (a.u2, b.u2),
                (a.m2, b.m2),
            ),
        ] {
            let grad_a = crate::calculus::discrete_gradient(ua.slice(j), grid.dx)?;
            let grad_b = crate::calculus::discrete_gradient(ub.slice(j), grid.dx)?;
            let (ma, mb) = (ma.slice(j), mb.slice(j));
            for i in 0..grid.n_x {
                let x = grid.x(i);
                let cross = ma[i] * model.d_p(x, p_a, grad_b[i]) - mb[i] * model.d_p(x, p_b, grad_a[i]);
                let drift = mb[i] * model.d_h(x, p_b) - ma[i] * model.d_h(x, p_a);
                let curvature = ma[i] * model.d_pp(x, p_mid, grad_b[i])
                    + mb[i] * model.d_pp(x, p_mid, grad_a[i]);
                integrand[i] += dp * (cross + drift) + dp * dp * curvature;
            }
        }
        let space = crate::calculus::trapezoid(&integrand, grid.dx);
        let weight = if j == 0 || j == grid.n_t - 1 { 0.5 } else { 1.0 };
        gap += weight * grid.dt * space;
    }
    Ok(gap)
}
