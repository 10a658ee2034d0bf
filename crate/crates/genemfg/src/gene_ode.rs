//! The scalar probability ODE driven by the two population densities.
//!
//! Differentiating the resource constraint
//!
//! ```text
//! sum_i integral dH_i/dh(x, p) m_i(t, x) dx = -Q(t)
//! ```
//!
//! in time and substituting the forward equation gives
//!
//! ```text
//! dp/dt = [ -dQ/dt + sum_i integral d2H_i/dhdx (2 dH_i/dh m_i + dm_i/dx) dx ]
//!         / [ sum_i integral d2H_i/dhdp m_i dx ]
//! ```
//!
//! The numerator has two algebraically equal forms: a direct one using the
//! mixed derivative, and an integrated-by-parts one that never evaluates it.
//! Both are kept; their agreement is a discretization self-check.

use serde::{Deserialize, Serialize};

use crate::calculus::{discrete_gradient, trapezoid};
use crate::error::{Error, Result};
use crate::grid::{DensityField, ProbabilityPath, SpaceTimeGrid};
use crate::model::HamiltonianModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampMode {
    ClampToUnitInterval,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeConfig {
    /// Magnitude floor applied to the denominator before dividing; the sign
    /// is kept (zero counts as positive).
    pub denominator_floor: f64,
    pub integrator: Integrator,
    pub clamp: ClampMode,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig {
            denominator_floor: 1e-8,
            integrator: Integrator::Rk4,
            clamp: ClampMode::ClampToUnitInterval,
        }
    }
}

impl OdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.denominator_floor > 0.0) || !self.denominator_floor.is_finite() {
            return Err(Error::Parameter(format!(
                "denominator_floor must be positive and finite, got {}",
                self.denominator_floor
            )));
        }
        Ok(())
    }
}

/// One right-hand-side evaluation, with the pieces exposed for diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct ThetaRhs {
    pub value: f64,
    pub numerator: f64,
    /// Raw (un-floored) denominator.
    pub denominator: f64,
    pub floored: bool,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct ThetaDiagnostics {
    /// Steps whose committed value had to be clamped into [0, 1].
    pub clamp_events: usize,
    /// Right-hand-side evaluations where the denominator hit the floor.
    pub floor_events: usize,
}

/// Direct numerator: uses the mixed derivative d2H/dhdx.
pub fn numerator_direct<M1, M2>(
    models: (&M1, &M2),
    slices: (&[f64], &[f64]),
    p: f64,
    grid: &SpaceTimeGrid,
) -> Result<f64>
where
    M1: HamiltonianModel + ?Sized,
    M2: HamiltonianModel + ?Sized,
{
    fn one<M: HamiltonianModel + ?Sized>(
        model: &M,
        m: &[f64],
        p: f64,
        grid: &SpaceTimeGrid,
    ) -> Result<f64> {
        let weighted: Vec<f64> = m
            .iter()
            .enumerate()
            .map(|(i, &mi)| model.d_h(grid.x(i), p) * mi)
            .collect();
        let dm = discrete_gradient(m, grid.dx)?;
        Ok(model.d_hx() * (2.0 * trapezoid(&weighted, grid.dx) + trapezoid(&dm, grid.dx)))
    }
    Ok(one(models.0, slices.0, p, grid)? + one(models.1, slices.1, p, grid)?)
}

/// Integrated-by-parts numerator: never evaluates d2H/dhdx. Uses
/// d2H/dhdx = d/dx(dH/dh) and moves the derivative onto the densities:
///
/// ```text
/// integral d/dx(g) (2 g m + m') dx
///   = [g^2 m + g m']_L^R - integral (g^2 m' + g m'') dx,   g = dH/dh
/// ```
///
/// with m'' taken as the gradient applied twice. The interior centered
/// stencils telescope exactly under trapezoid weights; the one-sided wall
/// stencils leave a residual weighted by the wall values of m, so the two
/// assemblies agree tightly only when the density's tails are negligible
/// at the walls.
pub fn numerator_by_parts<M1, M2>(
    models: (&M1, &M2),
    slices: (&[f64], &[f64]),
    p: f64,
    grid: &SpaceTimeGrid,
) -> Result<f64>
where
    M1: HamiltonianModel + ?Sized,
    M2: HamiltonianModel + ?Sized,
{
    fn one<M: HamiltonianModel + ?Sized>(
        model: &M,
        m: &[f64],
        p: f64,
        grid: &SpaceTimeGrid,
    ) -> Result<f64> {
        let n = m.len();
        let g: Vec<f64> = (0..n).map(|i| model.d_h(grid.x(i), p)).collect();
        let dm = discrete_gradient(m, grid.dx)?;
        let ddm = discrete_gradient(&dm, grid.dx)?;

        let boundary = g[n - 1] * g[n - 1] * m[n - 1] + g[n - 1] * dm[n - 1]
            - (g[0] * g[0] * m[0] + g[0] * dm[0]);
        let bulk_sq: Vec<f64> = (0..n).map(|i| g[i] * g[i] * dm[i]).collect();
        let bulk_grad: Vec<f64> = (0..n).map(|i| g[i] * ddm[i]).collect();
        Ok(boundary - trapezoid(&bulk_sq, grid.dx) - trapezoid(&bulk_grad, grid.dx))
    }
    Ok(one(models.0, slices.0, p, grid)? + one(models.1, slices.1, p, grid)?)
}

/// Evaluate the probability ODE right-hand side at one time level.
pub fn theta_rhs<M1, M2>(
    models: (&M1, &M2),
    slices: (&[f64], &[f64]),
    q_dot: f64,
    p: f64,
    grid: &SpaceTimeGrid,
    denominator_floor: f64,
) -> Result<ThetaRhs>
where
    M1: HamiltonianModel + ?Sized,
    M2: HamiltonianModel + ?Sized,
{
    let numerator = -q_dot + numerator_direct(models, slices, p, grid)?;
    let denominator = models.0.d_hp(p) * trapezoid(slices.0, grid.dx)
        + models.1.d_hp(p) * trapezoid(slices.1, grid.dx);
    let floored = denominator.abs() < denominator_floor;
    let effective = if floored {
        // Keep the sign; an exactly zero denominator counts as positive.
        if denominator < 0.0 {
            -denominator_floor
        } else {
            denominator_floor
        }
    } else {
        denominator
    };
    Ok(ThetaRhs {
        value: numerator / effective,
        numerator,
        denominator,
        floored,
    })
}

/// Integrate the probability ODE across the whole grid with classical RK4,
/// interpolating density slices and dQ/dt linearly to the stage midpoints.
/// The committed value is clamped into [0, 1] each step; the unclamped
/// values are kept alongside.
pub fn integrate_theta<M1, M2>(
    models: (&M1, &M2),
    m1: &DensityField,
    m2: &DensityField,
    q_dot: &[f64],
    p0: f64,
    grid: &SpaceTimeGrid,
    config: &OdeConfig,
) -> Result<(ProbabilityPath, ThetaDiagnostics)>
where
    M1: HamiltonianModel + ?Sized,
    M2: HamiltonianModel + ?Sized,
{
    config.validate()?;
    if q_dot.len() != grid.n_t {
        return Err(Error::Dimension(format!(
            "q_dot has {} levels, grid has {}",
            q_dot.len(),
            grid.n_t
        )));
    }
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::Parameter(format!("p0 must lie in [0, 1], got {p0}")));
    }

    let mut diagnostics = ThetaDiagnostics::default();
    let mut values = Vec::with_capacity(grid.n_t);
    let mut raw = Vec::with_capacity(grid.n_t);
    values.push(p0);
    raw.push(p0);

    let h = grid.dt;
    let midpoint = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| (x + y) / 2.0).collect()
    };

    let mut p = p0;
    for j in 0..grid.n_t - 1 {
        let (m1_lo, m1_hi) = (m1.slice(j), m1.slice(j + 1));
        let (m2_lo, m2_hi) = (m2.slice(j), m2.slice(j + 1));
        let m1_mid = midpoint(m1_lo, m1_hi);
        let m2_mid = midpoint(m2_lo, m2_hi);
        let qd_mid = (q_dot[j] + q_dot[j + 1]) / 2.0;

        let mut eval = |slices: (&[f64], &[f64]), qd: f64, pv: f64| -> Result<f64> {
            let rhs = theta_rhs(models, slices, qd, pv, grid, config.denominator_floor)?;
            if rhs.floored {
                diagnostics.floor_events += 1;
            }
            if !rhs.value.is_finite() {
                return Err(Error::Integration {
                    time_index: j,
                    context: format!(
                        "non-finite rhs (numerator {}, denominator {})",
                        rhs.numerator, rhs.denominator
                    ),
                });
            }
            Ok(rhs.value)
        };

        let k1 = eval((m1_lo, m2_lo), q_dot[j], p)?;
        let k2 = eval((&m1_mid, &m2_mid), qd_mid, p + 0.5 * h * k1)?;
        let k3 = eval((&m1_mid, &m2_mid), qd_mid, p + 0.5 * h * k2)?;
        let k4 = eval((m1_hi, m2_hi), q_dot[j + 1], p + h * k3)?;

        let unclamped = p + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !unclamped.is_finite() {
            return Err(Error::Integration {
                time_index: j,
                context: "non-finite step".into(),
            });
        }
        let clamped = unclamped.clamp(0.0, 1.0);
        if clamped != unclamped {
            diagnostics.clamp_events += 1;
        }
        raw.push(unclamped);
        values.push(clamped);
        p = clamped;
    }

    let path = ProbabilityPath {
        times: grid.t_nodes(),
        values,
        raw,
    };
    Ok((path, diagnostics))
}

/// Root tolerance for the initial-probability solve.
const ROOT_TOLERANCE: f64 = 1e-12;

/// Solve the resource constraint at time zero for the initial probability:
/// find p in [0, 1] with
///
/// ```text
/// g(p) = sum_i integral dH_i/dh(x, p) m_i(0, x) dx + Q(0) = 0.
/// ```
///
/// Endpoint roots are returned exactly; otherwise bisection runs until
/// either |g| or the bracket width drops below 1e-12.
pub fn solve_initial_p<M1, M2>(
    models: (&M1, &M2),
    slices: (&[f64], &[f64]),
    q0: f64,
    grid: &SpaceTimeGrid,
) -> Result<f64>
where
    M1: HamiltonianModel + ?Sized,
    M2: HamiltonianModel + ?Sized,
{
    let g = |p: f64| -> f64 {
        let mut total = q0;
        let weighted: Vec<f64> = slices
            .0
            .iter()
            .enumerate()
            .map(|(i, &m)| models.0.d_h(grid.x(i), p) * m)
            .collect();
        total += trapezoid(&weighted, grid.dx);
        let weighted: Vec<f64> = slices
            .1
            .iter()
            .enumerate()
            .map(|(i, &m)| models.1.d_h(grid.x(i), p) * m)
            .collect();
        total += trapezoid(&weighted, grid.dx);
        total
    };

    let g0 = g(0.0);
    if g0.abs() <= ROOT_TOLERANCE {
        return Ok(0.0);
    }
    let g1 = g(1.0);
    if g1.abs() <= ROOT_TOLERANCE {
        return Ok(1.0);
    }
    if g0.signum() == g1.signum() {
        return Err(Error::NoRoot {
            g_at_zero: g0,
            g_at_one: g1,
        });
    }

    let (mut lo, mut hi, mut g_lo) = (0.0f64, 1.0f64, g0);
    loop {
        let mid = (lo + hi) / 2.0;
        let g_mid = g(mid);
        if g_mid.abs() <= ROOT_TOLERANCE || hi - lo <= ROOT_TOLERANCE {
            return Ok(mid);
        }
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
}

/// Pointwise residual of the resource constraint along a solution:
/// `r(t_j) = sum_i integral dH_i/dh(x, p_j) m_i(t_j, x) dx + Q(t_j)`.
pub fn constraint_residual<M1, M2>(
    models: (&M1, &M2),
    m1: &DensityField,
    m2: &DensityField,
    q: &[f64],
    p: &ProbabilityPath,
    grid: &SpaceTimeGrid,
) -> Result<Vec<f64>>
where
    M1: HamiltonianModel + ?Sized,
    M2: HamiltonianModel + ?Sized,
{
    if q.len() != grid.n_t || p.values.len() != grid.n_t {
        return Err(Error::Dimension(
            "constraint residual needs full-length q and p".into(),
        ));
    }
    fn flow<M: HamiltonianModel + ?Sized>(
        model: &M,
        slice: &[f64],
        pv: f64,
        grid: &SpaceTimeGrid,
    ) -> f64 {
        let weighted: Vec<f64> = slice
            .iter()
            .enumerate()
            .map(|(i, &m)| model.d_h(grid.x(i), pv) * m)
            .collect();
        trapezoid(&weighted, grid.dx)
    }

    let mut residual = Vec::with_capacity(grid.n_t);
    for (j, &qv) in q.iter().enumerate() {
        let pv = p.values[j];
        residual.push(
            qv + flow(models.0, m1.slice(j), pv, grid) + flow(models.1, m2.slice(j), pv, grid),
        );
    }
    Ok(residual)
}
