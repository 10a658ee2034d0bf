//! The quadratic-gain model family and its closed-form derivatives.
//!
//! Each population `k` pays a quadratic control cost `a * alpha^2` and
//! receives gain `b_k * alpha * p`, so the control maximization gives
//! `alpha* = b_k p / (2a)` and the optimized gain `F_k(p) = b_k^2 p^2 / (4a)`.
//! With affine state decay `l(x) = c x` the Hamiltonian is
//!
//! ```text
//! H_k(x, p, h) = -(1 - h) * (F_k(p) - l(x))
//! ```
//!
//! which makes `dH/dh = F_k(p) - l(x)` independent of `h` — the structural
//! identity `(1 - h) * dH/dh = -H` that the backward scheme exploits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HamiltonianModel, ProbeGrid};

/// Shared parameters for the two-population quadratic-gain model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeetleParams {
    /// Control cost coefficient, shared by both populations.
    pub a: f64,
    /// Gain coefficient of population 1.
    pub b1: f64,
    /// Gain coefficient of population 2.
    pub b2: f64,
    /// Decay-rate slope: `l(x) = c x`.
    pub c: f64,
    /// Gradient margin: value-function gradients stay within `1 - delta`.
    pub delta: f64,
}

impl Default for BeetleParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            b1: 1.0,
            b2: 1.2,
            c: 0.5,
            delta: 0.5,
        }
    }
}

impl BeetleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(Error::Parameter(format!(
                "params.a must be positive, got {}",
                self.a
            )));
        }
        for (name, b) in [("params.b1", self.b1), ("params.b2", self.b2)] {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::Parameter(format!(
                    "{name} must be nonnegative, got {b}"
                )));
            }
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(Error::Parameter(format!(
                "params.c must be nonnegative, got {}",
                self.c
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Parameter(format!(
                "params.delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// One population's closed-form model.
#[derive(Debug, Clone, Copy)]
pub struct BeetleModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl HamiltonianModel for BeetleModel {
    fn hamiltonian(&self, x: f64, p: f64, h: f64) -> f64 {
        -(1.0 - h) * self.d_h(x, p)
    }

    fn optimized_gain(&self, p: f64) -> f64 {
        self.b * self.b * p * p / (4.0 * self.a)
    }

    fn d_h(&self, x: f64, p: f64) -> f64 {
        self.optimized_gain(p) - self.decay_rate(x)
    }

    fn d_p(&self, _x: f64, p: f64, h: f64) -> f64 {
        -(1.0 - h) * self.b * self.b * p / (2.0 * self.a)
    }

    fn d_pp(&self, _x: f64, _p: f64, h: f64) -> f64 {
        -(1.0 - h) * self.b * self.b / (2.0 * self.a)
    }

    fn d_hx(&self) -> f64 {
        -self.c
    }

    fn d_hp(&self, p: f64) -> f64 {
        self.b * self.b * p / (2.0 * self.a)
    }

    fn optimal_control(&self, p: f64) -> f64 {
        self.b * p / (2.0 * self.a)
    }

    fn lipschitz_p(&self) -> f64 {
        self.b * self.b / (2.0 * self.a)
    }

    fn decay_rate(&self, x: f64) -> f64 {
        self.c * x
    }

    fn decay_slope(&self) -> f64 {
        self.c
    }
}

/// Build the two population models from shared parameters.
pub fn population_models(params: &BeetleParams) -> (BeetleModel, BeetleModel) {
    (
        BeetleModel {
            a: params.a,
            b: params.b1,
            c: params.c,
        },
        BeetleModel {
            a: params.a,
            b: params.b2,
            c: params.c,
        },
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeCheck {
    pub name: String,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Finite-difference cross-check of every closed-form derivative a model
/// advertises. A failure here is a hard error: the solvers consume the
/// closed forms directly.
#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    pub checks: Vec<DerivativeCheck>,
}

impl ConsistencyReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn worst(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.max_relative_error)
            .fold(0.0, f64::max)
    }
}

const FD_TOLERANCE: f64 = 1e-6;
/// Central-difference step for first derivatives.
const FD_STEP: f64 = 1e-6;
/// Wider step for the second difference in `p`, where cancellation bites.
const FD_STEP_SECOND: f64 = 1e-4;

fn relative(err: f64, scale: f64) -> f64 {
    err.abs() / scale.abs().max(1.0)
}

/// Compare every closed-form derivative against central differences of the
/// Hamiltonian over the probe lattice.
pub fn finite_difference_consistency(
    model: &dyn HamiltonianModel,
    probe: &ProbeGrid,
) -> ConsistencyReport {
    let mut d_h_err = 0.0f64;
    let mut d_p_err = 0.0f64;
    let mut d_pp_err = 0.0f64;
    let mut d_hp_err = 0.0f64;
    let mut d_hx_err = 0.0f64;
    let mut gain_err = 0.0f64;
    let mut identity_err = 0.0f64;

    for &x in &probe.x {
        for &p in &probe.p {
            for &h in &probe.h {
                let fd_h = (model.hamiltonian(x, p, h + FD_STEP)
                    - model.hamiltonian(x, p, h - FD_STEP))
                    / (2.0 * FD_STEP);
                d_h_err = d_h_err.max(relative(fd_h - model.d_h(x, p), fd_h));

                let fd_p = (model.hamiltonian(x, p + FD_STEP, h)
                    - model.hamiltonian(x, p - FD_STEP, h))
                    / (2.0 * FD_STEP);
                d_p_err = d_p_err.max(relative(fd_p - model.d_p(x, p, h), fd_p));

                let fd_pp = (model.hamiltonian(x, p + FD_STEP_SECOND, h)
                    - 2.0 * model.hamiltonian(x, p, h)
                    + model.hamiltonian(x, p - FD_STEP_SECOND, h))
                    / (FD_STEP_SECOND * FD_STEP_SECOND);
                d_pp_err = d_pp_err.max(relative(fd_pp - model.d_pp(x, p, h), fd_pp));

                let fd_hp =
                    (model.d_h(x, p + FD_STEP) - model.d_h(x, p - FD_STEP)) / (2.0 * FD_STEP);
                d_hp_err = d_hp_err.max(relative(fd_hp - model.d_hp(p), fd_hp));

                let fd_hx =
                    (model.d_h(x + FD_STEP, p) - model.d_h(x - FD_STEP, p)) / (2.0 * FD_STEP);
                d_hx_err = d_hx_err.max(relative(fd_hx - model.d_hx(), fd_hx));

                let gain_gap = model.d_h(x, p) - (model.optimized_gain(p) - model.decay_rate(x));
                gain_err = gain_err.max(relative(gain_gap, model.d_h(x, p)));

                let identity_gap = (1.0 - h) * model.d_h(x, p) + model.hamiltonian(x, p, h);
                identity_err =
                    identity_err.max(relative(identity_gap, model.hamiltonian(x, p, h)));
            }
        }
    }

    let check = |name: &str, err: f64| DerivativeCheck {
        name: name.into(),
        max_relative_error: err,
        tolerance: FD_TOLERANCE,
        pass: err <= FD_TOLERANCE,
    };

    ConsistencyReport {
        checks: vec![
            check("d_h_vs_central_difference", d_h_err),
            check("d_p_vs_central_difference", d_p_err),
            check("d_pp_vs_second_difference", d_pp_err),
            check("d_hp_vs_central_difference", d_hp_err),
            check("d_hx_vs_central_difference", d_hx_err),
            check("d_h_vs_gain_minus_decay", gain_err),
            check("hamiltonian_factorization_identity", identity_err),
        ],
    }
}
