//! Numerical solver for a coupled two-population mean-field game with a
//! shared resource constraint.
//!
//! Each population `k` carries a value function `u_k` and a density `m_k` on
//! a one-dimensional state space, tied together by the scalar probability
//! `p(t)` of a shared gene being expressed:
//!
//! ```text
//! -du_k/dt + H_k(x, p, du_k/dx) = d2u_k/dx2      backward from terminal data
//!  dm_k/dt - d(m_k dH_k/dh)/dx  = d2m_k/dx2      forward from initial data
//!  sum_k integral dH_k/dh(x, p) m_k dx = -Q(t)   resource budget
//! ```
//!
//! Differentiating the budget row in time turns it into a scalar ODE for
//! `p`, and a damped fixed-point iteration couples the three solvers. The
//! [`cli`] module exposes the whole pipeline behind a command-line binary:
//! single solves, initial-probability sweeps, assumption validation, and a
//! Monte Carlo particle cross-check.

// Validation guards are written `!(x > 0.0)` on purpose: the negation also
// rejects NaN, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beetle;
pub mod calculus;
pub mod cli;
pub mod config;
pub mod driver;
pub mod error;
pub mod fp;
pub mod gene_ode;
pub mod grid;
pub mod hjb;
pub mod model;
pub mod output;
