//! Learning time-varying value and Lyapunov functions for control-affine
//! systems by minimizing residuals of the Hamilton-Jacobi-Bellman equation
//! over closed-loop rollouts.
//!
//! The library is organized around a simple pipeline:
//!
//! * [`nets`] — scalar function approximators `v(x, t; θ)` (a plain MLP and a
//!   positive-definite input-convex network) with exact, hand-rolled first-
//!   and second-order derivatives.
//! * [`envs`] — control-affine benchmark systems `ẋ = f(x) + g(x) u` with
//!   analytic Jacobians (double integrator, cart-pole, two-link arm).
//! * [`hjb`] — the feedback policy `u* = -1/2 R⁻¹ gᵀ v_xᵀ` induced by a value
//!   function, quadratic running costs, and per-trajectory residuals.
//! * [`rollout`] — forward-Euler closed-loop rollouts and the exact
//!   discrete-adjoint gradient of the rollout losses.
//! * [`train`] — full-batch Adam training loops producing convergence curves.
//! * [`mppi`] — a path-integral MPC controller that can warmstart its nominal
//!   control sequence from a learned value function.
//! * [`lqr`] — finite-horizon Riccati machinery used as an independent
//!   reference for the double integrator.

pub mod envs;
pub mod error;
pub mod hjb;
pub mod lqr;
pub mod mppi;
pub mod ndiff;
pub mod nets;
pub mod rollout;
pub mod train;

pub use error::{Error, Result};
