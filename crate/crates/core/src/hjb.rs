//! The HJB feedback policy, quadratic running costs, and the per-trajectory
//! residuals that define both training losses.
//!
//! For a control-affine system and quadratic costs, the minimizing control
//! of the HJB equation is available in closed form:
//!
//! ```text
//! u*(x, t) = −½ R⁻¹ g(x)ᵀ v_x(x, t)ᵀ
//! ```
//!
//! where `v_x` is the gradient of the value function with respect to the
//! *physical* state. Networks consume encoded states, so [`policy`] pulls
//! the network gradient back through the encoding Jacobian before applying
//! the formula.
//!
//! A rollout under this policy yields two residuals:
//!
//! * [`value_residual`] — how far `v` is from satisfying the dynamic-
//!   programming identity `v(x(T), T) − v(x(0), 0) = −∫ (ℓ(x) + uᵀRu) dt`
//!   along the closed-loop trajectory (zero iff `v` is consistent with its
//!   own induced policy on that trajectory).
//! * [`lyapunov_residual`] — the hinge of the same expression with the
//!   control penalty removed from the integrand, so only decrease along
//!   trajectories is demanded, not cost accounting. A configuration switch
//!   reinstates the control penalty for ablations.
//!
//! Integrals use the left-endpoint rectangle rule; this matches the
//! forward-Euler rollout exactly, which is what makes the discrete adjoint
//! in [`crate::rollout`] the *exact* gradient of these losses.

use crate::envs::Env;
use crate::error::{Error, Result};
use crate::nets::ValueFunction;
use crate::rollout::Trajectory;
use nalgebra::DMatrix;

/// Quadratic cost pair `(Q, R)` with `R⁻¹` precomputed for the policy.
/// `Q` acts on encoded states; `R` on controls.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
}

/// Largest asymmetry / negative eigenvalue tolerated by the PSD check.
const SYM_TOL: f64 = 1e-10;

impl CostSpec {
    /// Validate `Q` symmetric PSD and `R` symmetric PD (by symmetric
    /// eigendecomposition and Cholesky respectively), then cache `R⁻¹`.
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<CostSpec> {
        for (m, label) in [(&q, "Q"), (&r, "R")] {
            if !m.is_square() {
                return Err(Error::InvalidConfig(format!("{label} must be square")));
            }
            let asym = (m - m.transpose()).abs().max();
            if asym > SYM_TOL {
                return Err(Error::InvalidConfig(format!(
                    "{label} is not symmetric (max asymmetry {asym:.2e})"
                )));
            }
        }
        let eigs = q.clone().symmetric_eigenvalues();
        let scale = eigs.amax().max(1.0);
        if eigs.iter().any(|&e| e < -SYM_TOL * scale) {
            return Err(Error::InvalidConfig(format!(
                "Q has a negative eigenvalue ({:.2e})",
                eigs.min()
            )));
        }
        let chol = nalgebra::Cholesky::new(r.clone())
            .ok_or_else(|| Error::InvalidConfig("R is not positive definite".into()))?;
        let r_inv = chol.inverse();
        Ok(CostSpec { q, r, r_inv })
    }

    /// The environment's preset cost matrices (validated — presets are
    /// correct by construction, so failure here is a library bug).
    pub fn from_env(env: &Env) -> CostSpec {
        CostSpec::new(env.q_matrix().clone(), env.r_matrix().clone())
            .expect("environment presets carry valid cost matrices")
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    /// `ℓ(x̂) = x̂ᵀQx̂` (encoded state).
    pub fn state_cost(&self, xhat: &[f64]) -> f64 {
        quad_form(&self.q, xhat)
    }

    /// `uᵀRu`.
    pub fn control_cost(&self, u: &[f64]) -> f64 {
        quad_form(&self.r, u)
    }

    /// `ℓ(x̂) + uᵀRu`.
    pub fn running_cost(&self, xhat: &[f64], u: &[f64]) -> f64 {
        self.state_cost(xhat) + self.control_cost(u)
    }

    /// `∂ℓ/∂x̂ = 2Qx̂`.
    pub fn state_cost_gradient(&self, xhat: &[f64]) -> Vec<f64> {
        quad_grad(&self.q, xhat)
    }

    /// `∂(uᵀRu)/∂u = 2Ru`.
    pub fn control_cost_gradient(&self, u: &[f64]) -> Vec<f64> {
        quad_grad(&self.r, u)
    }
}

fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = m.nrows();
    debug_assert_eq!(x.len(), n);
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * x[j];
        }
        acc += x[i] * row;
    }
    acc
}

fn quad_grad(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let n = m.nrows();
    (0..n)
        .map(|i| 2.0 * (0..n).map(|j| m[(i, j)] * x[j]).sum::<f64>())
        .collect()
}

/// The closed-form HJB feedback `u* = −½ R⁻¹ g(x)ᵀ v_xᵀ`, with the network
/// evaluated on the encoded state and its gradient pulled back through the
/// encoding. No clipping or saturation.
pub fn policy(
    net: &dyn ValueFunction,
    env: &Env,
    cost: &CostSpec,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    let xhat = env.encoded_error(x);
    let grad_enc = net.state_gradient(&xhat, t)?;
    let v_x = env.encode_vjp(x, &grad_enc);
    control_from_gradient(env, cost, x, &v_x)
}

/// The same feedback formula applied to an already-computed physical-state
/// gradient `v_x`.
pub fn control_from_gradient(
    env: &Env,
    cost: &CostSpec,
    x: &[f64],
    v_x: &[f64],
) -> Result<Vec<f64>> {
    let g = env.input_matrix(x)?;
    let (n, m) = (env.state_dim(), env.control_dim());
    let gtv: Vec<f64> = (0..m)
        .map(|j| (0..n).map(|i| g[(i, j)] * v_x[i]).sum())
        .collect();
    let r_inv = cost.r_inv();
    Ok((0..m)
        .map(|j| -0.5 * (0..m).map(|k| r_inv[(j, k)] * gtv[k]).sum::<f64>())
        .collect())
}

fn endpoint_values(net: &dyn ValueFunction, env: &Env, traj: &Trajectory) -> Result<(f64, f64)> {
    if traj.controls.is_empty() {
        return Err(Error::Contract {
            context: "hjb.residual trajectory",
            expected: "at least one step".into(),
            got: "empty control sequence".into(),
        });
    }
    let grid = &traj.grid;
    let v0 = net.forward(&env.encoded_error(&traj.states[0]), 0.0)?;
    let v_t = net.forward(
        &env.encoded_error(traj.states.last().unwrap()),
        grid.time(grid.steps()),
    )?;
    Ok((v0, v_t))
}

/// `r = v(x_K, T) − v(x₀, 0) + dt·Σ_k (ℓ(x̂_k) + u_kᵀRu_k)`: zero when `v`
/// satisfies the dynamic-programming identity along this trajectory.
pub fn value_residual(net: &dyn ValueFunction, env: &Env, traj: &Trajectory) -> Result<f64> {
    let (v0, v_t) = endpoint_values(net, env, traj)?;
    Ok(v_t - v0 + traj.integral(true))
}

/// The pre-hinge Lyapunov expression: like [`value_residual`] but the
/// integrand keeps only `ℓ(x̂)` unless `include_control` is set.
pub fn lyapunov_inner(
    net: &dyn ValueFunction,
    env: &Env,
    traj: &Trajectory,
    include_control: bool,
) -> Result<f64> {
    let (v0, v_t) = endpoint_values(net, env, traj)?;
    Ok(v_t - v0 + traj.integral(include_control))
}

/// `max(lyapunov_inner, 0)`. At exactly zero the hinge is treated as
/// inactive (subgradient 0) by the adjoint in [`crate::rollout`].
pub fn lyapunov_residual(
    net: &dyn ValueFunction,
    env: &Env,
    traj: &Trajectory,
    include_control: bool,
) -> Result<f64> {
    Ok(lyapunov_inner(net, env, traj, include_control)?.max(0.0))
}
