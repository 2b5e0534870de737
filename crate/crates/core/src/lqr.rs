//! Finite-horizon LQR reference machinery for the double integrator.
//!
//! The double integrator with quadratic costs is the one benchmark whose
//! optimal value function is known in closed form up to a matrix Riccati
//! ODE, which makes it the independent yardstick for everything downstream:
//! the HJB feedback policy, rollout residuals, adjoint convergence, and the
//! trained networks' trajectory costs.
//!
//! [`solve_di_riccati`] integrates the Riccati ODE
//!
//! ```text
//! −Ṗ = AᵀP + PA − P B R⁻¹ Bᵀ P + Q,   P(T) = 0
//! ```
//!
//! for `A = [[0,1],[0,0]]`, `B = [0;1]` backward from the terminal time with
//! a fine fixed-step RK4 (the integrator here is deliberately different from
//! the forward-Euler scheme under test in [`crate::rollout`]). The resulting
//! [`RiccatiSolution`] exposes `P(t)` by dense storage plus linear
//! interpolation, the feedback gain `R⁻¹BᵀP(t)`, and the optimal cost
//! `x₀ᵀP(0)x₀`. [`QuadraticValue`] and [`RiccatiValue`] wrap a frozen /
//! time-varying quadratic as [`ValueFunction`] diagnostics with zero
//! trainable parameters.

use crate::error::{Error, Result};
use crate::nets::{InputDerivatives, ValueFunction};

/// Internal RK4 step of the backward Riccati integration.
const INTEGRATION_DT: f64 = 1e-5;
/// Storage stride for the interpolation table.
const STORE_EVERY: usize = 100;

/// Symmetric 2×2 `P(t)` stored as `(p11, p12, p22)`.
type PTriple = [f64; 3];

/// Dense finite-horizon Riccati solution for the double integrator.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    /// `P` sampled on an ascending time grid from 0 to `horizon`.
    table: Vec<PTriple>,
    /// Spacing of the table in seconds.
    stride: f64,
    horizon: f64,
    q: [f64; 2],
    r: f64,
}

/// Riccati right-hand side `Ṗ = −(AᵀP + PA − P B R⁻¹ Bᵀ P + Q)` for the
/// double integrator, written out by hand:
/// `AᵀP = [[0,0],[p11,p12]]`, `PBBᵀP = [[p12², p12·p22],[p12·p22, p22²]]`.
fn p_dot(p: PTriple, q: &[f64; 2], r: f64) -> PTriple {
    let [p11, p12, p22] = p;
    [
        -(q[0] - p12 * p12 / r),
        -(p11 - p12 * p22 / r),
        -(2.0 * p12 + q[1] - p22 * p22 / r),
    ]
}

/// Integrate the double-integrator Riccati ODE backward from `P(T) = 0`.
/// `q` holds the diagonal of `Q`; `r > 0` is the scalar control weight.
pub fn solve_di_riccati(q: [f64; 2], r: f64, horizon: f64) -> Result<RiccatiSolution> {
    if !(r > 0.0) || !(horizon > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "riccati needs r > 0 and horizon > 0, got r={r}, horizon={horizon}"
        )));
    }
    // Substituting τ = T − t turns the backward problem into a forward one:
    // dS/dτ = −Ṗ evaluated at S, S(0) = 0.
    let steps = (horizon / INTEGRATION_DT).round() as usize;
    let dt = horizon / steps as f64;
    let mut s: PTriple = [0.0; 3];
    let mut stored = vec![s];
    let add = |a: PTriple, b: PTriple, c: f64| -> PTriple {
        [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2]]
    };
    let neg_pdot = |p: PTriple| -> PTriple {
        let d = p_dot(p, &q, r);
        [-d[0], -d[1], -d[2]]
    };
    for step in 1..=steps {
        let k1 = neg_pdot(s);
        let k2 = neg_pdot(add(s, k1, 0.5 * dt));
        let k3 = neg_pdot(add(s, k2, 0.5 * dt));
        let k4 = neg_pdot(add(s, k3, dt));
        for i in 0..3 {
            s[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if step % STORE_EVERY == 0 || step == steps {
            stored.push(s);
        }
    }
    // stored[j] = S(j·stride) = P(T − j·stride); reverse to index by t.
    stored.reverse();
    Ok(RiccatiSolution {
        table: stored,
        stride: dt * STORE_EVERY as f64,
        horizon,
        q,
        r,
    })
}

impl RiccatiSolution {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `P(t)` by linear interpolation of the stored table; `t` is clamped to
    /// `[0, T]`.
    pub fn p_at(&self, t: f64) -> PTriple {
        let pos = (t.clamp(0.0, self.horizon)) / self.stride;
        let i = (pos.floor() as usize).min(self.table.len() - 2);
        let w = pos - i as f64;
        let (a, b) = (self.table[i], self.table[i + 1]);
        [
            a[0] + w * (b[0] - a[0]),
            a[1] + w * (b[1] - a[1]),
            a[2] + w * (b[2] - a[2]),
        ]
    }

    /// Time derivative `Ṗ(t)` from the Riccati right-hand side (not from
    /// differencing the table).
    pub fn p_dot_at(&self, t: f64) -> PTriple {
        p_dot(self.p_at(t), &self.q, self.r)
    }

    /// Feedback gain `K(t) = R⁻¹BᵀP(t) = [p12, p22]/r`, so the optimal
    /// control is `u = −K(t)·x`.
    pub fn gain_at(&self, t: f64) -> [f64; 2] {
        let p = self.p_at(t);
        [p[1] / self.r, p[2] / self.r]
    }

    /// Optimal cost-to-go from `x0` at time 0: `x₀ᵀP(0)x₀`.
    pub fn optimal_cost(&self, x0: &[f64]) -> f64 {
        quad_form(self.p_at(0.0), x0)
    }

    /// The time-varying optimal value function as a diagnostic.
    pub fn value(self) -> RiccatiValue {
        RiccatiValue { sol: self }
    }
}

fn quad_form(p: PTriple, x: &[f64]) -> f64 {
    p[0] * x[0] * x[0] + 2.0 * p[1] * x[0] * x[1] + p[2] * x[1] * x[1]
}

fn quad_grad(p: PTriple, x: &[f64]) -> Vec<f64> {
    vec![
        2.0 * (p[0] * x[0] + p[1] * x[1]),
        2.0 * (p[1] * x[0] + p[2] * x[1]),
    ]
}

fn check_dim(x: &[f64], context: &'static str) -> Result<()> {
    if x.len() != 2 {
        return Err(Error::dim(context, 2, x.len()));
    }
    Ok(())
}

/// Frozen quadratic `v(x) = xᵀPx` (time-invariant), e.g. with `P` from the
/// algebraic Riccati equation. Zero trainable parameters.
#[derive(Debug, Clone)]
pub struct QuadraticValue {
    p: PTriple,
}

impl QuadraticValue {
    pub fn new(p11: f64, p12: f64, p22: f64) -> Self {
        QuadraticValue {
            p: [p11, p12, p22],
        }
    }
}

impl ValueFunction for QuadraticValue {
    fn input_dim(&self) -> usize {
        2
    }

    fn param_count(&self) -> usize {
        0
    }

    fn forward(&self, x: &[f64], _t: f64) -> Result<f64> {
        check_dim(x, "lqr.quadratic.forward")?;
        Ok(quad_form(self.p, x))
    }

    fn input_derivatives(&self, x: &[f64], _t: f64) -> Result<InputDerivatives> {
        check_dim(x, "lqr.quadratic.input_derivatives")?;
        Ok(InputDerivatives {
            v_x: quad_grad(self.p, x),
            v_t: 0.0,
        })
    }

    fn param_gradient_into(&self, x: &[f64], _t: f64, _scale: f64, _acc: &mut [f64]) -> Result<()> {
        check_dim(x, "lqr.quadratic.param_gradient")?;
        Ok(())
    }

    fn second_order_vjp_into(
        &self,
        x: &[f64],
        _t: f64,
        w: &[f64],
        scale: f64,
        h_x_out: &mut [f64],
        _acc: &mut [f64],
    ) -> Result<Vec<f64>> {
        check_dim(x, "lqr.quadratic.second_order_vjp")?;
        check_dim(w, "lqr.quadratic.second_order_vjp direction")?;
        // ∂/∂x (v_x·w) = 2Pw, independent of x.
        let g = quad_grad(self.p, w);
        h_x_out[0] = scale * g[0];
        h_x_out[1] = scale * g[1];
        Ok(quad_grad(self.p, x))
    }
}

/// The finite-horizon optimal value `v(x, t) = xᵀP(t)x` as a diagnostic.
#[derive(Debug, Clone)]
pub struct RiccatiValue {
    sol: RiccatiSolution,
}

impl ValueFunction for RiccatiValue {
    fn input_dim(&self) -> usize {
        2
    }

    fn param_count(&self) -> usize {
        0
    }

    fn forward(&self, x: &[f64], t: f64) -> Result<f64> {
        check_dim(x, "lqr.riccati.forward")?;
        Ok(quad_form(self.sol.p_at(t), x))
    }

    fn input_derivatives(&self, x: &[f64], t: f64) -> Result<InputDerivatives> {
        check_dim(x, "lqr.riccati.input_derivatives")?;
        Ok(InputDerivatives {
            v_x: quad_grad(self.sol.p_at(t), x),
            // v_t = xᵀṖ(t)x with Ṗ from the ODE itself.
            v_t: quad_form(self.sol.p_dot_at(t), x),
        })
    }

    fn param_gradient_into(&self, x: &[f64], _t: f64, _scale: f64, _acc: &mut [f64]) -> Result<()> {
        check_dim(x, "lqr.riccati.param_gradient")?;
        Ok(())
    }

    fn second_order_vjp_into(
        &self,
        x: &[f64],
        t: f64,
        w: &[f64],
        scale: f64,
        h_x_out: &mut [f64],
        _acc: &mut [f64],
    ) -> Result<Vec<f64>> {
        check_dim(x, "lqr.riccati.second_order_vjp")?;
        check_dim(w, "lqr.riccati.second_order_vjp direction")?;
        let p = self.sol.p_at(t);
        let g = quad_grad(p, w);
        h_x_out[0] = scale * g[0];
        h_x_out[1] = scale * g[1];
        Ok(quad_grad(p, x))
    }
}
