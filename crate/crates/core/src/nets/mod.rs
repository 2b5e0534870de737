//! Scalar value-function approximators `v(x, t; θ)` with exact derivatives.
//!
//! Two network kinds are provided behind the [`ValueFunction`] trait:
//!
//! * [`NetKind::Fcn`] — a plain softplus MLP over the joined input `[x; t]`,
//!   used when `v` only has to approximate a value function.
//! * [`NetKind::IcnnPd`] — a positive-definite wrapper around an
//!   input-convex network:
//!
//!   ```text
//!   v(x, t; θ) = ICNN([x;t]) − ICNN([0;t]) − ∇ₓICNN([0;t])·x + ε ‖x‖²
//!   ```
//!
//!   The subtraction removes the core's value *and tangent plane* at the
//!   origin of the state slice. Because the slice is convex, it lies on or
//!   above that tangent plane, so the centered core is nonnegative, zero at
//!   the origin, and convex — making `v` positive definite with `v ≥ ε‖x‖²`
//!   and `v(0, t) = 0` for *every* parameter vector, not just trained ones.
//!   Subtracting the origin value alone would not do this: a convex function
//!   need not attain its minimum at the origin, and pushing the deficit
//!   through a rectifier would create flat regions where every parameter
//!   gradient vanishes identically, deadening training wherever the core
//!   dips below its origin value. The tangent correction keeps the wrapper
//!   smooth with gradients that flow everywhere.
//!
//! Time is appended to the state as a raw extra input coordinate; callers
//! that use encoded states (e.g. `cos q - 1` for revolute joints) pass the
//! encoded vector here — the networks are agnostic to the encoding.
//!
//! All derivatives — `∂v/∂x`, `∂v/∂t`, `∂v/∂θ`, and the second-order
//! directional quantities `∂/∂x (v_x · w)`, `∂/∂θ (v_x · w)` — are computed
//! by hand-rolled reverse and forward-over-reverse sweeps (no AD framework,
//! no finite differences) and are exact up to round-off. The test suite
//! checks each of them against central finite differences.

mod checkpoint;
mod icnn;
mod mlp;
pub(crate) mod scalar;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};

use crate::error::{Error, Result};
use icnn::Icnn;
use mlp::Mlp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// First-order input derivatives of a value function.
#[derive(Debug, Clone, PartialEq)]
pub struct InputDerivatives {
    /// `∂v/∂x` (length = state dimension of the network input).
    pub v_x: Vec<f64>,
    /// `∂v/∂t`.
    pub v_t: f64,
}

/// Outcome of [`ValueNetwork::project_icnn`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionOutcome {
    /// Negative propagated-path weights were clamped to zero.
    Projected { clamped: usize },
    /// The network is not an ICNN; nothing to do.
    NotIcnn,
}

/// A scalar function `v(x, t)` with exact first- and second-order
/// derivatives. Implemented by [`ValueNetwork`] and by the quadratic
/// diagnostics in [`crate::lqr`].
pub trait ValueFunction: Sync {
    /// Dimension of the state part of the input (the network input is this
    /// plus one time coordinate).
    fn input_dim(&self) -> usize;

    /// Number of trainable parameters (0 for diagnostics).
    fn param_count(&self) -> usize;

    /// Evaluate `v(x, t)`.
    fn forward(&self, x: &[f64], t: f64) -> Result<f64>;

    /// Exact `(∂v/∂x, ∂v/∂t)`.
    fn input_derivatives(&self, x: &[f64], t: f64) -> Result<InputDerivatives>;

    /// Exact `∂v/∂x` only. Equivalent to `input_derivatives(..).v_x` but may
    /// skip work that only `∂v/∂t` needs.
    fn state_gradient(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(self.input_derivatives(x, t)?.v_x)
    }

    /// `acc += scale * ∂v/∂θ`. `acc` must have length `param_count()`.
    fn param_gradient_into(&self, x: &[f64], t: f64, scale: f64, acc: &mut [f64]) -> Result<()>;

    /// Exact `∂v/∂θ`.
    fn param_gradient(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.param_count()];
        self.param_gradient_into(x, t, 1.0, &mut acc)?;
        Ok(acc)
    }

    /// Second-order directional derivatives: with `φ(x, t, θ) = v_x · w`,
    /// writes `h_x = scale * ∂φ/∂x` into `h_x_out` (overwriting it) and
    /// accumulates `acc += scale * ∂φ/∂θ`. Returns the plain first-order
    /// gradient `∂v/∂x` at `(x, t)` — the sweep produces it as a by-product
    /// and adjoint code needs it at the same point.
    fn second_order_vjp_into(
        &self,
        x: &[f64],
        t: f64,
        w: &[f64],
        scale: f64,
        h_x_out: &mut [f64],
        acc: &mut [f64],
    ) -> Result<Vec<f64>>;

    /// Materialized form of [`Self::second_order_vjp_into`] with unit scale:
    /// returns `(h_x, h_θ)`.
    fn second_order_vjp(&self, x: &[f64], t: f64, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut h_x = vec![0.0; self.input_dim()];
        let mut h_theta = vec![0.0; self.param_count()];
        self.second_order_vjp_into(x, t, w, 1.0, &mut h_x, &mut h_theta)?;
        Ok((h_x, h_theta))
    }
}

/// Network architecture tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    /// Plain softplus MLP.
    Fcn,
    /// Positive-definite input-convex wrapper.
    IcnnPd,
}

impl NetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NetKind::Fcn => "fcn",
            NetKind::IcnnPd => "icnn_pd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Body {
    Fcn(Mlp),
    IcnnPd { core: Icnn, epsilon: f64 },
}

/// A trainable value network (flat parameter vector + architecture).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNetwork {
    body: Body,
    params: Vec<f64>,
}

impl ValueNetwork {
    /// Plain MLP. `widths[0]` is the joined input width (state dim + 1) and
    /// the last width must be 1. Parameters start at zero.
    pub fn fcn(widths: &[usize]) -> Result<Self> {
        Self::check_widths(widths)?;
        let mlp = Mlp::new(widths);
        let n = mlp.param_count();
        Ok(ValueNetwork {
            body: Body::Fcn(mlp),
            params: vec![0.0; n],
        })
    }

    /// Positive-definite ICNN wrapper with floor coefficient `epsilon > 0`.
    /// Parameters start at zero (so `v(x, t) = ε ‖x‖²` exactly).
    pub fn icnn_pd(widths: &[usize], epsilon: f64) -> Result<Self> {
        Self::check_widths(widths)?;
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "icnn_pd epsilon must be positive and finite, got {epsilon}"
            )));
        }
        let core = Icnn::new(widths);
        let n = core.param_count();
        Ok(ValueNetwork {
            body: Body::IcnnPd { core, epsilon },
            params: vec![0.0; n],
        })
    }

    fn check_widths(widths: &[usize]) -> Result<()> {
        if widths.len() < 2 || widths[0] < 2 || *widths.last().unwrap() != 1 {
            return Err(Error::InvalidConfig(format!(
                "layer widths must be [state_dim+1, ..., 1] with at least two entries, got {widths:?}"
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("zero layer width".into()));
        }
        Ok(())
    }

    pub fn kind(&self) -> NetKind {
        match self.body {
            Body::Fcn(_) => NetKind::Fcn,
            Body::IcnnPd { .. } => NetKind::IcnnPd,
        }
    }

    pub fn widths(&self) -> &[usize] {
        match &self.body {
            Body::Fcn(m) => m.widths(),
            Body::IcnnPd { core, .. } => core.widths(),
        }
    }

    pub fn epsilon(&self) -> f64 {
        match &self.body {
            Body::Fcn(_) => 0.0,
            Body::IcnnPd { epsilon, .. } => *epsilon,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.params.len() {
            return Err(Error::dim("nets.set_params", self.params.len(), p.len()));
        }
        self.params.copy_from_slice(p);
        Ok(())
    }

    /// Seeded uniform fan-in initialization: every weight/bias block is drawn
    /// from `U(-1/√fan_in, 1/√fan_in)`. Propagated-path ICNN weights take the
    /// magnitude of their draw rather than a clamp: clamping half of them to
    /// the boundary can zero an entire `Wu` block, which disconnects the
    /// hidden stack and leaves a *linear* core — a function the tangent
    /// centering cancels exactly, so every gradient except the pinned block's
    /// own vanishes and training can never move off the boundary. Folding
    /// keeps the same magnitude distribution with every unit connected.
    pub fn randomize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &self.body {
            Body::Fcn(mlp) => {
                for (w_range, b_range, fan_in) in mlp.layer_ranges() {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    for i in w_range.chain(b_range) {
                        self.params[i] = rng.gen_range(-bound..bound);
                    }
                }
            }
            Body::IcnnPd { core, .. } => {
                for (range, fan_in) in core.block_ranges() {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    for i in range {
                        self.params[i] = rng.gen_range(-bound..bound);
                    }
                }
                for range in core.nonneg_ranges() {
                    for w in &mut self.params[range] {
                        *w = w.abs();
                    }
                }
            }
        }
        let _ = self.project_icnn();
    }

    /// Clamp the ICNN propagated-path weights to `≥ 0` (the projection step
    /// run after every optimizer update). On an fcn this is a no-op that
    /// reports [`ProjectionOutcome::NotIcnn`].
    pub fn project_icnn(&mut self) -> ProjectionOutcome {
        match &self.body {
            Body::Fcn(_) => ProjectionOutcome::NotIcnn,
            Body::IcnnPd { core, .. } => {
                let mut clamped = 0;
                for range in core.nonneg_ranges() {
                    for w in &mut self.params[range] {
                        if *w < 0.0 {
                            *w = 0.0;
                            clamped += 1;
                        }
                    }
                }
                ProjectionOutcome::Projected { clamped }
            }
        }
    }

    /// True if every propagated-path weight is nonnegative (trivially true
    /// for fcn). Exposed for invariant checks.
    pub fn icnn_weights_nonnegative(&self) -> bool {
        match &self.body {
            Body::Fcn(_) => true,
            Body::IcnnPd { core, .. } => core
                .nonneg_ranges()
                .into_iter()
                .all(|r| self.params[r].iter().all(|&w| w >= 0.0)),
        }
    }

    fn check_x(&self, x: &[f64], context: &'static str) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::dim(context, self.input_dim(), x.len()));
        }
        Ok(())
    }

    fn joined(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut input = Vec::with_capacity(x.len() + 1);
        input.extend_from_slice(x);
        input.push(t);
        input
    }

    fn origin(&self, t: f64) -> Vec<f64> {
        let mut input = vec![0.0; self.input_dim()];
        input.push(t);
        input
    }

    /// `[w; 0]` — a state-space direction lifted to the joined input, with
    /// the time coordinate held fixed.
    fn lifted(&self, w: &[f64]) -> Vec<f64> {
        let mut dir = Vec::with_capacity(w.len() + 1);
        dir.extend_from_slice(w);
        dir.push(0.0);
        dir
    }
}

impl ValueFunction for ValueNetwork {
    fn input_dim(&self) -> usize {
        self.widths()[0] - 1
    }

    fn param_count(&self) -> usize {
        self.params.len()
    }

    fn forward(&self, x: &[f64], t: f64) -> Result<f64> {
        self.check_x(x, "nets.forward")?;
        let input = self.joined(x, t);
        match &self.body {
            Body::Fcn(mlp) => Ok(mlp.value(&self.params, &input)),
            Body::IcnnPd { core, epsilon } => {
                let v1 = core.value(&self.params, &input);
                let (v0, g0) = core.value_and_input_grad(&self.params, &self.origin(t));
                let tangent: f64 = x.iter().zip(&g0).map(|(xi, gi)| xi * gi).sum();
                let quad: f64 = x.iter().map(|&xi| xi * xi).sum();
                Ok(v1 - v0 - tangent + epsilon * quad)
            }
        }
    }

    fn input_derivatives(&self, x: &[f64], t: f64) -> Result<InputDerivatives> {
        self.check_x(x, "nets.input_derivatives")?;
        let input = self.joined(x, t);
        match &self.body {
            Body::Fcn(mlp) => {
                let (_, mut g) = mlp.value_and_input_grad(&self.params, &input);
                let v_t = g.pop().expect("joined input has a time coordinate");
                Ok(InputDerivatives { v_x: g, v_t })
            }
            Body::IcnnPd { core, epsilon } => {
                // v_t picks up the time variation of the origin tangent
                // slope, ∂t∇ₓcore(0,t) — the state rows of the origin
                // Hessian's time column, one Hessian-vector product away.
                let origin = self.origin(t);
                let (_, g1) = core.value_and_input_grad(&self.params, &input);
                let (_, g0) = core.value_and_input_grad(&self.params, &origin);
                let n = x.len();
                let mut e_t = vec![0.0; n + 1];
                e_t[n] = 1.0;
                let mut scratch = vec![0.0; core.param_count()];
                let (_, _, h0, _) =
                    core.sovjp_acc(&self.params, &origin, &e_t, 0.0, &mut scratch);
                let slope_dot: f64 = x.iter().zip(&h0).map(|(xi, hi)| xi * hi).sum();
                let v_x = (0..n)
                    .map(|i| g1[i] - g0[i] + 2.0 * epsilon * x[i])
                    .collect();
                Ok(InputDerivatives {
                    v_x,
                    v_t: g1[n] - g0[n] - slope_dot,
                })
            }
        }
    }

    fn state_gradient(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_x(x, "nets.state_gradient")?;
        let input = self.joined(x, t);
        match &self.body {
            Body::Fcn(mlp) => {
                let (_, mut g) = mlp.value_and_input_grad(&self.params, &input);
                g.pop();
                Ok(g)
            }
            Body::IcnnPd { core, epsilon } => {
                let (_, g1) = core.value_and_input_grad(&self.params, &input);
                let (_, g0) = core.value_and_input_grad(&self.params, &self.origin(t));
                Ok(x.iter()
                    .zip(g1.iter().zip(&g0))
                    .map(|(&xi, (&gi, &g0i))| gi - g0i + 2.0 * epsilon * xi)
                    .collect())
            }
        }
    }

    fn param_gradient_into(&self, x: &[f64], t: f64, scale: f64, acc: &mut [f64]) -> Result<()> {
        self.check_x(x, "nets.param_gradient")?;
        if acc.len() != self.params.len() {
            return Err(Error::dim("nets.param_gradient acc", self.params.len(), acc.len()));
        }
        let input = self.joined(x, t);
        match &self.body {
            Body::Fcn(mlp) => {
                mlp.value_grads_acc(&self.params, &input, scale, acc);
            }
            Body::IcnnPd { core, .. } => {
                // v_θ = core_θ(x,t) − core_θ(0,t) − ∂θ[∇ₓcore(0,t)·x]; the
                // ε-floor has no parameters, and the tangent term is the
                // θ-side of a second-order sweep at the origin in direction
                // [x; 0].
                let origin = self.origin(t);
                core.value_grads_acc(&self.params, &input, scale, acc);
                core.value_grads_acc(&self.params, &origin, -scale, acc);
                if x.iter().any(|&xi| xi != 0.0) {
                    let dir = self.lifted(x);
                    core.sovjp_acc(&self.params, &origin, &dir, -scale, acc);
                }
            }
        }
        Ok(())
    }

    fn second_order_vjp_into(
        &self,
        x: &[f64],
        t: f64,
        w: &[f64],
        scale: f64,
        h_x_out: &mut [f64],
        acc: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.check_x(x, "nets.second_order_vjp")?;
        if w.len() != x.len() {
            return Err(Error::dim("nets.second_order_vjp direction", x.len(), w.len()));
        }
        if h_x_out.len() != x.len() || acc.len() != self.params.len() {
            return Err(Error::dim(
                "nets.second_order_vjp outputs",
                x.len() + self.params.len(),
                h_x_out.len() + acc.len(),
            ));
        }
        let input = self.joined(x, t);
        let dir = self.lifted(w);
        match &self.body {
            Body::Fcn(mlp) => {
                let (_, _, h_in, mut grad_in) =
                    mlp.sovjp_acc(&self.params, &input, &dir, scale, acc);
                for (o, hi) in h_x_out.iter_mut().zip(&h_in) {
                    *o = scale * hi;
                }
                grad_in.truncate(x.len());
                Ok(grad_in)
            }
            Body::IcnnPd { core, epsilon } => {
                // φ = v_x·w = core_x(x,t)·w − core_x(0,t)·w + 2ε x·w:
                //   ∂φ/∂x = Hₓₓ(x,t) w + 2ε w     (the origin terms are
                //                                   constant in x)
                //   ∂φ/∂θ = ∂θ[core_x(x,t)·w] − ∂θ[core_x(0,t)·w]
                // The origin sweep's plain-gradient by-product also supplies
                // the −core_x(0,t) part of the returned v_x.
                let origin = self.origin(t);
                let (_, _, h_in, grad_in) =
                    core.sovjp_acc(&self.params, &input, &dir, scale, acc);
                let (_, _, _, g0) = core.sovjp_acc(&self.params, &origin, &dir, -scale, acc);
                for i in 0..x.len() {
                    h_x_out[i] = scale * (h_in[i] + 2.0 * epsilon * w[i]);
                }
                Ok((0..x.len())
                    .map(|i| grad_in[i] - g0[i] + 2.0 * epsilon * x[i])
                    .collect())
            }
        }
    }
}
