//! Control-affine benchmark environments `ẋ = f(x) + g(x) u`.
//!
//! Three systems are provided, each with exact hand-derived Jacobian
//! contractions (no finite differences anywhere in the library path — the
//! test suite uses [`crate::ndiff`] as the independent reference):
//!
//! * **Double integrator** — `ṗ = v`, `v̇ = u`; the one system with a
//!   closed-form optimal value function (see [`crate::lqr`]).
//! * **Cart-pole** — force on a cart, pole angle measured from upright, in
//!   balance and swing-up task variants that differ in cost matrices and
//!   initial regions.
//! * **Two-link arm** — a planar elbow arm moving horizontally (no gravity
//!   term) with joint viscous damping and torque control at both joints.
//!
//! Integration always happens in physical coordinates. Costs, network
//! inputs, and completion checks use the *encoded* state: the cart-pole
//! tasks replace the pole angle `q` with `cos(q) − 1` so that full turns
//! alias to the same point and the upright goal sits at the encoded origin;
//! the other systems encode with the identity. [`Env::encode_vjp`],
//! [`Env::encode_jvp`], and [`Env::encode_second`] expose the pieces of the
//! encoding's first and second derivative that the rollout adjoint needs.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use std::f64::consts::{FRAC_PI_2, PI};

/// Cart-pole physical parameters (SI units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartpoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Distance from the pivot to the pole's center of mass.
    pub pole_length: f64,
    pub gravity: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        CartpoleParams {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_length: 0.5,
            gravity: 9.81,
        }
    }
}

/// Two-link arm physical parameters (SI units). The model is the standard
/// planar two-joint arm moving in the horizontal plane: link inertias about
/// their joints, the second link's mass concentrated at its center of mass,
/// and a viscous joint-damping matrix `B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLinkParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    /// Distance from the elbow to link 2's center of mass.
    pub s2: f64,
    pub i1: f64,
    pub i2: f64,
    /// Joint damping matrix, row-major `[[b11, b12], [b21, b22]]`.
    pub damping: [[f64; 2]; 2],
}

impl Default for TwoLinkParams {
    fn default() -> Self {
        TwoLinkParams {
            m1: 1.4,
            m2: 1.0,
            l1: 0.30,
            l2: 0.33,
            s2: 0.16,
            i1: 0.025,
            i2: 0.045,
            damping: [[0.05, 0.025], [0.025, 0.05]],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    DoubleIntegrator,
    Cartpole(CartpoleParams),
    TwoLink(TwoLinkParams),
}

/// Axis-aligned box of initial conditions; a degenerate interval
/// (`lo == hi`) pins that coordinate exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct InitRegion {
    pub bounds: Vec<(f64, f64)>,
}

impl InitRegion {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        InitRegion { bounds }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|&(lo, hi)| if lo == hi { lo } else { rng.gen_range(lo..hi) })
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.bounds.len()
            && x.iter()
                .zip(&self.bounds)
                .all(|(&xi, &(lo, hi))| xi >= lo && xi <= hi)
    }
}

/// A control-affine system together with its task: quadratic cost matrices
/// over encoded coordinates, goal state, and initial-condition region.
/// Immutable after construction; all operations are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    name: &'static str,
    model: Model,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    goal: Vec<f64>,
    init: InitRegion,
}

impl Env {
    /// `ṗ = v, v̇ = u` with `Q = diag(1, 0)`, `R = 0.1`, initial box
    /// `[-1, 1]²`.
    pub fn double_integrator() -> Env {
        Env {
            name: "di",
            model: Model::DoubleIntegrator,
            q: DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 0.0])),
            r: DMatrix::from_diagonal(&DVector::from_row_slice(&[0.1])),
            goal: vec![0.0; 2],
            init: InitRegion::new(vec![(-1.0, 1.0), (-1.0, 1.0)]),
        }
    }

    /// Cart-pole started near upright: `Q = diag(0.5, 1, 0.01, 0.01)`,
    /// `R = 0.1`.
    pub fn cartpole_balance() -> Env {
        Env {
            name: "cartpole_balance",
            model: Model::Cartpole(CartpoleParams::default()),
            q: DMatrix::from_diagonal(&DVector::from_row_slice(&[0.5, 1.0, 0.01, 0.01])),
            r: DMatrix::from_diagonal(&DVector::from_row_slice(&[0.1])),
            goal: vec![0.0; 4],
            init: InitRegion::new(vec![
                (-0.2, 0.2),
                (-0.15, 0.15),
                (-0.1, 0.1),
                (-0.1, 0.1),
            ]),
        }
    }

    /// Cart-pole started hanging down: `Q = diag(1, 1, 0.1, 0.1)`, `R = 0.1`.
    pub fn cartpole_swingup() -> Env {
        Env {
            name: "cartpole_swingup",
            model: Model::Cartpole(CartpoleParams::default()),
            q: DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 1.0, 0.1, 0.1])),
            r: DMatrix::from_diagonal(&DVector::from_row_slice(&[0.1])),
            goal: vec![0.0; 4],
            init: InitRegion::new(vec![
                (0.0, 0.0),
                (PI - 0.05, PI + 0.05),
                (0.0, 0.0),
                (0.0, 0.0),
            ]),
        }
    }

    /// Planar two-link arm reaching the straight configuration:
    /// `Q = diag(1, 1, 0.1, 0.1)`, `R = diag(0.15, 0.15)`.
    pub fn two_link() -> Env {
        Env {
            name: "twolink",
            model: Model::TwoLink(TwoLinkParams::default()),
            q: DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 1.0, 0.1, 0.1])),
            r: DMatrix::from_diagonal(&DVector::from_row_slice(&[0.15, 0.15])),
            goal: vec![0.0; 4],
            init: InitRegion::new(vec![
                (-FRAC_PI_2, FRAC_PI_2),
                (-FRAC_PI_2, FRAC_PI_2),
                (0.0, 0.0),
                (0.0, 0.0),
            ]),
        }
    }

    /// Look up a preset by its external name.
    pub fn by_name(name: &str) -> Result<Env> {
        match name {
            "di" => Ok(Env::double_integrator()),
            "cartpole_balance" => Ok(Env::cartpole_balance()),
            "cartpole_swingup" => Ok(Env::cartpole_swingup()),
            "twolink" => Ok(Env::two_link()),
            other => Err(Error::InvalidConfig(format!(
                "unknown environment {other:?} (expected one of di, cartpole_balance, \
                 cartpole_swingup, twolink)"
            ))),
        }
    }

    /// Replace the physical parameters (cart-pole variants only).
    pub fn with_cartpole_params(mut self, p: CartpoleParams) -> Env {
        if let Model::Cartpole(old) = &mut self.model {
            *old = p;
        }
        self
    }

    /// Replace the physical parameters (two-link only).
    pub fn with_two_link_params(mut self, p: TwoLinkParams) -> Env {
        if let Model::TwoLink(old) = &mut self.model {
            *old = p;
        }
        self
    }

    pub fn with_initial_region(mut self, region: InitRegion) -> Env {
        assert_eq!(region.bounds.len(), self.state_dim());
        self.init = region;
        self
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn state_dim(&self) -> usize {
        match self.model {
            Model::DoubleIntegrator => 2,
            Model::Cartpole(_) | Model::TwoLink(_) => 4,
        }
    }

    pub fn control_dim(&self) -> usize {
        match self.model {
            Model::DoubleIntegrator => 1,
            Model::Cartpole(_) => 1,
            Model::TwoLink(_) => 2,
        }
    }

    /// State cost matrix over encoded coordinates (symmetric PSD).
    pub fn q_matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Control cost matrix (symmetric PD).
    pub fn r_matrix(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn goal(&self) -> &[f64] {
        &self.goal
    }

    pub fn initial_region(&self) -> &InitRegion {
        &self.init
    }

    fn check_xu(&self, x: &[f64], u: &[f64], context: &'static str) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::dim(context, self.state_dim(), x.len()));
        }
        if u.len() != self.control_dim() {
            return Err(Error::dim(context, self.control_dim(), u.len()));
        }
        if x.iter().chain(u).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(context));
        }
        Ok(())
    }

    /// `f(x) + g(x) u`.
    pub fn dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_xu(x, u, "envs.dynamics")?;
        Ok(match &self.model {
            Model::DoubleIntegrator => vec![x[1], u[0]],
            Model::Cartpole(p) => {
                let cp = CartpoleTerms::at(p, x, u[0]);
                vec![x[2], x[3], cp.n3 / cp.d, cp.n4 / (p.pole_length * cp.d)]
            }
            Model::TwoLink(p) => {
                let tl = TwoLinkTerms::at(p, x);
                let acc = tl.solve(&[u[0] - tl.rhs0, u[1] - tl.rhs1]);
                vec![x[2], x[3], acc[0], acc[1]]
            }
        })
    }

    /// The input matrix `g(x)` (`n × m`), so that
    /// `dynamics(x, u) = dynamics(x, 0) + g(x) u`.
    pub fn input_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_xu(x, &vec![0.0; self.control_dim()], "envs.input_matrix")?;
        Ok(match &self.model {
            Model::DoubleIntegrator => DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            Model::Cartpole(p) => {
                let cp = CartpoleTerms::at(p, x, 0.0);
                DMatrix::from_column_slice(
                    4,
                    1,
                    &[0.0, 0.0, 1.0 / cp.d, -cp.c / (p.pole_length * cp.d)],
                )
            }
            Model::TwoLink(p) => {
                let tl = TwoLinkTerms::at(p, x);
                let col0 = tl.solve(&[1.0, 0.0]);
                let col1 = tl.solve(&[0.0, 1.0]);
                DMatrix::from_column_slice(
                    4,
                    2,
                    &[0.0, 0.0, col0[0], col0[1], 0.0, 0.0, col1[0], col1[1]],
                )
            }
        })
    }

    /// Exact vector-Jacobian products of the dynamics, holding `u` fixed:
    /// returns `(aᵀ ∂(f + g u)/∂x, aᵀ g(x))`.
    pub fn dynamics_vjp(&self, x: &[f64], u: &[f64], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_xu(x, u, "envs.dynamics_vjp")?;
        if a.len() != self.state_dim() {
            return Err(Error::dim("envs.dynamics_vjp cotangent", self.state_dim(), a.len()));
        }
        Ok(match &self.model {
            Model::DoubleIntegrator => (vec![0.0, a[0]], vec![a[1]]),
            Model::Cartpole(p) => {
                let cp = CartpoleTerms::at(p, x, u[0]);
                let l = p.pole_length;
                // Quotient rule against D(q) = m_c + m_p sin²q.
                let dpdd_q = (cp.dn3_q * cp.d - cp.n3 * cp.dd_q) / (cp.d * cp.d);
                let dqdd_q = (cp.dn4_q * cp.d - cp.n4 * cp.dd_q) / (l * cp.d * cp.d);
                let dpdd_w = cp.dn3_w / cp.d;
                let dqdd_w = cp.dn4_w / (l * cp.d);
                let x_part = vec![
                    0.0,
                    a[2] * dpdd_q + a[3] * dqdd_q,
                    a[0],
                    a[1] + a[2] * dpdd_w + a[3] * dqdd_w,
                ];
                let u_part = vec![a[2] / cp.d - a[3] * cp.c / (l * cp.d)];
                (x_part, u_part)
            }
            Model::TwoLink(p) => {
                let tl = TwoLinkTerms::at(p, x);
                let h = tl.solve(&[u[0] - tl.rhs0, u[1] - tl.rhs1]);
                // Differentiating M(q₂) h = u − C − B q̇:
                //   ∂h/∂q₂ = M⁻¹(−∂C/∂q₂ − (∂M/∂q₂) h)
                //   ∂h/∂q̇ = M⁻¹(−∂C/∂q̇ − B)
                let (s2, c2) = (tl.s2, tl.c2);
                let (w1, w2) = (x[2], x[3]);
                let a2 = tl.a2;
                // ∂C/∂q₂ (C with the sin factor swapped for cos).
                let dc_q2 = [-a2 * c2 * w2 * (2.0 * w1 + w2), a2 * c2 * w1 * w1];
                // (∂M/∂q₂) h with ∂M/∂q₂ = −a₂ s₂ [[2, 1], [1, 0]].
                let dm_h = [-a2 * s2 * (2.0 * h[0] + h[1]), -a2 * s2 * h[0]];
                let dh_q2 = tl.solve(&[-dc_q2[0] - dm_h[0], -dc_q2[1] - dm_h[1]]);
                // Columns of −∂C/∂q̇ − B.
                let dc_w = [
                    [-2.0 * a2 * s2 * w2, -2.0 * a2 * s2 * (w1 + w2)],
                    [2.0 * a2 * s2 * w1, 0.0],
                ];
                let b = &p.damping;
                let dh_w1 = tl.solve(&[-dc_w[0][0] - b[0][0], -dc_w[1][0] - b[1][0]]);
                let dh_w2 = tl.solve(&[-dc_w[0][1] - b[0][1], -dc_w[1][1] - b[1][1]]);
                let x_part = vec![
                    0.0,
                    a[2] * dh_q2[0] + a[3] * dh_q2[1],
                    a[0] + a[2] * dh_w1[0] + a[3] * dh_w1[1],
                    a[1] + a[2] * dh_w2[0] + a[3] * dh_w2[1],
                ];
                // aᵀ [0; M⁻¹] = M⁻¹ a₂₃ (M is symmetric).
                let u_part = {
                    let s = tl.solve(&[a[2], a[3]]);
                    vec![s[0], s[1]]
                };
                (x_part, u_part)
            }
        })
    }

    /// Encode a physical state for cost and network input. Cart-pole maps
    /// the pole angle to `cos(q) − 1`; the other systems are the identity.
    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let mut e = x.to_vec();
        if let Model::Cartpole(_) = self.model {
            e[1] = x[1].cos() - 1.0;
        }
        e
    }

    /// Pull an encoded cotangent back to physical coordinates:
    /// `E(x)ᵀ a` with `E = ∂encode/∂x`.
    pub fn encode_vjp(&self, x: &[f64], a: &[f64]) -> Vec<f64> {
        let mut out = a.to_vec();
        if let Model::Cartpole(_) = self.model {
            out[1] = -x[1].sin() * a[1];
        }
        out
    }

    /// Push a physical tangent forward: `E(x) b`. The encodings here are
    /// coordinate-wise, so `E` is diagonal and this mirrors
    /// [`Env::encode_vjp`].
    pub fn encode_jvp(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        self.encode_vjp(x, b)
    }

    /// Second-derivative contraction of the encoding: component `j` of
    /// `Σᵢ aᵢ ∂²encodeᵢ/∂x∂x b`. Zero for identity encodings; the cart-pole
    /// angle contributes `a₁ · (−cos q) · b₁`.
    pub fn encode_second(&self, x: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        if let Model::Cartpole(_) = self.model {
            out[1] = a[1] * (-x[1].cos()) * b[1];
        }
        out
    }

    /// Encoded displacement from the goal — the state the cost, the network,
    /// and the completion check all consume. Presets place the goal at the
    /// encoded origin, so this equals `encode(x)` for them.
    pub fn encoded_error(&self, x: &[f64]) -> Vec<f64> {
        let e = self.encode(x);
        let g = self.encode(&self.goal);
        e.iter().zip(&g).map(|(a, b)| a - b).collect()
    }

    /// Draw `count` initial states from the configured region.
    pub fn sample_initial<R: Rng>(&self, rng: &mut R, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.init.sample(rng)).collect()
    }
}

/// Shared subexpressions of the cart-pole dynamics and Jacobian at one
/// `(x, u)`. State layout `[p, q, ṗ, q̇]` with `q` measured from upright;
/// `D = m_c + m_p sin²q` is the common denominator,
/// `p̈ = N₃/D`, `q̈ = N₄/(l D)`.
struct CartpoleTerms {
    c: f64,
    d: f64,
    n3: f64,
    n4: f64,
    dn3_q: f64,
    dn4_q: f64,
    dn3_w: f64,
    dn4_w: f64,
    dd_q: f64,
}

impl CartpoleTerms {
    fn at(p: &CartpoleParams, x: &[f64], u: f64) -> CartpoleTerms {
        let (mc, mp, l, g) = (p.cart_mass, p.pole_mass, p.pole_length, p.gravity);
        let (s, c) = x[1].sin_cos();
        let w = x[3];
        let cos2q = (2.0 * x[1]).cos();
        CartpoleTerms {
            c,
            d: mc + mp * s * s,
            n3: u + mp * s * (l * w * w - g * c),
            n4: (mc + mp) * g * s - mp * l * s * c * w * w - c * u,
            dn3_q: mp * (c * l * w * w - g * cos2q),
            dn4_q: (mc + mp) * g * c - mp * l * w * w * cos2q + s * u,
            dn3_w: 2.0 * mp * l * s * w,
            dn4_w: -2.0 * mp * l * s * c * w,
            dd_q: 2.0 * mp * s * c,
        }
    }
}

/// Shared subexpressions of the two-link dynamics at one state. The arm is
/// `M(q₂) q̈ + C(q, q̇) + B q̇ = u` with
/// `M = [[a₁ + 2a₂c₂, a₃ + a₂c₂], [a₃ + a₂c₂, a₃]]` and Coriolis vector
/// `C = a₂ sin q₂ · [−q̇₂(2q̇₁ + q̇₂), q̇₁²]`; `rhs = C + B q̇` so the
/// acceleration is `M⁻¹(u − rhs)`.
struct TwoLinkTerms {
    a2: f64,
    s2: f64,
    c2: f64,
    m11: f64,
    m12: f64,
    m22: f64,
    det: f64,
    rhs0: f64,
    rhs1: f64,
}

impl TwoLinkTerms {
    fn at(p: &TwoLinkParams, x: &[f64]) -> TwoLinkTerms {
        let a1 = p.i1 + p.i2 + p.m2 * p.l1 * p.l1;
        let a2 = p.m2 * p.l1 * p.s2;
        let a3 = p.i2;
        let (s2, c2) = x[1].sin_cos();
        let (w1, w2) = (x[2], x[3]);
        let m11 = a1 + 2.0 * a2 * c2;
        let m12 = a3 + a2 * c2;
        let m22 = a3;
        let cor = [-a2 * s2 * w2 * (2.0 * w1 + w2), a2 * s2 * w1 * w1];
        let b = &p.damping;
        TwoLinkTerms {
            a2,
            s2,
            c2,
            m11,
            m12,
            m22,
            det: m11 * m22 - m12 * m12,
            rhs0: cor[0] + b[0][0] * w1 + b[0][1] * w2,
            rhs1: cor[1] + b[1][0] * w1 + b[1][1] * w2,
        }
    }

    /// `M⁻¹ y` by the 2×2 closed form (M is SPD for physical parameters).
    fn solve(&self, y: &[f64; 2]) -> [f64; 2] {
        [
            (self.m22 * y[0] - self.m12 * y[1]) / self.det,
            (self.m11 * y[1] - self.m12 * y[0]) / self.det,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff;

    fn all_presets() -> Vec<Env> {
        vec![
            Env::double_integrator(),
            Env::cartpole_balance(),
            Env::cartpole_swingup(),
            Env::two_link(),
        ]
    }

    /// Deterministic quasi-random point in [-lo, hi]^n for test sweeps.
    fn probe(case: usize, dim: usize, scale: f64) -> Vec<f64> {
        (0..dim)
            .map(|i| scale * ((case as f64 * 0.731 + i as f64 * 1.37 + 0.4).sin()))
            .collect()
    }

    #[test]
    fn double_integrator_examples() {
        let env = Env::double_integrator();
        assert_eq!(env.dynamics(&[1.0, 2.0], &[3.0]).unwrap(), vec![2.0, 3.0]);
        assert_eq!(env.dynamics(&[0.0, 0.0], &[0.0]).unwrap(), vec![0.0, 0.0]);
        let g = env.input_matrix(&[0.3, -0.7]).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 1.0]);
        let (x_part, u_part) = env.dynamics_vjp(&[0.5, 0.5], &[0.2], &[2.0, 5.0]).unwrap();
        assert_eq!(x_part, vec![0.0, 2.0]);
        assert_eq!(u_part, vec![5.0]);
        let (x_part, u_part) = env.dynamics_vjp(&[0.5, 0.5], &[0.2], &[0.0, 0.0]).unwrap();
        assert_eq!(x_part, vec![0.0, 0.0]);
        assert_eq!(u_part, vec![0.0]);
    }

    #[test]
    fn cartpole_equilibria() {
        let env = Env::cartpole_balance();
        let up = env.dynamics(&[0.0, 0.0, 0.0, 0.0], &[0.0]).unwrap();
        assert_eq!(up, vec![0.0, 0.0, 0.0, 0.0]);
        // f64's π is not exactly π, so sin(q) ~ 1e-16 leaks through the
        // gravity term; the equilibrium holds to round-off.
        let down = env.dynamics(&[0.0, PI, 0.0, 0.0], &[0.0]).unwrap();
        for d in down {
            assert!(d.abs() < 1e-13, "hanging rest is an equilibrium, got {d}");
        }
        // Just off upright the pole accelerates away from vertical.
        let tipped = env.dynamics(&[0.0, 0.01, 0.0, 0.0], &[0.0]).unwrap();
        assert!(tipped[3] > 0.0);
        // Just off hanging it accelerates back toward hanging.
        let swung = env.dynamics(&[0.0, PI - 0.01, 0.0, 0.0], &[0.0]).unwrap();
        assert!(swung[3] > 0.0);
    }

    #[test]
    fn dynamics_is_affine_in_the_control() {
        for env in all_presets() {
            let m = env.control_dim();
            for case in 0..25 {
                let x = probe(case, env.state_dim(), 2.0);
                let u1 = probe(case + 100, m, 3.0);
                let u2 = probe(case + 200, m, 3.0);
                let (alpha, beta) = (0.7, -1.3);
                let combo: Vec<f64> = u1
                    .iter()
                    .zip(&u2)
                    .map(|(a, b)| alpha * a + beta * b)
                    .collect();
                let f0 = env.dynamics(&x, &vec![0.0; m]).unwrap();
                let fc = env.dynamics(&x, &combo).unwrap();
                let g = env.input_matrix(&x).unwrap();
                for i in 0..env.state_dim() {
                    let gi: f64 = (0..m)
                        .map(|j| g[(i, j)] * (alpha * u1[j] + beta * u2[j]))
                        .sum();
                    assert!(
                        (fc[i] - f0[i] - gi).abs() <= 1e-10,
                        "{}: affinity violated at case {case}, row {i}",
                        env.name()
                    );
                }
            }
        }
    }

    #[test]
    fn vjp_matches_finite_difference_jacobians() {
        for env in all_presets() {
            let (n, m) = (env.state_dim(), env.control_dim());
            for case in 0..100 {
                let x = probe(case, n, 2.5);
                let u = probe(case + 1000, m, 4.0);
                let a = probe(case + 2000, n, 1.5);
                let (x_part, u_part) = env.dynamics_vjp(&x, &u, &a).unwrap();

                let jx = ndiff::central_diff_jacobian(
                    |xx| env.dynamics(xx, &u).unwrap(),
                    &x,
                    n,
                    ndiff::DEFAULT_STEP,
                );
                let fd_x: Vec<f64> = (0..n)
                    .map(|j| (0..n).map(|i| a[i] * jx[i * n + j]).sum())
                    .collect();
                let (err, at) = ndiff::max_rel_err(&x_part, &fd_x, 1e-4);
                assert!(err < 1e-5, "{}: x_part err {err} at {at}, case {case}", env.name());

                let ju = ndiff::central_diff_jacobian(
                    |uu| env.dynamics(&x, uu).unwrap(),
                    &u,
                    n,
                    ndiff::DEFAULT_STEP,
                );
                let fd_u: Vec<f64> = (0..m)
                    .map(|j| (0..n).map(|i| a[i] * ju[i * m + j]).sum())
                    .collect();
                let (err, at) = ndiff::max_rel_err(&u_part, &fd_u, 1e-4);
                assert!(err < 1e-5, "{}: u_part err {err} at {at}, case {case}", env.name());
            }
        }
    }

    #[test]
    fn two_link_input_matrix_matches_finite_differences() {
        let env = Env::two_link();
        for case in 0..20 {
            let x = probe(case, 4, 2.0);
            let g = env.input_matrix(&x).unwrap();
            let ju = ndiff::central_diff_jacobian(
                |uu| env.dynamics(&x, uu).unwrap(),
                &[0.0, 0.0],
                4,
                ndiff::DEFAULT_STEP,
            );
            for i in 0..4 {
                for j in 0..2 {
                    assert!(
                        (g[(i, j)] - ju[i * 2 + j]).abs() < 1e-8,
                        "g[{i},{j}] mismatch at case {case}"
                    );
                }
            }
        }
    }

    #[test]
    fn encoding_maps_the_pole_angle() {
        let env = Env::cartpole_swingup();
        assert_eq!(env.encode(&[0.0, 0.0, 0.0, 0.0]), vec![0.0; 4]);
        let e = env.encode(&[1.0, PI, -2.0, 3.0]);
        assert_eq!(e[0], 1.0);
        assert!((e[1] + 2.0).abs() < 1e-15);
        assert_eq!(&e[2..], &[-2.0, 3.0]);
        let e = env.encode(&[0.0, 2.0 * PI, 0.0, 0.0]);
        assert!(e[1].abs() < 1e-15, "full turn aliases to 0, got {}", e[1]);

        for env in [Env::double_integrator(), Env::two_link()] {
            let x = probe(3, env.state_dim(), 2.0);
            assert_eq!(env.encode(&x), x, "{} encodes by identity", env.name());
            assert_eq!(env.encode(&env.encode(&x)), x);
        }
    }

    #[test]
    fn encoding_derivatives_match_finite_differences() {
        let env = Env::cartpole_balance();
        for case in 0..30 {
            let x = probe(case, 4, 2.5);
            let a = probe(case + 50, 4, 1.0);
            let b = probe(case + 80, 4, 1.0);

            // E(x)ᵀa against the FD Jacobian of encode.
            let je = ndiff::central_diff_jacobian(|xx| env.encode(xx), &x, 4, ndiff::DEFAULT_STEP);
            let fd_vjp: Vec<f64> = (0..4)
                .map(|j| (0..4).map(|i| a[i] * je[i * 4 + j]).sum())
                .collect();
            let vjp = env.encode_vjp(&x, &a);
            let (err, at) = ndiff::max_rel_err(&vjp, &fd_vjp, 1e-4);
            assert!(err < 1e-5, "encode_vjp err {err} at {at}, case {case}");
            assert_eq!(env.encode_jvp(&x, &b), env.encode_vjp(&x, &b));

            // Γ(x, a, b) against FD of x ↦ E(x)ᵀa contracted with b.
            let fd_second = ndiff::central_diff_jacobian(
                |xx| env.encode_vjp(xx, &a),
                &x,
                4,
                ndiff::DEFAULT_STEP,
            );
            let fd_gamma: Vec<f64> = (0..4)
                .map(|j| (0..4).map(|k| fd_second[j * 4 + k] * b[k]).sum())
                .collect();
            let gamma = env.encode_second(&x, &a, &b);
            let (err, at) = ndiff::max_rel_err(&gamma, &fd_gamma, 1e-4);
            assert!(err < 1e-5, "encode_second err {err} at {at}, case {case}");
        }
    }

    #[test]
    fn initial_samples_stay_in_region_and_are_seed_deterministic() {
        use rand::SeedableRng;
        for env in all_presets() {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
            let batch = env.sample_initial(&mut rng, 64);
            assert_eq!(batch.len(), 64);
            for x in &batch {
                assert!(
                    env.initial_region().contains(x),
                    "{}: sample {x:?} escapes the region",
                    env.name()
                );
            }
            let mut rng2 = rand_chacha::ChaCha8Rng::seed_from_u64(9);
            assert_eq!(env.sample_initial(&mut rng2, 64), batch);
        }

        let swing = Env::cartpole_swingup();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for x in swing.sample_initial(&mut rng, 32) {
            assert!((x[1] - PI).abs() <= 0.05);
            assert_eq!((x[0], x[2], x[3]), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn two_link_conserves_energy_without_damping_or_torque() {
        let params = TwoLinkParams {
            damping: [[0.0; 2]; 2],
            ..TwoLinkParams::default()
        };
        let env = Env::two_link().with_two_link_params(params);
        let energy = |x: &[f64]| {
            let tl = TwoLinkTerms::at(&params, x);
            let (w1, w2) = (x[2], x[3]);
            0.5 * (tl.m11 * w1 * w1 + 2.0 * tl.m12 * w1 * w2 + tl.m22 * w2 * w2)
        };
        let mut x = vec![0.4, -0.9, 1.5, -2.0];
        let e0 = energy(&x);
        let dt = 1e-4;
        let u = [0.0, 0.0];
        for _ in 0..10_000 {
            // Classic RK4 step.
            let k1 = env.dynamics(&x, &u).unwrap();
            let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * dt * k).collect();
            let k2 = env.dynamics(&x2, &u).unwrap();
            let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * dt * k).collect();
            let k3 = env.dynamics(&x3, &u).unwrap();
            let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + dt * k).collect();
            let k4 = env.dynamics(&x4, &u).unwrap();
            for i in 0..4 {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        let drift = (energy(&x) - e0).abs() / e0;
        assert!(drift < 1e-3, "energy drifted by {drift:.2e} over 1 s");
    }

    #[test]
    fn non_finite_and_misdimensioned_inputs_error() {
        let env = Env::cartpole_balance();
        assert!(matches!(
            env.dynamics(&[f64::NAN, 0.0, 0.0, 0.0], &[0.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            env.dynamics(&[0.0, 0.0, 0.0, 0.0], &[f64::INFINITY]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            env.dynamics(&[0.0, 0.0], &[0.0]),
            Err(Error::Contract { .. })
        ));
        assert!(matches!(
            env.dynamics_vjp(&[0.0; 4], &[0.0], &[0.0; 3]),
            Err(Error::Contract { .. })
        ));
        assert!(Env::by_name("pendulum").is_err());
        assert_eq!(Env::by_name("twolink").unwrap().name(), "twolink");
    }
}
