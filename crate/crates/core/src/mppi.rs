//! Sampling-based model-predictive control (MPPI) with optional
//! value-function warmstarting.
//!
//! Each control step perturbs a nominal control sequence with `K` Gaussian
//! noise sequences, rolls every perturbed sequence open-loop over the `H`-step
//! lookahead, and replaces the nominal with the importance-weighted average,
//! where the weights are `exp(−(S_i − min S)/λ)` normalized to sum to one.
//! The first control of the updated sequence is applied to the environment
//! and the remainder (shifted by one, last entry repeated) seeds the next
//! iteration.
//!
//! With a learned value function, the nominal sequence is instead *rebuilt
//! every iteration* by rolling out the HJB feedback policy — a warmstart that
//! lets very short lookaheads (`H` of 1–2 steps) do the work of long ones.
//! The value function can additionally serve as a terminal cost on the
//! sampled rollouts, but that path is off by default
//! ([`MppiConfig::terminal_value`]).
//!
//! Determinism: all noise is drawn sequentially from one seeded generator
//! before the (parallelizable) sample evaluations, and weights are
//! accumulated in sample order, so results are reproducible for a fixed
//! seed regardless of thread count.

use crate::envs::Env;
use crate::error::{Error, Result};
use crate::hjb::CostSpec;
use crate::nets::ValueFunction;
use crate::rollout::{rollout, TimeGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

/// Controller configuration. `horizon_steps`, `dt`, and the defaults for
/// everything else come from [`MppiConfig::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct MppiConfig {
    /// Perturbation sequences per update.
    pub samples: usize,
    /// Lookahead length in control steps.
    pub horizon_steps: usize,
    /// Control interval in seconds (also the simulation step).
    pub dt: f64,
    /// Softmin temperature.
    pub lambda: f64,
    /// Perturbation standard deviation, shared across control dimensions.
    pub noise_std: f64,
    /// Rebuild the nominal sequence from the learned policy each iteration.
    pub warmstart: bool,
    /// Add `v(x̂_H, 0)` to each sample's cost (needs a network; independent
    /// of `warmstart`).
    pub terminal_value: bool,
    /// Environment step cap for [`run_mpc`].
    pub max_steps: usize,
    /// Completion threshold on the encoded distance to goal.
    pub completion_tol: f64,
    pub seed: u64,
}

impl MppiConfig {
    pub fn new(horizon_steps: usize, dt: f64) -> MppiConfig {
        MppiConfig {
            samples: 256,
            horizon_steps,
            dt,
            lambda: 1.0,
            noise_std: 1.0,
            warmstart: false,
            terminal_value: false,
            max_steps: 1000,
            completion_tol: 0.1,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("mppi: {what}")));
        if self.samples < 1 {
            return bad("need at least one sample");
        }
        if self.horizon_steps < 1 {
            return bad("need a lookahead of at least one step");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.lambda > 0.0) {
            return bad("temperature must be positive");
        }
        // Zero noise is allowed (degenerate but well-defined: the update
        // reproduces the nominal sequence exactly).
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad("noise std must be finite and nonnegative");
        }
        if self.max_steps < 1 {
            return bad("step cap must be at least 1");
        }
        if !(self.completion_tol > 0.0) {
            return bad("completion tolerance must be positive");
        }
        Ok(())
    }
}

/// Closed-loop outcome of [`run_mpc`].
#[derive(Debug, Clone)]
pub struct MpcResult {
    /// Environment steps executed (= `controls.len()`).
    pub steps: usize,
    /// Whether the completion tolerance was reached before the step cap.
    pub completed: bool,
    /// `dt·Σ (ℓ(x̂_k) + u_kᵀRu_k)` over the executed trajectory.
    pub cost: f64,
    /// Lookahead used, echoed from the config.
    pub horizon_steps: usize,
    /// Visited states, `steps + 1` entries.
    pub states: Vec<Vec<f64>>,
    /// Applied controls, `steps` entries.
    pub controls: Vec<Vec<f64>>,
}

/// Normalized importance weights `exp(−(S_i − min S)/λ) / Σ(...)`.
///
/// Non-finite costs (diverged samples) get weight zero. Errors if every
/// sample diverged. Subtracting the minimum makes the weights exactly
/// invariant to adding a constant to all costs and keeps the exponents
/// representable.
pub fn importance_weights(costs: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let min = costs
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::NonFinite("mppi: every sampled rollout diverged"));
    }
    let raw: Vec<f64> = costs
        .iter()
        .map(|&c| {
            if c.is_finite() {
                (-(c - min) / lambda).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Weighted average of perturbed sequences:
/// `updated_k = nominal_k + Σ_i weights_i · noise_{i,k}`.
pub fn combine_sequences(
    nominal: &[Vec<f64>],
    noises: &[Vec<Vec<f64>>],
    weights: &[f64],
) -> Vec<Vec<f64>> {
    nominal
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let mut out = u.clone();
            for (eps, w) in noises.iter().zip(weights) {
                for (o, e) in out.iter_mut().zip(&eps[k]) {
                    *o += w * e;
                }
            }
            out
        })
        .collect()
}

/// Open-loop lookahead cost of one control sequence from `x`, with an
/// optional terminal value. Divergence yields `+∞` (the sample is then
/// ignored by the weighting).
fn sequence_cost(
    env: &Env,
    cost: &CostSpec,
    net: Option<&dyn ValueFunction>,
    x: &[f64],
    controls: &[Vec<f64>],
    dt: f64,
) -> f64 {
    let mut x = x.to_vec();
    let mut acc = 0.0;
    for u in controls {
        acc += cost.state_cost(&env.encoded_error(&x)) + cost.control_cost(u);
        let dx = match env.dynamics(&x, u) {
            Ok(dx) => dx,
            Err(_) => return f64::INFINITY,
        };
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += dt * di;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
    }
    let mut total = dt * acc;
    if let Some(net) = net {
        match net.forward(&env.encoded_error(&x), 0.0) {
            Ok(v) => total += v,
            Err(_) => return f64::INFINITY,
        }
    }
    if total.is_finite() {
        total
    } else {
        f64::INFINITY
    }
}

/// One MPPI update at state `x`: sample, evaluate, reweight. Returns the
/// first control of the updated sequence and the shifted remainder (last
/// entry repeated) to seed the next iteration.
///
/// `terminal` is the network used as terminal cost when
/// [`MppiConfig::terminal_value`] is set; pass `None` otherwise.
pub fn mppi_update(
    cfg: &MppiConfig,
    env: &Env,
    cost: &CostSpec,
    x: &[f64],
    nominal: &[Vec<f64>],
    terminal: Option<&dyn ValueFunction>,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let h = cfg.horizon_steps;
    let m = env.control_dim();
    if nominal.len() != h || nominal.iter().any(|u| u.len() != m) {
        return Err(Error::dim("mppi.nominal", h * m, nominal.len()));
    }
    let normal = Normal::new(0.0, cfg.noise_std)
        .map_err(|e| Error::InvalidConfig(format!("mppi noise: {e}")))?;
    // All randomness drawn sequentially up front: the parallel evaluation
    // below cannot perturb it.
    let noises: Vec<Vec<Vec<f64>>> = (0..cfg.samples)
        .map(|_| {
            (0..h)
                .map(|_| (0..m).map(|_| normal.sample(rng)).collect())
                .collect()
        })
        .collect();
    let costs: Vec<f64> = noises
        .par_iter()
        .map(|eps| {
            let perturbed: Vec<Vec<f64>> = nominal
                .iter()
                .zip(eps)
                .map(|(u, e)| u.iter().zip(e).map(|(a, b)| a + b).collect())
                .collect();
            sequence_cost(env, cost, terminal, x, &perturbed, cfg.dt)
        })
        .collect();
    let weights = importance_weights(&costs, cfg.lambda)?;
    let updated = combine_sequences(nominal, &noises, &weights);
    let first = updated[0].clone();
    let mut shifted: Vec<Vec<f64>> = updated[1..].to_vec();
    shifted.push(updated[h - 1].clone());
    Ok((first, shifted))
}

/// Nominal control sequence from the learned policy: the controls of an
/// `H`-step closed-loop rollout starting at `x` (clock starting at 0).
pub fn warmstart_nominal(
    net: &dyn ValueFunction,
    env: &Env,
    cost: &CostSpec,
    x: &[f64],
    horizon_steps: usize,
    dt: f64,
) -> Result<Vec<Vec<f64>>> {
    let grid = TimeGrid::from_steps(horizon_steps, dt)?;
    Ok(rollout(net, env, cost, x, &grid)?.controls)
}

/// Closed-loop MPC from `x0` until the encoded distance to goal drops below
/// the completion tolerance or the step cap is hit.
///
/// `net` is required when `warmstart` or `terminal_value` is on and is never
/// evaluated when both are off.
pub fn run_mpc(
    env: &Env,
    cfg: &MppiConfig,
    net: Option<&dyn ValueFunction>,
    x0: &[f64],
) -> Result<MpcResult> {
    cfg.validate()?;
    if x0.len() != env.state_dim() {
        return Err(Error::dim("mpc.x0", env.state_dim(), x0.len()));
    }
    if (cfg.warmstart || cfg.terminal_value) && net.is_none() {
        return Err(Error::InvalidConfig(
            "mppi: warmstart/terminal_value need a value network".into(),
        ));
    }
    let cost = CostSpec::from_env(env);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let terminal = if cfg.terminal_value { net } else { None };
    let m = env.control_dim();
    let mut nominal = vec![vec![0.0; m]; cfg.horizon_steps];
    let mut x = x0.to_vec();
    let mut states = vec![x.clone()];
    let mut controls = Vec::new();
    let mut acc = 0.0;
    let mut completed = false;
    for _ in 0..cfg.max_steps {
        let dist: f64 = env
            .encoded_error(&x)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if dist < cfg.completion_tol {
            completed = true;
            break;
        }
        if cfg.warmstart {
            nominal = warmstart_nominal(
                net.expect("checked above"),
                env,
                &cost,
                &x,
                cfg.horizon_steps,
                cfg.dt,
            )?;
        }
        let (u, shifted) = mppi_update(cfg, env, &cost, &x, &nominal, terminal, &mut rng)?;
        nominal = shifted;
        acc += cfg.dt * (cost.state_cost(&env.encoded_error(&x)) + cost.control_cost(&u));
        let step = controls.len();
        let dx = env
            .dynamics(&x, &u)
            .map_err(|_| Error::DivergedRollout {
                step,
                t: step as f64 * cfg.dt,
            })?;
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += cfg.dt * di;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedRollout {
                step,
                t: step as f64 * cfg.dt,
            });
        }
        controls.push(u);
        states.push(x.clone());
    }
    if !completed {
        // The loop can also exit by completing exactly at the cap boundary.
        let dist: f64 = env
            .encoded_error(&x)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        completed = dist < cfg.completion_tol;
    }
    Ok(MpcResult {
        steps: controls.len(),
        completed,
        cost: acc,
        horizon_steps: cfg.horizon_steps,
        states,
        controls,
    })
}
