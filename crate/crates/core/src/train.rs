//! Full-batch training of value / Lyapunov networks with Adam.
//!
//! One training run fixes an environment, a loss program, and a time grid,
//! then repeats: exact batch gradient via [`crate::rollout::adjoint_gradient`],
//! one Adam update, and (for input-convex networks) a projection of the
//! convexity-critical weights back onto the nonnegative orthant. The batch
//! of initial states is drawn once up front and reused every epoch unless
//! [`TrainConfig::resample`] asks for a fresh draw per epoch.
//!
//! Everything is seeded: network initialization and batch sampling use
//! separate deterministic streams derived from [`TrainConfig::seed`], and
//! the gradient itself is bit-reproducible (see [`crate::rollout`]), so two
//! runs with equal configs produce identical parameters and curves.
//!
//! Recorded curves have `epochs + 1` entries: index `e` holds the loss and
//! mean rollout cost measured with the parameters *before* update `e`, and
//! the final entry is measured after the last update. Curve index 0 is the
//! untrained network.

use crate::envs::Env;
use crate::error::{Error, Result};
use crate::hjb::CostSpec;
use crate::nets::{NetKind, ValueNetwork};
use crate::rollout::{adjoint_gradient, LossSpec, TimeGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Adam first/second-moment accumulators (bias-corrected updates).
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamState {
    pub fn new(params: usize) -> AdamState {
        AdamState {
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }

    /// One update `θ ← θ − lr·m̂/(√v̂ + ε)` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Everything one training run needs besides the environment.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub kind: NetKind,
    pub widths: Vec<usize>,
    /// Positive-definite floor weight (input-convex networks only).
    pub epsilon: f64,
    /// Multiplier on the random initialization (1.0 = as drawn). Smaller
    /// values tame the initial closed loop on touchy dynamics.
    pub init_scale: f64,
    pub loss: LossSpec,
    pub grid: TimeGrid,
    /// Initial states per batch.
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Draw a fresh batch every epoch instead of reusing the first draw.
    pub resample: bool,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch size must be ≥ 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        if !(self.init_scale > 0.0) || !self.init_scale.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "init_scale must be positive and finite, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }

    /// Build and randomize the network this config describes.
    pub fn build_net(&self) -> Result<ValueNetwork> {
        let mut net = match self.kind {
            NetKind::Fcn => ValueNetwork::fcn(&self.widths)?,
            NetKind::IcnnPd => ValueNetwork::icnn_pd(&self.widths, self.epsilon)?,
        };
        net.randomize(self.seed);
        if self.init_scale != 1.0 {
            for p in net.params_mut() {
                *p *= self.init_scale;
            }
        }
        net.project_icnn();
        Ok(net)
    }
}

/// Per-epoch measurements handed to the observer and recorded on curves.
/// `epoch` counts recorded points: stats at `epoch` describe the parameters
/// *before* update `epoch` (so 0 is the untrained network).
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub mean_cost: f64,
    pub grad_norm: f64,
}

/// Trained network plus the recorded curves (`epochs + 1` entries each).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ValueNetwork,
    pub losses: Vec<f64>,
    pub costs: Vec<f64>,
}

/// [`train_with_observer`] without the callback.
pub fn train(env: &Env, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(env, cfg, |_, _| {})
}

/// Run one training job, invoking `observer` at every recorded point
/// (`epochs + 1` calls; the network argument reflects the parameters the
/// stats were measured at).
pub fn train_with_observer(
    env: &Env,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochStats, &ValueNetwork),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let cost = CostSpec::from_env(env);
    let mut net = cfg.build_net()?;
    // Batch draws use their own stream so that changing the architecture
    // (which consumes a different amount of init randomness) cannot shift
    // which initial states are trained on.
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut batch = env.sample_initial(&mut batch_rng, cfg.batch);

    let mut adam = AdamState::new(net.params().len());
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    let mut costs = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let g = adjoint_gradient(&net, env, &cost, &batch, &cfg.grid, &cfg.loss)?;
        let grad_norm = g.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        losses.push(g.loss);
        costs.push(g.mean_cost);
        observer(
            &EpochStats {
                epoch,
                loss: g.loss,
                mean_cost: g.mean_cost,
                grad_norm,
            },
            &net,
        );
        if epoch == cfg.epochs {
            break;
        }
        adam.step(net.params_mut(), &g.grad, cfg.lr);
        net.project_icnn();
        if cfg.resample {
            batch = env.sample_initial(&mut batch_rng, cfg.batch);
        }
    }
    Ok(TrainOutcome { net, losses, costs })
}

/// Divide a curve by its first entry (training-progress normalization).
/// Fails if the baseline is zero, negative, or non-finite — a curve that
/// starts at zero cost has nothing to improve on.
pub fn normalize_curve(curve: &[f64]) -> Result<Vec<f64>> {
    match curve.first() {
        Some(&c0) if c0 > 0.0 && c0.is_finite() => Ok(curve.iter().map(|c| c / c0).collect()),
        _ => Err(Error::DegenerateNormalization),
    }
}

/// Named preset: environment plus a ready-to-run training config.
pub struct Preset {
    pub name: &'static str,
    pub env: Env,
    pub config: TrainConfig,
}

/// Lyapunov program on the double integrator (small input-convex net).
pub fn di_lyapunov() -> Preset {
    Preset {
        name: "di_lyapunov",
        env: Env::double_integrator(),
        config: TrainConfig {
            kind: NetKind::IcnnPd,
            widths: vec![3, 4, 4, 1],
            epsilon: 0.1,
            init_scale: 1.0,
            loss: LossSpec::lyapunov(),
            grid: TimeGrid::new(7.0, 0.01).expect("preset grid"),
            batch: 20,
            epochs: 65,
            lr: 2e-2,
            seed: 0,
            resample: false,
        },
    }
}

/// Value program on the double integrator (for comparison against the
/// linear-quadratic optimum). The true value function is convex in the
/// state, so the convex network is the right hypothesis class here too — a
/// plain MLP trains an order of magnitude slower to a worse policy. The
/// small `epsilon` keeps the positive-definite floor below the Riccati
/// solution's curvature.
pub fn di_value() -> Preset {
    Preset {
        name: "di_value",
        env: Env::double_integrator(),
        config: TrainConfig {
            kind: NetKind::IcnnPd,
            widths: vec![3, 4, 4, 1],
            epsilon: 0.01,
            init_scale: 1.0,
            loss: LossSpec::value(),
            grid: TimeGrid::new(7.0, 0.01).expect("preset grid"),
            batch: 30,
            epochs: 400,
            lr: 5e-2,
            seed: 0,
            resample: false,
        },
    }
}

/// Lyapunov program on cart-pole balancing (wide input-convex net).
pub fn cp_balance_lyapunov() -> Preset {
    Preset {
        name: "cp_balance_lyapunov",
        env: Env::cartpole_balance(),
        config: TrainConfig {
            kind: NetKind::IcnnPd,
            widths: vec![5, 200, 500, 1],
            epsilon: 0.1,
            init_scale: 1.0,
            loss: LossSpec::lyapunov(),
            grid: TimeGrid::new(1.0, 0.008).expect("preset grid"),
            batch: 100,
            epochs: 30,
            lr: 1e-3,
            seed: 1,
            resample: false,
        },
    }
}

/// Value program on the cart-pole swing-up.
pub fn cp_swingup_value() -> Preset {
    Preset {
        name: "cp_swingup_value",
        env: Env::cartpole_swingup(),
        config: TrainConfig {
            kind: NetKind::Fcn,
            widths: vec![5, 128, 128, 1],
            epsilon: 0.0,
            init_scale: 1.0,
            loss: LossSpec::value(),
            grid: TimeGrid::from_steps(38, 0.08).expect("preset grid"),
            batch: 100,
            epochs: 150,
            lr: 1e-3,
            seed: 1,
            resample: false,
        },
    }
}

/// Value program on the two-link arm.
pub fn twolink_value() -> Preset {
    Preset {
        name: "twolink_value",
        env: Env::two_link(),
        config: TrainConfig {
            kind: NetKind::Fcn,
            widths: vec![5, 128, 128, 1],
            epsilon: 0.0,
            init_scale: 1.0,
            loss: LossSpec::value(),
            grid: TimeGrid::new(3.0, 0.01).expect("preset grid"),
            batch: 100,
            epochs: 50,
            lr: 1e-3,
            seed: 1,
            resample: false,
        },
    }
}

/// Preset lookup by name.
pub fn preset(name: &str) -> Result<Preset> {
    match name {
        "di_lyapunov" => Ok(di_lyapunov()),
        "di_value" => Ok(di_value()),
        "cp_balance_lyapunov" => Ok(cp_balance_lyapunov()),
        "cp_swingup_value" => Ok(cp_swingup_value()),
        "twolink_value" => Ok(twolink_value()),
        other => Err(Error::InvalidConfig(format!(
            "unknown preset {other:?}; expected one of di_lyapunov, di_value, \
             cp_balance_lyapunov, cp_swingup_value, twolink_value"
        ))),
    }
}

pub const PRESET_NAMES: [&str; 5] = [
    "di_lyapunov",
    "di_value",
    "cp_balance_lyapunov",
    "cp_swingup_value",
    "twolink_value",
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::batch_loss;

    /// Small, fast DI job used by most tests here.
    fn mini_config(loss: LossSpec) -> TrainConfig {
        TrainConfig {
            kind: NetKind::IcnnPd,
            widths: vec![3, 4, 4, 1],
            epsilon: 0.1,
            init_scale: 1.0,
            loss,
            grid: TimeGrid::new(1.0, 0.02).unwrap(),
            batch: 8,
            epochs: 10,
            lr: 3e-3,
            seed: 6,
            resample: false,
        }
    }

    #[test]
    fn adam_matches_a_hand_computed_update() {
        // Single parameter, two steps with g = 3 then g = -1, lr = 0.1.
        let mut adam = AdamState::new(1);
        let mut p = vec![0.5];
        adam.step(&mut p, &[3.0], 0.1);
        // t=1: m=0.3, v=0.009, m̂=3, v̂=9, Δ=0.1·3/(3+1e-8).
        let expected1 = 0.5 - 0.1 * 3.0 / (9.0f64.sqrt() + 1e-8);
        assert!((p[0] - expected1).abs() < 1e-15, "{}", p[0]);
        adam.step(&mut p, &[-1.0], 0.1);
        let m = 0.9 * 0.3 + 0.1 * (-1.0);
        let v = 0.999 * 0.009 + 0.001 * 1.0;
        let m_hat = m / (1.0 - 0.9f64.powi(2));
        let v_hat = v / (1.0 - 0.999f64.powi(2));
        let expected2 = expected1 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - expected2).abs() < 1e-15, "{}", p[0]);
    }

    #[test]
    fn curves_have_one_entry_per_recorded_epoch() {
        let p = di_lyapunov();
        let mut cfg = mini_config(LossSpec::lyapunov());
        cfg.epochs = 4;
        let out = train(&p.env, &cfg).unwrap();
        assert_eq!(out.losses.len(), 5);
        assert_eq!(out.costs.len(), 5);
    }

    #[test]
    fn first_curve_entry_is_the_untrained_network() {
        let env = Env::double_integrator();
        let cfg = mini_config(LossSpec::lyapunov());
        let out = train(&env, &cfg).unwrap();
        // Rebuild the same init and batch independently and re-evaluate.
        let net = cfg.build_net().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        let batch = env.sample_initial(&mut rng, cfg.batch);
        let cost = CostSpec::from_env(&env);
        let l0 = batch_loss(&net, &env, &cost, &batch, &cfg.grid, &cfg.loss).unwrap();
        assert_eq!(out.losses[0].to_bits(), l0.to_bits());
    }

    #[test]
    fn training_decreases_the_lyapunov_loss() {
        let env = Env::double_integrator();
        let cfg = mini_config(LossSpec::lyapunov());
        let out = train(&env, &cfg).unwrap();
        assert!(
            out.losses[0] > 0.0,
            "init loss should be positive, got {}",
            out.losses[0]
        );
        let last = *out.losses.last().unwrap();
        assert!(
            last < out.losses[0],
            "loss did not decrease: {} → {last}",
            out.losses[0]
        );
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let env = Env::double_integrator();
        let mut cfg = mini_config(LossSpec::value());
        cfg.epochs = 3;
        let a = train(&env, &cfg).unwrap();
        let b = train(&env, &cfg).unwrap();
        assert_eq!(a.losses, b.losses);
        for (x, y) in a.net.params().iter().zip(b.net.params()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        cfg.seed = 7;
        let c = train(&env, &cfg).unwrap();
        assert_ne!(a.losses, c.losses);
    }

    #[test]
    fn resampling_changes_the_batches_but_stays_deterministic() {
        let env = Env::double_integrator();
        let mut cfg = mini_config(LossSpec::value());
        cfg.epochs = 3;
        let fixed = train(&env, &cfg).unwrap();
        cfg.resample = true;
        let fresh_a = train(&env, &cfg).unwrap();
        let fresh_b = train(&env, &cfg).unwrap();
        assert_eq!(fresh_a.losses, fresh_b.losses);
        // Same epoch-0 batch, different batches afterwards.
        assert_eq!(fixed.losses[0].to_bits(), fresh_a.losses[0].to_bits());
        assert_ne!(fixed.losses[2..], fresh_a.losses[2..]);
    }

    #[test]
    fn icnn_weights_stay_nonnegative_through_training() {
        let env = Env::double_integrator();
        let cfg = mini_config(LossSpec::lyapunov());
        let out = train(&env, &cfg).unwrap();
        assert!(out.net.icnn_weights_nonnegative());
    }

    #[test]
    fn observer_sees_every_recorded_epoch_in_order() {
        let env = Env::double_integrator();
        let mut cfg = mini_config(LossSpec::lyapunov());
        cfg.epochs = 5;
        let mut seen = Vec::new();
        let out = train_with_observer(&env, &cfg, |stats, net| {
            assert!(stats.grad_norm.is_finite());
            assert_eq!(net.params().len(), 56);
            seen.push((stats.epoch, stats.loss));
        })
        .unwrap();
        assert_eq!(seen.len(), 6);
        for (i, (epoch, loss)) in seen.iter().enumerate() {
            assert_eq!(*epoch, i);
            assert_eq!(loss.to_bits(), out.losses[i].to_bits());
        }
    }

    #[test]
    fn normalize_curve_divides_by_the_baseline() {
        assert_eq!(normalize_curve(&[2.0, 1.0, 0.5]).unwrap(), vec![1.0, 0.5, 0.25]);
        assert!(matches!(
            normalize_curve(&[0.0, 1.0]),
            Err(Error::DegenerateNormalization)
        ));
        assert!(normalize_curve(&[]).is_err());
    }

    #[test]
    fn preset_lookup_knows_every_name() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            assert_eq!(p.name, name);
            assert!(p.config.batch > 0);
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let env = Env::double_integrator();
        let mut cfg = mini_config(LossSpec::value());
        cfg.batch = 0;
        assert!(train(&env, &cfg).is_err());
        let mut cfg = mini_config(LossSpec::value());
        cfg.lr = -1.0;
        assert!(train(&env, &cfg).is_err());
    }
}
