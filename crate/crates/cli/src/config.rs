//! Configuration resolution: preset defaults, then an optional TOML file,
//! then command-line overrides — later layers win field by field. The fully
//! resolved configuration is echoed to `config.toml` in the run directory
//! and re-parses to the same resolution (a fixpoint), so a run can always be
//! repeated from its own echo.
//!
//! Unknown keys are rejected everywhere: in TOML files through serde's
//! `deny_unknown_fields`, in `--set` overrides by matching against the
//! explicit key list.

use crate::CliError;
use hjb_core::envs::Env;
use hjb_core::nets::NetKind;
use hjb_core::rollout::{LossKind, LossSpec, TimeGrid};
use hjb_core::train::{self, TrainConfig};
use serde::{Deserialize, Serialize};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// External spelling of a network kind (the checkpoint format uses the
/// underscore form; both are accepted on input).
fn net_name(kind: NetKind) -> &'static str {
    match kind {
        NetKind::Fcn => "fcn",
        NetKind::IcnnPd => "icnn-pd",
    }
}

/// On-disk training configuration. Every field is optional so a file can
/// override just part of a preset; [`resolve_train`] fills the rest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub preset: Option<String>,
    pub env: Option<String>,
    /// Loss program: "value" or "lyapunov".
    pub mode: Option<String>,
    /// Network kind: "fcn" or "icnn-pd".
    pub net: Option<String>,
    pub widths: Option<Vec<usize>>,
    pub epsilon: Option<f64>,
    pub init_scale: Option<f64>,
    /// Time grid as an explicit step count × dt (exact under re-parsing).
    pub steps: Option<usize>,
    /// Alternative to `steps`: a horizon in seconds, divided by dt.
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    pub batch: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub resample: Option<bool>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<String>,
}

impl TrainFile {
    /// Layer `over` on top of `self`: any field present in `over` wins.
    pub fn merged(mut self, over: TrainFile) -> TrainFile {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f; } )* }
        }
        take!(
            preset, env, mode, net, widths, epsilon, init_scale, steps, horizon, dt, batch,
            epochs, lr, resample, seeds, out
        );
        self
    }

    /// Apply one `--set key=value` override.
    pub fn apply_set(&mut self, kv: &str) -> Result<(), CliError> {
        let (key, value) = split_kv(kv)?;
        match key {
            "net" => self.net = Some(value.to_string()),
            "widths" => self.widths = Some(parse_list(key, value)?),
            "epsilon" => self.epsilon = Some(parse_num(key, value)?),
            "init_scale" => self.init_scale = Some(parse_num(key, value)?),
            "steps" => self.steps = Some(parse_num(key, value)?),
            "horizon" => self.horizon = Some(parse_num(key, value)?),
            "dt" => self.dt = Some(parse_num(key, value)?),
            "batch" => self.batch = Some(parse_num(key, value)?),
            "epochs" => self.epochs = Some(parse_num(key, value)?),
            "lr" => self.lr = Some(parse_num(key, value)?),
            "resample" => self.resample = Some(parse_bool(key, value)?),
            other => {
                return Err(usage(format!(
                    "unknown --set key {other:?} for train (expected one of net, widths, \
                     epsilon, init_scale, steps, horizon, dt, batch, epochs, lr, resample)"
                )))
            }
        }
        Ok(())
    }
}

/// A fully resolved training invocation.
#[derive(Debug)]
pub struct ResolvedTrain {
    pub env: Env,
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    pub out: String,
    /// Echo document that re-resolves to this value.
    pub echo: TrainFile,
}

/// Resolve preset < file < flags into a runnable configuration.
pub fn resolve_train(file: TrainFile) -> Result<ResolvedTrain, CliError> {
    let preset = match &file.preset {
        Some(name) => Some(train::preset(name)?),
        None => None,
    };
    let (env, base) = match preset {
        Some(p) => {
            let env = match &file.env {
                Some(name) => Env::by_name(name)?,
                None => p.env,
            };
            (env, p.config)
        }
        None => {
            let env_name = file
                .env
                .as_deref()
                .ok_or_else(|| usage("either --preset or --env is required"))?;
            let env = Env::by_name(env_name)?;
            // Generic starting point for preset-free runs; everything is
            // overridable.
            let config = TrainConfig {
                kind: NetKind::Fcn,
                widths: vec![env.state_dim() + 1, 64, 64, 1],
                epsilon: 0.1,
                init_scale: 1.0,
                loss: LossSpec::value(),
                grid: TimeGrid::new(3.0, 0.01).expect("default grid"),
                batch: 20,
                epochs: 50,
                lr: 1e-3,
                seed: 0,
                resample: false,
            };
            (env, config)
        }
    };

    let mode = match file.mode.as_deref() {
        None => base.loss,
        Some("value") => LossSpec::value(),
        Some("lyapunov") => LossSpec::lyapunov(),
        Some(other) => {
            return Err(usage(format!(
                "unknown mode {other:?} (expected value or lyapunov)"
            )))
        }
    };
    let kind = match file.net.as_deref() {
        None => base.kind,
        Some("fcn") => NetKind::Fcn,
        Some("icnn-pd") | Some("icnn_pd") => NetKind::IcnnPd,
        Some(other) => {
            return Err(usage(format!(
                "unknown net {other:?} (expected fcn or icnn-pd)"
            )))
        }
    };
    let grid = match (file.steps, file.horizon, file.dt) {
        (None, None, None) => base.grid,
        (Some(steps), None, dt) => TimeGrid::from_steps(steps, dt.unwrap_or(base.grid.dt()))?,
        (None, Some(h), dt) => TimeGrid::new(h, dt.unwrap_or(base.grid.dt()))?,
        (None, None, Some(dt)) => TimeGrid::from_steps(base.grid.steps(), dt)?,
        (Some(_), Some(_), _) => return Err(usage("give steps or horizon, not both")),
    };
    let widths = file.widths.unwrap_or(base.widths);
    let expect = env.state_dim() + 1;
    if widths.first() != Some(&expect) {
        return Err(usage(format!(
            "first width must be state dim + 1 = {expect} for {}, got {widths:?}",
            env.name()
        )));
    }
    let seeds = match file.seeds {
        Some(s) if !s.is_empty() => s,
        Some(_) => return Err(usage("seed list must not be empty")),
        None => vec![base.seed],
    };
    let config = TrainConfig {
        kind,
        widths,
        epsilon: file.epsilon.unwrap_or(base.epsilon),
        init_scale: file.init_scale.unwrap_or(base.init_scale),
        loss: mode,
        grid,
        batch: file.batch.unwrap_or(base.batch),
        epochs: file.epochs.unwrap_or(base.epochs),
        lr: file.lr.unwrap_or(base.lr),
        seed: seeds[0],
        resample: file.resample.unwrap_or(base.resample),
    };
    let out = file
        .out
        .unwrap_or_else(|| format!("runs/{}", file.preset.as_deref().unwrap_or(env.name())));

    let echo = TrainFile {
        preset: file.preset,
        env: Some(env.name().to_string()),
        mode: Some(
            match config.loss.kind {
                LossKind::Value => "value",
                LossKind::Lyapunov => "lyapunov",
            }
            .to_string(),
        ),
        net: Some(net_name(config.kind).to_string()),
        widths: Some(config.widths.clone()),
        epsilon: Some(config.epsilon),
        init_scale: Some(config.init_scale),
        steps: Some(config.grid.steps()),
        horizon: None,
        dt: Some(config.grid.dt()),
        batch: Some(config.batch),
        epochs: Some(config.epochs),
        lr: Some(config.lr),
        resample: Some(config.resample),
        seeds: Some(seeds.clone()),
        out: Some(out.clone()),
    };
    Ok(ResolvedTrain {
        env,
        config,
        seeds,
        out,
        echo,
    })
}

/// On-disk MPPI run configuration (all optional, like [`TrainFile`]).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcFile {
    pub env: Option<String>,
    pub checkpoint: Option<String>,
    /// Run both the vanilla and the warmstarted arm.
    pub compare: Option<bool>,
    /// Without `compare`: whether the single arm warmstarts.
    pub warmstart: Option<bool>,
    pub samples: Option<usize>,
    pub horizon_steps: Option<usize>,
    pub dt: Option<f64>,
    pub lambda: Option<f64>,
    pub noise_std: Option<f64>,
    pub terminal_value: Option<bool>,
    pub max_steps: Option<usize>,
    pub completion_tol: Option<f64>,
    pub ics: Option<usize>,
    pub ic_seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<String>,
}

impl MpcFile {
    pub fn merged(mut self, over: MpcFile) -> MpcFile {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f; } )* }
        }
        take!(
            env, checkpoint, compare, warmstart, samples, horizon_steps, dt, lambda, noise_std,
            terminal_value, max_steps, completion_tol, ics, ic_seed, seeds, out
        );
        self
    }

    pub fn apply_set(&mut self, kv: &str) -> Result<(), CliError> {
        let (key, value) = split_kv(kv)?;
        match key {
            "samples" => self.samples = Some(parse_num(key, value)?),
            "horizon_steps" => self.horizon_steps = Some(parse_num(key, value)?),
            "dt" => self.dt = Some(parse_num(key, value)?),
            "lambda" => self.lambda = Some(parse_num(key, value)?),
            "noise_std" => self.noise_std = Some(parse_num(key, value)?),
            "terminal_value" => self.terminal_value = Some(parse_bool(key, value)?),
            "max_steps" => self.max_steps = Some(parse_num(key, value)?),
            "completion_tol" => self.completion_tol = Some(parse_num(key, value)?),
            other => {
                return Err(usage(format!(
                    "unknown --set key {other:?} for mpc (expected one of samples, \
                     horizon_steps, dt, lambda, noise_std, terminal_value, max_steps, \
                     completion_tol)"
                )))
            }
        }
        Ok(())
    }
}

/// Parse a TOML config file with unknown keys rejected.
pub fn load_file<T: serde::de::DeserializeOwned>(path: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config file {path}: {e}")))?;
    toml::from_str(&text).map_err(|e| usage(format!("config file {path}: {e}")))
}

/// Serialize an echo document for `config.toml`.
pub fn echo_toml<T: Serialize>(doc: &T) -> Result<String, CliError> {
    toml::to_string_pretty(doc).map_err(|e| CliError::Io(format!("config echo: {e}")))
}

fn split_kv(kv: &str) -> Result<(&str, &str), CliError> {
    kv.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| usage(format!("--set expects key=value, got {kv:?}")))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| usage(format!("cannot parse --set {key}={value}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(usage(format!(
            "cannot parse --set {key}={value} (expected true or false)"
        ))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    value
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("cannot parse --set {key}={value}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_resolution_round_trips_through_its_echo() {
        let file = TrainFile {
            preset: Some("di_lyapunov".to_string()),
            lr: Some(0.5),
            seeds: Some(vec![3, 4]),
            ..TrainFile::default()
        };
        let first = resolve_train(file).unwrap();
        assert_eq!(first.config.lr, 0.5);
        assert_eq!(first.seeds, vec![3, 4]);

        let text = toml::to_string_pretty(&first.echo).unwrap();
        let reparsed: TrainFile = toml::from_str(&text).unwrap();
        let second = resolve_train(reparsed).unwrap();
        assert_eq!(second.config.widths, first.config.widths);
        assert_eq!(second.config.lr, first.config.lr);
        assert_eq!(second.config.grid, first.config.grid);
        assert_eq!(second.seeds, first.seeds);
        assert_eq!(second.out, first.out);
        assert_eq!(second.env, first.env);
    }

    #[test]
    fn flags_override_file_values() {
        let base = TrainFile {
            preset: Some("di_lyapunov".to_string()),
            lr: Some(0.1),
            ..TrainFile::default()
        };
        let mut flags = TrainFile::default();
        flags.apply_set("lr=0.25").unwrap();
        let merged = base.merged(flags);
        assert_eq!(merged.lr, Some(0.25));
        assert_eq!(merged.preset.as_deref(), Some("di_lyapunov"));
    }

    #[test]
    fn unknown_set_key_is_a_usage_error() {
        let mut file = TrainFile::default();
        let err = file.apply_set("learning_rate=0.1").unwrap_err();
        assert!(matches!(err, CliError::Usage(_)), "{err:?}");
        let err = file.apply_set("no-equals").unwrap_err();
        assert!(matches!(err, CliError::Usage(_)), "{err:?}");
    }

    #[test]
    fn unknown_toml_key_is_rejected() {
        let err = toml::from_str::<TrainFile>("epoch_count = 5").unwrap_err();
        assert!(err.to_string().contains("epoch_count"), "{err}");
    }

    #[test]
    fn steps_and_horizon_conflict() {
        let file = TrainFile {
            preset: Some("di_lyapunov".to_string()),
            steps: Some(10),
            horizon: Some(1.0),
            ..TrainFile::default()
        };
        assert!(resolve_train(file).is_err());
    }

    #[test]
    fn first_width_must_match_the_environment() {
        let file = TrainFile {
            preset: Some("di_lyapunov".to_string()),
            widths: Some(vec![5, 8, 1]),
            ..TrainFile::default()
        };
        let err = resolve_train(file).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)), "{err:?}");
    }
}
