//! One function per subcommand. Each builds its resolved configuration,
//! creates the run directory, writes artifacts through [`RunDir`] (so the
//! manifest stays complete), and echoes the configuration to `config.toml`.
//! Numeric failures after artifacts have started keep the partial output on
//! disk.

use crate::artifacts::{csv_document, fmt_f64, RunDir};
use crate::config::{self, MpcFile, TrainFile};
use crate::levelset as ls;
use crate::svg;
use crate::{CliError, CliResult};
use crate::{EvalArgs, LevelsetArgs, MpcArgs, PlotArgs, TrainArgs};
use hjb_core::envs::Env;
use hjb_core::hjb::CostSpec;
use hjb_core::mppi::{run_mpc, MppiConfig};
use hjb_core::nets::{load_checkpoint, save_checkpoint, CheckpointMeta, ValueNetwork};
use hjb_core::rollout::{rollout, TimeGrid};
use hjb_core::train::{self, normalize_curve};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::Path;
use std::time::Instant;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Per-epoch record collected through the training observer; kept even when
/// a later epoch fails so partial curves can be written.
struct EpochRow {
    loss: f64,
    mean_cost: f64,
    wall_ms: f64,
}

fn curves_csv(rows: &[EpochRow]) -> Result<String, CliError> {
    let costs: Vec<f64> = rows.iter().map(|r| r.mean_cost).collect();
    let normalized = normalize_curve(&costs)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .zip(&normalized)
        .enumerate()
        .map(|(e, (r, n))| {
            vec![
                e.to_string(),
                fmt_f64(r.loss),
                fmt_f64(r.mean_cost),
                fmt_f64(*n),
            ]
        })
        .collect();
    Ok(csv_document(
        &["epoch", "loss", "mean_cost", "normalized_cost"],
        &table,
    ))
}

fn timing_csv(rows: &[EpochRow]) -> String {
    let table: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(e, r)| vec![e.to_string(), fmt_f64(r.wall_ms)])
        .collect();
    csv_document(&["epoch", "wall_ms"], &table)
}

pub fn train(a: TrainArgs) -> CliResult {
    let mut layered = match &a.config {
        Some(path) => config::load_file::<TrainFile>(path)?,
        None => TrainFile::default(),
    };
    let mut flags = TrainFile {
        preset: a.preset,
        env: a.env,
        mode: a.mode,
        seeds: (!a.seed.is_empty()).then(|| a.seed.clone()),
        out: a.out,
        ..TrainFile::default()
    };
    for kv in &a.set {
        flags.apply_set(kv)?;
    }
    layered = layered.merged(flags);
    let resolved = config::resolve_train(layered)?;

    let mut run = RunDir::create(&resolved.out)?;
    run.write("config.toml", &config::echo_toml(&resolved.echo)?)?;

    let multi = resolved.seeds.len() > 1;
    let mut normalized_curves = Vec::new();
    for &seed in &resolved.seeds {
        let mut cfg = resolved.config.clone();
        cfg.seed = seed;
        let prefix = if multi {
            format!("seed_{seed}/")
        } else {
            String::new()
        };

        let mut rows: Vec<EpochRow> = Vec::with_capacity(cfg.epochs + 1);
        let mut last = Instant::now();
        let outcome = train::train_with_observer(&resolved.env, &cfg, |stats, _| {
            let now = Instant::now();
            rows.push(EpochRow {
                loss: stats.loss,
                mean_cost: stats.mean_cost,
                wall_ms: now.duration_since(last).as_secs_f64() * 1e3,
            });
            last = now;
        });
        match outcome {
            Ok(out) => {
                run.write(&format!("{prefix}curves.csv"), &curves_csv(&rows)?)?;
                run.write(&format!("{prefix}timing.csv"), &timing_csv(&rows))?;
                let meta = CheckpointMeta {
                    env: resolved.env.name().to_string(),
                    seed,
                    epoch: cfg.epochs,
                };
                let ckpt = format!("{prefix}checkpoint.json");
                save_checkpoint(&out.net, &meta, &run.path_of(&ckpt))?;
                run.record(&ckpt);
                let normalized = normalize_curve(&out.costs)?;
                println!(
                    "seed {seed}: loss {:.6} -> {:.6}, normalized cost {:.4}",
                    out.losses[0],
                    out.losses.last().unwrap(),
                    normalized.last().unwrap()
                );
                normalized_curves.push(normalized);
            }
            Err(e) => {
                // Keep whatever epochs completed; curves may be unwritable
                // if the failure hit epoch 0.
                if rows.len() > 1 {
                    run.write(&format!("{prefix}curves.csv"), &curves_csv(&rows)?)?;
                    run.write(&format!("{prefix}timing.csv"), &timing_csv(&rows))?;
                }
                run.finish()?;
                return Err(e.into());
            }
        }
    }

    let title = resolved.echo.preset.as_deref().map(str::to_string).unwrap_or_else(|| {
        format!(
            "{} / {}",
            resolved.env.name(),
            resolved.echo.mode.as_deref().unwrap_or("value")
        )
    });
    run.write(
        "curves.svg",
        &svg::curves_svg(&title, "normalized cost", &normalized_curves),
    )?;
    run.finish()?;
    println!("wrote {}", resolved.out);
    Ok(())
}

#[derive(Serialize)]
struct EvalEcho<'a> {
    checkpoint: &'a str,
    env: &'a str,
    ics: usize,
    seed: u64,
    horizon: f64,
    dt: f64,
    out: &'a str,
}

pub fn eval(a: EvalArgs) -> CliResult {
    let (net, meta) = load_checkpoint(Path::new(&a.checkpoint))?;
    let env = Env::by_name(a.env.as_deref().unwrap_or(&meta.env))?;
    check_net_dim(&net, &env)?;
    if a.ics == 0 {
        return Err(usage("--ics must be at least 1"));
    }
    let grid = TimeGrid::new(a.horizon, a.dt)?;
    let cost = CostSpec::from_env(&env);
    let out = a.out.clone().unwrap_or_else(|| "runs/eval".to_string());

    let mut run = RunDir::create(&out)?;
    run.write(
        "config.toml",
        &config::echo_toml(&EvalEcho {
            checkpoint: &a.checkpoint,
            env: env.name(),
            ics: a.ics,
            seed: a.seed,
            horizon: a.horizon,
            dt: a.dt,
            out: &out,
        })?,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let ics = env.sample_initial(&mut rng, a.ics);
    let mut rows = Vec::with_capacity(ics.len());
    let mut total = 0.0;
    for (i, x0) in ics.iter().enumerate() {
        match rollout(&net, &env, &cost, x0, &grid) {
            Ok(traj) => {
                let c = traj.cost();
                total += c;
                rows.push(vec![i.to_string(), fmt_f64(c)]);
            }
            Err(e) => {
                run.write("eval.csv", &csv_document(&["ic", "cost"], &rows))?;
                run.finish()?;
                return Err(e.into());
            }
        }
    }
    run.write("eval.csv", &csv_document(&["ic", "cost"], &rows))?;
    run.finish()?;
    println!(
        "mean closed-loop cost {:.6} over {} initial conditions (horizon {} s)",
        total / ics.len() as f64,
        ics.len(),
        a.horizon
    );
    Ok(())
}

fn check_net_dim(net: &ValueNetwork, env: &Env) -> Result<(), CliError> {
    use hjb_core::nets::ValueFunction;
    if net.input_dim() != env.state_dim() {
        return Err(usage(format!(
            "checkpoint expects {}-dimensional states but {} has {}",
            net.input_dim(),
            env.name(),
            env.state_dim()
        )));
    }
    Ok(())
}

pub fn mpc(a: MpcArgs) -> CliResult {
    let mut layered = match &a.config {
        Some(path) => config::load_file::<MpcFile>(path)?,
        None => MpcFile::default(),
    };
    let mut flags = MpcFile {
        env: a.env,
        checkpoint: a.checkpoint,
        compare: a.compare.then_some(true),
        warmstart: a.warmstart.then_some(true),
        ics: a.ics,
        ic_seed: a.ic_seed,
        seeds: (!a.seed.is_empty()).then(|| a.seed.clone()),
        out: a.out,
        ..MpcFile::default()
    };
    for kv in &a.set {
        flags.apply_set(kv)?;
    }
    layered = layered.merged(flags);

    let env_name = layered
        .env
        .clone()
        .ok_or_else(|| usage("--env is required"))?;
    let env = Env::by_name(&env_name)?;
    let mut cfg = MppiConfig::new(
        layered.horizon_steps.unwrap_or(50),
        layered.dt.unwrap_or(0.02),
    );
    if let Some(v) = layered.samples {
        cfg.samples = v;
    }
    if let Some(v) = layered.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = layered.noise_std {
        cfg.noise_std = v;
    }
    if let Some(v) = layered.terminal_value {
        cfg.terminal_value = v;
    }
    if let Some(v) = layered.max_steps {
        cfg.max_steps = v;
    }
    if let Some(v) = layered.completion_tol {
        cfg.completion_tol = v;
    }

    let arms: Vec<bool> = if layered.compare.unwrap_or(false) {
        vec![false, true]
    } else {
        vec![layered.warmstart.unwrap_or(false)]
    };
    let net = match &layered.checkpoint {
        Some(path) => {
            let (net, _) = load_checkpoint(Path::new(path))?;
            check_net_dim(&net, &env)?;
            Some(net)
        }
        None => None,
    };
    if net.is_none() && (arms.contains(&true) || cfg.terminal_value) {
        return Err(usage(
            "warmstarted or terminal-value runs need --checkpoint",
        ));
    }

    let ic_count = layered.ics.unwrap_or(20);
    if ic_count == 0 {
        return Err(usage("--ics must be at least 1"));
    }
    let ic_seed = layered.ic_seed.unwrap_or(0);
    let seeds = layered.seeds.clone().unwrap_or_else(|| vec![0]);
    let out = layered
        .out
        .clone()
        .unwrap_or_else(|| format!("runs/mpc_{env_name}"));

    let mut run = RunDir::create(&out)?;
    let echo = MpcFile {
        env: Some(env_name.clone()),
        checkpoint: layered.checkpoint.clone(),
        compare: Some(layered.compare.unwrap_or(false)),
        warmstart: Some(layered.warmstart.unwrap_or(false)),
        samples: Some(cfg.samples),
        horizon_steps: Some(cfg.horizon_steps),
        dt: Some(cfg.dt),
        lambda: Some(cfg.lambda),
        noise_std: Some(cfg.noise_std),
        terminal_value: Some(cfg.terminal_value),
        max_steps: Some(cfg.max_steps),
        completion_tol: Some(cfg.completion_tol),
        ics: Some(ic_count),
        ic_seed: Some(ic_seed),
        seeds: Some(seeds.clone()),
        out: Some(out.clone()),
    };
    run.write("config.toml", &config::echo_toml(&echo)?)?;

    let mut rng = ChaCha8Rng::seed_from_u64(ic_seed);
    let ics = env.sample_initial(&mut rng, ic_count);
    let horizon_ms = cfg.horizon_steps as f64 * cfg.dt * 1e3;
    let header = [
        "env",
        "warmstart",
        "horizon_ms",
        "samples",
        "seed",
        "steps",
        "cost",
    ];

    let mut rows: Vec<Vec<String>> = Vec::new();
    for &warm in &arms {
        for &seed in &seeds {
            let mut steps_sum = 0.0;
            let mut cost_sum = 0.0;
            for (i, x0) in ics.iter().enumerate() {
                let mut c = cfg.clone();
                c.warmstart = warm;
                // Decorrelate the noise across initial conditions while
                // keeping every run reproducible from (seed, ic index).
                c.seed = seed ^ (i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                let arm_net = net.as_ref().map(|n| n as &dyn hjb_core::nets::ValueFunction);
                match run_mpc(&env, &c, arm_net, x0) {
                    Ok(res) => {
                        steps_sum += res.steps as f64;
                        cost_sum += res.cost;
                    }
                    Err(e) => {
                        run.write("mpc_runs.csv", &csv_document(&header, &rows))?;
                        run.finish()?;
                        return Err(e.into());
                    }
                }
            }
            let n = ics.len() as f64;
            println!(
                "warmstart={warm} seed={seed}: mean steps {:.1}, mean cost {:.4}",
                steps_sum / n,
                cost_sum / n
            );
            rows.push(vec![
                env_name.clone(),
                warm.to_string(),
                fmt_f64(horizon_ms),
                cfg.samples.to_string(),
                seed.to_string(),
                fmt_f64(steps_sum / n),
                fmt_f64(cost_sum / n),
            ]);
        }
    }
    run.write("mpc_runs.csv", &csv_document(&header, &rows))?;
    run.finish()?;
    println!("wrote {out}");
    Ok(())
}

#[derive(Serialize)]
struct PlotEcho<'a> {
    runs: &'a [String],
    out: &'a str,
}

/// Find curve CSVs in a run directory: either flat or one per seed_*/ dir.
fn collect_curves(dir: &Path) -> Result<Vec<std::path::PathBuf>, CliError> {
    let flat = dir.join("curves.csv");
    if flat.is_file() {
        return Ok(vec![flat]);
    }
    let mut found = Vec::new();
    if dir.is_dir() {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir()
                && path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("seed_"))
            {
                let csv = path.join("curves.csv");
                if csv.is_file() {
                    found.push(csv);
                }
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(usage(format!("no curves.csv under {}", dir.display())));
    }
    Ok(found)
}

/// Read the `normalized_cost` column of a curves CSV.
fn read_normalized(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| usage(format!("{} is empty", path.display())))?;
    let col = header
        .split(',')
        .position(|h| h == "normalized_cost")
        .ok_or_else(|| usage(format!("{} has no normalized_cost column", path.display())))?;
    let mut values = Vec::new();
    for (ln, line) in lines.enumerate() {
        let field = line
            .split(',')
            .nth(col)
            .ok_or_else(|| usage(format!("{}:{}: short row", path.display(), ln + 2)))?;
        let v: f64 = field
            .parse()
            .map_err(|_| usage(format!("{}:{}: bad number {field:?}", path.display(), ln + 2)))?;
        values.push(v);
    }
    Ok(values)
}

pub fn plot(a: PlotArgs) -> CliResult {
    let mut series = Vec::new();
    for dir in &a.runs {
        for csv in collect_curves(Path::new(dir))? {
            series.push(read_normalized(&csv)?);
        }
    }
    if series.is_empty() {
        return Err(usage("no curves to plot"));
    }
    let epochs = series[0].len();
    if series.iter().any(|s| s.len() != epochs) {
        return Err(usage("curve files disagree on epoch count"));
    }

    let mut run = RunDir::create(&a.out)?;
    run.write(
        "config.toml",
        &config::echo_toml(&PlotEcho {
            runs: &a.runs,
            out: &a.out,
        })?,
    )?;
    let mut rows = Vec::with_capacity(epochs);
    for e in 0..epochs {
        let vals: Vec<f64> = series.iter().map(|s| s[e]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        rows.push(vec![
            e.to_string(),
            fmt_f64(mean),
            fmt_f64(lo),
            fmt_f64(hi),
        ]);
    }
    run.write(
        "curves_summary.csv",
        &csv_document(&["epoch", "mean", "min", "max"], &rows),
    )?;
    run.write(
        "curves.svg",
        &svg::curves_svg("training curves", "normalized cost", &series),
    )?;
    run.finish()?;
    println!("wrote {}", a.out);
    Ok(())
}

#[derive(Serialize)]
struct LevelsetEcho<'a> {
    checkpoint: &'a str,
    env: &'a str,
    t: f64,
    bounds: &'a [f64],
    resolution: usize,
    levels: usize,
    slice: [usize; 2],
    overlay: usize,
    horizon: f64,
    dt: f64,
    out: &'a str,
}

pub fn levelset(a: LevelsetArgs) -> CliResult {
    use hjb_core::nets::ValueFunction;
    let (net, meta) = load_checkpoint(Path::new(&a.checkpoint))?;
    let env = Env::by_name(a.env.as_deref().unwrap_or(&meta.env))?;
    check_net_dim(&net, &env)?;
    let dim = env.state_dim();
    let slice: [usize; 2] = match (&a.slice, dim) {
        (Some(s), _) if s.len() == 2 => [s[0], s[1]],
        (Some(s), _) => {
            return Err(usage(format!(
                "--slice needs exactly two indices, got {s:?}"
            )))
        }
        (None, 2) => [0, 1],
        (None, _) => {
            return Err(usage(format!(
                "{} has {dim} states; pick two with --slice i,j",
                env.name()
            )))
        }
    };
    if slice[0] >= dim || slice[1] >= dim || slice[0] == slice[1] {
        return Err(usage(format!(
            "slice indices must be distinct and < {dim}, got {slice:?}"
        )));
    }
    if a.levels == 0 {
        return Err(usage("--levels must be at least 1"));
    }
    if a.bounds.len() != 2 {
        return Err(usage(format!(
            "--bounds needs exactly low,high, got {:?}",
            a.bounds
        )));
    }
    let bounds = (a.bounds[0], a.bounds[1]);

    let base = env.goal().to_vec();
    let grid = ls::sample_grid(bounds, a.resolution, |x1, x2| {
        let mut x = base.clone();
        x[slice[0]] = x1;
        x[slice[1]] = x2;
        Ok(net.forward(&env.encoded_error(&x), a.t)?)
    })?;
    let levels = ls::even_levels(&grid, a.levels)?;

    let out = a.out.clone().unwrap_or_else(|| "runs/levelset".to_string());
    let mut run = RunDir::create(&out)?;
    run.write(
        "config.toml",
        &config::echo_toml(&LevelsetEcho {
            checkpoint: &a.checkpoint,
            env: env.name(),
            t: a.t,
            bounds: &a.bounds,
            resolution: a.resolution,
            levels: a.levels,
            slice,
            overlay: a.overlay,
            horizon: a.horizon,
            dt: a.dt,
            out: &out,
        })?,
    )?;
    run.write("levelset.csv", &ls::grid_csv(&grid))?;

    let mut overlays = Vec::new();
    if a.overlay > 0 {
        let cost = CostSpec::from_env(&env);
        let grid_t = TimeGrid::new(a.horizon, a.dt)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for x0 in env.sample_initial(&mut rng, a.overlay) {
            match rollout(&net, &env, &cost, &x0, &grid_t) {
                Ok(traj) => overlays.push(
                    traj.states
                        .iter()
                        .map(|x| (x[slice[0]], x[slice[1]]))
                        .collect(),
                ),
                Err(e) => {
                    run.finish()?;
                    return Err(e.into());
                }
            }
        }
    }
    let title = format!("v at t = {}", a.t);
    let labels = (format!("x{}", slice[0] + 1), format!("x{}", slice[1] + 1));
    run.write(
        "levelset.svg",
        &ls::levelset_svg(&grid, &levels, &overlays, &title, (&labels.0, &labels.1)),
    )?;
    run.finish()?;
    println!(
        "wrote {out} ({} levels in [{}, {}])",
        levels.len(),
        fmt_f64(grid.min()),
        fmt_f64(grid.max())
    );
    Ok(())
}
