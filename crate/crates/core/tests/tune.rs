use hjb_core::envs::Env;
use hjb_core::hjb::CostSpec;
use hjb_core::nets::ValueFunction;
use hjb_core::rollout::{rollout, TimeGrid};
use hjb_core::train::{self};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn descent_fraction(net: &dyn ValueFunction, env: &Env, grid: &TimeGrid) -> f64 {
    let cost = CostSpec::from_env(env);
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let ics = env.sample_initial(&mut rng, 20);
    let (mut ok, mut total) = (0usize, 0usize);
    for x0 in &ics {
        let traj = rollout(net, env, &cost, x0, grid).unwrap();
        for k in 0..grid.steps() {
            let ek = env.encoded_error(&traj.states[k]);
            let ek1 = env.encoded_error(&traj.states[k + 1]);
            let vk = net.forward(&ek, grid.time(k)).unwrap();
            let vk1 = net.forward(&ek1, grid.time(k + 1)).unwrap();
            let ell = cost.state_cost(&ek);
            if vk1 - vk <= -grid.dt() * ell + 1e-3 {
                ok += 1;
            }
            total += 1;
        }
    }
    ok as f64 / total as f64
}

#[test]
#[ignore]
fn twolink_seeds() {
    for seed in 0u64..5 {
        let mut p = train::twolink_value();
        p.config.seed = seed;
        let out = train::train(&p.env, &p.config).unwrap();
        let norm: Vec<f64> = out.costs.iter().map(|c| c / out.costs[0]).collect();
        let min = norm.iter().cloned().fold(f64::INFINITY, f64::min);
        println!(
            "twolink seed={seed}: min_norm={min:.4} final_norm={:.4}",
            norm.last().unwrap()
        );
    }
}

#[test]
#[ignore]
fn swingup_seeds() {
    for seed in 0u64..5 {
        let mut p = train::cp_swingup_value();
        p.config.seed = seed;
        let out = train::train(&p.env, &p.config).unwrap();
        let norm: Vec<f64> = out.costs.iter().map(|c| c / out.costs[0]).collect();
        let min = norm.iter().cloned().fold(f64::INFINITY, f64::min);
        println!(
            "swingup seed={seed}: min_norm={min:.4} final_norm={:.4}",
            norm.last().unwrap()
        );
    }
}

#[test]
#[ignore]
fn mppi_horizon_probe() {
    use hjb_core::mppi::{run_mpc, MppiConfig};

    for (preset, mpc_dt) in [(train::di_value(), 0.01), (train::twolink_value(), 0.01)] {
        let out = train::train(&preset.env, &preset.config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let ics = preset.env.sample_initial(&mut rng, 20);
        for (warm, horizon) in [(false, 50usize), (true, 2usize)] {
            let mut total_cost = 0.0;
            let mut total_steps = 0.0;
            let mut incomplete = 0;
            for seed in 0u64..3 {
                for (i, x0) in ics.iter().enumerate() {
                    let mut c = MppiConfig::new(horizon, mpc_dt);
                    c.warmstart = warm;
                    c.seed = seed ^ (i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                    let net = if warm { Some(&out.net as &dyn ValueFunction) } else { None };
                    let r = run_mpc(&preset.env, &c, net, x0).unwrap();
                    total_cost += r.cost;
                    total_steps += r.steps as f64;
                    if !r.completed {
                        incomplete += 1;
                    }
                }
            }
            println!(
                "{} warm={warm} H={horizon}: mean_cost={:.4} mean_steps={:.1} incomplete={incomplete}/60",
                preset.name,
                total_cost / 60.0,
                total_steps / 60.0
            );
        }
    }
}

#[test]
#[ignore]
fn balance_lr_sweep() {
    for lr in [3e-3, 1e-2, 3e-2] {
        let mut p = train::cp_balance_lyapunov();
        p.config.lr = lr;
        p.config.seed = 0;
        let out = train::train(&p.env, &p.config).unwrap();
        let norm: Vec<f64> = out.costs.iter().map(|c| c / out.costs[0]).collect();
        let min = norm.iter().cloned().fold(f64::INFINITY, f64::min);
        let descent = descent_fraction(&out.net, &p.env, &p.config.grid);
        println!(
            "lr={lr}: min_norm={min:.4} final_norm={:.4} loss0={:.4} lossF={:.4} descent={descent:.4}",
            norm.last().unwrap(),
            out.losses[0],
            out.losses.last().unwrap()
        );
    }
}
