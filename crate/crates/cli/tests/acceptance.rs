//! Acceptance suite. Runs every criterion in order and prints one
//! `PASS`/`FAIL` line per criterion; exits non-zero when any fails.
//!
//! `cargo test -p lsnn-cli --test acceptance` runs everything (several
//! hours on one core). Pass substrings as arguments to run a subset, e.g.
//! `cargo test -p lsnn-cli --test acceptance -- encoder ppo`.

use lsnn_cli::{Experiment, ExperimentConfig, Summary};
use lsnn_core::init::{dale_normalized, random_signs, sparse_mask};
use lsnn_core::encode::{encode_gaussian_tuning, TuningCurveSpec, TuningWidth};
use lsnn_core::optim::{AdamConfig, AdamState};
use lsnn_core::rewire::{deepr_step, trainable_len, RewireConfig, RewireScope};
use lsnn_core::{Gradients, Matrix, NetworkParams, NeuronParams};
use lsnn_oracle::{compare_linear, silence, spike_free_fd, OracleConfig, RandomCase, VoltageProbe};
use lsnn_tasks::rl::{discounted_returns, ppo_clip, ppo_loss, random_policy_goals, resimulate, rollout};
use lsnn_tasks::TrainState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

type Check = std::result::Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Check,
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load(name: &str, out: &Path) -> ExperimentConfig {
    let set = vec![format!("output_dir={:?}", out.join(name.trim_end_matches(".toml")).display().to_string())];
    ExperimentConfig::load(&config_path(name), &set).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn run_config(name: &str) -> std::result::Result<Summary, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = load(name, dir.path());
    lsnn_cli::run(&cfg).map(|o| o.summary).map_err(|e| format!("{name}: {e}"))
}

fn gradient_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut spiking, mut adaptive, mut delayed) = (0.0f64, 0, 0, 0);
    let cases = 120;
    for case_id in 0..cases {
        let case = RandomCase::sample(&mut rng, 16, 64);
        let cfg = OracleConfig { gamma: rng.gen_range(0.1..1.0), reset_grad: case_id % 5 != 0 };
        let c = compare_linear(&case, cfg, &mut rng);
        if !c.rasters_match {
            return Err(format!("case {case_id}: spike trains differ"));
        }
        worst = worst.max(c.max_rel);
        spiking += (c.spikes > 0) as usize;
        adaptive += case.params.neurons.iter().any(|p| p.beta > 0.0) as usize;
        delayed += (case.params.d_rec.max() > 1 || case.params.d_in.max() > 0) as usize;
    }
    let detail = format!("{cases} networks ({spiking} spiking, {adaptive} adaptive, {delayed} delayed), max rel err {worst:.2e}");
    if worst <= 1e-10 && spiking >= 100 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn finite_differences() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst, mut checked) = (0.0f64, 0);
    for _ in 0..5 {
        let mut case = RandomCase::sample(&mut rng, 10, 40);
        silence(&mut case.params);
        let n = case.params.n_rec();
        let t_len = case.inputs.rows();
        let probe = VoltageProbe {
            readout: Matrix::from_fn(2, n, |_, _| rng.sample(StandardNormal)),
            target: Matrix::from_fn(t_len, 2, |_, _| rng.gen_range(-0.5..0.5)),
        };
        for err in spike_free_fd(&case, &probe, 1e-5, 20, &mut rng) {
            worst = worst.max(err);
            checked += 1;
        }
    }
    let detail = format!("{checked} directions, max rel err {worst:.2e}");
    if worst <= 1e-4 && checked >= 20 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dale_network(rng: &mut ChaCha8Rng, n: usize, p: f64) -> NetworkParams {
    let neuron = NeuronParams::regular(20.0, 0.01, 0.0);
    let mut net = NetworkParams::new(n, 2, vec![neuron; n], 1.0, 20.0);
    let signs_in = random_signs(n, 0.8, rng);
    let signs_rec = random_signs(n, 0.8, rng);
    net.w_in = dale_normalized(&signs_in, false, rng).unwrap();
    net.w_rec = dale_normalized(&signs_rec, true, rng).unwrap();
    net.w_out = Matrix::from_fn(2, n, |_, j| signs_rec[j] * rng.gen::<f64>());
    net.mask_in = sparse_mask(n, n, p, false, rng);
    net.mask_rec = sparse_mask(n, n, p, true, rng);
    net.signs_in = Some(signs_in);
    net.signs_rec = Some(signs_rec);
    net.enforce_masks();
    net
}

fn active(net: &NetworkParams) -> [usize; 3] {
    [net.mask_in.count_active(), net.mask_rec.count_active(), net.mask_out.count_active()]
}

fn rewiring_violation(net: &NetworkParams) -> Option<String> {
    let signs_rec = net.signs_rec.as_ref()?;
    let signs_in = net.signs_in.as_ref()?;
    for (name, w, m, signs) in [
        ("w_in", &net.w_in, &net.mask_in, signs_in),
        ("w_rec", &net.w_rec, &net.mask_rec, signs_rec),
        ("w_out", &net.w_out, &net.mask_out, signs_rec),
    ] {
        for r in 0..w.rows() {
            for c in 0..w.cols() {
                if m[(r, c)] {
                    if w[(r, c)] * signs[c] < 0.0 {
                        return Some(format!("{name}[{r},{c}] has the wrong sign"));
                    }
                } else if w[(r, c)].to_bits() != 0 {
                    return Some(format!("dormant {name}[{r},{c}] = {}", w[(r, c)]));
                }
            }
        }
    }
    None
}

fn deep_rewiring() -> Check {
    let mut events = 0;
    for scope in [RewireScope::PerMatrix, RewireScope::Global] {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut net = dale_network(&mut rng, 50, 0.2);
        let start = active(&net);
        let total: usize = start.iter().sum();
        let mut adam = AdamState::new(AdamConfig::default(), trainable_len(&net));
        let cfg = RewireConfig { l1_coeff: 0.01, temperature: 0.0, target_connectivity: 0.2, scope };
        for step in 0..1000 {
            let mut g = Gradients::zeros_like(&net);
            for m in [&mut g.w_in, &mut g.w_rec, &mut g.w_out] {
                m.as_mut_slice().iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
            }
            let stats = deepr_step(&mut net, &mut adam, &g, &cfg, 0.01, &mut rng).map_err(|e| e.to_string())?;
            events += stats.disconnected;
            let now = active(&net);
            let count_ok = match scope {
                RewireScope::PerMatrix => now == start,
                RewireScope::Global => now.iter().sum::<usize>() == total,
            };
            if !count_ok {
                return Err(format!("{scope:?} step {step}: active counts {now:?}, started with {start:?}"));
            }
            if let Some(v) = rewiring_violation(&net) {
                return Err(format!("{scope:?} step {step}: {v}"));
            }
        }
    }
    let detail = format!("2 x 1000 steps at 20% connectivity, {events} rewiring events");
    if events > 100 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn accuracy(s: &Summary) -> std::result::Result<f64, String> {
    match s {
        Summary::Accuracy(a) => Ok(*a),
        other => Err(format!("unexpected summary {other}")),
    }
}

fn delayed_cue_memory() -> Check {
    let lsnn = accuracy(&run_config("delayed-cue.toml")?)?;
    let lif = accuracy(&run_config("delayed-cue-lif.toml")?)?;
    let detail = format!("LSNN accuracy {lsnn:.3} (>= 0.85), LIF accuracy {lif:.3} (<= 0.65)");
    if lsnn >= 0.85 && lif <= 0.65 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sequential_pixels() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = load("seq-pixel-desk.toml", dir.path());
    let Experiment::SeqPixel(c) = &cfg.experiment else { return Err("not a seq-pixel config".into()) };
    let side = 28 / c.task.downsample;
    let conn = c.network.init.connectivity;
    if side != 14 || conn != 0.12 || c.network.dt != 1.0 || c.optimizer.rewire.is_none() {
        return Err(format!("config is {side}x{side}, connectivity {conn}"));
    }
    let acc = accuracy(&lsnn_cli::run(&cfg).map_err(|e| e.to_string())?.summary)?;
    let detail = format!("14x14 digits, test accuracy {acc:.4} (>= 0.80)");
    if acc >= 0.80 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn l2l_beats_ridge() -> Check {
    let t0 = Instant::now();
    run_config("l2l-sinus-smoke.toml")?;
    let smoke = t0.elapsed();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = load("l2l-sinus-desk.toml", dir.path());
    let Experiment::L2l(c) = &cfg.experiment else { return Err("not an l2l config".into()) };
    let n = c.network.n_regular + c.network.n_adaptive;
    if n != 100 || c.network.n_adaptive != 40 || c.task.steps != 100 || c.training.iterations < 2000 {
        return Err(format!("config has {n} neurons, {} adaptive, {} steps", c.network.n_adaptive, c.task.steps));
    }
    let Summary::Regression { network_mse, ridge_mse } = lsnn_cli::run(&cfg).map_err(|e| e.to_string())?.summary else {
        return Err("unexpected summary".into());
    };
    let wins = network_mse.iter().zip(&ridge_mse).filter(|(a, b)| a < b).count();
    let detail = format!(
        "network below ridge on {wins}/{} episodes (>= 8), smoke run {:.1} s (< 60 s)",
        network_mse.len(),
        smoke.as_secs_f64()
    );
    if network_mse.len() == 10 && wins >= 8 && smoke < Duration::from_secs(60) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ppo_correctness() -> Check {
    let cases = [
        (1.5, 1.0, 0.2, 1.2),
        (0.5, 1.0, 0.2, 0.5),
        (1.5, -1.0, 0.2, -1.5),
        (0.5, -1.0, 0.2, -0.8),
        (1.0, 0.7, 0.2, 0.7),
        (1.1, 2.0, 0.2, 2.2),
    ];
    for (r, a, eps, want) in cases {
        let got = ppo_clip(r, a, eps);
        if got != want {
            return Err(format!("clip({r}, {a}, {eps}) = {got}, expected {want}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let rewards: Vec<f64> = (0..rng.gen_range(1..300)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eta = rng.gen_range(0.5..1.0);
        let got = discounted_returns(&rewards, eta);
        for t in 0..rewards.len() {
            let direct: f64 = (t + 1..rewards.len()).map(|u| eta.powi((u - t) as i32) * rewards[u]).sum();
            worst = worst.max((got[t] - direct).abs());
        }
    }
    if worst > 1e-12 {
        return Err(format!("discounted returns differ by {worst:.2e}"));
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = load("meta-rl-smoke.toml", dir.path());
    let Experiment::MetaRl(c) = &cfg.experiment else { return Err("not a meta-rl config".into()) };
    let mut state = TrainState::new(&c.network, c.optimizer.clone(), 4).map_err(|e| e.to_string())?;
    let mut rollouts = Vec::new();
    for _ in 0..3 {
        let ro = rollout(&state.params, &c.arena, &c.observation, c.ppo.variance, &mut state.rng).map_err(|e| e.to_string())?;
        let again = resimulate(&state.params, &ro.tape).map_err(|e| e.to_string())?;
        let bitwise = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        if let Some(s) = (0..again.len()).find(|&s| !bitwise(again.z(s), ro.tape.z(s)) || !bitwise(again.y(s), ro.tape.y(s))) {
            return Err(format!("re-simulation differs at step {s}"));
        }
        rollouts.push(ro);
    }
    let (loss, _) = ppo_loss(&state.params, &rollouts, &c.ppo, true).map_err(|e| e.to_string())?;
    if loss.surrogate != loss.advantage {
        return Err(format!("surrogate {} differs from mean advantage {}", loss.surrogate, loss.advantage));
    }
    Ok(format!(
        "{} clip cases exact, returns within {worst:.1e}, re-simulation bitwise, surrogate = mean advantage = {:.6}",
        cases.len(),
        loss.advantage
    ))
}

fn meta_rl_learning() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = load("meta-rl-simple.toml", dir.path());
    let Experiment::MetaRl(c) = &cfg.experiment else { return Err("not a meta-rl config".into()) };
    let episodes = c.iterations * c.ppo.episodes_per_iteration as u64;
    let n = c.network.n_regular + c.network.n_adaptive;
    if episodes > 2000 || n != 100 || c.arena.goal_radius != 0.5 || c.arena.goal_center_radius != 0.0 || c.arena.episode_steps != 200 {
        return Err(format!("config trains on {episodes} episodes with {n} neurons"));
    }
    let baseline = random_policy_goals(&c.arena, c.ppo.variance, 2000, &mut ChaCha8Rng::seed_from_u64(5));
    let Summary::Goals(goals) = lsnn_cli::run(&cfg).map_err(|e| e.to_string())?.summary else {
        return Err("unexpected summary".into());
    };
    let detail = format!("{goals:.3} goals per episode after {episodes} episodes, random policy {baseline:.3} (ratio {:.2} >= 3)", goals / baseline);
    if goals >= 3.0 * baseline {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn encoder_statistics() -> Check {
    let spec = TuningCurveSpec::rl(40, 1.0).map_err(|e| e.to_string())?;
    let k = 20;
    let center = spec.centers[k];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let steps = 100_000;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 1..=10 {
        let xi = 0.01 * i as f64;
        let value = center + xi;
        let analytic = spec.rates(value);
        let closed = 500.0 * (-100.0 * xi * xi).exp();
        if (analytic[k] - closed).abs() > 1e-9 * closed {
            return Err(format!("analytic rate {} at offset {xi}, expected {closed}", analytic[k]));
        }
        let mut counts = vec![0u64; spec.n_neurons()];
        for _ in 0..steps {
            for (c, z) in counts.iter_mut().zip(encode_gaussian_tuning(value, &spec, &mut rng)) {
                *c += (z != 0.0) as u64;
            }
        }
        for (j, &rate) in analytic.iter().enumerate().filter(|(_, &r)| r >= 50.0) {
            let empirical = counts[j] as f64 * 1000.0 / (steps as f64 * spec.dt_ms);
            worst = worst.max((empirical - rate).abs() / rate);
            checked += 1;
        }
    }
    let edge = TuningCurveSpec { centers: vec![0.0, 0.1], width: TuningWidth::Coefficient(100.0), r_max_hz: 500.0, dt_ms: 1.0 };
    let r = edge.rates(0.0)[1];
    let want = 500.0 * (-1f64).exp();
    if (r - want).abs() > 1e-9 {
        return Err(format!("offset 0.1 gives {r} Hz, expected {want}"));
    }
    let detail = format!("10 probe values, {checked} rates over 1e5 steps, max rel deviation {:.2}%", 100.0 * worst);
    if worst <= 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "gradient-oracle-equivalence", limit: Duration::from_secs(60), run: gradient_oracle },
        Criterion { id: 2, name: "spike-free-finite-differences", limit: Duration::from_secs(60), run: finite_differences },
        Criterion { id: 3, name: "deep-rewiring-invariants", limit: Duration::from_secs(60), run: deep_rewiring },
        Criterion { id: 4, name: "delayed-cue-memory", limit: Duration::from_secs(30 * 60), run: delayed_cue_memory },
        Criterion { id: 5, name: "sequential-pixels", limit: Duration::from_secs(2 * 3600), run: sequential_pixels },
        Criterion { id: 6, name: "l2l-beats-ridge", limit: Duration::from_secs(4 * 3600), run: l2l_beats_ridge },
        Criterion { id: 7, name: "ppo-correctness", limit: Duration::from_secs(60), run: ppo_correctness },
        Criterion { id: 8, name: "meta-rl-learning", limit: Duration::from_secs(3600), run: meta_rl_learning },
        Criterion { id: 9, name: "encoder-statistics", limit: Duration::from_secs(60), run: encoder_statistics },
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if std::env::args().any(|a| a == "--list") {
        for c in &criteria {
            println!("{}: test", c.name);
        }
        return;
    }
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filters.is_empty() || filters.iter().any(|f| c.name.contains(f.as_str()))) {
        let t0 = Instant::now();
        let result = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = t0.elapsed();
        let (ok, detail) = match result {
            Ok(d) if elapsed <= c.limit => (true, d),
            Ok(d) => (false, format!("{d}; took longer than {} s", c.limit.as_secs())),
            Err(d) => (false, d),
        };
        failed += !ok as usize;
        println!(
            "criterion {} {:<30} {} ({:.1} s) {detail}",
            c.id,
            c.name,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
