use lsnn_cli::checkpoint::{checkpoint_path, Checkpoint, FORMAT_VERSION};
use lsnn_cli::run::{FINAL_CHECKPOINT, METRICS_FILE, RASTER_FILE};
use lsnn_cli::{main_with_args, CliError, ExperimentConfig};
use lsnn_core::init::{InitScheme, InitSpec, NetworkSpec, TimeConstant};
use lsnn_core::{AdamConfig, LrSchedule, OptimizerSpec, RewireConfig, RewireScope, Trainer};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn smoke(name: &str, out: &Path, extra: &[&str]) -> ExperimentConfig {
    let mut sets = vec![format!("output_dir={:?}", out.display().to_string())];
    sets.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::load(&configs().join(name), &sets).unwrap()
}

fn random_checkpoint(seed: u64) -> Checkpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = NetworkSpec {
        n_in: 7,
        n_regular: 9,
        n_adaptive: 5,
        n_out: 3,
        dt: 1.0,
        tau_m: TimeConstant::Uniform { min: 15.0, max: 30.0 },
        tau_a: TimeConstant::Uniform { min: 100.0, max: 1000.0 },
        beta: 1.7,
        b0: 0.01,
        refractory: 3.0,
        tau_out: Some(20.0),
        delay_in: [1, 4],
        delay_rec: [1, 4],
        init: InitSpec { scheme: InitScheme::Dale, w0: 1.0, frac_excitatory: 0.8, connectivity: 0.3 },
        input_frac_excitatory: 0.8,
        noise_sigma: Some(0.03),
    };
    let params = spec.build(&mut rng).unwrap();
    let opt = OptimizerSpec {
        adam: AdamConfig { amsgrad: true, ..Default::default() },
        schedule: LrSchedule::constant(0.01),
        rewire: Some(RewireConfig { scope: RewireScope::Global, ..Default::default() }),
    };
    let mut trainer = Trainer::new(opt, &params).unwrap();
    for k in 0..trainer.adam.len() {
        trainer.adam.m[k] = rng.gen::<f64>() - 0.5;
        trainer.adam.v[k] = rng.gen::<f64>();
        trainer.adam.v_max.as_mut().unwrap()[k] = rng.gen::<f64>() + 1.0;
    }
    trainer.adam.step = 17;
    let mut stream = ChaCha8Rng::seed_from_u64(seed + 1);
    stream.set_stream(3);
    for _ in 0..13 {
        stream.next_u32();
    }
    Checkpoint { params, adam: trainer.adam, iteration: 17, rng: stream, config: "seed = 1\n".into() }
}

/// Equal training state; the embedded configs differ in their output dirs.
fn assert_same_state(a: &Path, b: &Path) {
    let (mut a, b) = (Checkpoint::load(a).unwrap(), Checkpoint::load(b).unwrap());
    assert_ne!(a.config, b.config);
    a.config = b.config.clone();
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    for seed in 0..5 {
        let ck = random_checkpoint(seed);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let mut a = ck.rng.clone();
        let mut b = back.rng.clone();
        assert_eq!(a.next_u64(), b.next_u64());
    }
}

#[test]
fn checkpoint_round_trip_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    let ck = random_checkpoint(9);
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    assert_eq!(std::fs::read(&path).unwrap(), ck.to_bytes());
}

#[test]
fn truncated_or_corrupted_checkpoint_is_rejected() {
    let bytes = random_checkpoint(1).to_bytes();
    for cut in [bytes.len() - 1, bytes.len() / 2, 21] {
        let err = Checkpoint::from_bytes(&bytes[..cut], Path::new("t")).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 3] ^= 0x10;
    let err = Checkpoint::from_bytes(&flipped, Path::new("t")).unwrap_err();
    assert!(err.to_string().contains("checksum"), "{err}");
}

#[test]
fn other_format_version_is_refused() {
    let mut bytes = random_checkpoint(2).to_bytes();
    bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    let n = bytes.len() - 4;
    let crc = crc32fast::hash(&bytes[..n]);
    bytes[n..].copy_from_slice(&crc.to_le_bytes());
    match Checkpoint::from_bytes(&bytes, Path::new("v")) {
        Err(CliError::Version { found, expected, .. }) => assert_eq!((found, expected), (FORMAT_VERSION + 1, FORMAT_VERSION)),
        other => panic!("expected a version error, got {other:?}"),
    }
}

#[test]
fn identical_config_and_seed_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    lsnn_cli::run(&smoke("delayed-cue-smoke.toml", &a, &[])).unwrap();
    lsnn_cli::run(&smoke("delayed-cue-smoke.toml", &b, &[])).unwrap();
    let ma = std::fs::read_to_string(a.join(METRICS_FILE)).unwrap();
    assert_eq!(ma, std::fs::read_to_string(b.join(METRICS_FILE)).unwrap());
    assert_eq!(ma.lines().count(), 6);
    assert_same_state(&a.join(FINAL_CHECKPOINT), &b.join(FINAL_CHECKPOINT));
    assert!(std::fs::read_to_string(a.join(RASTER_FILE)).unwrap().starts_with("t_ms,neuron\n"));

    lsnn_cli::run(&smoke("delayed-cue-smoke.toml", &b, &["seed=2"])).unwrap();
    assert_ne!(ma, std::fs::read_to_string(b.join(METRICS_FILE)).unwrap());
}

#[test]
fn resumed_run_continues_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (full, part) = (dir.path().join("full"), dir.path().join("part"));
    let out = lsnn_cli::run(&smoke("delayed-cue-smoke.toml", &full, &[])).unwrap();
    assert_eq!(out.iteration, 5);
    lsnn_cli::run(&smoke("delayed-cue-smoke.toml", &part, &[])).unwrap();

    // Pretend the second run died right after its checkpoint at iteration 2.
    std::fs::remove_file(part.join(FINAL_CHECKPOINT)).unwrap();
    let ck = checkpoint_path(&part, 2);
    assert_eq!(Checkpoint::load(&ck).unwrap().iteration, 2);
    let resumed = lsnn_cli::resume(&ck, &[]).unwrap();
    assert_eq!(resumed.iteration, 5);
    assert_eq!(resumed.summary, out.summary);
    assert_eq!(
        std::fs::read_to_string(full.join(METRICS_FILE)).unwrap(),
        std::fs::read_to_string(part.join(METRICS_FILE)).unwrap()
    );
    assert_same_state(&full.join(FINAL_CHECKPOINT), &part.join(FINAL_CHECKPOINT));
}

#[test]
fn meta_rl_resume_and_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let (full, part) = (dir.path().join("full"), dir.path().join("part"));
    lsnn_cli::run(&smoke("meta-rl-smoke.toml", &full, &[])).unwrap();
    lsnn_cli::run(&smoke("meta-rl-smoke.toml", &part, &[])).unwrap();
    let traj = std::fs::read_to_string(full.join("trajectories.csv")).unwrap();
    assert!(traj.starts_with("episode,t_ms,x,y,reward\n"));
    assert_eq!(traj.lines().count(), 1 + 3 * 2 * 50);
    lsnn_cli::resume(&checkpoint_path(&part, 1), &[]).unwrap();
    for f in [METRICS_FILE, "trajectories.csv"] {
        assert_eq!(std::fs::read_to_string(full.join(f)).unwrap(), std::fs::read_to_string(part.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resume_can_extend_a_finished_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    lsnn_cli::run(&smoke("delayed-cue-smoke.toml", &out, &[])).unwrap();
    let more = lsnn_cli::resume(&out.join(FINAL_CHECKPOINT), &["experiment.training.iterations=7".into()]).unwrap();
    assert_eq!(more.iteration, 7);
    assert_eq!(std::fs::read_to_string(out.join(METRICS_FILE)).unwrap().lines().count(), 8);
}

#[test]
fn validation_reports_every_bad_key() {
    let err = ExperimentConfig::load(
        &configs().join("delayed-cue.toml"),
        &[
            "experiment.network.tau_m=-20.0".into(),
            "experiment.network.init.connectivity=1.5".into(),
            "experiment.optimizer.adam.eps=-1.0".into(),
        ],
    )
    .unwrap()
    .validate()
    .unwrap_err();
    let CliError::Validation(problems) = err else { panic!("expected validation errors") };
    assert_eq!(problems.len(), 3, "{problems:?}");
    for key in ["experiment.network.tau_m", "experiment.network.init.connectivity", "experiment.optimizer.adam"] {
        assert!(problems.iter().any(|p| p.starts_with(key)), "{key} missing from {problems:?}");
    }

    let rl = ExperimentConfig::load(&configs().join("meta-rl-simple.toml"), &["experiment.ppo.clip_eps=1.0".into()]).unwrap();
    assert!(rl.validate().is_err());
}

#[test]
fn unknown_keys_are_rejected() {
    for key in ["colour=1", "experiment.network.bogus=1", "experiment.task.bogus=1", "experiment.network.init.bogus=1", "export.bogus=1"] {
        let r = ExperimentConfig::load(&configs().join("delayed-cue.toml"), &[key.to_string()]);
        assert!(matches!(r, Err(CliError::Validation(_))), "{key} accepted");
    }
}

#[test]
fn shipped_configs_validate() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path, &[]).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("delayed-cue-smoke.toml");
    let cfg = cfg.to_str().unwrap();
    assert_eq!(main_with_args(["lsnn", "validate", cfg]), 0);
    assert_eq!(main_with_args(["lsnn", "validate", cfg, "--set", "experiment.network.dt=0.0"]), 1);
    assert_eq!(main_with_args(["lsnn", "frobnicate"]), 1);
    let missing = dir.path().join("missing.toml");
    assert_eq!(main_with_args(["lsnn", "validate", missing.to_str().unwrap()]), 2);

    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"LSNNCKPT garbage garbage").unwrap();
    assert_eq!(main_with_args(["lsnn", "resume", bad.to_str().unwrap()]), 2);
}

#[test]
fn export_raster_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("n.ckpt");
    let ck = random_checkpoint(4);
    ck.save(&ckpt).unwrap();
    let input = dir.path().join("in.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut text = String::from("# 40 steps, 7 inputs\n");
    for _ in 0..40 {
        let row: Vec<&str> = (0..7).map(|_| if rng.gen::<f64>() < 0.5 { "1" } else { "0" }).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(&input, text).unwrap();
    let out = dir.path().join("raster.csv");
    let code = main_with_args(["lsnn", "export-raster", ckpt.to_str().unwrap(), input.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let raster = std::fs::read_to_string(&out).unwrap();
    assert!(raster.starts_with("t_ms,neuron\n"));
    for line in raster.lines().skip(1) {
        let (t, j) = line.split_once(',').unwrap();
        assert!(t.parse::<f64>().unwrap() < 40.0);
        assert!(j.parse::<usize>().unwrap() < 14);
    }

    std::fs::write(&input, "1,0,1\n").unwrap();
    let code = main_with_args(["lsnn", "export-raster", ckpt.to_str().unwrap(), input.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(code, 1);
}

#[test]
fn output_root_env_prefixes_relative_dirs() {
    let cfg = ExperimentConfig::load(&configs().join("delayed-cue.toml"), &[]).unwrap();
    let root = tempfile::tempdir().unwrap();
    std::env::set_var(lsnn_cli::config::OUTPUT_ROOT_ENV, root.path());
    assert_eq!(cfg.output_dir(), root.path().join("runs/delayed-cue"));
    std::env::remove_var(lsnn_cli::config::OUTPUT_ROOT_ENV);
}
