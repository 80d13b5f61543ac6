//! Runs, resumes and exports.

use crate::checkpoint::{checkpoint_path, Checkpoint};
use crate::config::{Experiment, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::export::{append_trajectories, truncate_csv, write_raster, MetricsWriter};
use lsnn_core::{simulate, Matrix, NetworkParams, Trainer};
use lsnn_tasks::delayed_cue::train_delayed_cue;
use lsnn_tasks::harness::eval_rng;
use lsnn_tasks::l2l::{build_l2l_episode, evaluate_against_ridge, train_l2l_outer};
use lsnn_tasks::rl::{rollout, train_meta_rl, Rollout};
use lsnn_tasks::seq_pixel::run_seq_pixel_task;
use lsnn_tasks::{MetricRow, TaskError, TrainState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const RASTER_FILE: &str = "raster.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LAST_GOOD_CHECKPOINT: &str = "last-good.ckpt";

/// Headline result of a finished run.
#[derive(Clone, Debug, PartialEq)]
pub enum Summary {
    /// Final test accuracy of a classification task.
    Accuracy(f64),
    /// Per-episode test MSE of the network and of the ridge baseline.
    Regression { network_mse: Vec<f64>, ridge_mse: Vec<f64> },
    /// Mean goals per episode over the last iterations run.
    Goals(f64),
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Summary::Accuracy(a) => write!(f, "test accuracy {a:.4}"),
            Summary::Regression { network_mse, ridge_mse } => {
                let n = network_mse.len().max(1) as f64;
                let wins = network_mse.iter().zip(ridge_mse).filter(|(a, b)| a < b).count();
                write!(
                    f,
                    "test mse {:.4} (ridge {:.4}), network better on {wins}/{} episodes",
                    network_mse.iter().sum::<f64>() / n,
                    ridge_mse.iter().sum::<f64>() / n,
                    network_mse.len()
                )
            }
            Summary::Goals(g) => write!(f, "mean goals per episode {g:.3}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub iteration: u64,
    pub summary: Summary,
}

/// Fresh training state for a validated config.
pub fn initial_state(cfg: &ExperimentConfig) -> Result<TrainState> {
    let exp = &cfg.experiment;
    Ok(TrainState::new(exp.network(), exp.optimizer().clone(), cfg.seed)?)
}

fn checkpoint_of(state: &TrainState, config: &str) -> Checkpoint {
    Checkpoint {
        params: state.params.clone(),
        adam: state.trainer.adam.clone(),
        iteration: state.iteration(),
        rng: state.rng.clone(),
        config: config.to_string(),
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    for name in [METRICS_FILE, TRAJECTORIES_FILE] {
        let p = dir.join(name);
        if p.exists() {
            std::fs::remove_file(&p).map_err(CliError::io(&p))?;
        }
    }
    let mut state = initial_state(cfg)?;
    execute(cfg, &mut state, &dir)
}

/// Continues the run stored in `checkpoint`. Outputs go to the directory
/// holding the checkpoint; metric rows written after it was saved are
/// dropped first.
pub fn resume(checkpoint: &Path, overrides: &[String]) -> Result<RunOutcome> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = ExperimentConfig::parse(&ck.config, overrides)?;
    cfg.validate()?;
    let state = state_from_checkpoint(&cfg, ck)?;
    let dir = checkpoint.parent().map(Path::to_path_buf).unwrap_or_default();
    let it = state.iteration();
    truncate_csv(&dir.join(METRICS_FILE), |x| x <= it)?;
    if let Experiment::MetaRl(c) = &cfg.experiment {
        let k = c.ppo.episodes_per_iteration as u64;
        truncate_csv(&dir.join(TRAJECTORIES_FILE), |e| e < it * k)?;
    }
    let mut state = state;
    execute(&cfg, &mut state, &dir)
}

pub fn state_from_checkpoint(cfg: &ExperimentConfig, ck: Checkpoint) -> Result<TrainState> {
    let spec = cfg.experiment.optimizer().clone();
    let expected = Trainer::new(spec.clone(), &ck.params)?;
    if expected.adam.len() != ck.adam.len() {
        return Err(CliError::Validation(vec![format!(
            "checkpoint holds {} optimizer coordinates, the network has {}",
            ck.adam.len(),
            expected.adam.len()
        )]));
    }
    let trainer = Trainer { spec, adam: ck.adam, iteration: ck.iteration };
    Ok(TrainState { params: ck.params, trainer, rng: ck.rng })
}

fn execute(cfg: &ExperimentConfig, state: &mut TrainState, dir: &Path) -> Result<RunOutcome> {
    let text = cfg.to_toml()?;
    let mut metrics = MetricsWriter::open(&dir.join(METRICS_FILE))?;
    let every = cfg.checkpoint_every;
    let mut sink_error = None;
    let mut observer = |row: &MetricRow, st: &TrainState| -> lsnn_tasks::Result<()> {
        let res = metrics.write(row).and_then(|_| {
            if every > 0 && row.iteration % every == 0 {
                checkpoint_of(st, &text).save(&checkpoint_path(dir, row.iteration))
            } else {
                Ok(())
            }
        });
        res.map_err(|e| {
            let msg = e.to_string();
            sink_error = Some(e);
            TaskError::Config(msg)
        })
    };

    let result = match &cfg.experiment {
        Experiment::DelayedCue(c) => train_delayed_cue(c, state, &mut observer).map(Summary::Accuracy),
        Experiment::SeqPixel(c) => run_seq_pixel_task(c, state, &mut observer).map(Summary::Accuracy),
        Experiment::L2l(c) => train_l2l_outer(c, state, &mut observer).and_then(|_| {
            let cmp = evaluate_against_ridge(c, &state.params)?;
            Ok(Summary::Regression {
                network_mse: cmp.iter().map(|x| x.network_mse).collect(),
                ridge_mse: cmp.iter().map(|x| x.ridge_mse).collect(),
            })
        }),
        Experiment::MetaRl(c) => {
            let traj = dir.join(TRAJECTORIES_FILE);
            let (export, tevery, last) = (cfg.export.trajectories, cfg.export.trajectory_every, c.iterations.saturating_sub(1));
            let k = c.ppo.episodes_per_iteration as u64;
            let dt = c.network.dt;
            let mut on_rollouts = |it: u64, rollouts: &[Rollout]| -> lsnn_tasks::Result<()> {
                if export && ((tevery > 0 && it % tevery == 0) || it == last) {
                    append_trajectories(&traj, rollouts, it * k, dt).map_err(|e| TaskError::Config(e.to_string()))?;
                }
                Ok(())
            };
            train_meta_rl(c, state, &mut observer, &mut on_rollouts).map(|stats| {
                let tail = &stats[stats.len().saturating_sub(20)..];
                Summary::Goals(tail.iter().map(|s| s.mean_goals).sum::<f64>() / tail.len().max(1) as f64)
            })
        }
    };
    drop(observer);
    if let Some(e) = sink_error {
        return Err(e);
    }
    let summary = match result {
        Ok(s) => s,
        Err(e @ TaskError::Diverged { .. }) => {
            let path = dir.join(LAST_GOOD_CHECKPOINT);
            checkpoint_of(state, &text).save(&path)?;
            log::error!("{e}; last good state saved to {}", path.display());
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    checkpoint_of(state, &text).save(&dir.join(FINAL_CHECKPOINT))?;
    if cfg.export.raster {
        let raster = probe_raster(cfg, &state.params, state.iteration())?;
        write_raster(&dir.join(RASTER_FILE), &raster, state.params.dt)?;
    }
    log::info!("finished at iteration {}: {summary}", state.iteration());
    Ok(RunOutcome { output_dir: dir.to_path_buf(), iteration: state.iteration(), summary })
}

/// Spike raster of the trained network on the first test episode (for
/// meta-RL: on a fresh rollout of the trained policy).
pub fn probe_raster(cfg: &ExperimentConfig, params: &NetworkParams, iteration: u64) -> Result<Matrix> {
    let mut rng = eval_rng(iteration);
    let inputs = match &cfg.experiment {
        Experiment::DelayedCue(c) => {
            let mut r = ChaCha8Rng::seed_from_u64(c.test_seed);
            c.task.episode(0, c.network.dt, &mut r).inputs
        }
        Experiment::SeqPixel(c) => {
            let data = c.task.load(c.network.dt)?;
            data.episode(&data.test, 0, &mut ChaCha8Rng::seed_from_u64(c.test_seed)).inputs
        }
        Experiment::L2l(c) => build_l2l_episode(&c.task, c.network.dt, &mut ChaCha8Rng::seed_from_u64(c.test_seed))?.spikes,
        Experiment::MetaRl(c) => {
            let r = rollout(params, &c.arena, &c.observation, c.ppo.variance, &mut rng)?;
            let n = r.tape.n_rec;
            return Ok(Matrix::from_vec(r.tape.z.len() / n, n, r.tape.z));
        }
    };
    Ok(simulate(params, &inputs, false, &mut rng)?.raster)
}

/// Simulates the network stored in `checkpoint` on the spike input in
/// `input_csv` and writes the raster to `out`.
pub fn export_raster(checkpoint: &Path, input_csv: &Path, out: &mut dyn std::io::Write) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let inputs = crate::export::read_input_csv(input_csv, ck.params.n_in())?;
    let sim = simulate(&ck.params, &inputs, false, &mut eval_rng(ck.iteration))?;
    crate::export::write_raster_to(out, &sim.raster, ck.params.dt).map_err(CliError::io("<output>"))
}
