//! State and bookkeeping shared by the training loops.

use crate::error::{Result, TaskError};
use lsnn_core::init::NetworkSpec;
use lsnn_core::loss::averaged_logits;
use lsnn_core::{batch_gradient, simulate, BackwardConfig, BatchOutcome, Episode, LossSpec, NetworkParams, OptimizerSpec, Targets, Trainer};
use lsnn_core::{LossKind, RateUnit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Outer-loop settings shared by the supervised tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub iterations: u64,
    pub batch_size: usize,
    /// Pseudo-derivative dampening.
    pub gamma: f64,
    #[serde(default = "yes")]
    pub reset_grad: bool,
    pub rate_target_hz: f64,
    pub rate_coeff: f64,
    #[serde(default = "per_ms")]
    pub rate_unit: RateUnit,
    /// Evaluate every this many iterations (0: only at the end).
    #[serde(default)]
    pub eval_every: u64,
    pub eval_episodes: usize,
}

fn yes() -> bool {
    true
}

fn per_ms() -> RateUnit {
    RateUnit::PerMs
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.batch_size == 0 {
            bad.push("training.batch_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            bad.push("training.gamma must lie in [0, 1]");
        }
        if self.rate_target_hz < 0.0 || self.rate_coeff < 0.0 {
            bad.push("training.rate_target_hz and training.rate_coeff must be non-negative");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(TaskError::Config(bad.join("; ")))
        }
    }

    pub fn loss(&self, kind: LossKind, window: usize) -> LossSpec {
        LossSpec {
            kind,
            window,
            rate_target_hz: self.rate_target_hz,
            rate_coeff: self.rate_coeff,
            rate_unit: self.rate_unit,
        }
    }

    pub fn backward(&self) -> BackwardConfig {
        BackwardConfig { gamma: self.gamma, reset_grad: self.reset_grad }
    }
}

const EVAL_SALT: u64 = 0x6576_616c;

/// Noise stream for the evaluation after `iteration`; independent of the
/// training stream so that resumed runs evaluate identically.
pub fn eval_rng(iteration: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(iteration ^ EVAL_SALT)
}

/// One line of the metrics file. Fields that do not apply are NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub iteration: u64,
    pub loss: f64,
    pub mse: f64,
    pub rate_reg: f64,
    pub accuracy: f64,
}

impl MetricRow {
    pub fn new(iteration: u64) -> Self {
        Self { iteration, loss: f64::NAN, mse: f64::NAN, rate_reg: f64::NAN, accuracy: f64::NAN }
    }
}

/// Everything a run needs to continue: parameters, optimizer state and the
/// random stream that drives data sampling and noise.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: NetworkParams,
    pub trainer: Trainer,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(network: &NetworkSpec, optimizer: OptimizerSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = network.build(&mut rng)?;
        let trainer = Trainer::new(optimizer, &params)?;
        Ok(Self { params, trainer, rng })
    }

    pub fn iteration(&self) -> u64 {
        self.trainer.iteration
    }
}

/// Called after every iteration; an error stops training.
pub type Observer<'a> = dyn FnMut(&MetricRow, &TrainState) -> Result<()> + 'a;

pub fn no_observer() -> impl FnMut(&MetricRow, &TrainState) -> Result<()> {
    |_, _| Ok(())
}

fn all_finite(p: &NetworkParams) -> bool {
    p.w_in.all_finite()
        && p.w_rec.all_finite()
        && p.w_out.all_finite()
        && p.noise_sigma.as_ref().map_or(true, |s| s.iter().all(|x| x.is_finite()))
}

/// One gradient step on a batch. On failure the state is left exactly as it
/// was before the call, so the caller can checkpoint the last good state.
pub fn supervised_step(
    state: &mut TrainState,
    loss: &LossSpec,
    backward: &BackwardConfig,
    episodes: &[Episode],
) -> Result<BatchOutcome> {
    let iteration = state.iteration();
    let diverged = |source| TaskError::Diverged { iteration, source };
    let backup = (state.params.clone(), state.trainer.clone(), state.rng.clone());
    let outcome = match batch_gradient(&state.params, loss, backward, episodes, &mut state.rng) {
        Ok(o) if o.loss.is_finite() => o,
        Ok(o) => {
            (state.params, state.trainer, state.rng) = backup;
            return Err(diverged(lsnn_core::Error::Divergence {
                step: 0,
                neuron: 0,
                quantity: "loss",
                value: o.loss,
            }));
        }
        Err(e) => {
            (state.params, state.trainer, state.rng) = backup;
            return Err(diverged(e));
        }
    };
    let applied = state.trainer.apply(&mut state.params, &outcome.grads, &mut state.rng);
    if let Err(e) = applied {
        (state.params, state.trainer, state.rng) = backup;
        return Err(diverged(e));
    }
    if !all_finite(&state.params) {
        (state.params, state.trainer, state.rng) = backup;
        return Err(diverged(lsnn_core::Error::NonFiniteGradient { param: "parameters", step: 0 }));
    }
    Ok(outcome)
}

/// Fraction of episodes whose window-averaged readout has its maximum at
/// the label. Evaluation draws its noise from `rng`.
pub fn classification_accuracy<R: rand::Rng + ?Sized>(
    params: &NetworkParams,
    episodes: &[Episode],
    window: usize,
    rng: &mut R,
) -> Result<f64> {
    if episodes.is_empty() {
        return Ok(f64::NAN);
    }
    let mut correct = 0usize;
    for ep in episodes {
        let Targets::Label(label) = ep.targets else {
            return Err(TaskError::Config("classification needs label targets".into()));
        };
        let out = simulate(params, &ep.inputs, false, rng)?;
        if argmax(&averaged_logits(&out.readout, window)) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / episodes.len() as f64)
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = k;
        }
    }
    best
}

/// Trains a classifier until `training.iterations` is reached, evaluating on
/// `test` every `eval_every` iterations and after the last one. Returns the
/// final test accuracy.
pub fn train_classifier(
    state: &mut TrainState,
    training: &TrainingConfig,
    loss: &LossSpec,
    sample_batch: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<Vec<Episode>>,
    test: &[Episode],
    observer: &mut Observer<'_>,
) -> Result<f64> {
    training.validate()?;
    let backward = training.backward();
    let mut accuracy = f64::NAN;
    while state.iteration() < training.iterations {
        let batch = sample_batch(&mut state.rng)?;
        let out = supervised_step(state, loss, &backward, &batch)?;
        let it = state.iteration();
        let mut row = MetricRow::new(it);
        row.loss = out.loss;
        row.rate_reg = out.rate_reg;
        let due = (training.eval_every > 0 && it % training.eval_every == 0) || it == training.iterations;
        if due {
            accuracy = classification_accuracy(&state.params, test, loss.window, &mut eval_rng(it))?;
            row.accuracy = accuracy;
            log::info!("iteration {it}: loss {:.4}, rate {:.1} Hz, test accuracy {:.3}", out.loss, out.mean_rate_hz, accuracy);
        }
        observer(&row, state)?;
    }
    if accuracy.is_nan() {
        accuracy = classification_accuracy(&state.params, test, loss.window, &mut eval_rng(state.iteration()))?;
    }
    Ok(accuracy)
}
