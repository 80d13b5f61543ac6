//! Delayed cue classification: one of two input patterns is shown, followed
//! by a long delay without cue input and a recall period in which the
//! network must report which pattern it saw.

use crate::error::{Result, TaskError};
use crate::harness::{train_classifier, Observer, TrainState, TrainingConfig};
use lsnn_core::init::NetworkSpec;
use lsnn_core::{Episode, LossKind, Matrix, OptimizerSpec, Targets};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Input layout: pattern A neurons, pattern B neurons, recall neurons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayedCueTask {
    pub cue_neurons: usize,
    pub recall_neurons: usize,
    pub cue_ms: f64,
    pub delay_ms: f64,
    pub recall_ms: f64,
    pub cue_rate_hz: f64,
    pub recall_rate_hz: f64,
    /// Rate of every input neuron outside its active period.
    #[serde(default)]
    pub background_rate_hz: f64,
}

impl Default for DelayedCueTask {
    fn default() -> Self {
        Self {
            cue_neurons: 20,
            recall_neurons: 10,
            cue_ms: 100.0,
            delay_ms: 600.0,
            recall_ms: 50.0,
            cue_rate_hz: 50.0,
            recall_rate_hz: 50.0,
            background_rate_hz: 0.0,
        }
    }
}

fn steps(ms: f64, dt: f64) -> usize {
    (ms / dt).round() as usize
}

impl DelayedCueTask {
    pub fn n_inputs(&self) -> usize {
        2 * self.cue_neurons + self.recall_neurons
    }

    pub fn recall_steps(&self, dt: f64) -> usize {
        steps(self.recall_ms, dt)
    }

    pub fn total_steps(&self, dt: f64) -> usize {
        steps(self.cue_ms, dt) + steps(self.delay_ms, dt) + steps(self.recall_ms, dt)
    }

    pub fn validate(&self, dt: f64) -> Result<()> {
        let rates_ok = [self.cue_rate_hz, self.recall_rate_hz, self.background_rate_hz]
            .iter()
            .all(|r| (0.0..=1000.0 / dt).contains(r));
        if self.cue_neurons == 0 || self.recall_neurons == 0 || self.recall_steps(dt) == 0 || !rates_ok {
            return Err(TaskError::Config(format!("invalid delayed cue task {self:?}")));
        }
        if self.cue_ms < 0.0 || self.delay_ms < 0.0 {
            return Err(TaskError::Config("cue and delay durations must be non-negative".into()));
        }
        Ok(())
    }

    pub fn episode<R: Rng + ?Sized>(&self, label: usize, dt: f64, rng: &mut R) -> Episode {
        let (cue, delay) = (steps(self.cue_ms, dt), steps(self.delay_ms, dt));
        let t_len = self.total_steps(dt);
        let p = |hz: f64| hz * dt / 1000.0;
        let (p_cue, p_recall, p_bg) = (p(self.cue_rate_hz), p(self.recall_rate_hz), p(self.background_rate_hz));
        let active = label * self.cue_neurons..(label + 1) * self.cue_neurons;
        let recall = 2 * self.cue_neurons..self.n_inputs();
        let inputs = Matrix::from_fn(t_len, self.n_inputs(), |s, i| {
            let prob = if s < cue && active.contains(&i) {
                p_cue
            } else if s >= cue + delay && recall.contains(&i) {
                p_recall
            } else {
                p_bg
            };
            if prob > 0.0 && rng.gen::<f64>() < prob {
                1.0
            } else {
                0.0
            }
        });
        Episode { inputs, targets: Targets::Label(label) }
    }

    pub fn sample<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Episode {
        let label = rng.gen_range(0..2);
        self.episode(label, dt, rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayedCueConfig {
    pub task: DelayedCueTask,
    pub network: NetworkSpec,
    pub optimizer: OptimizerSpec,
    pub training: TrainingConfig,
    /// Seed of the fixed test set.
    pub test_seed: u64,
}

impl DelayedCueConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate(self.network.dt)?;
        self.network.validate()?;
        self.training.validate()?;
        if self.network.n_in != self.task.n_inputs() {
            return Err(TaskError::Config(format!(
                "network.n_in is {} but the task has {} inputs",
                self.network.n_in,
                self.task.n_inputs()
            )));
        }
        if self.network.n_out != 2 {
            return Err(TaskError::Config("network.n_out must be 2".into()));
        }
        Ok(())
    }

    pub fn test_set(&self) -> Vec<Episode> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.test_seed);
        let dt = self.network.dt;
        (0..self.training.eval_episodes).map(|k| self.task.episode(k % 2, dt, &mut rng)).collect()
    }
}

/// Trains to `training.iterations` and returns the final test accuracy.
pub fn train_delayed_cue(cfg: &DelayedCueConfig, state: &mut TrainState, observer: &mut Observer<'_>) -> Result<f64> {
    cfg.validate()?;
    let dt = cfg.network.dt;
    let loss = cfg.training.loss(LossKind::CrossEntropyAvg, cfg.task.recall_steps(dt));
    let test = cfg.test_set();
    let batch = cfg.training.batch_size;
    let mut sample = |rng: &mut ChaCha8Rng| Ok((0..batch).map(|_| cfg.task.sample(dt, rng)).collect());
    train_classifier(state, &cfg.training, &loss, &mut sample, &test, observer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn episode_layout() {
        let task = DelayedCueTask { cue_rate_hz: 1000.0, recall_rate_hz: 1000.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ep = task.episode(1, 1.0, &mut rng);
        assert_eq!(ep.inputs.shape(), (750, 50));
        assert!(ep.inputs.row(0)[..20].iter().all(|&x| x == 0.0));
        assert!(ep.inputs.row(0)[20..40].iter().all(|&x| x == 1.0));
        assert!(ep.inputs.row(400).iter().all(|&x| x == 0.0));
        assert!(ep.inputs.row(749)[40..].iter().all(|&x| x == 1.0));
        assert!(ep.inputs.row(749)[..40].iter().all(|&x| x == 0.0));
    }
}
