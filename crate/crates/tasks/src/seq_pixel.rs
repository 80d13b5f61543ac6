//! Sequential pixel classification: the pixels of a digit image are shown
//! one after another, then a cue neuron asks for the class.

use crate::dataset::{Dataset, DatasetSource};
use crate::error::{Result, TaskError};
use crate::harness::{train_classifier, Observer, TrainState, TrainingConfig};
use lsnn_core::encode::{encode_population_rate, threshold_code_sequence, ThresholdCodeSpec};
use lsnn_core::init::NetworkSpec;
use lsnn_core::{Episode, LossKind, Matrix, OptimizerSpec, Targets};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PixelEncoding {
    /// Up and down crossings of `levels` evenly spaced grey levels.
    ThresholdCrossing { levels: usize },
    /// `neurons` inputs that each spike with probability equal to the grey value.
    PopulationRate { neurons: usize },
}

impl PixelEncoding {
    pub fn n_neurons(&self) -> usize {
        match *self {
            PixelEncoding::ThresholdCrossing { levels } => 2 * levels,
            PixelEncoding::PopulationRate { neurons } => neurons,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqPixelTask {
    pub dataset: DatasetSource,
    /// Average-pooling factor applied to the images (1 keeps them as is).
    pub downsample: usize,
    pub encoding: PixelEncoding,
    /// Presentation time of one pixel (1 or 2 ms in the reference setup).
    pub ms_per_pixel: f64,
    /// Length of the cue period over which the readout is averaged.
    pub readout_window_ms: f64,
    /// The first `train_examples` images are used for training, the next
    /// `test_examples` for testing.
    pub train_examples: usize,
    pub test_examples: usize,
}

/// A loaded dataset together with the episode construction rules.
pub struct SeqPixel {
    pub task: SeqPixelTask,
    pub dt: f64,
    pub train: Dataset,
    pub test: Dataset,
    code: Option<ThresholdCodeSpec>,
}

impl SeqPixelTask {
    pub fn n_inputs(&self) -> usize {
        self.encoding.n_neurons() + 1
    }

    pub fn steps_per_pixel(&self, dt: f64) -> usize {
        (self.ms_per_pixel / dt).round() as usize
    }

    pub fn window_steps(&self, dt: f64) -> usize {
        (self.readout_window_ms / dt).round() as usize
    }

    pub fn validate(&self, dt: f64) -> Result<()> {
        let mut bad = Vec::new();
        if self.downsample == 0 {
            bad.push("task.downsample must be positive");
        }
        if self.encoding.n_neurons() == 0 {
            bad.push("task.encoding needs at least one neuron");
        }
        if self.steps_per_pixel(dt) == 0 {
            bad.push("task.ms_per_pixel must be at least one step");
        }
        if self.window_steps(dt) == 0 {
            bad.push("task.readout_window_ms must be at least one step");
        }
        if self.train_examples == 0 || self.test_examples == 0 {
            bad.push("task.train_examples and task.test_examples must be positive");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(TaskError::Config(bad.join("; ")))
        }
    }

    /// Loads, downsamples and splits the dataset.
    pub fn load(&self, dt: f64) -> Result<SeqPixel> {
        self.validate(dt)?;
        let mut data = self.dataset.load()?;
        if self.downsample > 1 {
            data = data.downsample(self.downsample)?;
        }
        let need = self.train_examples + self.test_examples;
        if data.len() < need {
            return Err(TaskError::Config(format!("dataset has {} examples, {need} requested", data.len())));
        }
        let (train, rest) = data.split(self.train_examples);
        let (test, _) = rest.split(self.test_examples);
        let code = match self.encoding {
            PixelEncoding::ThresholdCrossing { levels } => Some(ThresholdCodeSpec::evenly_spaced(levels)),
            PixelEncoding::PopulationRate { .. } => None,
        };
        Ok(SeqPixel { task: self.clone(), dt, train, test, code })
    }
}

impl SeqPixel {
    pub fn total_steps(&self) -> usize {
        self.train.rows * self.train.cols * self.task.steps_per_pixel(self.dt) + self.task.window_steps(self.dt)
    }

    /// Encodes one image. The pixel phase is followed by the cue phase, in
    /// which only the cue neuron (the last input) is active.
    pub fn encode<R: Rng + ?Sized>(&self, image: &[f64], rng: &mut R) -> Matrix {
        let rep = self.task.steps_per_pixel(self.dt);
        let window = self.task.window_steps(self.dt);
        let n_code = self.task.encoding.n_neurons();
        let pixel_steps = image.len() * rep;
        let mut out = Matrix::zeros(pixel_steps + window, n_code + 1);
        let values: Vec<f64> = image.iter().flat_map(|&g| std::iter::repeat(g).take(rep)).collect();
        match (&self.task.encoding, &self.code) {
            (PixelEncoding::ThresholdCrossing { .. }, Some(code)) => {
                let raster = threshold_code_sequence(&values, code);
                for s in 0..pixel_steps {
                    out.row_mut(s)[..n_code].copy_from_slice(raster.row(s));
                }
            }
            (PixelEncoding::PopulationRate { neurons }, _) => {
                for (s, &g) in values.iter().enumerate() {
                    out.row_mut(s)[..n_code].copy_from_slice(&encode_population_rate(g, *neurons, rng));
                }
            }
            _ => unreachable!("threshold code built at load time"),
        }
        for s in pixel_steps..pixel_steps + window {
            out[(s, n_code)] = 1.0;
        }
        out
    }

    pub fn episode<R: Rng + ?Sized>(&self, data: &Dataset, index: usize, rng: &mut R) -> Episode {
        Episode {
            inputs: self.encode(data.image(index), rng),
            targets: Targets::Label(data.labels[index] as usize),
        }
    }

    pub fn test_set(&self, seed: u64) -> Vec<Episode> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.test.len()).map(|k| self.episode(&self.test, k, &mut rng)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqPixelConfig {
    pub task: SeqPixelTask,
    pub network: NetworkSpec,
    pub optimizer: OptimizerSpec,
    pub training: TrainingConfig,
    pub test_seed: u64,
}

impl SeqPixelConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate(self.network.dt)?;
        self.network.validate()?;
        self.training.validate()?;
        if self.network.n_in != self.task.n_inputs() {
            return Err(TaskError::Config(format!(
                "network.n_in is {} but the encoding needs {}",
                self.network.n_in,
                self.task.n_inputs()
            )));
        }
        if self.network.n_out != 10 {
            return Err(TaskError::Config("network.n_out must be 10".into()));
        }
        Ok(())
    }
}

/// Trains on random minibatches of the training images and returns the
/// final accuracy on the test images.
pub fn run_seq_pixel_task(cfg: &SeqPixelConfig, state: &mut TrainState, observer: &mut Observer<'_>) -> Result<f64> {
    cfg.validate()?;
    let data = cfg.task.load(cfg.network.dt)?;
    let loss = cfg.training.loss(LossKind::CrossEntropyAvg, cfg.task.window_steps(cfg.network.dt));
    let test = data.test_set(cfg.test_seed);
    let batch = cfg.training.batch_size;
    let mut sample = |rng: &mut ChaCha8Rng| {
        Ok((0..batch)
            .map(|_| {
                let k = rng.gen_range(0..data.train.len());
                data.episode(&data.train, k, rng)
            })
            .collect())
    };
    train_classifier(state, &cfg.training, &loss, &mut sample, &test, observer)
}
