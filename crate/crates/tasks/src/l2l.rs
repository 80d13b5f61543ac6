//! Learning-to-learn regression: every episode draws a new target function
//! from a family, the network sees input points together with the target
//! of the previous step, and must predict the target of the current step.

use crate::error::{Result, TaskError};
use crate::harness::{MetricRow, Observer, TrainState, TrainingConfig};
use crate::harness::supervised_step;
use lsnn_core::encode::{encode_gaussian_tuning, TuningCurveSpec, TuningWidth};
use lsnn_core::init::NetworkSpec;
use lsnn_core::loss::window_rate_predictions;
use lsnn_core::{simulate, AdamConfig, AdamState, Episode, LossKind, Matrix, OptimizerSpec, Targets};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const TN_HIDDEN: usize = 10;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Two inputs, ten sigmoid hidden units, one sigmoid output without bias:
/// 30 weights and 10 biases.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetNetwork {
    pub w_hidden: [[f64; 2]; TN_HIDDEN],
    pub b_hidden: [f64; TN_HIDDEN],
    pub w_out: [f64; TN_HIDDEN],
}

impl TargetNetwork {
    /// All 40 parameters uniform in `[-1, 1]`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut u = || rng.gen_range(-1.0..=1.0);
        let mut w_hidden = [[0.0; 2]; TN_HIDDEN];
        let mut b_hidden = [0.0; TN_HIDDEN];
        let mut w_out = [0.0; TN_HIDDEN];
        for k in 0..TN_HIDDEN {
            w_hidden[k] = [u(), u()];
            b_hidden[k] = u();
            w_out[k] = u();
        }
        Self { w_hidden, b_hidden, w_out }
    }

    /// Parameter order: hidden weights row by row, hidden biases, output weights.
    pub fn from_params(p: &[f64; 40]) -> Self {
        let mut tn = Self { w_hidden: [[0.0; 2]; TN_HIDDEN], b_hidden: [0.0; TN_HIDDEN], w_out: [0.0; TN_HIDDEN] };
        for k in 0..TN_HIDDEN {
            tn.w_hidden[k] = [p[2 * k], p[2 * k + 1]];
            tn.b_hidden[k] = p[20 + k];
            tn.w_out[k] = p[30 + k];
        }
        tn
    }

    pub fn params(&self) -> [f64; 40] {
        let mut p = [0.0; 40];
        for k in 0..TN_HIDDEN {
            p[2 * k] = self.w_hidden[k][0];
            p[2 * k + 1] = self.w_hidden[k][1];
            p[20 + k] = self.b_hidden[k];
            p[30 + k] = self.w_out[k];
        }
        p
    }

    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        let mut acc = 0.0;
        for k in 0..TN_HIDDEN {
            let h = sigmoid(self.w_hidden[k][0] * x1 + self.w_hidden[k][1] * x2 + self.b_hidden[k]);
            acc += self.w_out[k] * h;
        }
        sigmoid(acc)
    }
}

/// `y = amplitude * sin(phase + x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinusTask {
    pub amplitude: f64,
    pub phase: f64,
}

impl SinusTask {
    pub const DOMAIN: (f64, f64) = (-5.0, 5.0);

    /// Amplitude uniform in `[0.1, 5]`, phase uniform in `[0, pi]`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self { amplitude: rng.gen_range(0.1..=5.0), phase: rng.gen_range(0.0..=PI) }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (self.phase + x).sin()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    TargetNetworks,
    Sinus,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TaskInstance {
    TargetNetwork(TargetNetwork),
    Sinus(SinusTask),
}

impl TaskInstance {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TaskInstance::TargetNetwork(tn) => tn.eval(x[0], x[1]),
            TaskInstance::Sinus(s) => s.eval(x[0]),
        }
    }
}

impl Family {
    pub fn input_dims(self) -> usize {
        match self {
            Family::TargetNetworks => 2,
            Family::Sinus => 1,
        }
    }

    pub fn input_range(self) -> (f64, f64) {
        match self {
            Family::TargetNetworks => (-1.0, 1.0),
            Family::Sinus => SinusTask::DOMAIN,
        }
    }

    pub fn target_range(self) -> (f64, f64) {
        match self {
            Family::TargetNetworks => (0.0, 1.0),
            Family::Sinus => (-5.0, 5.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> TaskInstance {
        match self {
            Family::TargetNetworks => TaskInstance::TargetNetwork(TargetNetwork::sample(rng)),
            Family::Sinus => TaskInstance::Sinus(SinusTask::sample(rng)),
        }
    }
}

/// How analog values reach the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L2LEncoding {
    pub neurons_per_dim: usize,
    /// Tuning width is `(max - min) / width_divisor`.
    pub width_divisor: f64,
    pub r_max_hz: f64,
    /// Duration of one step of the episode.
    pub step_ms: f64,
}

impl Default for L2LEncoding {
    fn default() -> Self {
        Self { neurons_per_dim: 100, width_divisor: 1000.0, r_max_hz: 200.0, step_ms: 20.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L2LTask {
    pub family: Family,
    pub steps: usize,
    pub encoding: L2LEncoding,
}

impl L2LTask {
    pub fn n_inputs(&self) -> usize {
        (self.family.input_dims() + 1) * self.encoding.neurons_per_dim
    }

    pub fn window_steps(&self, dt: f64) -> usize {
        (self.encoding.step_ms / dt).round() as usize
    }

    pub fn validate(&self, dt: f64) -> Result<()> {
        let e = &self.encoding;
        if self.steps < 2 || e.neurons_per_dim == 0 || !(e.width_divisor > 0.0) || e.r_max_hz < 0.0 {
            return Err(TaskError::Config(format!("invalid learning-to-learn task {self:?}")));
        }
        if self.window_steps(dt) == 0 {
            return Err(TaskError::Config("encoding.step_ms must cover at least one simulation step".into()));
        }
        Ok(())
    }

    fn tuning(&self, range: (f64, f64), dt: f64) -> Result<TuningCurveSpec> {
        let e = &self.encoding;
        let width = TuningWidth::Sigma((range.1 - range.0) / e.width_divisor);
        Ok(TuningCurveSpec::evenly_spaced(e.neurons_per_dim, range.0, range.1, width, e.r_max_hz, dt)?)
    }
}

/// One episode: per-step input points, targets and the teacher signal
/// (previous target) plus the encoded spike input.
#[derive(Clone, Debug, PartialEq)]
pub struct L2LEpisode {
    pub task: TaskInstance,
    /// `steps x input_dims`
    pub points: Matrix,
    pub targets: Vec<f64>,
    pub teacher: Vec<f64>,
    /// `steps * window x n_inputs`; inputs come first, the teacher channel last.
    pub spikes: Matrix,
}

impl L2LEpisode {
    pub fn to_episode(&self) -> Episode {
        Episode {
            inputs: self.spikes.clone(),
            targets: Targets::Sequence(Matrix::from_vec(self.targets.len(), 1, self.targets.clone())),
        }
    }
}

/// Builds an episode for a freshly drawn task. Input points are uniform over
/// the family's domain.
pub fn build_l2l_episode<R: Rng + ?Sized>(task: &L2LTask, dt: f64, rng: &mut R) -> Result<L2LEpisode> {
    let instance = task.family.sample(rng);
    build_episode_for(task, instance, dt, rng)
}

pub fn build_episode_for<R: Rng + ?Sized>(
    task: &L2LTask,
    instance: TaskInstance,
    dt: f64,
    rng: &mut R,
) -> Result<L2LEpisode> {
    task.validate(dt)?;
    let dims = task.family.input_dims();
    let (lo, hi) = task.family.input_range();
    let x_code = task.tuning((lo, hi), dt)?;
    let y_code = task.tuning(task.family.target_range(), dt)?;
    let points = Matrix::from_fn(task.steps, dims, |_, _| rng.gen_range(lo..=hi));
    let targets: Vec<f64> = (0..task.steps).map(|k| instance.eval(points.row(k))).collect();
    let teacher: Vec<f64> = (0..task.steps).map(|k| if k == 0 { 0.0 } else { targets[k - 1] }).collect();

    let window = task.window_steps(dt);
    let per_dim = task.encoding.neurons_per_dim;
    let mut spikes = Matrix::zeros(task.steps * window, task.n_inputs());
    for k in 0..task.steps {
        for s in k * window..(k + 1) * window {
            let row = spikes.row_mut(s);
            for d in 0..dims {
                let code = encode_gaussian_tuning(points[(k, d)], &x_code, rng);
                row[d * per_dim..(d + 1) * per_dim].copy_from_slice(&code);
            }
            let code = encode_gaussian_tuning(teacher[k], &y_code, rng);
            row[dims * per_dim..].copy_from_slice(&code);
        }
    }
    Ok(L2LEpisode { task: instance, points, targets, teacher, spikes })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L2LConfig {
    pub task: L2LTask,
    pub network: NetworkSpec,
    pub optimizer: OptimizerSpec,
    pub training: TrainingConfig,
    pub test_seed: u64,
}

impl L2LConfig {
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
        if self.network.n_out != 1 {
            return Err(TaskError::Config("network.n_out must be 1".into()));
        }
        if self.network.tau_out.is_some() {
            return Err(TaskError::Config("the per-step prediction needs an accumulating readout (tau_out unset)".into()));
        }
        Ok(())
    }

    pub fn test_episodes(&self) -> Result<Vec<L2LEpisode>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.test_seed);
        (0..self.training.eval_episodes)
            .map(|_| build_l2l_episode(&self.task, self.network.dt, &mut rng))
            .collect()
    }
}

/// Per-step predictions of the network: readout increment over each step
/// window divided by the window length.
pub fn predictions<R: Rng + ?Sized>(
    params: &lsnn_core::NetworkParams,
    episode: &L2LEpisode,
    window: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Matrix)> {
    let out = simulate(params, &episode.spikes, false, rng)?;
    let pred = window_rate_predictions(&out.readout, window);
    Ok((pred.into_vec(), out.raster))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

/// Outer-loop training over random tasks. Each metric row carries the batch
/// MSE; `eval_every` adds the mean MSE on the fixed test episodes.
pub fn train_l2l_outer(cfg: &L2LConfig, state: &mut TrainState, observer: &mut Observer<'_>) -> Result<Vec<MetricRow>> {
    cfg.validate()?;
    let dt = cfg.network.dt;
    let window = cfg.task.window_steps(dt);
    let loss = cfg.training.loss(LossKind::MseWindowRate, window);
    let backward = cfg.training.backward();
    let test = if cfg.training.eval_every > 0 { cfg.test_episodes()? } else { Vec::new() };
    let mut curve = Vec::new();
    while state.iteration() < cfg.training.iterations {
        let batch = (0..cfg.training.batch_size)
            .map(|_| build_l2l_episode(&cfg.task, dt, &mut state.rng).map(|e| e.to_episode()))
            .collect::<Result<Vec<_>>>()?;
        let out = supervised_step(state, &loss, &backward, &batch)?;
        let it = state.iteration();
        let mut row = MetricRow::new(it);
        row.loss = out.loss;
        row.mse = out.task_loss;
        row.rate_reg = out.rate_reg;
        if cfg.training.eval_every > 0 && it % cfg.training.eval_every == 0 {
            let mut rng = crate::harness::eval_rng(it);
            let mut total = 0.0;
            for ep in &test {
                total += mse(&predictions(&state.params, ep, window, &mut rng)?.0, &ep.targets);
            }
            log::info!("iteration {it}: batch mse {:.4}, test mse {:.4}, rate {:.1} Hz", out.task_loss, total / test.len() as f64, out.mean_rate_hz);
        }
        curve.push(row);
        observer(&row, state)?;
    }
    Ok(curve)
}

/// Exponentially filtered spike traces (time constant `tau_ms`) averaged
/// over consecutive windows of `window` steps: one feature row per step.
pub fn mean_spiking_traces(raster: &Matrix, window: usize, tau_ms: f64, dt: f64) -> Matrix {
    let (t_len, n) = raster.shape();
    let decay = (-dt / tau_ms).exp();
    let n_win = t_len / window;
    let mut trace = vec![0.0; n];
    let mut out = Matrix::zeros(n_win, n);
    for s in 0..n_win * window {
        for (tr, &z) in trace.iter_mut().zip(raster.row(s)) {
            *tr = decay * *tr + z;
        }
        let k = s / window;
        for (o, &tr) in out.row_mut(k).iter_mut().zip(&trace) {
            *o += tr / window as f64;
        }
    }
    out
}

/// Ridge regression with an intercept: features and targets are centered on
/// the training rows and `(X^T X + reg I) w = X^T y` is solved by Cholesky.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl RidgeModel {
    pub fn fit(features: &Matrix, targets: &[f64], reg: f64) -> Result<Self> {
        let (m, n) = features.shape();
        if m == 0 || m != targets.len() || !(reg > 0.0) {
            return Err(TaskError::Config(format!("ridge fit with {m} rows, {} targets, reg {reg}", targets.len())));
        }
        let mut mean = vec![0.0; n];
        for r in 0..m {
            for (mu, x) in mean.iter_mut().zip(features.row(r)) {
                *mu += x / m as f64;
            }
        }
        let y_mean = targets.iter().sum::<f64>() / m as f64;
        let x = DMatrix::from_fn(m, n, |r, c| features[(r, c)] - mean[c]);
        let y = DVector::from_iterator(m, targets.iter().map(|t| t - y_mean));
        let mut a = x.transpose() * &x;
        for k in 0..n {
            a[(k, k)] += reg;
        }
        let rhs = x.transpose() * y;
        let chol = a.cholesky().ok_or_else(|| TaskError::Config("ridge system is not positive definite".into()))?;
        let w = chol.solve(&rhs);
        let weights: Vec<f64> = w.iter().copied().collect();
        let intercept = y_mean - weights.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>();
        Ok(Self { weights, intercept })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }
}

/// Batch protocol: fit on the `train` steps, return the MSE on the `test` steps.
pub fn linear_baseline(features: &Matrix, targets: &[f64], train: &[usize], test: &[usize], reg: f64) -> Result<f64> {
    let x = Matrix::from_fn(train.len(), features.cols(), |r, c| features[(train[r], c)]);
    let y: Vec<f64> = train.iter().map(|&r| targets[r]).collect();
    let model = RidgeModel::fit(&x, &y, reg)?;
    let sq: f64 = test.iter().map(|&r| (model.predict(features.row(r)) - targets[r]).powi(2)).sum();
    Ok(sq / test.len().max(1) as f64)
}

/// Random split of `0..n` into sorted train and test step indices.
pub fn split_steps<R: Rng + ?Sized>(n: usize, n_test: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut test = rand::seq::index::sample(rng, n, n_test.min(n)).into_vec();
    test.sort_unstable();
    let train = (0..n).filter(|k| test.binary_search(k).is_err()).collect();
    (train, test)
}

/// Online-prefix protocol: for every step `k >= min_train`, fit on steps
/// `0..k` and record the squared error at step `k`.
pub fn linear_baseline_online(features: &Matrix, targets: &[f64], min_train: usize, reg: f64) -> Result<Vec<f64>> {
    (min_train.max(1)..features.rows())
        .map(|k| {
            let train = Matrix::from_fn(k, features.cols(), |r, c| features[(r, c)]);
            let model = RidgeModel::fit(&train, &targets[..k], reg)?;
            Ok((model.predict(features.row(k)) - targets[k]).powi(2))
        })
        .collect()
}

/// Held-out comparison on one episode: network MSE and ridge MSE on the same
/// randomly chosen steps, the ridge model using the network's own spiking
/// traces of the remaining steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineComparison {
    pub network_mse: f64,
    pub ridge_mse: f64,
}

pub fn compare_with_ridge<R: Rng + ?Sized>(
    params: &lsnn_core::NetworkParams,
    episode: &L2LEpisode,
    window: usize,
    dt: f64,
    n_test: usize,
    reg: f64,
    rng: &mut R,
) -> Result<BaselineComparison> {
    let (pred, raster) = predictions(params, episode, window, rng)?;
    let features = mean_spiking_traces(&raster, window, 20.0, dt);
    let (train, test) = split_steps(episode.targets.len(), n_test, rng);
    let ridge_mse = linear_baseline(&features, &episode.targets, &train, &test, reg)?;
    let network_mse = test.iter().map(|&k| (pred[k] - episode.targets[k]).powi(2)).sum::<f64>() / test.len().max(1) as f64;
    Ok(BaselineComparison { network_mse, ridge_mse })
}

/// Regularization of the ridge baseline.
pub const RIDGE_REG: f64 = 100.0;

/// Compares the trained network with the ridge baseline on every fixed test
/// episode. A random 90% of the steps of an episode train the ridge model;
/// both are scored on the remaining 10%.
pub fn evaluate_against_ridge(cfg: &L2LConfig, params: &lsnn_core::NetworkParams) -> Result<Vec<BaselineComparison>> {
    let dt = cfg.network.dt;
    let window = cfg.task.window_steps(dt);
    let n_test = (cfg.task.steps / 10).max(1);
    let mut rng = crate::harness::eval_rng(u64::MAX);
    cfg.test_episodes()?
        .iter()
        .map(|ep| compare_with_ridge(params, ep, window, dt, n_test, RIDGE_REG, &mut rng))
        .collect()
}

/// Hyperparameters of the feed-forward comparison network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedForwardConfig {
    pub hidden: usize,
    pub lr: f64,
    pub adam: AdamConfig,
}

impl Default for FeedForwardConfig {
    fn default() -> Self {
        Self {
            hidden: 10,
            lr: 0.1,
            adam: AdamConfig { beta1: 0.7, beta2: 0.9, eps: 1e-5, amsgrad: true, weight_decay: 0.0 },
        }
    }
}

/// Sigmoid hidden layer, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub inputs: usize,
    pub hidden: usize,
    /// `w1 (hidden x inputs) | b1 | w2 (hidden) | b2`
    pub params: Vec<f64>,
}

impl FeedForward {
    /// Xavier normal initialization, zero biases.
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let n = hidden * inputs + hidden + hidden + 1;
        let mut params = vec![0.0; n];
        let n1 = Normal::new(0.0, (2.0 / (inputs + hidden) as f64).sqrt()).expect("positive std");
        let n2 = Normal::new(0.0, (2.0 / (hidden + 1) as f64).sqrt()).expect("positive std");
        for p in params[..hidden * inputs].iter_mut() {
            *p = n1.sample(rng);
        }
        let w2 = hidden * inputs + hidden;
        for p in params[w2..w2 + hidden].iter_mut() {
            *p = n2.sample(rng);
        }
        Self { inputs, hidden, params }
    }

    fn hidden_act(&self, x: &[f64]) -> Vec<f64> {
        let b1 = self.hidden * self.inputs;
        (0..self.hidden)
            .map(|h| {
                let w = &self.params[h * self.inputs..(h + 1) * self.inputs];
                sigmoid(self.params[b1 + h] + w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let h = self.hidden_act(x);
        let w2 = self.hidden * self.inputs + self.hidden;
        self.params[w2 + self.hidden] + h.iter().zip(&self.params[w2..]).map(|(h, w)| h * w).sum::<f64>()
    }

    /// Gradient of `(f(x) - y)^2`.
    pub fn gradient(&self, x: &[f64], y: f64) -> Vec<f64> {
        let h = self.hidden_act(x);
        let w2 = self.hidden * self.inputs + self.hidden;
        let e = 2.0 * (self.forward(x) - y);
        let mut g = vec![0.0; self.params.len()];
        let b1 = self.hidden * self.inputs;
        for k in 0..self.hidden {
            g[w2 + k] = e * h[k];
            let dh = e * self.params[w2 + k] * h[k] * (1.0 - h[k]);
            g[b1 + k] = dh;
            for i in 0..self.inputs {
                g[k * self.inputs + i] = dh * x[i];
            }
        }
        g[w2 + self.hidden] = e;
        g
    }
}

/// Online training on an example stream: at every step the squared error of
/// the prediction is recorded before one optimizer step on that example.
pub fn ff_backprop_baseline<R: Rng + ?Sized>(
    points: &Matrix,
    targets: &[f64],
    cfg: &FeedForwardConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.adam.validate()?;
    let mut net = FeedForward::new(points.cols(), cfg.hidden, rng);
    let mut adam = AdamState::new(cfg.adam, net.params.len());
    let mut curve = Vec::with_capacity(targets.len());
    for (k, &y) in targets.iter().enumerate() {
        let x = points.row(k);
        curve.push((net.forward(x) - y).powi(2));
        let g = net.gradient(x, y);
        adam.step(&mut net.params, &g, None, cfg.lr)?;
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sinus_task(steps: usize) -> L2LTask {
        L2LTask {
            family: Family::Sinus,
            steps,
            encoding: L2LEncoding { neurons_per_dim: 10, width_divisor: 20.0, ..Default::default() },
        }
    }

    #[test]
    fn zero_target_network_outputs_half() {
        let tn = TargetNetwork::from_params(&[0.0; 40]);
        assert_eq!(tn.eval(0.3, -0.7), 0.5);
    }

    #[test]
    fn target_network_parameters_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tn = TargetNetwork::sample(&mut rng);
        assert_eq!(TargetNetwork::from_params(&tn.params()), tn);
        assert!(tn.params().iter().all(|p| (-1.0..=1.0).contains(p)));
    }

    #[test]
    fn sinus_values() {
        assert_eq!(SinusTask { amplitude: 1.0, phase: 0.0 }.eval(0.0), 0.0);
        assert!((SinusTask { amplitude: 5.0, phase: PI / 2.0 }.eval(0.0) - 5.0).abs() < 1e-15);
        let s = SinusTask { amplitude: 2.3, phase: 1.1 };
        assert!((s.eval(0.4) - s.eval(0.4 + 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn episode_alignment() {
        let task = sinus_task(12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ep = build_l2l_episode(&task, 1.0, &mut rng).unwrap();
        assert_eq!(ep.targets.len(), 12);
        assert_eq!(ep.teacher[0], 0.0);
        for k in 1..12 {
            assert_eq!(ep.teacher[k], ep.targets[k - 1]);
            assert_eq!(ep.targets[k], ep.task.eval(ep.points.row(k)));
        }
        assert_eq!(ep.spikes.shape(), (12 * 20, 20));
    }

    #[test]
    fn ridge_on_zero_targets() {
        let f = Matrix::from_fn(20, 3, |r, c| ((r * 7 + c * 3) % 5) as f64);
        let m = RidgeModel::fit(&f, &[0.0; 20], 100.0).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        assert_eq!(linear_baseline(&f, &[0.0; 20], &(0..15).collect::<Vec<_>>(), &[15, 16, 17, 18, 19], 100.0).unwrap(), 0.0);
    }

    #[test]
    fn traces_of_a_single_spike() {
        let mut r = Matrix::zeros(4, 1);
        r[(0, 0)] = 1.0;
        let tr = mean_spiking_traces(&r, 2, 20.0, 1.0);
        let d = (-1.0f64 / 20.0).exp();
        assert!((tr[(0, 0)] - (1.0 + d) / 2.0).abs() < 1e-15);
        assert!((tr[(1, 0)] - (d * d + d * d * d) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ff_with_zero_learning_rate_is_flat_on_constant_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let points = Matrix::from_fn(30, 2, |_, _| 0.5);
        let cfg = FeedForwardConfig { lr: 0.0, ..Default::default() };
        let curve = ff_backprop_baseline(&points, &[0.2; 30], &cfg, &mut rng).unwrap();
        assert!(curve.iter().all(|&e| e == curve[0]));
    }

    #[test]
    fn ff_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = FeedForward::new(2, 10, &mut rng);
        let x = [0.3, -0.8];
        let g = net.gradient(&x, 0.4);
        for k in 0..net.params.len() {
            let mut p = net.clone();
            let h = 1e-6;
            p.params[k] += h;
            let up = (p.forward(&x) - 0.4).powi(2);
            p.params[k] -= 2.0 * h;
            let down = (p.forward(&x) - 0.4).powi(2);
            assert!(((up - down) / (2.0 * h) - g[k]).abs() < 1e-7);
        }
    }
}
