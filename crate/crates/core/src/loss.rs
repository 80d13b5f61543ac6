//! Task losses and the firing-rate regularizer, each returning its value
//! together with the cotangent the backward pass consumes.

use crate::error::{Error, Result};
use crate::grad::{backprop, BackwardConfig, Cotangents, Gradients};
use crate::params::NetworkParams;
use crate::tape::SimTape;
use crate::tensor::Matrix;
use serde::{Deserialize, Serialize};

/// Mean of the last `window` readout rows (the class logits).
pub fn averaged_logits(readout: &Matrix, window: usize) -> Vec<f64> {
    let (t_len, n_out) = readout.shape();
    let mut logits = vec![0.0; n_out];
    for s in t_len - window..t_len {
        for (l, y) in logits.iter_mut().zip(readout.row(s)) {
            *l += y;
        }
    }
    logits.iter_mut().for_each(|l| *l /= window as f64);
    logits
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|x| x / sum).collect()
}

/// Cross-entropy of the softmax of the readout averaged over the final
/// `window` steps. The cotangent is zero outside the window.
pub fn cross_entropy_avg(readout: &Matrix, window: usize, label: usize) -> Result<(f64, Matrix)> {
    let (t_len, n_out) = readout.shape();
    if label >= n_out {
        return Err(Error::LabelOutOfRange { label, classes: n_out });
    }
    if window == 0 || window > t_len {
        return Err(Error::Config(format!("averaging window {window} not in 1..={t_len}")));
    }
    let logits = averaged_logits(readout, window);
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    let p = softmax(&logits);

    let mut dy = Matrix::zeros(t_len, n_out);
    for s in t_len - window..t_len {
        for k in 0..n_out {
            let onehot = if k == label { 1.0 } else { 0.0 };
            dy[(s, k)] = (p[k] - onehot) / window as f64;
        }
    }
    Ok((loss, dy))
}

/// Mean squared error over all entries and its gradient.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Shape {
            what: "mse",
            expected: (target.len(), 1),
            got: (pred.len(), 1),
        });
    }
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}

/// Readout increments over consecutive windows divided by the window length.
/// With an accumulating readout (`tau_out = inf`) row `k` equals
/// `w_out * (spike count in window k) / window`.
pub fn window_rate_predictions(readout: &Matrix, window: usize) -> Matrix {
    let (t_len, n_out) = readout.shape();
    let n_win = t_len / window;
    let mut out = Matrix::zeros(n_win, n_out);
    for k in 0..n_win {
        let end = (k + 1) * window - 1;
        for o in 0..n_out {
            let start = if k == 0 { 0.0 } else { readout[(end - window, o)] };
            out[(k, o)] = (readout[(end, o)] - start) / window as f64;
        }
    }
    out
}

/// Pulls a cotangent on [`window_rate_predictions`] back to the readout trace.
pub fn window_rate_backward(d_pred: &Matrix, t_len: usize, window: usize) -> Matrix {
    let n_out = d_pred.cols();
    let mut dy = Matrix::zeros(t_len, n_out);
    for k in 0..d_pred.rows() {
        let end = (k + 1) * window - 1;
        for o in 0..n_out {
            let g = d_pred[(k, o)] / window as f64;
            dy[(end, o)] += g;
            if k > 0 {
                dy[(end - window, o)] -= g;
            }
        }
    }
    dy
}

/// Unit in which firing rates enter the regularizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateUnit {
    Hz,
    /// Spikes per millisecond.
    PerMs,
}

impl RateUnit {
    fn per_step_to_unit(self, dt_ms: f64) -> f64 {
        match self {
            RateUnit::Hz => 1000.0 / dt_ms,
            RateUnit::PerMs => 1.0 / dt_ms,
        }
    }

    fn from_hz(self, hz: f64) -> f64 {
        match self {
            RateUnit::Hz => hz,
            RateUnit::PerMs => hz / 1000.0,
        }
    }
}

/// `R = mean_j (rate_j - f0)^2`, with rates averaged over all recorded steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRegularizer {
    pub target_hz: f64,
    pub unit: RateUnit,
}

impl RateRegularizer {
    /// `counts[j]` is the number of spikes of neuron `j` over `steps` steps
    /// (summed over episodes when regularizing a batch). Returns `R` and the
    /// derivative of `R` with respect to a single spike indicator of neuron `j`.
    pub fn evaluate(&self, counts: &[f64], steps: usize, dt_ms: f64) -> (f64, Vec<f64>) {
        let n = counts.len() as f64;
        let scale = self.unit.per_step_to_unit(dt_ms) / steps as f64;
        let f0 = self.unit.from_hz(self.target_hz);
        let dev: Vec<f64> = counts.iter().map(|c| c * scale - f0).collect();
        let r = dev.iter().map(|d| d * d).sum::<f64>() / n;
        let dz = dev.iter().map(|d| 2.0 * d * scale / n).collect();
        (r, dz)
    }
}

/// Regularizer value and per-neuron spike cotangent for one raster
/// (`T x n`, rows are steps).
pub fn firing_rate_regularizer(raster: &Matrix, target_hz: f64, dt_ms: f64, unit: RateUnit) -> (f64, Vec<f64>) {
    let (t_len, n) = raster.shape();
    let mut counts = vec![0.0; n];
    for s in 0..t_len {
        for (c, z) in counts.iter_mut().zip(raster.row(s)) {
            *c += z;
        }
    }
    RateRegularizer { target_hz, unit }.evaluate(&counts, t_len, dt_ms)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Softmax cross-entropy of the readout averaged over the final window.
    CrossEntropyAvg,
    /// MSE of the raw readout against a per-step target trace.
    MseReadout,
    /// MSE of windowed spike-count predictions (accumulating readout).
    MseWindowRate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub window: usize,
    pub rate_target_hz: f64,
    pub rate_coeff: f64,
    pub rate_unit: RateUnit,
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.rate_target_hz < 0.0 || self.rate_coeff < 0.0 {
            return Err(Error::Config(format!("invalid loss spec {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Label(usize),
    /// One row per step (`MseReadout`) or per window (`MseWindowRate`).
    Sequence(Matrix),
}

fn readout_matrix(tape: &SimTape) -> Matrix {
    Matrix::from_vec(tape.len(), tape.n_out, tape.y.clone())
}

/// Loss value and readout cotangent for one episode, without the rate term.
pub fn task_loss(tape: &SimTape, loss: &LossSpec, targets: &Targets) -> Result<(f64, Matrix)> {
    let readout = readout_matrix(tape);
    match (loss.kind, targets) {
        (LossKind::CrossEntropyAvg, Targets::Label(l)) => cross_entropy_avg(&readout, loss.window, *l),
        (LossKind::MseReadout, Targets::Sequence(t)) => {
            let (v, g) = mse(readout.as_slice(), t.as_slice())?;
            Ok((v, Matrix::from_vec(readout.rows(), readout.cols(), g)))
        }
        (LossKind::MseWindowRate, Targets::Sequence(t)) => {
            let pred = window_rate_predictions(&readout, loss.window);
            if pred.shape() != t.shape() {
                return Err(Error::Shape { what: "window targets", expected: pred.shape(), got: t.shape() });
            }
            let (v, g) = mse(pred.as_slice(), t.as_slice())?;
            let dp = Matrix::from_vec(pred.rows(), pred.cols(), g);
            Ok((v, window_rate_backward(&dp, tape.len(), loss.window)))
        }
        _ => Err(Error::Config(format!("targets do not match loss kind {:?}", loss.kind))),
    }
}

/// Loss decomposition for one episode.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub task: f64,
    pub rate_reg: f64,
    pub total: f64,
}

/// Loss parts and parameter gradients for one recorded episode.
pub fn backward_parts(
    tape: &SimTape,
    params: &NetworkParams,
    loss: &LossSpec,
    targets: &Targets,
    cfg: &BackwardConfig,
) -> Result<(LossParts, Gradients)> {
    loss.validate()?;
    let (task, dy) = task_loss(tape, loss, targets)?;
    let mut cot = Cotangents::from_readout(dy);
    let reg = RateRegularizer { target_hz: loss.rate_target_hz, unit: loss.rate_unit };
    let (r, dz) = reg.evaluate(&tape.spike_counts(), tape.len(), params.dt);
    if loss.rate_coeff > 0.0 {
        let dz: Vec<f64> = dz.iter().map(|g| g * loss.rate_coeff).collect();
        cot.add_constant_spike_cotangent(tape.len(), &dz);
    }
    let (grads, _) = backprop(tape, params, &cot, cfg)?;
    let parts = LossParts { task, rate_reg: r, total: task + loss.rate_coeff * r };
    Ok((parts, grads))
}

/// Full loss (task term plus `rate_coeff * R`) and parameter gradients for
/// one recorded episode.
pub fn backward(
    tape: &SimTape,
    params: &NetworkParams,
    loss: &LossSpec,
    targets: &Targets,
    cfg: &BackwardConfig,
) -> Result<(f64, Gradients)> {
    backward_parts(tape, params, loss, targets, cfg).map(|(p, g)| (p.total, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let r = Matrix::from_fn(30, 10, |_, _| 0.7);
        let (l, _) = cross_entropy_avg(&r, 5, 3).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dominant_logit_gives_small_loss() {
        let r = Matrix::from_fn(8, 10, |_, k| if k == 4 { 10.0 } else { 0.0 });
        let (l, _) = cross_entropy_avg(&r, 8, 4).unwrap();
        // ln(1 + 9 e^-10)
        assert!((l - (1.0 + 9.0 * (-10f64).exp()).ln()).abs() < 1e-15);
        assert!(l < 1e-3);
    }

    #[test]
    fn cross_entropy_cotangent_confined_to_window() {
        let r = Matrix::from_fn(20, 3, |s, k| (s * 3 + k) as f64 * 0.01);
        let (_, dy) = cross_entropy_avg(&r, 4, 1).unwrap();
        for s in 0..16 {
            assert!(dy.row(s).iter().all(|&g| g == 0.0));
        }
        assert!(dy.row(19).iter().any(|&g| g != 0.0));
        let whole = averaged_logits(&r, 20);
        let mean0: f64 = (0..20).map(|s| r[(s, 0)]).sum::<f64>() / 20.0;
        assert!((whole[0] - mean0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let r = Matrix::zeros(5, 2);
        assert!(matches!(cross_entropy_avg(&r, 2, 2), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap().0, 0.0);
        assert!((mse(&[1.5, 2.5, 0.5], &[1.0, 2.0, 0.0]).unwrap().0 - 0.25).abs() < 1e-15);
        // (0.1^2 + 0.3^2 + 0.2^2) / 3
        let (v, g) = mse(&[0.1, -0.3, 0.7], &[0.0, 0.0, 0.5]).unwrap();
        assert!((v - 0.14 / 3.0).abs() < 1e-15);
        assert!((g[1] - (-0.2)).abs() < 1e-15);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn silent_network_rate_penalty() {
        let raster = Matrix::zeros(100, 4);
        let (r, _) = firing_rate_regularizer(&raster, 20.0, 1.0, RateUnit::Hz);
        assert!((r - 400.0).abs() < 1e-9);
        let (r, _) = firing_rate_regularizer(&raster, 20.0, 1.0, RateUnit::PerMs);
        assert!((r - 4e-4).abs() < 1e-15);
    }

    #[test]
    fn on_target_rate_has_zero_penalty() {
        // 20 Hz over 500 ms = 10 spikes each
        let raster = Matrix::from_fn(500, 3, |s, _| if s % 50 == 0 { 1.0 } else { 0.0 });
        let (r, dz) = firing_rate_regularizer(&raster, 20.0, 1.0, RateUnit::Hz);
        assert!(r.abs() < 1e-20);
        assert!(dz.iter().all(|g| g.abs() < 1e-18));
    }

    #[test]
    fn window_predictions_count_spikes() {
        // accumulator readout of one neuron with weight 2 spiking at 1,3,7
        let mut y = Matrix::zeros(8, 1);
        let mut acc = 0.0;
        for s in 0..8 {
            if [1, 3, 7].contains(&s) {
                acc += 2.0;
            }
            y[(s, 0)] = acc;
        }
        let p = window_rate_predictions(&y, 4);
        assert_eq!(p.as_slice(), &[1.0, 0.5]);
    }
}
