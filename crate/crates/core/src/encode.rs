//! Input encoders: rate codes, level-crossing codes, Gaussian tuning curves,
//! reward pulses and analog channels.

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Every neuron spikes independently with probability `gray`.
pub fn encode_population_rate<R: Rng + ?Sized>(gray: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let p = if (0.0..=1.0).contains(&gray) {
        gray
    } else {
        log::warn!("grey value {gray} outside [0, 1], clamping");
        if gray.is_nan() {
            0.0
        } else {
            gray.clamp(0.0, 1.0)
        }
    };
    (0..n).map(|_| if rng.gen::<f64>() < p { 1.0 } else { 0.0 }).collect()
}

/// Level-crossing code: neurons `0..n` fire on upward crossings of the
/// corresponding level, neurons `n..2n` on downward crossings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCodeSpec {
    pub levels: Vec<f64>,
}

impl ThresholdCodeSpec {
    /// `n` levels at `k / (n + 1)`, `k = 1..=n`.
    pub fn evenly_spaced(n: usize) -> Self {
        Self {
            levels: (1..=n).map(|k| k as f64 / (n + 1) as f64).collect(),
        }
    }

    pub fn from_levels(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() || levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("threshold levels must be strictly increasing".into()));
        }
        Ok(Self { levels })
    }

    pub fn n_neurons(&self) -> usize {
        2 * self.levels.len()
    }
}

pub fn encode_threshold_crossing(prev: f64, cur: f64, spec: &ThresholdCodeSpec) -> Vec<f64> {
    let n = spec.levels.len();
    let mut out = vec![0.0; 2 * n];
    for (k, &th) in spec.levels.iter().enumerate() {
        if prev < th && th <= cur {
            out[k] = 1.0;
        }
        if cur <= th && th < prev {
            out[n + k] = 1.0;
        }
    }
    out
}

/// Spike raster for a whole sequence; the value before the first sample is 0.
pub fn threshold_code_sequence(values: &[f64], spec: &ThresholdCodeSpec) -> Matrix {
    let mut out = Matrix::zeros(values.len(), spec.n_neurons());
    let mut prev = 0.0;
    for (s, &v) in values.iter().enumerate() {
        out.row_mut(s).copy_from_slice(&encode_threshold_crossing(prev, v, spec));
        prev = v;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuningWidth {
    /// `exp(-d^2 / (2 sigma^2))`
    Sigma(f64),
    /// `exp(-c d^2)`
    Coefficient(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningCurveSpec {
    pub centers: Vec<f64>,
    pub width: TuningWidth,
    pub r_max_hz: f64,
    pub dt_ms: f64,
}

impl TuningCurveSpec {
    /// `n` centers evenly spaced over `[min, max]` inclusive.
    pub fn evenly_spaced(n: usize, min: f64, max: f64, width: TuningWidth, r_max_hz: f64, dt_ms: f64) -> Result<Self> {
        if n == 0 || max <= min {
            return Err(Error::Config(format!("tuning range [{min}, {max}] with {n} neurons")));
        }
        let centers = if n == 1 {
            vec![0.5 * (min + max)]
        } else {
            (0..n).map(|i| min + (max - min) * i as f64 / (n - 1) as f64).collect()
        };
        let spec = Self { centers, width, r_max_hz, dt_ms };
        spec.validate()?;
        Ok(spec)
    }

    /// Width `(max - min) / 1000`, peak 200 Hz.
    pub fn l2l(n: usize, min: f64, max: f64, dt_ms: f64) -> Result<Self> {
        Self::evenly_spaced(n, min, max, TuningWidth::Sigma((max - min) / 1000.0), 200.0, dt_ms)
    }

    /// Exponent coefficient 100, peak 500 Hz, centers over `[-1, 1]`.
    pub fn rl(n: usize, dt_ms: f64) -> Result<Self> {
        Self::evenly_spaced(n, -1.0, 1.0, TuningWidth::Coefficient(100.0), 500.0, dt_ms)
    }

    pub fn validate(&self) -> Result<()> {
        let width_ok = match self.width {
            TuningWidth::Sigma(s) => s > 0.0,
            TuningWidth::Coefficient(c) => c > 0.0,
        };
        if !width_ok || self.centers.windows(2).any(|w| w[0] >= w[1]) || self.r_max_hz < 0.0 || self.dt_ms <= 0.0 {
            return Err(Error::Config(format!("invalid tuning curves {:?}", self.width)));
        }
        if self.r_max_hz * self.dt_ms / 1000.0 > 1.0 {
            log::warn!("peak rate {} Hz saturates the per-step spike probability", self.r_max_hz);
        }
        Ok(())
    }

    pub fn n_neurons(&self) -> usize {
        self.centers.len()
    }

    fn clamp(&self, value: f64) -> f64 {
        let lo = self.centers[0];
        let hi = self.centers[self.centers.len() - 1];
        value.clamp(lo, hi)
    }

    /// Analytic rates in Hz.
    pub fn rates(&self, value: f64) -> Vec<f64> {
        let z = self.clamp(value);
        let c = match self.width {
            TuningWidth::Sigma(s) => 1.0 / (2.0 * s * s),
            TuningWidth::Coefficient(c) => c,
        };
        self.centers
            .iter()
            .map(|m| self.r_max_hz * (-c * (m - z) * (m - z)).exp())
            .collect()
    }

    pub fn probabilities(&self, value: f64) -> Vec<f64> {
        self.rates(value)
            .into_iter()
            .map(|r| (r * self.dt_ms / 1000.0).min(1.0))
            .collect()
    }
}

pub fn encode_gaussian_tuning<R: Rng + ?Sized>(value: f64, spec: &TuningCurveSpec, rng: &mut R) -> Vec<f64> {
    spec.probabilities(value)
        .into_iter()
        .map(|p| if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
        .collect()
}

pub const REWARD_GROUP: usize = 40;

/// Group A (`0..40`) fires for positive rewards, group B (`40..80`) for
/// negative ones.
pub fn encode_reward_pulse(reward: f64) -> Vec<f64> {
    let mut out = vec![0.0; 2 * REWARD_GROUP];
    if reward > 0.0 {
        out[..REWARD_GROUP].fill(1.0);
    } else if reward < 0.0 {
        out[REWARD_GROUP..].fill(1.0);
    }
    out
}

/// Analog inputs are passed to the network unchanged.
pub fn analog_channel(values: &Matrix) -> Matrix {
    values.clone()
}

/// Repeats each row of `frames` `repeat` times.
pub fn repeat_frames(frames: &Matrix, repeat: usize) -> Matrix {
    let mut out = Matrix::zeros(frames.rows() * repeat, frames.cols());
    for r in 0..frames.rows() {
        for k in 0..repeat {
            out.row_mut(r * repeat + k).copy_from_slice(frames.row(r));
        }
    }
    out
}

/// Cue channel active during the last `window` of `t_len` steps.
pub fn presentation_cue(t_len: usize, window: usize) -> Vec<f64> {
    (0..t_len).map(|s| if s + window >= t_len { 1.0 } else { 0.0 }).collect()
}
