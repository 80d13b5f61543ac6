//! Static and trainable parameters of one adaptive spiking network.

use crate::error::{Error, Result};
use crate::tensor::{Delays, Mask, Matrix};
use serde::{Deserialize, Serialize};

/// Per-neuron constants. Times are in milliseconds.
///
/// `beta = 0` gives a regular LIF neuron with constant threshold `b0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub tau_m: f64,
    pub tau_a: f64,
    pub beta: f64,
    pub b0: f64,
    pub refractory: f64,
}

impl NeuronParams {
    pub fn regular(tau_m: f64, b0: f64, refractory: f64) -> Self {
        Self {
            tau_m,
            // irrelevant while beta = 0, but must stay a valid time constant
            tau_a: tau_m,
            beta: 0.0,
            b0,
            refractory,
        }
    }

    pub fn adaptive(tau_m: f64, tau_a: f64, beta: f64, b0: f64, refractory: f64) -> Self {
        Self {
            tau_m,
            tau_a,
            beta,
            b0,
            refractory,
        }
    }

    pub fn is_adaptive(&self) -> bool {
        self.beta > 0.0
    }

    /// Membrane decay per step, `exp(-dt / tau_m)`.
    pub fn alpha(&self, dt: f64) -> f64 {
        (-dt / self.tau_m).exp()
    }

    /// Threshold-adaptation decay per step, `exp(-dt / tau_a)`.
    pub fn rho(&self, dt: f64) -> f64 {
        (-dt / self.tau_a).exp()
    }

    /// Number of steps a neuron stays silent after a spike.
    pub fn refractory_steps(&self, dt: f64) -> u32 {
        // guard against 3.0000000000000004-style overshoot
        ((self.refractory / dt) - 1e-9).ceil().max(0.0) as u32
    }

    pub fn validate(&self, dt: f64) -> Result<()> {
        let ok = self.tau_m > 0.0
            && self.tau_a > 0.0
            && self.b0 > 0.0
            && self.beta >= 0.0
            && self.refractory >= 0.0
            && [self.tau_m, self.tau_a, self.b0, self.beta, self.refractory]
                .iter()
                .all(|v| v.is_finite());
        if !ok {
            return Err(Error::Config(format!("invalid neuron parameters {self:?}")));
        }
        let (a, r) = (self.alpha(dt), self.rho(dt));
        if !(a > 0.0 && a < 1.0 && r > 0.0 && r < 1.0) {
            return Err(Error::Config(format!(
                "decay factors out of (0,1): alpha={a}, rho={r}"
            )));
        }
        Ok(())
    }
}

/// Everything needed to simulate and train one network.
///
/// Weight layout is `(postsynaptic, presynaptic)`. Dale signs, when present,
/// are indexed by presynaptic neuron: `signs_in` for input neurons and
/// `signs_rec` for recurrent neurons (which also fixes the sign of their
/// readout synapses).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    /// Simulation step in ms.
    pub dt: f64,
    pub neurons: Vec<NeuronParams>,
    pub w_in: Matrix,
    pub w_rec: Matrix,
    pub w_out: Matrix,
    pub d_in: Delays,
    pub d_rec: Delays,
    pub mask_in: Mask,
    pub mask_rec: Mask,
    pub mask_out: Mask,
    pub signs_in: Option<Vec<f64>>,
    pub signs_rec: Option<Vec<f64>>,
    /// Readout membrane time constant in ms. `f64::INFINITY` turns the
    /// readout into a pure accumulator.
    pub tau_out: f64,
    /// Per-neuron std of additive current noise, when enabled.
    pub noise_sigma: Option<Vec<f64>>,
}

impl NetworkParams {
    /// Zero weights, full masks (no self-connections) and zero delays.
    pub fn new(n_in: usize, n_out: usize, neurons: Vec<NeuronParams>, dt: f64, tau_out: f64) -> Self {
        let n = neurons.len();
        Self {
            dt,
            neurons,
            w_in: Matrix::zeros(n, n_in),
            w_rec: Matrix::zeros(n, n),
            w_out: Matrix::zeros(n_out, n),
            d_in: Delays::constant(n, n_in, 0),
            d_rec: Delays::constant(n, n, 0),
            mask_in: Mask::full(n, n_in),
            mask_rec: Mask::full_off_diagonal(n),
            mask_out: Mask::full(n_out, n),
            signs_in: None,
            signs_rec: None,
            tau_out,
            noise_sigma: None,
        }
    }

    #[inline]
    pub fn n_in(&self) -> usize {
        self.w_in.cols()
    }

    #[inline]
    pub fn n_rec(&self) -> usize {
        self.neurons.len()
    }

    #[inline]
    pub fn n_out(&self) -> usize {
        self.w_out.rows()
    }

    /// Readout decay per step.
    pub fn kappa(&self) -> f64 {
        (-self.dt / self.tau_out).exp()
    }

    pub fn is_dale(&self) -> bool {
        self.signs_rec.is_some()
    }

    pub fn max_delay(&self) -> u32 {
        self.d_in.max().max(self.d_rec.max())
    }

    /// Re-applies the masks so that dormant weights are exactly zero.
    pub fn enforce_masks(&mut self) {
        self.w_in.apply_mask(&self.mask_in);
        self.w_rec.apply_mask(&self.mask_rec);
        self.w_out.apply_mask(&self.mask_out);
    }

    /// Checks every structural invariant. Called by the simulator before a
    /// run so configuration problems never surface mid-simulation.
    pub fn validate(&self) -> Result<()> {
        let (n, n_in, n_out) = (self.n_rec(), self.n_in(), self.n_out());
        if n == 0 {
            return Err(Error::Config("network has no recurrent neurons".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.tau_out > 0.0) {
            return Err(Error::Config(format!("tau_out must be positive, got {}", self.tau_out)));
        }
        for nrn in &self.neurons {
            nrn.validate(self.dt)?;
        }
        check_shape("w_in", (n, n_in), self.w_in.shape())?;
        check_shape("w_rec", (n, n), self.w_rec.shape())?;
        check_shape("w_out", (n_out, n), self.w_out.shape())?;
        check_shape("d_in", (n, n_in), self.d_in.shape())?;
        check_shape("d_rec", (n, n), self.d_rec.shape())?;
        check_shape("mask_in", (n, n_in), self.mask_in.shape())?;
        check_shape("mask_rec", (n, n), self.mask_rec.shape())?;
        check_shape("mask_out", (n_out, n), self.mask_out.shape())?;

        for k in 0..n {
            if self.mask_rec[(k, k)] || self.w_rec[(k, k)] != 0.0 {
                return Err(Error::Config(format!("self-connection on neuron {k}")));
            }
        }
        for (name, w, m) in [
            ("w_in", &self.w_in, &self.mask_in),
            ("w_rec", &self.w_rec, &self.mask_rec),
            ("w_out", &self.w_out, &self.mask_out),
        ] {
            if !w.all_finite() {
                return Err(Error::Config(format!("{name} has non-finite entries")));
            }
            if w.as_slice().iter().zip(m.as_slice()).any(|(&v, &on)| !on && v != 0.0) {
                return Err(Error::Config(format!("{name} has nonzero masked-out entries")));
            }
        }
        if let Some(s) = &self.signs_in {
            check_signs("signs_in", s, n_in)?;
            check_column_signs("w_in", &self.w_in, s)?;
        }
        if let Some(s) = &self.signs_rec {
            check_signs("signs_rec", s, n)?;
            check_column_signs("w_rec", &self.w_rec, s)?;
            check_column_signs("w_out", &self.w_out, s)?;
        }
        if let Some(sig) = &self.noise_sigma {
            if sig.len() != n || sig.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("noise_sigma must hold one finite value per neuron".into()));
            }
        }
        Ok(())
    }
}

fn check_shape(what: &'static str, expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected != got {
        return Err(Error::Shape { what, expected, got });
    }
    Ok(())
}

fn check_signs(name: &str, s: &[f64], n: usize) -> Result<()> {
    if s.len() != n || s.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::Config(format!("{name} must hold {n} entries of +1/-1")));
    }
    Ok(())
}

fn check_column_signs(name: &str, w: &Matrix, signs: &[f64]) -> Result<()> {
    for r in 0..w.rows() {
        for (c, &s) in signs.iter().enumerate() {
            if w[(r, c)] * s < 0.0 {
                return Err(Error::Config(format!(
                    "{name}[{r},{c}] = {} violates presynaptic sign {s}",
                    w[(r, c)]
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkParams {
        let neurons = vec![NeuronParams::regular(20.0, 0.01, 2.0); 3];
        NetworkParams::new(2, 1, neurons, 1.0, 20.0)
    }

    #[test]
    fn fresh_params_validate() {
        small().validate().unwrap();
    }

    #[test]
    fn rejects_self_connection() {
        let mut p = small();
        p.mask_rec[(1, 1)] = true;
        p.w_rec[(1, 1)] = 0.3;
        assert!(p.validate().is_err());
    }

    #[test]
    fn rejects_masked_nonzero() {
        let mut p = small();
        p.mask_in[(0, 1)] = false;
        p.w_in[(0, 1)] = 0.1;
        assert!(p.validate().is_err());
    }

    #[test]
    fn rejects_sign_violation() {
        let mut p = small();
        p.signs_rec = Some(vec![1.0, -1.0, 1.0]);
        p.w_rec[(0, 1)] = 0.2;
        assert!(p.validate().is_err());
        p.w_rec[(0, 1)] = -0.2;
        p.validate().unwrap();
    }

    #[test]
    fn rejects_bad_neuron() {
        let mut p = small();
        p.neurons[0].tau_m = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn refractory_steps_round_up() {
        let n = NeuronParams::regular(20.0, 0.01, 2.5);
        assert_eq!(n.refractory_steps(1.0), 3);
        assert_eq!(NeuronParams::regular(20.0, 0.01, 3.0).refractory_steps(1.0), 3);
        assert_eq!(NeuronParams::regular(20.0, 0.01, 0.0).refractory_steps(1.0), 0);
    }
}
