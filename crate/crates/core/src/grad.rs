//! Backpropagation through time over a recorded [`SimTape`].
//!
//! The spike nonlinearity is differentiated with the dampened
//! pseudo-derivative `gamma * max(0, 1 - |v|)` of the normalized potential
//! `v = (V - B) / B`. Everything else (leak, reset, threshold adaptation,
//! delays, readout) is differentiated exactly.

use crate::error::{Error, Result};
use crate::params::NetworkParams;
use crate::snn::Dynamics;
use crate::tape::SimTape;
use crate::tensor::Matrix;
use serde::{Deserialize, Serialize};

/// Surrogate derivative of the spike with respect to the normalized
/// membrane potential.
#[inline]
pub fn pseudo_derivative(v_norm: f64, gamma: f64) -> f64 {
    gamma * (1.0 - v_norm.abs()).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackwardConfig {
    /// Dampening factor of the pseudo-derivative.
    pub gamma: f64,
    /// Propagate gradients through the reset term `-B z`.
    pub reset_grad: bool,
}

impl Default for BackwardConfig {
    fn default() -> Self {
        Self { gamma: 0.3, reset_grad: true }
    }
}

/// Cotangents of a scalar loss with respect to recorded traces. Each present
/// buffer is `T x width`, row-major.
#[derive(Clone, Debug)]
pub struct Cotangents {
    pub y: Vec<f64>,
    pub z: Option<Vec<f64>>,
    pub v: Option<Vec<f64>>,
    pub thr: Option<Vec<f64>>,
}

impl Cotangents {
    pub fn zeros(tape: &SimTape) -> Self {
        Self {
            y: vec![0.0; tape.len() * tape.n_out],
            z: None,
            v: None,
            thr: None,
        }
    }

    pub fn from_readout(dy: Matrix) -> Self {
        Self {
            y: dy.into_vec(),
            z: None,
            v: None,
            thr: None,
        }
    }

    /// Adds `per_neuron[j]` to the spike cotangent of neuron `j` at every step.
    pub fn add_constant_spike_cotangent(&mut self, t_len: usize, per_neuron: &[f64]) {
        let n = per_neuron.len();
        let buf = self.z.get_or_insert_with(|| vec![0.0; t_len * n]);
        for row in buf.chunks_exact_mut(n) {
            for (g, c) in row.iter_mut().zip(per_neuron) {
                *g += c;
            }
        }
    }
}

/// Loss gradient for every trainable parameter. Masked-out (dormant)
/// coordinates are not parameters of the current network and hold 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub w_in: Matrix,
    pub w_rec: Matrix,
    pub w_out: Matrix,
    pub noise_sigma: Option<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            w_in: Matrix::zeros(params.w_in.rows(), params.w_in.cols()),
            w_rec: Matrix::zeros(params.w_rec.rows(), params.w_rec.cols()),
            w_out: Matrix::zeros(params.w_out.rows(), params.w_out.cols()),
            noise_sigma: params.noise_sigma.as_ref().map(|s| vec![0.0; s.len()]),
        }
    }

    /// `self += k * other`
    pub fn add_scaled(&mut self, other: &Gradients, k: f64) {
        self.w_in.add_scaled(&other.w_in, k);
        self.w_rec.add_scaled(&other.w_rec, k);
        self.w_out.add_scaled(&other.w_out, k);
        if let (Some(a), Some(b)) = (self.noise_sigma.as_mut(), other.noise_sigma.as_ref()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += k * y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.w_in.scale(k);
        self.w_rec.scale(k);
        self.w_out.scale(k);
        if let Some(s) = self.noise_sigma.as_mut() {
            s.iter_mut().for_each(|x| *x *= k);
        }
    }

    /// Name of the first tensor holding a non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        if !self.w_in.all_finite() {
            Some("w_in")
        } else if !self.w_rec.all_finite() {
            Some("w_rec")
        } else if !self.w_out.all_finite() {
            Some("w_out")
        } else if self.noise_sigma.as_ref().is_some_and(|s| s.iter().any(|x| !x.is_finite())) {
            Some("noise_sigma")
        } else {
            None
        }
    }

    /// Flattened view in the canonical order `w_in, w_rec, w_out, noise_sigma`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.w_in.as_slice());
        out.extend_from_slice(self.w_rec.as_slice());
        out.extend_from_slice(self.w_out.as_slice());
        if let Some(s) = &self.noise_sigma {
            out.extend_from_slice(s);
        }
        out
    }

    /// Mean of several gradients, folded in the given order.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Gradients>) -> Option<Gradients> {
        let mut it = items.into_iter();
        let mut acc = it.next()?.clone();
        let mut n = 1.0;
        for g in it {
            acc.add_scaled(g, 1.0);
            n += 1.0;
        }
        acc.scale(1.0 / n);
        Some(acc)
    }
}

/// Gradient with respect to the state the simulation started from.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialStateGrad {
    pub v: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Edge {
    pre: u32,
    delay: u32,
    w: f64,
}

fn rows_of(w: &Matrix, mask: &[bool], delays: &[u32]) -> Vec<Vec<Edge>> {
    let (rows, cols) = w.shape();
    (0..rows)
        .map(|j| {
            (0..cols)
                .filter(|&i| mask[j * cols + i])
                .map(|i| Edge {
                    pre: i as u32,
                    delay: delays[j * cols + i],
                    w: w.as_slice()[j * cols + i],
                })
                .collect()
        })
        .collect()
}

/// Reverse sweep over the tape. Returns parameter gradients and the
/// gradient with respect to the initial membrane/adaptation state.
pub fn backprop(
    tape: &SimTape,
    params: &NetworkParams,
    cot: &Cotangents,
    cfg: &BackwardConfig,
) -> Result<(Gradients, InitialStateGrad)> {
    let t_len = tape.len();
    let (n, n_in, n_out) = (params.n_rec(), params.n_in(), params.n_out());
    assert_eq!((tape.n_rec, tape.n_in, tape.n_out), (n, n_in, n_out), "tape/params shape");
    assert_eq!(cot.y.len(), t_len * n_out, "readout cotangent length");

    let dynamics = Dynamics::new(params);
    let rec_rows = rows_of(&params.w_rec, params.mask_rec.as_slice(), params.d_rec.as_slice());
    // input synapses grouped by presynaptic neuron: (post, delay)
    let mut in_cols: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n_in];
    for j in 0..n {
        for (i, col) in in_cols.iter_mut().enumerate() {
            if params.mask_in[(j, i)] {
                col.push((j as u32, params.d_in[(j, i)]));
            }
        }
    }
    let rec_cols: Vec<Vec<(u32, u32)>> = {
        let mut c = vec![Vec::new(); n];
        for (j, row) in rec_rows.iter().enumerate() {
            for e in row {
                c[e.pre as usize].push((j as u32, e.delay));
            }
        }
        c
    };

    let mut grads = Gradients::zeros_like(params);
    let mut g_current = vec![0.0; t_len * n];
    let mut pending_gz = vec![0.0; t_len * n];
    let mut gv_next = vec![0.0; n];
    let mut gb_next = vec![0.0; n];
    let mut gy_next = vec![0.0; n_out];
    let mut gy = vec![0.0; n_out];
    let reset = if cfg.reset_grad { 1.0 } else { 0.0 };
    let kappa = dynamics.kappa;

    for s in (0..t_len).rev() {
        let row = s * n;
        for k in 0..n_out {
            gy[k] = cot.y[s * n_out + k] + kappa * gy_next[k];
        }
        for j in 0..n {
            let idx = row + j;
            let v = tape.v[idx];
            let thr = tape.thr[idx];
            let z = tape.z[idx];

            let mut gz = pending_gz[idx] + (1.0 - dynamics.rho[j]) * gb_next[j] - reset * thr * gv_next[j];
            if let Some(cz) = &cot.z {
                gz += cz[idx];
            }
            for (k, g) in gy.iter().enumerate() {
                gz += params.w_out[(k, j)] * g;
            }

            let psi = if tape.refractory[idx] {
                0.0
            } else {
                pseudo_derivative((v - thr) / thr, cfg.gamma)
            };

            let mut g_thr = gz * psi * (-v / (thr * thr)) - reset * z * gv_next[j];
            if let Some(ct) = &cot.thr {
                g_thr += ct[idx];
            }
            let gb = dynamics.beta[j] * g_thr + dynamics.rho[j] * gb_next[j];

            let mut gv = dynamics.alpha[j] * gv_next[j] + gz * psi / thr;
            if let Some(cv) = &cot.v {
                gv += cv[idx];
            }
            let gi = (1.0 - dynamics.alpha[j]) * gv;
            if !gi.is_finite() || !gb.is_finite() {
                return Err(Error::NonFiniteGradient { param: "membrane state", step: s });
            }
            g_current[idx] = gi;
            gv_next[j] = gv;
            gb_next[j] = gb;
        }
        gy_next.copy_from_slice(&gy);

        // readout weights
        for j in 0..n {
            if tape.z[row + j] != 0.0 {
                for k in 0..n_out {
                    if params.mask_out[(k, j)] {
                        grads.w_out[(k, j)] += gy[k] * tape.z[row + j];
                    }
                }
            }
        }

        // route current cotangents back to the spikes that caused them
        for (j, edges) in rec_rows.iter().enumerate() {
            let gi = g_current[row + j];
            if gi == 0.0 {
                continue;
            }
            for e in edges {
                let src = s as isize - 1 - e.delay as isize;
                if src >= 0 {
                    pending_gz[src as usize * n + e.pre as usize] += e.w * gi;
                }
            }
        }

        // weight gradients, attributed at the presynaptic event time
        for (i, col) in rec_cols.iter().enumerate() {
            if tape.z[row + i] == 0.0 {
                continue;
            }
            for &(j, d) in col {
                let t = s + 1 + d as usize;
                if t < t_len {
                    grads.w_rec[(j as usize, i)] += g_current[t * n + j as usize];
                }
            }
        }
        let x = tape.input(s);
        for (i, col) in in_cols.iter().enumerate() {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for &(j, d) in col {
                let t = s + d as usize;
                if t < t_len {
                    grads.w_in[(j as usize, i)] += xi * g_current[t * n + j as usize];
                }
            }
        }

        if let (Some(gs), Some(eps)) = (grads.noise_sigma.as_mut(), tape.noise(s)) {
            for j in 0..n {
                gs[j] += g_current[row + j] * eps[j];
            }
        }
    }

    if let Some(param) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient { param, step: 0 });
    }
    let init = InitialStateGrad {
        v: (0..n).map(|j| dynamics.alpha[j] * gv_next[j]).collect(),
        b: (0..n).map(|j| dynamics.rho[j] * gb_next[j]).collect(),
    };
    Ok((grads, init))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_derivative_shape() {
        assert_eq!(pseudo_derivative(1.0, 0.3), 0.0);
        assert_eq!(pseudo_derivative(-1.7, 0.3), 0.0);
        assert_eq!(pseudo_derivative(0.0, 0.3), 0.3);
        assert!((pseudo_derivative(-0.5, 0.4) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn gradient_mean_is_ordered_average() {
        let p = NetworkParams::new(1, 1, vec![crate::params::NeuronParams::regular(20.0, 0.01, 0.0)], 1.0, 20.0);
        let mut a = Gradients::zeros_like(&p);
        let mut b = Gradients::zeros_like(&p);
        a.w_in[(0, 0)] = 1.0;
        b.w_in[(0, 0)] = 3.0;
        assert_eq!(Gradients::mean([&a, &b]).unwrap().w_in[(0, 0)], 2.0);
        assert!(Gradients::mean(std::iter::empty::<&Gradients>()).is_none());
    }
}
