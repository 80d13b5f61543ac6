//! Discrete-time simulation of a recurrent network of (adaptive) LIF neurons.
//!
//! Index convention: step `s` consumes input `x[s]` and produces the
//! post-update membrane voltage `v[s]`, threshold deviation `b[s]`, spike
//! vector `z[s]` and readout `y[s]`. Per neuron `j` and step `s`:
//!
//! ```text
//! I[s]  = sum_i w_in[j,i] x[s - d_in[j,i]] + sum_i w_rec[j,i] z[s-1-d_rec[j,i]]
//! v[s]  = alpha v[s-1] + (1 - alpha) I[s] - B[s-1] z[s-1]
//! b[s]  = rho b[s-1] + (1 - rho) z[s-1]
//! B[s]  = b0 + beta b[s]
//! z[s]  = 1 if not refractory and v[s] >= B[s], else 0
//! y[s]  = kappa y[s-1] + w_out z[s]
//! ```
//!
//! All state at `s = -1` is zero (thresholds at baseline). A recurrent delay
//! of `d` therefore means a spike emitted at step `s` reaches the membrane at
//! step `s + 1 + d`.

use crate::error::{Error, Result};
use crate::params::NetworkParams;
use crate::tape::SimTape;
use crate::tensor::Matrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Per-neuron decay factors and constants, precomputed once per run.
#[derive(Clone, Debug)]
pub struct Dynamics {
    pub alpha: Vec<f64>,
    pub rho: Vec<f64>,
    pub beta: Vec<f64>,
    pub b0: Vec<f64>,
    pub refractory_steps: Vec<u32>,
    pub kappa: f64,
}

impl Dynamics {
    pub fn new(params: &NetworkParams) -> Self {
        let dt = params.dt;
        Self {
            alpha: params.neurons.iter().map(|n| n.alpha(dt)).collect(),
            rho: params.neurons.iter().map(|n| n.rho(dt)).collect(),
            beta: params.neurons.iter().map(|n| n.beta).collect(),
            b0: params.neurons.iter().map(|n| n.b0).collect(),
            refractory_steps: params.neurons.iter().map(|n| n.refractory_steps(dt)).collect(),
            kappa: params.kappa(),
        }
    }

    #[inline]
    pub fn threshold(&self, j: usize, b: f64) -> f64 {
        self.b0[j] + self.beta[j] * b
    }
}

/// Ring buffer of past inputs and recurrent spikes, deep enough for the
/// largest synaptic delay.
#[derive(Clone, Debug)]
pub struct SpikeHistory {
    depth: usize,
    n_in: usize,
    n_rec: usize,
    inputs: Vec<f64>,
    spikes: Vec<f64>,
}

impl SpikeHistory {
    pub fn new(n_in: usize, n_rec: usize, max_delay: u32) -> Self {
        let depth = max_delay as usize + 2;
        Self {
            depth,
            n_in,
            n_rec,
            inputs: vec![0.0; depth * n_in],
            spikes: vec![0.0; depth * n_rec],
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn push_input(&mut self, step: usize, x: &[f64]) {
        let slot = step % self.depth;
        self.inputs[slot * self.n_in..(slot + 1) * self.n_in].copy_from_slice(x);
    }

    pub fn push_spikes(&mut self, step: usize, z: &[f64]) {
        let slot = step % self.depth;
        self.spikes[slot * self.n_rec..(slot + 1) * self.n_rec].copy_from_slice(z);
    }

    /// Input vector of step `s`; zero before the start of the run.
    #[inline]
    fn input(&self, s: isize, i: usize) -> f64 {
        if s < 0 {
            return 0.0;
        }
        self.inputs[(s as usize % self.depth) * self.n_in + i]
    }

    #[inline]
    fn spike(&self, s: isize, i: usize) -> f64 {
        if s < 0 {
            return 0.0;
        }
        self.spikes[(s as usize % self.depth) * self.n_rec + i]
    }
}

/// Dynamic state of one network between two steps.
#[derive(Clone, Debug)]
pub struct NetworkState {
    pub v: Vec<f64>,
    pub b: Vec<f64>,
    pub z: Vec<f64>,
    pub refrac_count: Vec<u32>,
    pub y: Vec<f64>,
    pub history: SpikeHistory,
    /// Index of the next step to run.
    pub step: usize,
}

impl NetworkState {
    pub fn new(params: &NetworkParams) -> Self {
        let n = params.n_rec();
        Self {
            v: vec![0.0; n],
            b: vec![0.0; n],
            z: vec![0.0; n],
            refrac_count: vec![0; n],
            y: vec![0.0; params.n_out()],
            history: SpikeHistory::new(params.n_in(), n, params.max_delay()),
            step: 0,
        }
    }

    /// One full step through the gather-based reference path:
    /// current, membrane, readout, then history bookkeeping.
    pub fn advance(
        &mut self,
        params: &NetworkParams,
        dynamics: &Dynamics,
        input: &[f64],
        noise: Option<&[f64]>,
    ) -> Result<()> {
        let s = self.step;
        self.history.push_input(s, input);
        let mut current = synaptic_current(&self.history, params, s);
        if let (Some(eps), Some(sigma)) = (noise, params.noise_sigma.as_ref()) {
            for ((c, e), sg) in current.iter_mut().zip(eps).zip(sigma) {
                *c += sg * e;
            }
        }
        membrane_step(self, &current, dynamics)?;
        readout_step(&mut self.y, &self.z, params, dynamics.kappa);
        self.history.push_spikes(s, &self.z);
        self.step += 1;
        Ok(())
    }
}

/// Synaptic input current of every recurrent neuron at step `s`, summed
/// directly over all synapses. `history` must already hold `x[s]` and the
/// spikes up to step `s - 1`.
pub fn synaptic_current(history: &SpikeHistory, params: &NetworkParams, s: usize) -> Vec<f64> {
    let n = params.n_rec();
    let s = s as isize;
    let mut out = vec![0.0; n];
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..params.n_in() {
            if params.mask_in[(j, i)] {
                let x = history.input(s - params.d_in[(j, i)] as isize, i);
                acc += params.w_in[(j, i)] * x;
            }
        }
        for i in 0..n {
            if params.mask_rec[(j, i)] {
                let z = history.spike(s - 1 - params.d_rec[(j, i)] as isize, i);
                acc += params.w_rec[(j, i)] * z;
            }
        }
        *o = acc;
    }
    out
}

/// Membrane, threshold and spike update for one step. On return `state.v`,
/// `state.b` and `state.z` hold the values of the step just computed.
///
/// Returns the refractory flags of the step (`true` where spiking was
/// suppressed by refractoriness).
pub fn membrane_step(state: &mut NetworkState, current: &[f64], dynamics: &Dynamics) -> Result<Vec<bool>> {
    let mut refractory = vec![false; state.v.len()];
    membrane_step_into(state, current, dynamics, &mut refractory)?;
    Ok(refractory)
}

pub(crate) fn membrane_step_into(
    state: &mut NetworkState,
    current: &[f64],
    dynamics: &Dynamics,
    refractory: &mut [bool],
) -> Result<()> {
    for j in 0..state.v.len() {
        let z_prev = state.z[j];
        let b_prev = state.b[j];
        let thr_prev = dynamics.threshold(j, b_prev);
        let alpha = dynamics.alpha[j];
        let rho = dynamics.rho[j];

        let v = alpha * state.v[j] + (1.0 - alpha) * current[j] - thr_prev * z_prev;
        let b = rho * b_prev + (1.0 - rho) * z_prev;
        if !v.is_finite() {
            return Err(Error::Divergence { step: state.step, neuron: j, quantity: "V", value: v });
        }
        if !b.is_finite() {
            return Err(Error::Divergence { step: state.step, neuron: j, quantity: "b", value: b });
        }
        let thr = dynamics.threshold(j, b);

        let z = if state.refrac_count[j] > 0 {
            state.refrac_count[j] -= 1;
            refractory[j] = true;
            0.0
        } else {
            refractory[j] = false;
            if v >= thr {
                state.refrac_count[j] = dynamics.refractory_steps[j];
                1.0
            } else {
                0.0
            }
        };
        state.v[j] = v;
        state.b[j] = b;
        state.z[j] = z;
    }
    Ok(())
}

/// Leaky readout integration: `y <- kappa * y + w_out z`.
pub fn readout_step(y: &mut [f64], z: &[f64], params: &NetworkParams, kappa: f64) {
    for (k, yk) in y.iter_mut().enumerate() {
        let row = params.w_out.row(k);
        let mut acc = kappa * *yk;
        for (w, &zj) in row.iter().zip(z) {
            if zj != 0.0 {
                acc += w * zj;
            }
        }
        *yk = acc;
    }
}

#[derive(Clone, Copy, Debug)]
struct Synapse {
    post: u32,
    delay: u32,
    w: f64,
}

/// Event-driven simulator: presynaptic activity is scattered into a ring of
/// pending currents instead of gathering over every synapse each step.
pub struct Simulator<'a> {
    params: &'a NetworkParams,
    dynamics: Dynamics,
    fan_in: Vec<Vec<Synapse>>,
    fan_rec: Vec<Vec<Synapse>>,
    pending: Vec<f64>,
    depth: usize,
    state: NetworkState,
    current: Vec<f64>,
    refractory: Vec<bool>,
    tape: Option<SimTape>,
}

impl<'a> Simulator<'a> {
    pub fn new(params: &'a NetworkParams, record: bool) -> Result<Self> {
        params.validate()?;
        let n = params.n_rec();
        let fan_in = fanout(&params.w_in, params.mask_in.as_slice(), params.d_in.as_slice());
        let fan_rec = fanout(&params.w_rec, params.mask_rec.as_slice(), params.d_rec.as_slice());
        let depth = params.max_delay() as usize + 2;
        Ok(Self {
            params,
            dynamics: Dynamics::new(params),
            fan_in,
            fan_rec,
            pending: vec![0.0; depth * n],
            depth,
            state: NetworkState::new(params),
            current: vec![0.0; n],
            refractory: vec![false; n],
            tape: record.then(|| SimTape::new(params.n_in(), n, params.n_out(), params.noise_sigma.is_some())),
        })
    }

    /// Starts from a given adaptation state instead of rest.
    pub fn with_initial(mut self, v: &[f64], b: &[f64]) -> Self {
        self.state.v.copy_from_slice(v);
        self.state.b.copy_from_slice(b);
        if let Some(t) = self.tape.as_mut() {
            t.v_init = v.to_vec();
            t.b_init = b.to_vec();
        }
        self
    }

    pub fn params(&self) -> &NetworkParams {
        self.params
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    /// Runs one step. `noise` holds standard-normal draws (one per neuron)
    /// that are scaled by `noise_sigma`; it is ignored when the network has
    /// no current noise.
    pub fn step(&mut self, input: &[f64], noise: Option<&[f64]>) -> Result<()> {
        let n = self.params.n_rec();
        assert_eq!(input.len(), self.params.n_in(), "input width");
        let s = self.state.step;
        let slot = s % self.depth;

        for (i, &x) in input.iter().enumerate() {
            if x != 0.0 {
                for syn in &self.fan_in[i] {
                    let t = (s + syn.delay as usize) % self.depth;
                    self.pending[t * n + syn.post as usize] += syn.w * x;
                }
            }
        }
        let row = &mut self.pending[slot * n..(slot + 1) * n];
        self.current.copy_from_slice(row);
        row.iter_mut().for_each(|c| *c = 0.0);

        let noise = match (&self.params.noise_sigma, noise) {
            (Some(sigma), Some(eps)) => {
                assert_eq!(eps.len(), n, "noise width");
                for ((c, e), sg) in self.current.iter_mut().zip(eps).zip(sigma) {
                    *c += sg * e;
                }
                Some(eps)
            }
            _ => None,
        };

        membrane_step_into(&mut self.state, &self.current, &self.dynamics, &mut self.refractory)?;
        readout_step(&mut self.state.y, &self.state.z, self.params, self.dynamics.kappa);

        for i in 0..n {
            if self.state.z[i] != 0.0 {
                for syn in &self.fan_rec[i] {
                    let t = (s + 1 + syn.delay as usize) % self.depth;
                    self.pending[t * n + syn.post as usize] += syn.w;
                }
            }
        }

        if let Some(tape) = self.tape.as_mut() {
            let thr: Vec<f64> = (0..n).map(|j| self.dynamics.threshold(j, self.state.b[j])).collect();
            tape.push(input, &self.current, &self.state, &thr, &self.refractory, noise);
        }
        self.state.step += 1;
        Ok(())
    }

    pub fn spikes(&self) -> &[f64] {
        &self.state.z
    }

    pub fn readout(&self) -> &[f64] {
        &self.state.y
    }

    pub fn into_tape(self) -> Option<SimTape> {
        self.tape
    }
}

fn fanout(w: &Matrix, mask: &[bool], delays: &[u32]) -> Vec<Vec<Synapse>> {
    let (rows, cols) = w.shape();
    let mut out = vec![Vec::new(); cols];
    for j in 0..rows {
        for (i, list) in out.iter_mut().enumerate() {
            let k = j * cols + i;
            if mask[k] {
                list.push(Synapse { post: j as u32, delay: delays[k], w: w.as_slice()[k] });
            }
        }
    }
    out
}

/// Output of [`simulate`]. Rows are time steps.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub raster: Matrix,
    pub readout: Matrix,
    pub tape: Option<SimTape>,
}

/// Runs the network over an input sequence (`T x n_in`, rows are steps).
///
/// When the network carries `noise_sigma`, one standard-normal draw per
/// neuron and step is taken from `rng`.
pub fn simulate<R: Rng + ?Sized>(
    params: &NetworkParams,
    inputs: &Matrix,
    record: bool,
    rng: &mut R,
) -> Result<SimOutput> {
    if inputs.rows() == 0 {
        return Err(Error::Config("input sequence must have at least one step".into()));
    }
    if inputs.cols() != params.n_in() {
        return Err(Error::Shape {
            what: "inputs",
            expected: (inputs.rows(), params.n_in()),
            got: inputs.shape(),
        });
    }
    let (t_len, n, n_out) = (inputs.rows(), params.n_rec(), params.n_out());
    let mut sim = Simulator::new(params, record)?;
    let mut raster = Matrix::zeros(t_len, n);
    let mut readout = Matrix::zeros(t_len, n_out);
    let mut eps = vec![0.0; n];
    let noisy = params.noise_sigma.is_some();
    for s in 0..t_len {
        if noisy {
            eps.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
        }
        sim.step(inputs.row(s), noisy.then_some(eps.as_slice()))?;
        raster.as_mut_slice()[s * n..(s + 1) * n].copy_from_slice(sim.spikes());
        readout.as_mut_slice()[s * n_out..(s + 1) * n_out].copy_from_slice(sim.readout());
    }
    Ok(SimOutput { raster, readout, tape: sim.into_tape() })
}

/// Re-runs a recorded tape (same inputs, same noise draws) and checks that
/// the spike trains match exactly.
pub fn replay(params: &NetworkParams, tape: &SimTape) -> Result<SimTape> {
    let mut sim = Simulator::new(params, true)?.with_initial(&tape.v_init, &tape.b_init);
    for s in 0..tape.len() {
        sim.step(tape.input(s), tape.noise(s))?;
        if sim.spikes() != tape.z(s) {
            return Err(Error::ReplayMismatch { step: s });
        }
    }
    Ok(sim.into_tape().expect("recording enabled"))
}
