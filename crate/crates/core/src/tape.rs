//! Recorded forward trajectory, everything the backward pass needs.

use crate::snn::NetworkState;

/// Per-step record of one simulation. All traces are stored row-major with
/// one row per step.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTape {
    pub n_in: usize,
    pub n_rec: usize,
    pub n_out: usize,
    len: usize,
    pub inputs: Vec<f64>,
    pub current: Vec<f64>,
    pub v: Vec<f64>,
    pub b: Vec<f64>,
    pub thr: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub refractory: Vec<bool>,
    /// Standard-normal draws, present when the network had current noise.
    pub noise: Option<Vec<f64>>,
    pub v_init: Vec<f64>,
    pub b_init: Vec<f64>,
}

impl SimTape {
    pub fn new(n_in: usize, n_rec: usize, n_out: usize, noisy: bool) -> Self {
        Self {
            n_in,
            n_rec,
            n_out,
            len: 0,
            inputs: Vec::new(),
            current: Vec::new(),
            v: Vec::new(),
            b: Vec::new(),
            thr: Vec::new(),
            z: Vec::new(),
            y: Vec::new(),
            refractory: Vec::new(),
            noise: noisy.then(Vec::new),
            v_init: vec![0.0; n_rec],
            b_init: vec![0.0; n_rec],
        }
    }

    pub(crate) fn push(
        &mut self,
        input: &[f64],
        current: &[f64],
        state: &NetworkState,
        thr: &[f64],
        refractory: &[bool],
        noise: Option<&[f64]>,
    ) {
        self.inputs.extend_from_slice(input);
        self.current.extend_from_slice(current);
        self.v.extend_from_slice(&state.v);
        self.b.extend_from_slice(&state.b);
        self.thr.extend_from_slice(thr);
        self.z.extend_from_slice(&state.z);
        self.y.extend_from_slice(&state.y);
        self.refractory.extend_from_slice(refractory);
        if let Some(buf) = self.noise.as_mut() {
            match noise {
                Some(eps) => buf.extend_from_slice(eps),
                None => buf.extend(std::iter::repeat(0.0).take(self.n_rec)),
            }
        }
        self.len += 1;
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn input(&self, s: usize) -> &[f64] {
        &self.inputs[s * self.n_in..(s + 1) * self.n_in]
    }

    #[inline]
    pub fn z(&self, s: usize) -> &[f64] {
        &self.z[s * self.n_rec..(s + 1) * self.n_rec]
    }

    #[inline]
    pub fn y(&self, s: usize) -> &[f64] {
        &self.y[s * self.n_out..(s + 1) * self.n_out]
    }

    #[inline]
    pub fn noise(&self, s: usize) -> Option<&[f64]> {
        self.noise.as_ref().map(|n| &n[s * self.n_rec..(s + 1) * self.n_rec])
    }

    /// Total spike count per neuron over the whole tape.
    pub fn spike_counts(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n_rec];
        for row in self.z.chunks_exact(self.n_rec) {
            for (a, z) in c.iter_mut().zip(row) {
                *a += z;
            }
        }
        c
    }
}
