//! DEEP R: sign-preserving updates under a fixed number of active synapses.
//!
//! An active synapse whose update would carry it across zero (against the
//! sign of its presynaptic neuron) becomes dormant and is set to exactly 0.
//! For every such event a dormant synapse, drawn uniformly, is reactivated
//! at magnitude 0, so the active count never changes.

use crate::error::{Error, Result};
use crate::grad::Gradients;
use crate::optim::AdamState;
use crate::params::NetworkParams;
use crate::tensor::{Mask, Matrix};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Which pool a reconnected synapse is drawn from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewireScope {
    /// Each weight matrix keeps its own active count.
    #[default]
    PerMatrix,
    /// Only the total count over all matrices is conserved.
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewireConfig {
    pub l1_coeff: f64,
    pub temperature: f64,
    pub target_connectivity: f64,
    #[serde(default)]
    pub scope: RewireScope,
}

impl Default for RewireConfig {
    fn default() -> Self {
        Self {
            l1_coeff: 0.01,
            temperature: 0.0,
            target_connectivity: 0.12,
            scope: RewireScope::PerMatrix,
        }
    }
}

impl RewireConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l1_coeff >= 0.0
            && self.temperature >= 0.0
            && self.target_connectivity > 0.0
            && self.target_connectivity <= 1.0
        {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid rewiring settings {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RewireStats {
    pub disconnected: usize,
    pub reconnected: usize,
}

/// Flattened trainable parameters in the order `w_in, w_rec, w_out,
/// noise_sigma`.
pub fn flat_params(p: &NetworkParams) -> Vec<f64> {
    let mut out = Vec::new();
    out.extend_from_slice(p.w_in.as_slice());
    out.extend_from_slice(p.w_rec.as_slice());
    out.extend_from_slice(p.w_out.as_slice());
    if let Some(s) = &p.noise_sigma {
        out.extend_from_slice(s);
    }
    out
}

/// Active flags matching [`flat_params`]; noise parameters are always active.
pub fn flat_active(p: &NetworkParams) -> Vec<bool> {
    let mut out = Vec::new();
    out.extend_from_slice(p.mask_in.as_slice());
    out.extend_from_slice(p.mask_rec.as_slice());
    out.extend_from_slice(p.mask_out.as_slice());
    if let Some(s) = &p.noise_sigma {
        out.extend(std::iter::repeat(true).take(s.len()));
    }
    out
}

pub fn trainable_len(p: &NetworkParams) -> usize {
    p.w_in.as_slice().len()
        + p.w_rec.as_slice().len()
        + p.w_out.as_slice().len()
        + p.noise_sigma.as_ref().map_or(0, |s| s.len())
}

/// Plain masked Adam step on all trainable parameters (no rewiring).
pub fn adam_update(params: &mut NetworkParams, adam: &mut AdamState, grads: &Gradients, lr: f64) -> Result<()> {
    let flat = flat_params(params);
    let active = flat_active(params);
    let d = adam.deltas(&flat, &grads.to_flat(), Some(&active), lr)?;
    let mut off = 0;
    for w in [&mut params.w_in, &mut params.w_rec, &mut params.w_out] {
        let len = w.as_slice().len();
        for (x, dx) in w.as_mut_slice().iter_mut().zip(&d[off..off + len]) {
            *x += dx;
        }
        off += len;
    }
    if let Some(s) = params.noise_sigma.as_mut() {
        for (x, dx) in s.iter_mut().zip(&d[off..]) {
            *x += dx;
        }
    }
    Ok(())
}

struct Block<'a> {
    w: &'a mut Matrix,
    mask: &'a mut Mask,
    signs: &'a [f64],
    offset: usize,
    no_self: bool,
}

impl Block<'_> {
    fn sign_of(&self, k: usize) -> f64 {
        self.signs[k % self.w.cols()]
    }

    fn dormant(&self) -> Vec<usize> {
        let cols = self.w.cols();
        (0..self.mask.as_slice().len())
            .filter(|&k| !self.mask.as_slice()[k] && !(self.no_self && k / cols == k % cols))
            .collect()
    }

    fn activate(&mut self, k: usize, adam: &mut AdamState) {
        self.mask.as_mut_slice()[k] = true;
        self.w.as_mut_slice()[k] = 0.0;
        adam.reset_coordinate(self.offset + k);
    }
}

/// One Adam step followed by the DEEP R sign test and reconnection.
///
/// Requires Dale signs (`signs_in` and `signs_rec`). The L1 shrinkage
/// `lr * l1_coeff * sign` and, for positive temperature, Gaussian noise of
/// variance `2 * lr * temperature` act on the post-Adam candidate value.
pub fn deepr_step<R: Rng + ?Sized>(
    params: &mut NetworkParams,
    adam: &mut AdamState,
    grads: &Gradients,
    cfg: &RewireConfig,
    lr: f64,
    rng: &mut R,
) -> Result<RewireStats> {
    cfg.validate()?;
    let (Some(signs_in), Some(signs_rec)) = (params.signs_in.clone(), params.signs_rec.clone()) else {
        return Err(Error::Rewire("rewiring needs presynaptic signs for inputs and recurrent neurons".into()));
    };
    let flat = flat_params(params);
    let active = flat_active(params);
    let deltas = adam.deltas(&flat, &grads.to_flat(), Some(&active), lr)?;
    let noise_std = (2.0 * lr * cfg.temperature).sqrt();

    let len_in = params.w_in.as_slice().len();
    let len_rec = params.w_rec.as_slice().len();
    let len_out = params.w_out.as_slice().len();
    let mut blocks = [
        Block { w: &mut params.w_in, mask: &mut params.mask_in, signs: &signs_in, offset: 0, no_self: false },
        Block { w: &mut params.w_rec, mask: &mut params.mask_rec, signs: &signs_rec, offset: len_in, no_self: true },
        Block {
            w: &mut params.w_out,
            mask: &mut params.mask_out,
            signs: &signs_rec,
            offset: len_in + len_rec,
            no_self: false,
        },
    ];

    let mut stats = RewireStats::default();
    let mut lost = [0usize; 3];
    for (b, block) in blocks.iter_mut().enumerate() {
        for k in 0..block.w.as_slice().len() {
            if !block.mask.as_slice()[k] {
                continue;
            }
            let sign = block.sign_of(k);
            let mut cand = block.w.as_slice()[k] + deltas[block.offset + k] - lr * cfg.l1_coeff * sign;
            if noise_std > 0.0 {
                let g: f64 = rng.sample(StandardNormal);
                cand += noise_std * g;
            }
            if cand * sign < 0.0 {
                block.w.as_mut_slice()[k] = 0.0;
                block.mask.as_mut_slice()[k] = false;
                lost[b] += 1;
                stats.disconnected += 1;
            } else {
                block.w.as_mut_slice()[k] = cand;
            }
        }
    }

    match cfg.scope {
        RewireScope::PerMatrix => {
            for (b, block) in blocks.iter_mut().enumerate() {
                if lost[b] == 0 {
                    continue;
                }
                let pool = block.dormant();
                if pool.len() < lost[b] {
                    return Err(Error::Rewire(format!(
                        "{} dormant coordinates available for {} reconnections",
                        pool.len(),
                        lost[b]
                    )));
                }
                for idx in sample(rng, pool.len(), lost[b]).iter() {
                    block.activate(pool[idx], adam);
                    stats.reconnected += 1;
                }
            }
        }
        RewireScope::Global => {
            let total: usize = lost.iter().sum();
            if total > 0 {
                let pool: Vec<(usize, usize)> = blocks
                    .iter()
                    .enumerate()
                    .flat_map(|(b, block)| block.dormant().into_iter().map(move |k| (b, k)))
                    .collect();
                if pool.len() < total {
                    return Err(Error::Rewire(format!(
                        "{} dormant coordinates available for {total} reconnections",
                        pool.len()
                    )));
                }
                for idx in sample(rng, pool.len(), total).iter() {
                    let (b, k) = pool[idx];
                    blocks[b].activate(k, adam);
                    stats.reconnected += 1;
                }
            }
        }
    }

    if let Some(s) = params.noise_sigma.as_mut() {
        let off = len_in + len_rec + len_out;
        for (x, dx) in s.iter_mut().zip(&deltas[off..]) {
            *x += dx;
        }
    }
    Ok(stats)
}
