//! Batch gradients and parameter updates shared by the supervised tasks.

use crate::error::{Error, Result};
use crate::grad::{backprop, BackwardConfig, Cotangents, Gradients};
use crate::loss::{task_loss, LossSpec, RateRegularizer, Targets};
use crate::optim::{AdamConfig, AdamState, LrSchedule};
use crate::params::NetworkParams;
use crate::rewire::{adam_update, deepr_step, trainable_len, RewireConfig, RewireStats};
use crate::snn::simulate;
use crate::tape::SimTape;
use crate::tensor::Matrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    /// `T x n_in`, rows are steps.
    pub inputs: Matrix,
    pub targets: Targets,
}

#[derive(Clone, Debug)]
pub struct BatchOutcome {
    /// Mean task loss plus `rate_coeff * R`.
    pub loss: f64,
    pub task_loss: f64,
    pub rate_reg: f64,
    /// Mean gradient of `loss`.
    pub grads: Gradients,
    /// Mean firing rate over neurons and episodes, in Hz.
    pub mean_rate_hz: f64,
    pub readouts: Vec<Matrix>,
}

/// Simulates every episode, evaluates the batch loss and backpropagates it.
///
/// The task loss is averaged over episodes; the rate regularizer is computed
/// once from the spike counts of the whole batch. Episodes are processed in
/// order, so the result is a deterministic function of the rng state.
pub fn batch_gradient<R: Rng + ?Sized>(
    params: &NetworkParams,
    loss: &LossSpec,
    cfg: &BackwardConfig,
    episodes: &[Episode],
    rng: &mut R,
) -> Result<BatchOutcome> {
    loss.validate()?;
    if episodes.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let n = params.n_rec();
    let mut tapes: Vec<SimTape> = Vec::with_capacity(episodes.len());
    let mut counts = vec![0.0; n];
    let mut steps = 0;
    for ep in episodes {
        let out = simulate(params, &ep.inputs, true, rng)?;
        let tape = out.tape.expect("recording enabled");
        for (c, k) in counts.iter_mut().zip(tape.spike_counts()) {
            *c += k;
        }
        steps += tape.len();
        tapes.push(tape);
    }
    let reg = RateRegularizer { target_hz: loss.rate_target_hz, unit: loss.rate_unit };
    let (rate_reg, dz) = reg.evaluate(&counts, steps, params.dt);
    let dz: Vec<f64> = dz.iter().map(|g| g * loss.rate_coeff).collect();

    let b = episodes.len() as f64;
    let mut grads = Gradients::zeros_like(params);
    let mut task_total = 0.0;
    let mut readouts = Vec::with_capacity(episodes.len());
    for (tape, ep) in tapes.iter().zip(episodes) {
        let (value, mut dy) = task_loss(tape, loss, &ep.targets)?;
        task_total += value;
        dy.scale(1.0 / b);
        let mut cot = Cotangents::from_readout(dy);
        if loss.rate_coeff > 0.0 {
            cot.add_constant_spike_cotangent(tape.len(), &dz);
        }
        let (g, _) = backprop(tape, params, &cot, cfg)?;
        grads.add_scaled(&g, 1.0);
        readouts.push(Matrix::from_vec(tape.len(), tape.n_out, tape.y.clone()));
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient { param: name, step: 0 });
    }
    let task_loss = task_total / b;
    let mean_rate_hz = counts.iter().sum::<f64>() / (n.max(1) as f64 * steps as f64) * 1000.0 / params.dt;
    Ok(BatchOutcome {
        loss: task_loss + loss.rate_coeff * rate_reg,
        task_loss,
        rate_reg,
        grads,
        mean_rate_hz,
        readouts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub adam: AdamConfig,
    pub schedule: LrSchedule,
    pub rewire: Option<RewireConfig>,
}

/// Adam state, learning-rate schedule and optional DEEP R rewiring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub spec: OptimizerSpec,
    pub adam: AdamState,
    pub iteration: u64,
}

impl Trainer {
    pub fn new(spec: OptimizerSpec, params: &NetworkParams) -> Result<Self> {
        spec.adam.validate()?;
        spec.schedule.validate()?;
        if let Some(r) = &spec.rewire {
            r.validate()?;
            if !params.is_dale() {
                return Err(Error::Config("rewiring needs a sign-constrained network".into()));
            }
        }
        let adam = AdamState::new(spec.adam, trainable_len(params));
        Ok(Self { spec, adam, iteration: 0 })
    }

    pub fn lr(&self) -> f64 {
        self.spec.schedule.lr_at(self.iteration)
    }

    /// Applies one update and advances the iteration counter.
    pub fn apply<R: Rng + ?Sized>(
        &mut self,
        params: &mut NetworkParams,
        grads: &Gradients,
        rng: &mut R,
    ) -> Result<Option<RewireStats>> {
        let lr = self.lr();
        let stats = match &self.spec.rewire {
            Some(cfg) => Some(deepr_step(params, &mut self.adam, grads, cfg, lr, rng)?),
            None => {
                adam_update(params, &mut self.adam, grads, lr)?;
                None
            }
        };
        self.iteration += 1;
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{InitScheme, InitSpec, NetworkSpec, TimeConstant};
    use crate::loss::{LossKind, RateUnit};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(scheme: InitScheme) -> NetworkSpec {
        NetworkSpec {
            n_in: 4,
            n_regular: 6,
            n_adaptive: 4,
            n_out: 2,
            dt: 1.0,
            tau_m: TimeConstant::Fixed(20.0),
            tau_a: TimeConstant::Fixed(200.0),
            beta: 1.0,
            b0: 0.01,
            refractory: 2.0,
            tau_out: None,
            delay_in: [0, 0],
            delay_rec: [0, 0],
            init: InitSpec { scheme, w0: 1.0, frac_excitatory: 0.8, connectivity: 0.5 },
            input_frac_excitatory: 0.8,
            noise_sigma: None,
        }
    }

    fn batch(rng: &mut ChaCha8Rng) -> Vec<Episode> {
        (0..3)
            .map(|k| Episode {
                inputs: Matrix::from_fn(30, 4, |_, _| if rng.gen::<f64>() < 0.2 { 1.0 } else { 0.0 }),
                targets: Targets::Label(k % 2),
            })
            .collect()
    }

    #[test]
    fn training_reduces_loss_on_a_fixed_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = spec(InitScheme::Gaussian).build(&mut rng).unwrap();
        let eps = batch(&mut rng);
        let loss = LossSpec {
            kind: LossKind::CrossEntropyAvg,
            window: 10,
            rate_target_hz: 10.0,
            rate_coeff: 0.0,
            rate_unit: RateUnit::PerMs,
        };
        let opt = OptimizerSpec { adam: AdamConfig::default(), schedule: LrSchedule::constant(0.01), rewire: None };
        let mut trainer = Trainer::new(opt, &params).unwrap();
        let first = batch_gradient(&params, &loss, &BackwardConfig::default(), &eps, &mut rng).unwrap().loss;
        let mut last = first;
        for _ in 0..60 {
            let out = batch_gradient(&params, &loss, &BackwardConfig::default(), &eps, &mut rng).unwrap();
            last = out.loss;
            trainer.apply(&mut params, &out.grads, &mut rng).unwrap();
        }
        assert!(last < first, "{first} -> {last}");
        assert_eq!(trainer.iteration, 60);
    }

    #[test]
    fn rewiring_keeps_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = spec(InitScheme::Dale).build(&mut rng).unwrap();
        let counts = (
            params.mask_in.count_active(),
            params.mask_rec.count_active(),
            params.mask_out.count_active(),
        );
        let eps = batch(&mut rng);
        let loss = LossSpec {
            kind: LossKind::CrossEntropyAvg,
            window: 10,
            rate_target_hz: 10.0,
            rate_coeff: 0.1,
            rate_unit: RateUnit::PerMs,
        };
        let opt = OptimizerSpec {
            adam: AdamConfig::default(),
            schedule: LrSchedule::constant(0.05),
            rewire: Some(RewireConfig { target_connectivity: 0.5, ..RewireConfig::default() }),
        };
        let mut trainer = Trainer::new(opt, &params).unwrap();
        for _ in 0..30 {
            let out = batch_gradient(&params, &loss, &BackwardConfig::default(), &eps, &mut rng).unwrap();
            trainer.apply(&mut params, &out.grads, &mut rng).unwrap();
            params.validate().unwrap();
        }
        assert_eq!(
            counts,
            (params.mask_in.count_active(), params.mask_rec.count_active(), params.mask_out.count_active())
        );
    }
}
