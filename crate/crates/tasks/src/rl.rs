//! Meta reinforcement learning: navigation to a hidden goal in a circular
//! arena, Gaussian policy and value heads on the readouts, and PPO.

use crate::error::{Result, TaskError};
use crate::harness::{MetricRow, Observer, TrainState};
use lsnn_core::encode::{encode_gaussian_tuning, encode_reward_pulse, TuningCurveSpec, REWARD_GROUP};
use lsnn_core::grad::{backprop, BackwardConfig, Cotangents, Gradients};
use lsnn_core::init::NetworkSpec;
use lsnn_core::loss::RateRegularizer;
use lsnn_core::{NetworkParams, OptimizerSpec, RateUnit, SimTape, Simulator};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArenaConfig {
    pub arena_radius: f64,
    pub goal_radius: f64,
    /// Goal centers lie on the circle of this radius (0: always the center).
    pub goal_center_radius: f64,
    /// Maximal displacement per step.
    pub a_scale: f64,
    pub goal_reward: f64,
    pub wall_penalty: f64,
    pub episode_steps: usize,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            arena_radius: 1.0,
            goal_radius: 0.3,
            goal_center_radius: 0.85,
            a_scale: 0.02,
            goal_reward: 1.0,
            wall_penalty: -0.02,
            episode_steps: 2000,
        }
    }
}

impl ArenaConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.arena_radius > 0.0
            && self.goal_radius > 0.0
            && self.goal_center_radius >= 0.0
            && self.goal_center_radius - self.goal_radius < self.arena_radius
            && self.a_scale > 0.0
            && self.episode_steps > 0;
        if ok {
            Ok(())
        } else {
            Err(TaskError::Config(format!("invalid arena {self:?}")))
        }
    }
}

fn norm(p: [f64; 2]) -> f64 {
    (p[0] * p[0] + p[1] * p[1]).sqrt()
}

/// Uniform sample from the disc of the given radius.
pub fn uniform_in_disc<R: Rng + ?Sized>(radius: f64, rng: &mut R) -> [f64; 2] {
    let r = radius * rng.gen::<f64>().sqrt();
    let a = rng.gen_range(0.0..2.0 * PI);
    [r * a.cos(), r * a.sin()]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub pos: [f64; 2],
    pub reward: f64,
    pub goal_reached: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Arena {
    pub config: ArenaConfig,
    pub goal: [f64; 2],
    pub pos: [f64; 2],
}

impl Arena {
    /// New goal (fixed for the episode) and a uniform start position.
    pub fn reset<R: Rng + ?Sized>(config: &ArenaConfig, rng: &mut R) -> Self {
        let a = rng.gen_range(0.0..2.0 * PI);
        let goal = [config.goal_center_radius * a.cos(), config.goal_center_radius * a.sin()];
        let pos = uniform_in_disc(config.arena_radius, rng);
        Self { config: config.clone(), goal, pos }
    }

    pub fn in_goal(&self, p: [f64; 2]) -> bool {
        norm([p[0] - self.goal[0], p[1] - self.goal[1]]) <= self.config.goal_radius
    }

    /// Moves by `velocity`. Leaving the arena stops the agent where the
    /// segment meets the wall and costs the wall penalty. Landing in the goal
    /// pays the goal reward and respawns the agent uniformly in the arena.
    pub fn step<R: Rng + ?Sized>(&mut self, velocity: [f64; 2], rng: &mut R) -> StepResult {
        let r = self.config.arena_radius;
        let mut next = [self.pos[0] + velocity[0], self.pos[1] + velocity[1]];
        let mut reward = 0.0;
        if norm(next) > r {
            // solve |pos + s v| = r for s in [0, 1]
            let (p, v) = (self.pos, velocity);
            let a = v[0] * v[0] + v[1] * v[1];
            let b = 2.0 * (p[0] * v[0] + p[1] * v[1]);
            let c = p[0] * p[0] + p[1] * p[1] - r * r;
            let s = ((-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a)).clamp(0.0, 1.0);
            next = [p[0] + s * v[0], p[1] + s * v[1]];
            let n = norm(next);
            if n > r {
                next = [next[0] * r / n, next[1] * r / n];
            }
            reward += self.config.wall_penalty;
        }
        let goal_reached = self.in_goal(next);
        if goal_reached {
            reward += self.config.goal_reward;
            next = uniform_in_disc(r, rng);
        }
        self.pos = next;
        StepResult { pos: next, reward, goal_reached }
    }
}

/// How the third and fourth readouts parametrize the action noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceReading {
    /// `sigmoid(y)` is the variance.
    #[default]
    Variance,
    /// `sigmoid(y)` is the standard deviation.
    StdDev,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Means and variances of the two action components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyHead {
    pub mean: [f64; 2],
    pub var: [f64; 2],
}

impl PolicyHead {
    pub fn from_readout(y: &[f64], reading: VarianceReading) -> Self {
        let var = |u: f64| match reading {
            VarianceReading::Variance => sigmoid(u),
            VarianceReading::StdDev => sigmoid(u).powi(2),
        };
        Self { mean: [y[0].tanh(), y[1].tanh()], var: [var(y[2]), var(y[3])] }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        [self.mean[0] + self.var[0].sqrt() * e0, self.mean[1] + self.var[1].sqrt() * e1]
    }
}

/// Scales an action to a velocity, clipping its norm to `a_scale`.
pub fn action_to_velocity(action: [f64; 2], a_scale: f64) -> [f64; 2] {
    let v = [a_scale * action[0], a_scale * action[1]];
    let n = norm(v);
    if n > a_scale {
        [v[0] * a_scale / n, v[1] * a_scale / n]
    } else {
        v
    }
}

/// Samples an action from the readouts and returns `(velocity, action)`;
/// the action is the unclipped Gaussian sample.
pub fn decode_action<R: Rng + ?Sized>(
    y: &[f64],
    reading: VarianceReading,
    a_scale: f64,
    rng: &mut R,
) -> ([f64; 2], [f64; 2]) {
    let action = PolicyHead::from_readout(y, reading).sample(rng);
    (action_to_velocity(action, a_scale), action)
}

/// Log density of a diagonal Gaussian at `action` and its entropy.
pub fn gaussian_logp_entropy(action: [f64; 2], mean: [f64; 2], var: [f64; 2]) -> (f64, f64) {
    let mut logp = 0.0;
    let mut entropy = 0.0;
    for d in 0..2 {
        logp += -0.5 * (2.0 * PI * var[d]).ln() - (action[d] - mean[d]).powi(2) / (2.0 * var[d]);
        entropy += 0.5 * (2.0 * PI * std::f64::consts::E * var[d]).ln();
    }
    (logp, entropy)
}

/// `R(t) = sum_{t' > t} eta^(t' - t) r(t')`.
pub fn discounted_returns(rewards: &[f64], eta: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    for t in (0..rewards.len().saturating_sub(1)).rev() {
        out[t] = eta * (rewards[t + 1] + out[t + 1]);
    }
    out
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn ppo_clip(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Derivative of [`ppo_clip`] with respect to the log-probability of the
/// new policy.
fn ppo_clip_dlogp(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if ratio * advantage <= clipped {
        ratio * advantage
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub discount: f64,
    pub value_coeff: f64,
    pub entropy_coeff: f64,
    pub rate_coeff: f64,
    pub rate_target_hz: f64,
    #[serde(default = "per_ms")]
    pub rate_unit: RateUnit,
    pub episodes_per_iteration: usize,
    /// Pseudo-derivative dampening.
    pub gamma: f64,
    #[serde(default)]
    pub variance: VarianceReading,
}

fn per_ms() -> RateUnit {
    RateUnit::PerMs
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            discount: 0.99,
            value_coeff: 1.0,
            entropy_coeff: 0.001,
            rate_coeff: 100.0,
            rate_target_hz: 10.0,
            rate_unit: RateUnit::PerMs,
            episodes_per_iteration: 10,
            gamma: 0.3,
            variance: VarianceReading::Variance,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.clip_eps > 0.0
            && self.clip_eps < 1.0
            && self.discount > 0.0
            && self.discount <= 1.0
            && self.value_coeff >= 0.0
            && self.entropy_coeff >= 0.0
            && self.rate_coeff >= 0.0
            && self.rate_target_hz >= 0.0
            && self.episodes_per_iteration > 0
            && (0.0..=1.0).contains(&self.gamma);
        if ok {
            Ok(())
        } else {
            Err(TaskError::Config(format!("invalid PPO settings {self:?}")))
        }
    }
}

/// Input layout: tuning curves for x, tuning curves for y, reward pulse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationEncoding {
    pub neurons_per_coordinate: usize,
}

impl Default for ObservationEncoding {
    fn default() -> Self {
        Self { neurons_per_coordinate: 40 }
    }
}

impl ObservationEncoding {
    pub fn n_inputs(&self) -> usize {
        2 * self.neurons_per_coordinate + 2 * REWARD_GROUP
    }

    pub fn encode<R: Rng + ?Sized>(&self, spec: &TuningCurveSpec, pos: [f64; 2], reward: f64, rng: &mut R) -> Vec<f64> {
        let mut out = encode_gaussian_tuning(pos[0], spec, rng);
        out.extend(encode_gaussian_tuning(pos[1], spec, rng));
        out.extend(encode_reward_pulse(reward));
        out
    }
}

/// One episode under fixed parameters. `rewards[t]` is the reward received
/// at step `t`, caused by the action of step `t - 1` (`rewards[0] = 0`); it
/// is also what the reward input of step `t` encodes.
#[derive(Clone, Debug)]
pub struct Rollout {
    /// Inputs, noise draws, spikes and readouts of every step.
    pub tape: SimTape,
    pub actions: Vec<[f64; 2]>,
    pub logp: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub positions: Vec<[f64; 2]>,
    pub goals: usize,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Runs one episode in a fresh arena.
pub fn rollout<R: Rng + ?Sized>(
    params: &NetworkParams,
    arena: &ArenaConfig,
    obs: &ObservationEncoding,
    reading: VarianceReading,
    rng: &mut R,
) -> Result<Rollout> {
    let spec = TuningCurveSpec::rl(obs.neurons_per_coordinate, params.dt)?;
    let mut env = Arena::reset(arena, rng);
    let mut sim = Simulator::new(params, true)?;
    let n = params.n_rec();
    let t_len = arena.episode_steps;
    let mut out = Rollout {
        tape: SimTape::new(params.n_in(), n, params.n_out(), false),
        actions: Vec::with_capacity(t_len),
        logp: Vec::with_capacity(t_len),
        values: Vec::with_capacity(t_len),
        rewards: Vec::with_capacity(t_len),
        positions: Vec::with_capacity(t_len),
        goals: 0,
    };
    let mut reward = 0.0;
    let mut eps = vec![0.0; n];
    let noisy = params.noise_sigma.is_some();
    for _ in 0..t_len {
        out.positions.push(env.pos);
        out.rewards.push(reward);
        let x = obs.encode(&spec, env.pos, reward, rng);
        if noisy {
            eps.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
        }
        sim.step(&x, noisy.then_some(eps.as_slice()))?;
        let y = sim.readout();
        let head = PolicyHead::from_readout(y, reading);
        let action = head.sample(rng);
        out.logp.push(gaussian_logp_entropy(action, head.mean, head.var).0);
        out.values.push(y[4]);
        out.actions.push(action);
        let res = env.step(action_to_velocity(action, arena.a_scale), rng);
        out.goals += res.goal_reached as usize;
        reward = res.reward;
    }
    out.tape = sim.into_tape().expect("recording enabled");
    Ok(out)
}

/// Re-runs the network on the stored inputs and noise draws.
pub fn resimulate(params: &NetworkParams, tape: &SimTape) -> Result<SimTape> {
    let mut sim = Simulator::new(params, true)?;
    for s in 0..tape.len() {
        sim.step(tape.input(s), tape.noise(s))?;
    }
    Ok(sim.into_tape().expect("recording enabled"))
}

/// Loss decomposition; `surrogate` is the mean clipped objective and
/// `advantage` the mean advantage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpoLoss {
    pub total: f64,
    pub surrogate: f64,
    pub value: f64,
    pub entropy: f64,
    pub rate_reg: f64,
    pub advantage: f64,
}

/// PPO loss of `params` on rollouts generated under the old parameters,
/// and its gradient.
///
/// `L = -mean(O - mu_v (R - V)^2) - mu_e mean(H) + mu_f R_rate`, with
/// `A = R - V_old`. Trajectories are re-simulated from the stored inputs and
/// noise; when `expect_identical` is set any difference from the stored
/// spikes or readouts is an error.
pub fn ppo_loss(
    params: &NetworkParams,
    rollouts: &[Rollout],
    cfg: &PpoConfig,
    expect_identical: bool,
) -> Result<(PpoLoss, Gradients)> {
    cfg.validate()?;
    if rollouts.is_empty() {
        return Err(TaskError::Config("no rollouts".into()));
    }
    let n = params.n_rec();
    let mut tapes = Vec::with_capacity(rollouts.len());
    let mut counts = vec![0.0; n];
    let mut steps = 0;
    for ro in rollouts {
        let tape = resimulate(params, &ro.tape)?;
        if expect_identical {
            if let Some(s) = (0..tape.len()).find(|&s| tape.z(s) != ro.tape.z(s) || tape.y(s) != ro.tape.y(s)) {
                return Err(lsnn_core::Error::ReplayMismatch { step: s }.into());
            }
        }
        for (c, k) in counts.iter_mut().zip(tape.spike_counts()) {
            *c += k;
        }
        steps += tape.len();
        tapes.push(tape);
    }
    let reg = RateRegularizer { target_hz: cfg.rate_target_hz, unit: cfg.rate_unit };
    let (rate_reg, dz) = reg.evaluate(&counts, steps, params.dt);
    let dz: Vec<f64> = dz.iter().map(|g| g * cfg.rate_coeff).collect();

    let norm = 1.0 / steps as f64;
    let mut parts = PpoLoss { rate_reg, ..Default::default() };
    let mut grads = Gradients::zeros_like(params);
    let n_out = params.n_out();
    for (ro, tape) in rollouts.iter().zip(&tapes) {
        let returns = discounted_returns(&ro.rewards, cfg.discount);
        let mut cot = Cotangents::zeros(tape);
        for t in 0..tape.len() {
            let y = tape.y(t);
            let head = PolicyHead::from_readout(y, cfg.variance);
            let a = ro.actions[t];
            let (logp, entropy) = gaussian_logp_entropy(a, head.mean, head.var);
            let adv = returns[t] - ro.values[t];
            let ratio = (logp - ro.logp[t]).exp();
            let v = y[4];
            parts.surrogate += ppo_clip(ratio, adv, cfg.clip_eps) * norm;
            parts.advantage += adv * norm;
            parts.value += (returns[t] - v).powi(2) * norm;
            parts.entropy += entropy * norm;

            let g_logp = -norm * ppo_clip_dlogp(ratio, adv, cfg.clip_eps);
            let g = &mut cot.y[t * n_out..(t + 1) * n_out];
            for d in 0..2 {
                let (m, var) = (head.mean[d], head.var[d]);
                let diff = a[d] - m;
                g[d] = g_logp * diff / var * (1.0 - m * m);
                let dvar = g_logp * (-0.5 / var + 0.5 * diff * diff / (var * var)) - cfg.entropy_coeff * norm * 0.5 / var;
                let s = sigmoid(y[d + 2]);
                let dvar_dy = match cfg.variance {
                    VarianceReading::Variance => s * (1.0 - s),
                    VarianceReading::StdDev => 2.0 * s * s * (1.0 - s),
                };
                g[d + 2] = dvar * dvar_dy;
            }
            g[4] = -2.0 * cfg.value_coeff * norm * (returns[t] - v);
        }
        if cfg.rate_coeff > 0.0 {
            cot.add_constant_spike_cotangent(tape.len(), &dz);
        }
        let (g, _) = backprop(tape, params, &cot, &BackwardConfig { gamma: cfg.gamma, reset_grad: true })?;
        grads.add_scaled(&g, 1.0);
    }
    parts.total = -parts.surrogate + cfg.value_coeff * parts.value - cfg.entropy_coeff * parts.entropy
        + cfg.rate_coeff * rate_reg;
    Ok((parts, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaRlConfig {
    pub arena: ArenaConfig,
    pub ppo: PpoConfig,
    #[serde(default)]
    pub observation: ObservationEncoding,
    pub network: NetworkSpec,
    pub optimizer: OptimizerSpec,
    pub iterations: u64,
}

impl MetaRlConfig {
    pub fn validate(&self) -> Result<()> {
        self.arena.validate()?;
        self.ppo.validate()?;
        self.network.validate()?;
        if self.network.n_in != self.observation.n_inputs() {
            return Err(TaskError::Config(format!(
                "network.n_in is {} but observations have {} channels",
                self.network.n_in,
                self.observation.n_inputs()
            )));
        }
        if self.network.n_out != 5 {
            return Err(TaskError::Config("network.n_out must be 5 (two means, two variances, value)".into()));
        }
        Ok(())
    }
}

/// Per-iteration statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationStats {
    pub iteration: u64,
    pub loss: PpoLoss,
    pub mean_goals: f64,
    pub mean_reward: f64,
}

/// PPO training: every iteration collects `K` rollouts under the current
/// parameters and takes exactly one optimizer step on the PPO loss. The
/// metric row reports the loss, the rate term and, in the accuracy column,
/// the mean number of goals per episode. `on_rollouts` sees every batch of
/// rollouts (e.g. for trajectory export).
pub fn train_meta_rl(
    cfg: &MetaRlConfig,
    state: &mut TrainState,
    observer: &mut Observer<'_>,
    on_rollouts: &mut dyn FnMut(u64, &[Rollout]) -> Result<()>,
) -> Result<Vec<IterationStats>> {
    cfg.validate()?;
    let mut stats = Vec::new();
    while state.iteration() < cfg.iterations {
        let it = state.iteration();
        let rollouts = (0..cfg.ppo.episodes_per_iteration)
            .map(|_| rollout(&state.params, &cfg.arena, &cfg.observation, cfg.ppo.variance, &mut state.rng))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| match e {
                TaskError::Core(source) => TaskError::Diverged { iteration: it, source },
                other => other,
            })?;
        on_rollouts(it, &rollouts)?;
        let (loss, grads) = ppo_loss(&state.params, &rollouts, &cfg.ppo, true)?;
        let backup = (state.params.clone(), state.trainer.clone());
        if let Err(source) = state.trainer.apply(&mut state.params, &grads, &mut state.rng) {
            (state.params, state.trainer) = backup;
            return Err(TaskError::Diverged { iteration: it, source });
        }
        let k = rollouts.len() as f64;
        let s = IterationStats {
            iteration: state.iteration(),
            loss,
            mean_goals: rollouts.iter().map(|r| r.goals as f64).sum::<f64>() / k,
            mean_reward: rollouts.iter().map(Rollout::total_reward).sum::<f64>() / k,
        };
        let mut row = MetricRow::new(s.iteration);
        row.loss = loss.total;
        row.rate_reg = loss.rate_reg;
        row.accuracy = s.mean_goals;
        log::info!("iteration {}: loss {:.4}, goals {:.2}, reward {:.3}", s.iteration, loss.total, s.mean_goals, s.mean_reward);
        stats.push(s);
        observer(&row, state)?;
    }
    Ok(stats)
}

/// Mean goals per episode of a policy that ignores its input and draws each
/// action component from `N(0, v)`, `v` being the variance the heads give at
/// a zero readout.
pub fn random_policy_goals<R: Rng + ?Sized>(
    arena: &ArenaConfig,
    reading: VarianceReading,
    episodes: usize,
    rng: &mut R,
) -> f64 {
    let head = PolicyHead::from_readout(&[0.0; 4], reading);
    let mut goals = 0usize;
    for _ in 0..episodes {
        let mut env = Arena::reset(arena, rng);
        for _ in 0..arena.episode_steps {
            let a = head.sample(rng);
            goals += env.step(action_to_velocity(a, arena.a_scale), rng).goal_reached as usize;
        }
    }
    goals as f64 / episodes.max(1) as f64
}

/// Builds the network and optimizer state for a run.
pub fn init_state(cfg: &MetaRlConfig, seed: u64) -> Result<TrainState> {
    cfg.validate()?;
    TrainState::new(&cfg.network, cfg.optimizer.clone(), seed)
}
