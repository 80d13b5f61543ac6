//! Naive scalar reverse-mode differentiation of the spiking network.
//!
//! Every intermediate scalar is a node in a Wengert list that stores its
//! local partial derivatives. The network is unrolled with dense loops over
//! the full spike history, without any of the event-driven bookkeeping of
//! the production code. The only custom rule is the spike node, whose
//! partials are the dampened pseudo-derivative.

use lsnn_core::grad::{backprop, BackwardConfig, Cotangents, Gradients, InitialStateGrad};
use lsnn_core::loss::{backward, LossKind, LossSpec, RateUnit, Targets};
use lsnn_core::{Delays, Matrix, NetworkParams, NeuronParams, SimTape, Simulator};
use rand::Rng;
use rand_distr::StandardNormal;

pub type Var = usize;

#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<f64>,
    partials: Vec<Vec<(Var, f64)>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: f64, partials: Vec<(Var, f64)>) -> Var {
        self.values.push(value);
        self.partials.push(partials);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn leaf(&mut self, value: f64) -> Var {
        self.push(value, Vec::new())
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(value, Vec::new())
    }

    pub fn value(&self, a: Var) -> f64 {
        self.values[a]
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(self.values[a] + self.values[b], vec![(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(self.values[a] - self.values[b], vec![(a, 1.0), (b, -1.0)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.values[a], self.values[b]);
        self.push(x * y, vec![(a, y), (b, x)])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.values[a], self.values[b]);
        self.push(x / y, vec![(a, 1.0 / y), (b, -x / (y * y))])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.push(self.values[a] * k, vec![(a, k)])
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        self.push(self.values[a] + k, vec![(a, 1.0)])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let e = self.values[a].exp();
        self.push(e, vec![(a, e)])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let x = self.values[a];
        self.push(x.ln(), vec![(a, 1.0 / x)])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let x = self.values[a];
        self.push(x * x, vec![(a, 2.0 * x)])
    }

    pub fn sum(&mut self, items: &[Var]) -> Var {
        let v = items.iter().map(|&a| self.values[a]).sum();
        self.push(v, items.iter().map(|&a| (a, 1.0)).collect())
    }

    /// Heaviside spike of `v >= thr` with surrogate partials
    /// `psi / thr` and `-psi * v / thr^2`, `psi = gamma * max(0, 1 - |(v - thr)/thr|)`.
    /// A blocked spike is 0 with zero partials.
    pub fn spike(&mut self, v: Var, thr: Var, gamma: f64, blocked: bool) -> Var {
        if blocked {
            return self.push(0.0, Vec::new());
        }
        let (x, b) = (self.values[v], self.values[thr]);
        let out = if x >= b { 1.0 } else { 0.0 };
        let psi = gamma * (1.0 - ((x - b) / b).abs()).max(0.0);
        self.push(out, vec![(v, psi / b), (thr, -psi * x / (b * b))])
    }

    /// Adjoints of every node for the scalar output `out`.
    pub fn gradient(&self, out: Var) -> Vec<f64> {
        let mut adj = vec![0.0; self.len()];
        adj[out] = 1.0;
        for k in (0..=out).rev() {
            let a = adj[k];
            if a == 0.0 {
                continue;
            }
            for &(p, d) in &self.partials[k] {
                adj[p] += a * d;
            }
        }
        adj
    }
}

/// Options of the unrolled network.
#[derive(Clone, Copy, Debug)]
pub struct OracleConfig {
    pub gamma: f64,
    pub reset_grad: bool,
}

/// Node handles of an unrolled network. Per-step buffers are `[s][j]`.
#[derive(Debug)]
pub struct Unrolled {
    pub graph: Graph,
    pub w_in: Vec<Vec<Option<Var>>>,
    pub w_rec: Vec<Vec<Option<Var>>>,
    pub w_out: Vec<Vec<Option<Var>>>,
    pub sigma: Option<Vec<Var>>,
    pub v_init: Vec<Var>,
    pub b_init: Vec<Var>,
    pub v: Vec<Vec<Var>>,
    pub thr: Vec<Vec<Var>>,
    pub z: Vec<Vec<Var>>,
    pub y: Vec<Vec<Var>>,
}

impl Unrolled {
    pub fn grad_matrix(adj: &[f64], ids: &[Vec<Option<Var>>]) -> Vec<Vec<f64>> {
        ids.iter()
            .map(|row| row.iter().map(|id| id.map_or(0.0, |k| adj[k])).collect())
            .collect()
    }
}

/// Unrolls the network over `inputs` (`T x n_in`). `noise` holds one
/// standard-normal draw per step and neuron when the network is noisy.
pub fn unroll(
    params: &NetworkParams,
    inputs: &Matrix,
    noise: Option<&Matrix>,
    v_init: &[f64],
    b_init: &[f64],
    cfg: OracleConfig,
) -> Unrolled {
    let mut g = Graph::new();
    let n = params.n_rec();
    let n_in = params.n_in();
    let n_out = params.n_out();
    let t_len = inputs.rows();
    let dt = params.dt;

    let leaf_matrix = |g: &mut Graph, w: &Matrix, active: &dyn Fn(usize, usize) -> bool| -> Vec<Vec<Option<Var>>> {
        (0..w.rows())
            .map(|r| (0..w.cols()).map(|c| active(r, c).then(|| g.leaf(w[(r, c)]))).collect())
            .collect()
    };
    let w_in = leaf_matrix(&mut g, &params.w_in, &|r, c| params.mask_in[(r, c)]);
    let w_rec = leaf_matrix(&mut g, &params.w_rec, &|r, c| params.mask_rec[(r, c)]);
    let w_out = leaf_matrix(&mut g, &params.w_out, &|r, c| params.mask_out[(r, c)]);
    let sigma = params
        .noise_sigma
        .as_ref()
        .map(|s| s.iter().map(|&x| g.leaf(x)).collect::<Vec<_>>());
    let v_init: Vec<Var> = v_init.iter().map(|&x| g.leaf(x)).collect();
    let b_init: Vec<Var> = b_init.iter().map(|&x| g.leaf(x)).collect();

    let alpha: Vec<f64> = params.neurons.iter().map(|p| (-dt / p.tau_m).exp()).collect();
    let rho: Vec<f64> = params.neurons.iter().map(|p| (-dt / p.tau_a).exp()).collect();
    let n_ref: Vec<usize> = params
        .neurons
        .iter()
        .map(|p| (p.refractory / dt - 1e-9).ceil().max(0.0) as usize)
        .collect();
    let kappa = if params.tau_out.is_infinite() { 1.0 } else { (-dt / params.tau_out).exp() };

    let mut v_hist: Vec<Vec<Var>> = Vec::with_capacity(t_len);
    let mut b_hist: Vec<Vec<Var>> = Vec::with_capacity(t_len);
    let mut thr_hist: Vec<Vec<Var>> = Vec::with_capacity(t_len);
    let mut z_hist: Vec<Vec<Var>> = Vec::with_capacity(t_len);
    let mut y_hist: Vec<Vec<Var>> = Vec::with_capacity(t_len);

    let zero = g.constant(0.0);
    let b_base: Vec<Var> = params.neurons.iter().map(|p| g.constant(p.b0)).collect();
    let thr_init: Vec<Var> = (0..n)
        .map(|j| {
            let bb = g.scale(b_init[j], params.neurons[j].beta);
            g.add(b_base[j], bb)
        })
        .collect();

    for s in 0..t_len {
        let mut v_row = Vec::with_capacity(n);
        let mut b_row = Vec::with_capacity(n);
        let mut thr_row = Vec::with_capacity(n);
        let mut z_row = Vec::with_capacity(n);
        for j in 0..n {
            let mut terms = Vec::new();
            for i in 0..n_in {
                if let Some(w) = w_in[j][i] {
                    let d = params.d_in[(j, i)] as usize;
                    if s >= d {
                        let x = inputs[(s - d, i)];
                        if x != 0.0 {
                            terms.push(g.scale(w, x));
                        }
                    }
                }
            }
            for i in 0..n {
                if let Some(w) = w_rec[j][i] {
                    let d = params.d_rec[(j, i)] as usize;
                    if s > d {
                        let zi = z_hist[s - 1 - d][i];
                        terms.push(g.mul(w, zi));
                    }
                }
            }
            if let (Some(sig), Some(eps)) = (&sigma, noise) {
                terms.push(g.scale(sig[j], eps[(s, j)]));
            }
            let current = if terms.is_empty() { zero } else { g.sum(&terms) };

            let (v_prev, b_prev, thr_prev, z_prev) = if s == 0 {
                (v_init[j], b_init[j], thr_init[j], zero)
            } else {
                (v_hist[s - 1][j], b_hist[s - 1][j], thr_hist[s - 1][j], z_hist[s - 1][j])
            };
            let leak = g.scale(v_prev, alpha[j]);
            let drive = g.scale(current, 1.0 - alpha[j]);
            let mut v = g.add(leak, drive);
            let reset = if cfg.reset_grad {
                g.mul(thr_prev, z_prev)
            } else {
                let r = g.value(thr_prev) * g.value(z_prev);
                g.constant(r)
            };
            v = g.sub(v, reset);

            let bd = g.scale(b_prev, rho[j]);
            let bz = g.scale(z_prev, 1.0 - rho[j]);
            let b = g.add(bd, bz);
            let bb = g.scale(b, params.neurons[j].beta);
            let thr = g.add(b_base[j], bb);

            let blocked = (1..=n_ref[j]).any(|k| s >= k && g.value(z_hist[s - k][j]) != 0.0);
            let z = g.spike(v, thr, cfg.gamma, blocked);
            v_row.push(v);
            b_row.push(b);
            thr_row.push(thr);
            z_row.push(z);
        }
        let mut y_row = Vec::with_capacity(n_out);
        for k in 0..n_out {
            let mut terms = Vec::new();
            if s > 0 {
                terms.push(g.scale(y_hist[s - 1][k], kappa));
            }
            for j in 0..n {
                if let Some(w) = w_out[k][j] {
                    terms.push(g.mul(w, z_row[j]));
                }
            }
            y_row.push(if terms.is_empty() { zero } else { g.sum(&terms) });
        }
        v_hist.push(v_row);
        b_hist.push(b_row);
        thr_hist.push(thr_row);
        z_hist.push(z_row);
        y_hist.push(y_row);
    }

    Unrolled {
        graph: g,
        w_in,
        w_rec,
        w_out,
        sigma,
        v_init,
        b_init,
        v: v_hist,
        thr: thr_hist,
        z: z_hist,
        y: y_hist,
    }
}

/// Softmax cross-entropy of the readout averaged over the last `window` steps.
pub fn cross_entropy_node(u: &mut Unrolled, window: usize, label: usize) -> Var {
    let t_len = u.y.len();
    let n_out = u.y[0].len();
    let logits: Vec<Var> = (0..n_out)
        .map(|k| {
            let items: Vec<Var> = (t_len - window..t_len).map(|s| u.y[s][k]).collect();
            let total = u.graph.sum(&items);
            u.graph.scale(total, 1.0 / window as f64)
        })
        .collect();
    let exps: Vec<Var> = logits.iter().map(|&l| u.graph.exp(l)).collect();
    let z = u.graph.sum(&exps);
    let lz = u.graph.ln(z);
    u.graph.sub(lz, logits[label])
}

/// `mean_j (rate_j - f0)^2` with rates in spikes per `unit_ms` milliseconds.
pub fn rate_reg_node(u: &mut Unrolled, dt_ms: f64, f0_per_unit: f64, unit_ms: f64) -> Var {
    let t_len = u.z.len();
    let n = u.z[0].len();
    let per = unit_ms / (dt_ms * t_len as f64);
    let devs: Vec<Var> = (0..n)
        .map(|j| {
            let items: Vec<Var> = (0..t_len).map(|s| u.z[s][j]).collect();
            let c = u.graph.sum(&items);
            let r = u.graph.scale(c, per);
            let d = u.graph.add_const(r, -f0_per_unit);
            u.graph.square(d)
        })
        .collect();
    let total = u.graph.sum(&devs);
    u.graph.scale(total, 1.0 / n as f64)
}

/// A small random network with inputs, noise draws and initial state.
#[derive(Clone, Debug)]
pub struct RandomCase {
    pub params: NetworkParams,
    pub inputs: Matrix,
    pub noise: Option<Matrix>,
    pub v_init: Vec<f64>,
    pub b_init: Vec<f64>,
}

impl RandomCase {
    /// Mixed regular/adaptive neurons, partial masks, random delays and
    /// refractory periods, optionally noisy, scaled so that a fair share of
    /// neurons spikes.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, max_neurons: usize, max_steps: usize) -> Self {
        let n = rng.gen_range(2..=max_neurons);
        let n_in = rng.gen_range(1..=5);
        let n_out = rng.gen_range(1..=3);
        let t_len = rng.gen_range(10..=max_steps);
        let dt = if rng.gen_bool(0.8) { 1.0 } else { 0.5 };
        let neurons: Vec<NeuronParams> = (0..n)
            .map(|_| {
                let tau_m = rng.gen_range(5.0..40.0);
                let b0 = rng.gen_range(0.05..0.5);
                let refractory = rng.gen_range(0..4) as f64 * dt;
                if rng.gen_bool(0.5) {
                    NeuronParams::adaptive(tau_m, rng.gen_range(20.0..800.0), rng.gen_range(0.2..2.0), b0, refractory)
                } else {
                    NeuronParams::regular(tau_m, b0, refractory)
                }
            })
            .collect();
        let tau_out = match rng.gen_range(0..3) {
            0 => f64::INFINITY,
            _ => rng.gen_range(5.0..50.0),
        };
        let mut p = NetworkParams::new(n_in, n_out, neurons, dt, tau_out);
        let drive = rng.gen_range(2.0..8.0);
        p.w_in = Matrix::from_fn(n, n_in, |j, _| {
            let g: f64 = rng.sample(StandardNormal);
            p.neurons[j].b0 * drive * (1.0 + g)
        });
        p.w_rec = Matrix::from_fn(n, n, |j, _| {
            let g: f64 = rng.sample(StandardNormal);
            p.neurons[j].b0 * g
        });
        p.w_out = Matrix::from_fn(n_out, n, |_, _| rng.sample(StandardNormal));
        for m in p.mask_in.as_mut_slice() {
            *m = rng.gen_bool(0.8);
        }
        for (k, m) in p.mask_rec.as_mut_slice().iter_mut().enumerate() {
            *m = k / n != k % n && rng.gen_bool(0.7);
        }
        for m in p.mask_out.as_mut_slice() {
            *m = rng.gen_bool(0.9);
        }
        let max_delay = rng.gen_range(0..4u32);
        p.d_in = Delays::from_vec(n, n_in, (0..n * n_in).map(|_| rng.gen_range(0..=max_delay)).collect());
        p.d_rec = Delays::from_vec(n, n, (0..n * n).map(|_| rng.gen_range(0..=max_delay)).collect());
        let noisy = rng.gen_bool(0.3);
        if noisy {
            p.noise_sigma = Some((0..n).map(|j| p.neurons[j].b0 * rng.gen_range(0.1..0.5)).collect());
        }
        p.enforce_masks();
        let rate = rng.gen_range(0.1..0.4);
        let inputs = Matrix::from_fn(t_len, n_in, |_, _| if rng.gen_bool(rate) { 1.0 } else { 0.0 });
        let noise = noisy.then(|| Matrix::from_fn(t_len, n, |_, _| rng.sample(StandardNormal)));
        let v_init = (0..n).map(|j| p.neurons[j].b0 * rng.gen_range(-0.5..0.5)).collect();
        let b_init = (0..n)
            .map(|j| if p.neurons[j].beta > 0.0 { rng.gen_range(0.0..0.1) } else { 0.0 })
            .collect();
        Self { params: p, inputs, noise, v_init, b_init }
    }
}

/// Outcome of comparing the production backward pass against the oracle.
#[derive(Clone, Copy, Debug, Default)]
pub struct Comparison {
    /// Largest per-group relative error `max|a - b| / max|b|`.
    pub max_rel: f64,
    pub spikes: usize,
    pub rasters_match: bool,
    pub forward_err: f64,
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `max|a - b|` over the larger of `max|b|` and `floor`.
fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = max_abs(b).max(floor);
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn flat(rows: Vec<Vec<f64>>) -> Vec<f64> {
    rows.into_iter().flatten().collect()
}

fn record(case: &RandomCase) -> SimTape {
    let mut sim = Simulator::new(&case.params, true)
        .expect("valid network")
        .with_initial(&case.v_init, &case.b_init);
    for s in 0..case.inputs.rows() {
        sim.step(case.inputs.row(s), case.noise.as_ref().map(|m| m.row(s)))
            .expect("finite simulation");
    }
    sim.into_tape().expect("recording")
}

fn compare(case: &RandomCase, tape: &SimTape, u: &Unrolled, adj: &[f64], grads: &Gradients, init: Option<&InitialStateGrad>) -> Comparison {
    let t_len = tape.len();
    let n = case.params.n_rec();
    let mut rasters_match = true;
    let mut forward_err = 0.0f64;
    for s in 0..t_len {
        for j in 0..n {
            rasters_match &= u.graph.value(u.z[s][j]) == tape.z[s * n + j];
            forward_err = forward_err.max((u.graph.value(u.v[s][j]) - tape.v[s * n + j]).abs());
        }
    }
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = vec![
        (grads.w_in.as_slice().to_vec(), flat(Unrolled::grad_matrix(adj, &u.w_in))),
        (grads.w_rec.as_slice().to_vec(), flat(Unrolled::grad_matrix(adj, &u.w_rec))),
        (grads.w_out.as_slice().to_vec(), flat(Unrolled::grad_matrix(adj, &u.w_out))),
    ];
    if let (Some(gs), Some(ids)) = (&grads.noise_sigma, &u.sigma) {
        pairs.push((gs.clone(), ids.iter().map(|&k| adj[k]).collect()));
    }
    if let Some(init) = init {
        pairs.push((init.v.clone(), u.v_init.iter().map(|&k| adj[k]).collect()));
        pairs.push((init.b.clone(), u.b_init.iter().map(|&k| adj[k]).collect()));
    }
    // groups whose true gradient vanishes are judged against the overall scale
    let floor = 1e-4 * pairs.iter().fold(0.0f64, |m, (_, b)| m.max(max_abs(b)));
    let max_rel = pairs.iter().fold(0.0f64, |m, (a, b)| m.max(rel_err(a, b, floor)));
    Comparison {
        max_rel,
        spikes: tape.z.iter().filter(|&&z| z != 0.0).count(),
        rasters_match,
        forward_err,
    }
}

/// Compares gradients of a random linear functional of the readout, spike,
/// voltage and threshold traces, including initial-state gradients.
pub fn compare_linear<R: Rng + ?Sized>(case: &RandomCase, cfg: OracleConfig, rng: &mut R) -> Comparison {
    let tape = record(case);
    let (t_len, n, n_out) = (tape.len(), case.params.n_rec(), case.params.n_out());
    let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.sample(StandardNormal)).collect() };
    let cot = Cotangents {
        y: draw(t_len * n_out),
        z: Some(draw(t_len * n)),
        v: Some(draw(t_len * n)),
        thr: Some(draw(t_len * n)),
    };
    let (grads, init) = backprop(&tape, &case.params, &cot, &BackwardConfig { gamma: cfg.gamma, reset_grad: cfg.reset_grad })
        .expect("finite gradients");

    let mut u = unroll(&case.params, &case.inputs, case.noise.as_ref(), &case.v_init, &case.b_init, cfg);
    let mut terms = Vec::new();
    for s in 0..t_len {
        for k in 0..n_out {
            terms.push(u.graph.scale(u.y[s][k], cot.y[s * n_out + k]));
        }
        for j in 0..n {
            let idx = s * n + j;
            terms.push(u.graph.scale(u.z[s][j], cot.z.as_ref().unwrap()[idx]));
            terms.push(u.graph.scale(u.v[s][j], cot.v.as_ref().unwrap()[idx]));
            terms.push(u.graph.scale(u.thr[s][j], cot.thr.as_ref().unwrap()[idx]));
        }
    }
    let loss = u.graph.sum(&terms);
    let adj = u.graph.gradient(loss);
    compare(case, &tape, &u, &adj, &grads, Some(&init))
}

/// Compares the cross-entropy plus firing-rate loss path.
pub fn compare_classification(case: &RandomCase, cfg: OracleConfig, label: usize, window: usize, rate_coeff: f64) -> Comparison {
    let tape = record(case);
    let target_hz = 20.0;
    let spec = LossSpec { kind: LossKind::CrossEntropyAvg, window, rate_target_hz: target_hz, rate_coeff, rate_unit: RateUnit::PerMs };
    let (_, grads) = backward(&tape, &case.params, &spec, &Targets::Label(label), &BackwardConfig { gamma: cfg.gamma, reset_grad: cfg.reset_grad })
        .expect("finite gradients");
    let mut u = unroll(&case.params, &case.inputs, case.noise.as_ref(), &case.v_init, &case.b_init, cfg);
    let ce = cross_entropy_node(&mut u, window, label);
    let r = rate_reg_node(&mut u, case.params.dt, target_hz / 1000.0, 1.0);
    let rs = u.graph.scale(r, rate_coeff);
    let loss = u.graph.add(ce, rs);
    let adj = u.graph.gradient(loss);
    compare(case, &tape, &u, &adj, &grads, None)
}

/// Smooth loss of a spike-free network: MSE between a fixed linear readout
/// of the membrane voltages and a target trace.
#[derive(Clone, Debug)]
pub struct VoltageProbe {
    /// `n_probe x n_rec`
    pub readout: Matrix,
    /// `T x n_probe`
    pub target: Matrix,
}

impl VoltageProbe {
    fn loss_and_cotangent(&self, tape: &SimTape) -> (f64, Vec<f64>) {
        let (t_len, n) = (tape.len(), tape.n_rec);
        let k_out = self.readout.rows();
        let norm = (t_len * k_out) as f64;
        let mut loss = 0.0;
        let mut cot = vec![0.0; t_len * n];
        for s in 0..t_len {
            let v = &tape.v[s * n..(s + 1) * n];
            for k in 0..k_out {
                let pred: f64 = self.readout.row(k).iter().zip(v).map(|(u, x)| u * x).sum();
                let e = pred - self.target[(s, k)];
                loss += e * e / norm;
                for j in 0..n {
                    cot[s * n + j] += 2.0 * e / norm * self.readout[(k, j)];
                }
            }
        }
        (loss, cot)
    }
}

/// Raises every threshold so far above the reachable voltage range that
/// the network stays silent.
pub fn silence(params: &mut NetworkParams) {
    for p in params.neurons.iter_mut() {
        p.b0 = 1e8;
    }
}

fn set_flat(params: &mut NetworkParams, flat: &[f64]) {
    let mut off = 0;
    for w in [&mut params.w_in, &mut params.w_rec, &mut params.w_out] {
        let len = w.as_slice().len();
        w.as_mut_slice().copy_from_slice(&flat[off..off + len]);
        off += len;
    }
    if let Some(s) = params.noise_sigma.as_mut() {
        s.copy_from_slice(&flat[off..]);
    }
}

fn probe_loss(case: &RandomCase, probe: &VoltageProbe) -> (f64, SimTape) {
    let tape = record(case);
    (probe.loss_and_cotangent(&tape).0, tape)
}

/// Relative errors `|fd - g.d| / max(|fd|, |g.d|)` of central finite
/// differences along `directions` random unit directions over the active
/// trainable coordinates, for a silent network.
pub fn spike_free_fd<R: Rng + ?Sized>(case: &RandomCase, probe: &VoltageProbe, h: f64, directions: usize, rng: &mut R) -> Vec<f64> {
    let (_, tape) = probe_loss(case, probe);
    assert!(tape.z.iter().all(|&z| z == 0.0), "network is not silent");
    let (_, cv) = probe.loss_and_cotangent(&tape);
    let mut cot = Cotangents::zeros(&tape);
    cot.v = Some(cv);
    let (grads, _) = backprop(&tape, &case.params, &cot, &BackwardConfig::default()).expect("finite gradients");
    let g = grads.to_flat();

    let mut base = Vec::new();
    let mut active = Vec::new();
    for (w, m) in [
        (&case.params.w_in, &case.params.mask_in),
        (&case.params.w_rec, &case.params.mask_rec),
        (&case.params.w_out, &case.params.mask_out),
    ] {
        base.extend_from_slice(w.as_slice());
        active.extend_from_slice(m.as_slice());
    }
    if let Some(sg) = &case.params.noise_sigma {
        base.extend_from_slice(sg);
        active.extend(std::iter::repeat(true).take(sg.len()));
    }

    (0..directions)
        .map(|_| {
            let mut d: Vec<f64> = active
                .iter()
                .map(|&a| if a { rng.sample::<f64, _>(StandardNormal) } else { 0.0 })
                .collect();
            let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            d.iter_mut().for_each(|x| *x /= norm);
            let eval = |sign: f64| {
                let mut c = case.clone();
                let shifted: Vec<f64> = base.iter().zip(&d).map(|(b, x)| b + sign * h * x).collect();
                set_flat(&mut c.params, &shifted);
                probe_loss(&c, probe).0
            };
            let fd = (eval(1.0) - eval(-1.0)) / (2.0 * h);
            let an: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            let scale = fd.abs().max(an.abs());
            if scale == 0.0 {
                0.0
            } else {
                (fd - an).abs() / scale
            }
        })
        .collect()
}
