//! Weight initialization, connectivity masks and network construction.

use crate::error::{Error, Result};
use crate::params::{NetworkParams, NeuronParams};
use crate::tensor::{Delays, Mask, Matrix};
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    Gaussian,
    Dale,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub scheme: InitScheme,
    /// Weight scale; numerically equal to `dt` under the folded-resistance
    /// convention.
    pub w0: f64,
    /// Fraction of presynaptic neurons with sign +1 (Dale scheme).
    pub frac_excitatory: f64,
    /// Fraction of possible synapses that are active.
    pub connectivity: f64,
}

impl InitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.connectivity > 0.0 && self.connectivity <= 1.0)
            || !(0.0..=1.0).contains(&self.frac_excitatory)
            || !(self.w0 > 0.0)
        {
            return Err(Error::Config(format!("invalid init spec {self:?}")));
        }
        Ok(())
    }
}

/// I.i.d. entries `w0 / sqrt(n_in) * N(0, 1)`.
pub fn init_gaussian<R: Rng + ?Sized>(n_out: usize, n_in: usize, w0: f64, rng: &mut R) -> Matrix {
    assert!(n_in >= 1, "need at least one afferent");
    let scale = w0 / (n_in as f64).sqrt();
    Matrix::from_fn(n_out, n_in, |_, _| {
        let g: f64 = rng.sample(StandardNormal);
        scale * g
    })
}

/// Random ±1 signs, +1 with probability `frac_excitatory`.
pub fn random_signs<R: Rng + ?Sized>(n: usize, frac_excitatory: f64, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| if rng.gen_bool(frac_excitatory) { 1.0 } else { -1.0 })
        .collect()
}

/// Magnitude of the largest (possibly complex) eigenvalue.
pub fn spectral_radius(w: &Matrix) -> f64 {
    assert_eq!(w.rows(), w.cols(), "spectral radius needs a square matrix");
    let m = DMatrix::from_row_slice(w.rows(), w.cols(), w.as_slice());
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Shifts each row so it sums to zero while keeping every entry's sign: the
/// class (excitatory or inhibitory) with the smaller total magnitude gets a
/// constant added to each of its nonzero entries. Rows with only one class
/// present are left untouched.
pub fn balance_rows(w: &mut Matrix, signs: &[f64]) {
    let cols = w.cols();
    for r in 0..w.rows() {
        let (mut exc, mut inh, mut n_exc, mut n_inh) = (0.0, 0.0, 0usize, 0usize);
        for c in 0..cols {
            let v = w[(r, c)];
            if v == 0.0 {
                continue;
            }
            if signs[c] > 0.0 {
                exc += v;
                n_exc += 1;
            } else {
                inh -= v;
                n_inh += 1;
            }
        }
        if n_exc == 0 || n_inh == 0 {
            continue;
        }
        if exc > inh {
            let shift = (exc - inh) / n_inh as f64;
            for c in 0..cols {
                if signs[c] < 0.0 && w[(r, c)] != 0.0 {
                    w[(r, c)] -= shift;
                }
            }
        } else {
            let shift = (inh - exc) / n_exc as f64;
            for c in 0..cols {
                if signs[c] > 0.0 && w[(r, c)] != 0.0 {
                    w[(r, c)] += shift;
                }
            }
        }
    }
}

const MAX_RESAMPLES: usize = 16;

/// Sign-constrained square matrix with zero row sums, normalized to
/// spectral radius 1 (before any `w0` scaling). With `no_self` the diagonal
/// is zero.
pub fn dale_normalized<R: Rng + ?Sized>(signs: &[f64], no_self: bool, rng: &mut R) -> Result<Matrix> {
    let m = signs.len();
    for _ in 0..MAX_RESAMPLES {
        let mut w = Matrix::from_fn(m, m, |r, c| {
            if no_self && r == c {
                0.0
            } else {
                let g: f64 = rng.sample(StandardNormal);
                signs[c] * g.abs()
            }
        });
        balance_rows(&mut w, signs);
        let radius = spectral_radius(&w);
        if radius > 1e-12 && radius.is_finite() {
            w.scale(1.0 / radius);
            return Ok(w);
        }
    }
    Err(Error::Config("could not draw a Dale matrix with nonzero spectral radius".into()))
}

/// Dale-constrained initialization of an `n_out x n_in` matrix whose column
/// `i` has sign `signs[i]`. Non-square shapes are cut from a larger square
/// matrix by uniformly selecting rows and columns.
pub fn init_dale<R: Rng + ?Sized>(
    n_out: usize,
    n_in: usize,
    signs: &[f64],
    w0: f64,
    no_self: bool,
    rng: &mut R,
) -> Result<Matrix> {
    assert_eq!(signs.len(), n_in, "one sign per presynaptic neuron");
    let m = n_out.max(n_in);
    if m == n_in && m == n_out {
        let mut w = dale_normalized(signs, no_self, rng)?;
        w.scale(w0);
        return Ok(w);
    }
    let mut cols: Vec<usize> = sample(rng, m, n_in).into_vec();
    cols.sort_unstable();
    let mut rows: Vec<usize> = sample(rng, m, n_out).into_vec();
    rows.sort_unstable();

    let frac_exc = signs.iter().filter(|&&s| s > 0.0).count() as f64 / n_in as f64;
    let mut square_signs: Vec<f64> = (0..m)
        .map(|_| if rng.gen_bool(frac_exc) { 1.0 } else { -1.0 })
        .collect();
    for (&c, &s) in cols.iter().zip(signs) {
        square_signs[c] = s;
    }
    let sq = dale_normalized(&square_signs, false, rng)?;
    Ok(Matrix::from_fn(n_out, n_in, |r, c| w0 * sq[(rows[r], cols[c])]))
}

/// Exactly `round(p * rows * cols)` active positions chosen uniformly
/// without replacement (capped at the number of candidates). With
/// `no_self` the diagonal is never active.
pub fn sparse_mask<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, no_self: bool, rng: &mut R) -> Mask {
    assert!(p > 0.0 && p <= 1.0, "connectivity must lie in (0, 1]");
    let candidates: Vec<usize> = (0..rows * cols)
        .filter(|&k| !(no_self && k / cols == k % cols))
        .collect();
    let k = ((p * (rows * cols) as f64).round() as usize).min(candidates.len());
    let mut mask = Mask::empty(rows, cols);
    for idx in sample(rng, candidates.len(), k).iter() {
        mask.as_mut_slice()[candidates[idx]] = true;
    }
    mask
}

/// Delays drawn uniformly from `lo..=hi` steps.
pub fn uniform_delays<R: Rng + ?Sized>(rows: usize, cols: usize, lo: u32, hi: u32, rng: &mut R) -> Delays {
    let dist = Uniform::new_inclusive(lo, hi);
    Delays::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

/// A time constant that is either fixed or drawn uniformly per neuron.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeConstant {
    Fixed(f64),
    Uniform { min: f64, max: f64 },
}

impl TimeConstant {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            TimeConstant::Fixed(v) => v,
            TimeConstant::Uniform { min, max } => rng.gen_range(min..=max),
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            TimeConstant::Fixed(v) => v > 0.0,
            TimeConstant::Uniform { min, max } => min > 0.0 && max >= min,
        }
    }
}

/// High-level description of a network, enough to build [`NetworkParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub n_in: usize,
    pub n_regular: usize,
    pub n_adaptive: usize,
    pub n_out: usize,
    pub dt: f64,
    pub tau_m: TimeConstant,
    pub tau_a: TimeConstant,
    pub beta: f64,
    pub b0: f64,
    pub refractory: f64,
    /// Readout time constant in ms; `None` for an accumulating readout.
    pub tau_out: Option<f64>,
    pub delay_in: [u32; 2],
    pub delay_rec: [u32; 2],
    pub init: InitSpec,
    /// Fraction of excitatory input neurons (Dale scheme).
    pub input_frac_excitatory: f64,
    /// Initial current-noise std; `None` disables noise.
    pub noise_sigma: Option<f64>,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        self.init.validate()?;
        let mut bad = Vec::new();
        if self.n_regular + self.n_adaptive == 0 {
            bad.push("network needs at least one neuron");
        }
        if self.n_in == 0 || self.n_out == 0 {
            bad.push("n_in and n_out must be positive");
        }
        if !(self.dt > 0.0) {
            bad.push("dt must be positive");
        }
        if !self.tau_m.is_valid() || !self.tau_a.is_valid() {
            bad.push("time constants must be positive");
        }
        if !(self.b0 > 0.0) || self.beta < 0.0 || self.refractory < 0.0 {
            bad.push("need b0 > 0, beta >= 0, refractory >= 0");
        }
        if self.tau_out.is_some_and(|t| !(t > 0.0)) {
            bad.push("tau_out must be positive");
        }
        if self.delay_in[0] > self.delay_in[1] || self.delay_rec[0] > self.delay_rec[1] {
            bad.push("delay ranges must be ordered");
        }
        if !(0.0..=1.0).contains(&self.input_frac_excitatory) {
            bad.push("input_frac_excitatory must lie in [0, 1]");
        }
        if self.noise_sigma.is_some_and(|s| s < 0.0) {
            bad.push("noise_sigma must be non-negative");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Builds the network. Regular neurons come first, then adaptive ones.
    /// Under the Dale scheme adaptive neurons are excitatory and regular
    /// neurons are excitatory with probability `init.frac_excitatory`.
    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<NetworkParams> {
        self.validate()?;
        let n = self.n_regular + self.n_adaptive;
        let mut neurons = Vec::with_capacity(n);
        for k in 0..n {
            let tau_m = self.tau_m.draw(rng);
            neurons.push(if k < self.n_regular {
                NeuronParams::regular(tau_m, self.b0, self.refractory)
            } else {
                NeuronParams::adaptive(tau_m, self.tau_a.draw(rng), self.beta, self.b0, self.refractory)
            });
        }
        let tau_out = self.tau_out.unwrap_or(f64::INFINITY);
        let mut p = NetworkParams::new(self.n_in, self.n_out, neurons, self.dt, tau_out);
        let w0 = self.init.w0;
        let conn = self.init.connectivity;

        match self.init.scheme {
            InitScheme::Gaussian => {
                p.w_in = init_gaussian(n, self.n_in, w0, rng);
                p.w_rec = init_gaussian(n, n, w0, rng);
                p.w_out = init_gaussian(self.n_out, n, w0, rng);
            }
            InitScheme::Dale => {
                let mut signs_rec = random_signs(self.n_regular, self.init.frac_excitatory, rng);
                signs_rec.extend(std::iter::repeat(1.0).take(self.n_adaptive));
                let signs_in = random_signs(self.n_in, self.input_frac_excitatory, rng);
                p.w_in = init_dale(n, self.n_in, &signs_in, w0, false, rng)?;
                p.w_rec = init_dale(n, n, &signs_rec, w0, true, rng)?;
                p.w_out = init_dale(self.n_out, n, &signs_rec, w0, false, rng)?;
                p.signs_in = Some(signs_in);
                p.signs_rec = Some(signs_rec);
            }
        }
        if conn < 1.0 {
            p.mask_in = sparse_mask(n, self.n_in, conn, false, rng);
            p.mask_rec = sparse_mask(n, n, conn, true, rng);
            p.mask_out = sparse_mask(self.n_out, n, conn, false, rng);
        }
        for k in 0..n {
            p.w_rec[(k, k)] = 0.0;
        }
        p.enforce_masks();
        p.d_in = uniform_delays(n, self.n_in, self.delay_in[0], self.delay_in[1], rng);
        p.d_rec = uniform_delays(n, n, self.delay_rec[0], self.delay_rec[1], rng);
        p.noise_sigma = self.noise_sigma.map(|s| vec![s; n]);
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn std_of(xs: &[f64]) -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
    }

    #[test]
    fn gaussian_std_matches_scale() {
        let w = init_gaussian(100_000, 1, 1.0, &mut rng(1));
        assert!((std_of(w.as_slice()) - 1.0).abs() < 0.03);
        let w = init_gaussian(1000, 64, 1.0, &mut rng(2));
        assert!((std_of(w.as_slice()) - 0.125).abs() < 0.125 * 0.03);
    }

    #[test]
    fn gaussian_scales_linearly_and_is_reproducible() {
        let a = init_gaussian(10, 10, 1.0, &mut rng(3));
        let b = init_gaussian(10, 10, 2.0, &mut rng(3));
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert_eq!(2.0 * x, *y);
        }
        assert_eq!(a, init_gaussian(10, 10, 1.0, &mut rng(3)));
    }

    #[test]
    fn dale_rows_sum_to_zero_and_radius_is_one() {
        let mut r = rng(4);
        let signs = random_signs(60, 0.8, &mut r);
        let w = dale_normalized(&signs, true, &mut r).unwrap();
        let scale = w.max_abs();
        for row in 0..60 {
            let s: f64 = w.row(row).iter().sum();
            assert!(s.abs() < 1e-9 * scale, "row {row} sums to {s}");
        }
        assert!((spectral_radius(&w) - 1.0).abs() < 1e-6);
        for c in 0..60 {
            assert_eq!(w[(c, c)], 0.0);
            for row in 0..60 {
                assert!(w[(row, c)] * signs[c] >= 0.0);
            }
        }
    }

    #[test]
    fn all_excitatory_skips_balancing() {
        let mut r = rng(5);
        let signs = vec![1.0; 20];
        let w = dale_normalized(&signs, false, &mut r).unwrap();
        assert!(w.as_slice().iter().all(|&v| v >= 0.0));
        assert!((spectral_radius(&w) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rectangular_dale_keeps_column_signs() {
        let mut r = rng(6);
        let signs = random_signs(30, 0.75, &mut r);
        let w = init_dale(10, 30, &signs, 0.5, false, &mut r).unwrap();
        assert_eq!(w.shape(), (10, 30));
        for c in 0..30 {
            for row in 0..10 {
                assert!(w[(row, c)] * signs[c] >= 0.0);
            }
        }
        let tall = init_dale(40, 5, &signs[..5], 1.0, false, &mut r).unwrap();
        assert_eq!(tall.shape(), (40, 5));
    }

    #[test]
    fn mask_sizes() {
        let m = sparse_mask(220, 220, 0.12, true, &mut rng(7));
        assert_eq!(m.count_active(), 5808);
        assert!((0..220).all(|k| !m[(k, k)]));
        let full = sparse_mask(5, 5, 1.0, true, &mut rng(8));
        assert_eq!(full, Mask::full_off_diagonal(5));
        let a = sparse_mask(30, 30, 0.2, false, &mut rng(9));
        let b = sparse_mask(30, 30, 0.2, false, &mut rng(10));
        assert_ne!(a, b);
    }

    #[test]
    fn built_network_is_valid() {
        let spec = NetworkSpec {
            n_in: 12,
            n_regular: 10,
            n_adaptive: 6,
            n_out: 3,
            dt: 1.0,
            tau_m: TimeConstant::Uniform { min: 15.0, max: 30.0 },
            tau_a: TimeConstant::Fixed(1200.0),
            beta: 1.7,
            b0: 0.01,
            refractory: 3.0,
            tau_out: Some(20.0),
            delay_in: [1, 10],
            delay_rec: [1, 10],
            init: InitSpec { scheme: InitScheme::Dale, w0: 1.0, frac_excitatory: 0.7, connectivity: 0.2 },
            input_frac_excitatory: 0.75,
            noise_sigma: Some(0.03),
        };
        let p = spec.build(&mut rng(11)).unwrap();
        assert_eq!(p.n_rec(), 16);
        assert_eq!(p.mask_rec.count_active(), (0.2f64 * 256.0).round() as usize);
        assert!(p.neurons[10..].iter().all(|n| n.beta == 1.7 && n.tau_a == 1200.0));
        assert!(p.neurons.iter().all(|n| (15.0..=30.0).contains(&n.tau_m)));
        assert_eq!(p.d_rec.max() <= 10, true);
    }
}
