//! Versioned binary checkpoints.
//!
//! Layout (all integers little endian):
//!
//! ```text
//! "LSNNCKPT"  u32 version  u32 entry count
//! entry: u16 name length, name (UTF-8), u8 dtype, u8 rank, u64 dims[rank], data
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! dtype 0 is f64, 1 is u32, 2 is u8, 3 is u64. Optional arrays are simply
//! absent. Entries are written in a fixed order, so saving a loaded
//! checkpoint reproduces the file byte for byte.

use crate::error::{CliError, Result};
use lsnn_core::{AdamConfig, AdamState, Delays, Mask, Matrix, NetworkParams, NeuronParams};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 8] = b"LSNNCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub adam: AdamState,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    /// The full experiment configuration as TOML.
    pub config: String,
}

#[derive(Clone, Debug, PartialEq)]
enum Array {
    F64(Vec<f64>),
    U32(Vec<u32>),
    U8(Vec<u8>),
    U64(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    dims: Vec<u64>,
    data: Array,
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
    count: u32,
}

impl Writer {
    fn put(&mut self, name: &str, dims: &[usize], data: Array) {
        self.count += 1;
        self.buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
        let dtype = match data {
            Array::F64(_) => 0u8,
            Array::U32(_) => 1,
            Array::U8(_) => 2,
            Array::U64(_) => 3,
        };
        self.buf.push(dtype);
        self.buf.push(dims.len() as u8);
        for &d in dims {
            self.buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match data {
            Array::F64(v) => v.iter().for_each(|x| self.buf.extend_from_slice(&x.to_le_bytes())),
            Array::U32(v) => v.iter().for_each(|x| self.buf.extend_from_slice(&x.to_le_bytes())),
            Array::U8(v) => self.buf.extend_from_slice(&v),
            Array::U64(v) => v.iter().for_each(|x| self.buf.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn f64s(&mut self, name: &str, v: &[f64]) {
        self.put(name, &[v.len()], Array::F64(v.to_vec()));
    }

    fn matrix(&mut self, name: &str, m: &Matrix) {
        self.put(name, &[m.rows(), m.cols()], Array::F64(m.as_slice().to_vec()));
    }

    fn mask(&mut self, name: &str, m: &Mask) {
        let bits = m.as_slice().iter().map(|&b| b as u8).collect();
        self.put(name, &[m.rows(), m.cols()], Array::U8(bits));
    }

    fn delays(&mut self, name: &str, d: &Delays) {
        let (r, c) = d.shape();
        self.put(name, &[r, c], Array::U32(d.as_slice().to_vec()));
    }

    fn finish(self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.buf.len() + 20);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.count.to_le_bytes());
        out.extend_from_slice(&self.buf);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut w = Writer::default();
        w.f64s("dt", &[p.dt]);
        w.f64s("tau_out", &[p.tau_out]);
        let col = |f: fn(&NeuronParams) -> f64| p.neurons.iter().map(f).collect::<Vec<_>>();
        w.f64s("neurons.tau_m", &col(|n| n.tau_m));
        w.f64s("neurons.tau_a", &col(|n| n.tau_a));
        w.f64s("neurons.beta", &col(|n| n.beta));
        w.f64s("neurons.b0", &col(|n| n.b0));
        w.f64s("neurons.refractory", &col(|n| n.refractory));
        w.matrix("w_in", &p.w_in);
        w.matrix("w_rec", &p.w_rec);
        w.matrix("w_out", &p.w_out);
        w.delays("d_in", &p.d_in);
        w.delays("d_rec", &p.d_rec);
        w.mask("mask_in", &p.mask_in);
        w.mask("mask_rec", &p.mask_rec);
        w.mask("mask_out", &p.mask_out);
        if let Some(s) = &p.signs_in {
            w.f64s("signs_in", s);
        }
        if let Some(s) = &p.signs_rec {
            w.f64s("signs_rec", s);
        }
        if let Some(s) = &p.noise_sigma {
            w.f64s("noise_sigma", s);
        }
        let a = &self.adam;
        let c = &a.config;
        w.f64s("adam.config", &[c.beta1, c.beta2, c.eps, c.amsgrad as u8 as f64, c.weight_decay]);
        w.f64s("adam.m", &a.m);
        w.f64s("adam.v", &a.v);
        if let Some(v) = &a.v_max {
            w.f64s("adam.v_max", v);
        }
        w.put("adam.step", &[1], Array::U64(vec![a.step]));
        w.put("iteration", &[1], Array::U64(vec![self.iteration]));
        w.put("rng.seed", &[32], Array::U8(self.rng.get_seed().to_vec()));
        w.put("rng.stream", &[1], Array::U64(vec![self.rng.get_stream()]));
        let pos = self.rng.get_word_pos();
        w.put("rng.word_pos", &[2], Array::U64(vec![pos as u64, (pos >> 64) as u64]));
        w.put("config", &[self.config.len()], Array::U8(self.config.as_bytes().to_vec()));
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| CliError::Checkpoint { path: path.to_path_buf(), msg };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            if bytes.len() >= 8 && &bytes[..8] == MAGIC {
                return Err(bad("file is truncated".into()));
            }
            return Err(bad("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CliError::Version { path: path.to_path_buf(), found: version, expected: FORMAT_VERSION });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(bad("checksum mismatch (file truncated or corrupted)".into()));
        }
        let entries = parse_entries(body).map_err(bad)?;
        decode(entries).map_err(bad)
    }

    /// Writes to a temporary file next to `path` and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(CliError::io(&tmp))?;
        f.write_all(&self.to_bytes()).map_err(CliError::io(&tmp))?;
        f.sync_all().map_err(CliError::io(&tmp))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(CliError::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(CliError::io(path))?;
        Self::from_bytes(&bytes, path)
    }
}

fn parse_entries(body: &[u8]) -> std::result::Result<BTreeMap<String, Entry>, String> {
    let mut pos = 12usize;
    let mut take = |n: usize| -> std::result::Result<&[u8], String> {
        let s = body.get(pos..pos + n).ok_or_else(|| format!("unexpected end of data at byte {pos}"))?;
        pos += n;
        Ok(s)
    };
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec()).map_err(|_| "entry name is not UTF-8".to_string())?;
        let dtype = take(1)?[0];
        let rank = take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize)).ok_or("array too large")?;
        let width = match dtype {
            0 | 3 => 8,
            1 => 4,
            2 => 1,
            d => return Err(format!("entry {name}: unknown dtype {d}")),
        };
        let raw = take(n.checked_mul(width).ok_or("array too large")?)?;
        let data = match dtype {
            0 => Array::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            1 => Array::U32(raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()),
            2 => Array::U8(raw.to_vec()),
            _ => Array::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()),
        };
        if out.insert(name.clone(), Entry { dims, data }).is_some() {
            return Err(format!("duplicate entry {name}"));
        }
    }
    if pos != body.len() {
        return Err(format!("{} trailing bytes after the last entry", body.len() - pos));
    }
    Ok(out)
}

struct Entries(BTreeMap<String, Entry>);

impl Entries {
    fn get(&mut self, name: &str) -> std::result::Result<Entry, String> {
        self.0.remove(name).ok_or_else(|| format!("missing entry {name}"))
    }

    fn f64s(&mut self, name: &str) -> std::result::Result<Vec<f64>, String> {
        match self.get(name)?.data {
            Array::F64(v) => Ok(v),
            _ => Err(format!("entry {name} should hold f64 values")),
        }
    }

    fn opt_f64s(&mut self, name: &str) -> std::result::Result<Option<Vec<f64>>, String> {
        if self.0.contains_key(name) {
            self.f64s(name).map(Some)
        } else {
            Ok(None)
        }
    }

    fn u64s(&mut self, name: &str) -> std::result::Result<Vec<u64>, String> {
        match self.get(name)?.data {
            Array::U64(v) => Ok(v),
            _ => Err(format!("entry {name} should hold u64 values")),
        }
    }

    fn bytes(&mut self, name: &str) -> std::result::Result<Vec<u8>, String> {
        match self.get(name)?.data {
            Array::U8(v) => Ok(v),
            _ => Err(format!("entry {name} should hold bytes")),
        }
    }

    fn shape2(e: &Entry, name: &str) -> std::result::Result<(usize, usize), String> {
        match e.dims[..] {
            [r, c] => Ok((r as usize, c as usize)),
            _ => Err(format!("entry {name} should be two-dimensional")),
        }
    }

    fn matrix(&mut self, name: &str) -> std::result::Result<Matrix, String> {
        let e = self.get(name)?;
        let (r, c) = Self::shape2(&e, name)?;
        match e.data {
            Array::F64(v) => Ok(Matrix::from_vec(r, c, v)),
            _ => Err(format!("entry {name} should hold f64 values")),
        }
    }

    fn mask(&mut self, name: &str) -> std::result::Result<Mask, String> {
        let e = self.get(name)?;
        let (r, c) = Self::shape2(&e, name)?;
        match e.data {
            Array::U8(v) if v.iter().all(|&b| b <= 1) => Ok(Mask::from_vec(r, c, v.iter().map(|&b| b == 1).collect())),
            _ => Err(format!("entry {name} should hold 0/1 bytes")),
        }
    }

    fn delays(&mut self, name: &str) -> std::result::Result<Delays, String> {
        let e = self.get(name)?;
        let (r, c) = Self::shape2(&e, name)?;
        match e.data {
            Array::U32(v) => Ok(Delays::from_vec(r, c, v)),
            _ => Err(format!("entry {name} should hold u32 values")),
        }
    }
}

fn scalar<T: Copy>(v: &[T], name: &str) -> std::result::Result<T, String> {
    match v {
        [x] => Ok(*x),
        _ => Err(format!("entry {name} should hold one value")),
    }
}

fn decode(map: BTreeMap<String, Entry>) -> std::result::Result<Checkpoint, String> {
    let mut e = Entries(map);
    let dt = scalar(&e.f64s("dt")?, "dt")?;
    let tau_out = scalar(&e.f64s("tau_out")?, "tau_out")?;
    let tau_m = e.f64s("neurons.tau_m")?;
    let tau_a = e.f64s("neurons.tau_a")?;
    let beta = e.f64s("neurons.beta")?;
    let b0 = e.f64s("neurons.b0")?;
    let refractory = e.f64s("neurons.refractory")?;
    let n = tau_m.len();
    if [&tau_a, &beta, &b0, &refractory].iter().any(|v| v.len() != n) {
        return Err("neuron constant arrays differ in length".into());
    }
    let neurons = (0..n)
        .map(|k| NeuronParams { tau_m: tau_m[k], tau_a: tau_a[k], beta: beta[k], b0: b0[k], refractory: refractory[k] })
        .collect();
    let w_in = e.matrix("w_in")?;
    let w_rec = e.matrix("w_rec")?;
    let w_out = e.matrix("w_out")?;
    let mut params = NetworkParams::new(w_in.cols(), w_out.rows(), neurons, dt, tau_out);
    params.w_in = w_in;
    params.w_rec = w_rec;
    params.w_out = w_out;
    params.d_in = e.delays("d_in")?;
    params.d_rec = e.delays("d_rec")?;
    params.mask_in = e.mask("mask_in")?;
    params.mask_rec = e.mask("mask_rec")?;
    params.mask_out = e.mask("mask_out")?;
    params.signs_in = e.opt_f64s("signs_in")?;
    params.signs_rec = e.opt_f64s("signs_rec")?;
    params.noise_sigma = e.opt_f64s("noise_sigma")?;
    params.validate().map_err(|err| err.to_string())?;

    let c = e.f64s("adam.config")?;
    let [beta1, beta2, eps, ams, weight_decay] = c[..] else {
        return Err("entry adam.config should hold five values".into());
    };
    let config = AdamConfig { beta1, beta2, eps, amsgrad: ams != 0.0, weight_decay };
    let m = e.f64s("adam.m")?;
    let v = e.f64s("adam.v")?;
    let v_max = e.opt_f64s("adam.v_max")?;
    if v.len() != m.len() || v_max.as_ref().is_some_and(|x| x.len() != m.len()) || v_max.is_some() != config.amsgrad {
        return Err("Adam moment arrays are inconsistent".into());
    }
    let step = scalar(&e.u64s("adam.step")?, "adam.step")?;
    let adam = AdamState { config, m, v, v_max, step };

    let iteration = scalar(&e.u64s("iteration")?, "iteration")?;
    let seed: [u8; 32] = e.bytes("rng.seed")?.try_into().map_err(|_| "entry rng.seed should hold 32 bytes")?;
    let stream = scalar(&e.u64s("rng.stream")?, "rng.stream")?;
    let pos = e.u64s("rng.word_pos")?;
    let [lo, hi] = pos[..] else {
        return Err("entry rng.word_pos should hold two values".into());
    };
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(lo as u128 | (hi as u128) << 64);
    let config = String::from_utf8(e.bytes("config")?).map_err(|_| "embedded configuration is not UTF-8")?;
    if let Some(name) = e.0.keys().next() {
        return Err(format!("unknown entry {name}"));
    }
    Ok(Checkpoint { params, adam, iteration, rng, config })
}

/// Path of the checkpoint written after `iteration`.
pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("checkpoint-{iteration:08}.ckpt"))
}
