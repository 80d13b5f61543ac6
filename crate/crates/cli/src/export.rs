//! CSV outputs: metrics, spike rasters and agent trajectories.

use crate::error::{CliError, Result};
use lsnn_core::Matrix;
use lsnn_tasks::rl::Rollout;
use lsnn_tasks::MetricRow;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub const METRICS_HEADER: &str = "iteration,loss,mse,rate_reg,accuracy";

/// Append-only metrics file, flushed after every row.
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
}

fn fmt(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.17e}")
    }
}

impl MetricsWriter {
    /// Opens `path` for appending; the header is written when the file is new
    /// or empty.
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(CliError::io(path))?;
        let mut w = Self { path: path.to_path_buf(), file };
        let empty = w.file.metadata().map_err(CliError::io(path))?.len() == 0;
        if empty {
            writeln!(w.file, "{METRICS_HEADER}").map_err(CliError::io(path))?;
        }
        Ok(w)
    }

    pub fn write(&mut self, row: &MetricRow) -> Result<()> {
        writeln!(
            self.file,
            "{},{},{},{},{}",
            row.iteration,
            fmt(row.loss),
            fmt(row.mse),
            fmt(row.rate_reg),
            fmt(row.accuracy)
        )
        .and_then(|_| self.file.flush())
        .map_err(CliError::io(&self.path))
    }
}

/// Keeps the header and the rows whose first column satisfies `keep`. Used
/// on resume to drop rows written after the checkpoint.
pub fn truncate_csv(path: &Path, keep: impl Fn(u64) -> bool) -> Result<()> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Ok(());
    };
    let mut kept = String::new();
    for (k, line) in text.lines().enumerate() {
        if k == 0 || line.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(&keep) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept).map_err(CliError::io(path))
}

/// One `t_ms,neuron` line per spike.
pub fn write_raster(path: &Path, raster: &Matrix, dt: f64) -> Result<()> {
    let f = File::create(path).map_err(CliError::io(path))?;
    write_raster_to(BufWriter::new(f), raster, dt).map_err(CliError::io(path))
}

pub fn write_raster_to<W: Write>(mut w: W, raster: &Matrix, dt: f64) -> std::io::Result<()> {
    writeln!(w, "t_ms,neuron")?;
    for s in 0..raster.rows() {
        for (j, &z) in raster.row(s).iter().enumerate() {
            if z != 0.0 {
                writeln!(w, "{},{j}", s as f64 * dt)?;
            }
        }
    }
    w.flush()
}

/// Appends `episode,t_ms,x,y,reward` rows, one per agent step; `reward` is
/// the reward the agent observes at that step. `first_episode` numbers the
/// first rollout.
pub fn append_trajectories(path: &Path, rollouts: &[Rollout], first_episode: u64, dt: f64) -> Result<()> {
    let new = !path.exists();
    let f = OpenOptions::new().create(true).append(true).open(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(f);
    let io = CliError::io(path);
    let res = (|| -> std::io::Result<()> {
        if new {
            writeln!(w, "episode,t_ms,x,y,reward")?;
        }
        for (k, r) in rollouts.iter().enumerate() {
            for (t, ([x, y], reward)) in r.positions.iter().zip(&r.rewards).enumerate() {
                writeln!(w, "{},{},{x},{y},{reward}", first_episode + k as u64, t as f64 * dt)?;
            }
        }
        w.flush()
    })();
    res.map_err(io)
}

/// Reads a spike input file: one row per step, comma-separated 0/1 values,
/// an optional header line and `#` comments.
pub fn read_input_csv(path: &Path, n_in: usize) -> Result<Matrix> {
    let f = File::open(path).map_err(CliError::io(path))?;
    let mut data = Vec::new();
    let mut rows = 0;
    for (k, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(CliError::io(path))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let values = match values {
            Ok(v) => v,
            Err(_) if rows == 0 && data.is_empty() => continue,
            Err(e) => return Err(CliError::Validation(vec![format!("{}: line {}: {e}", path.display(), k + 1)])),
        };
        if values.len() != n_in {
            return Err(CliError::Validation(vec![format!(
                "{}: line {} has {} values, the network has {n_in} inputs",
                path.display(),
                k + 1,
                values.len()
            )]));
        }
        data.extend(values);
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Validation(vec![format!("{}: no input rows", path.display())]));
    }
    Ok(Matrix::from_vec(rows, n_in, data))
}
