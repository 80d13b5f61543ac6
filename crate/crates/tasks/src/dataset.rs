//! Grey-scale digit images from IDX (optionally gzip-compressed) or CSV files.

use crate::error::{Result, TaskError};
use flate2::read::GzDecoder;
use std::io::Read;
use std::path::{Path, PathBuf};

/// Images with grey values in `[0, 1]`, row-major, one after another.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }

    /// Average pooling over `factor x factor` blocks.
    pub fn downsample(&self, factor: usize) -> Result<Dataset> {
        if factor == 0 || self.rows % factor != 0 || self.cols % factor != 0 {
            return Err(TaskError::Config(format!(
                "cannot downsample {}x{} images by {factor}",
                self.rows, self.cols
            )));
        }
        let (r2, c2) = (self.rows / factor, self.cols / factor);
        let norm = (factor * factor) as f64;
        let mut pixels = Vec::with_capacity(self.len() * r2 * c2);
        for i in 0..self.len() {
            let img = self.image(i);
            for r in 0..r2 {
                for c in 0..c2 {
                    let mut acc = 0.0;
                    for dr in 0..factor {
                        for dc in 0..factor {
                            acc += img[(r * factor + dr) * self.cols + c * factor + dc];
                        }
                    }
                    pixels.push(acc / norm);
                }
            }
        }
        Ok(Dataset { rows: r2, cols: c2, pixels, labels: self.labels.clone() })
    }

    /// Splits off the first `n` examples.
    pub fn split(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let size = self.rows * self.cols;
        let head = Dataset {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[..n * size].to_vec(),
            labels: self.labels[..n].to_vec(),
        };
        let tail = Dataset {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[n * size..].to_vec(),
            labels: self.labels[n..].to_vec(),
        };
        (head, tail)
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let io = |source| TaskError::Io { path: path.to_path_buf(), source };
    let raw = std::fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn parse_err(path: &Path, offset: usize, msg: impl Into<String>) -> TaskError {
    TaskError::Parse { path: path.to_path_buf(), offset, msg: msg.into() }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_err(path, offset, "unexpected end of file"))
}

/// Parses an IDX image file (magic `0x803`) and label file (magic `0x801`).
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = read_bytes(images)?;
    let lab = read_bytes(labels)?;
    if be_u32(&img, 0, images)? != 0x803 {
        return Err(parse_err(images, 0, "not an IDX image file"));
    }
    if be_u32(&lab, 0, labels)? != 0x801 {
        return Err(parse_err(labels, 0, "not an IDX label file"));
    }
    let n = be_u32(&img, 4, images)? as usize;
    let rows = be_u32(&img, 8, images)? as usize;
    let cols = be_u32(&img, 12, images)? as usize;
    let n_lab = be_u32(&lab, 4, labels)? as usize;
    if n != n_lab {
        return Err(parse_err(labels, 4, format!("{n_lab} labels for {n} images")));
    }
    let need = 16 + n * rows * cols;
    if img.len() < need {
        return Err(parse_err(images, img.len(), format!("expected {need} bytes")));
    }
    if lab.len() < 8 + n {
        return Err(parse_err(labels, lab.len(), format!("expected {} bytes", 8 + n)));
    }
    let labels_v = lab[8..8 + n].to_vec();
    if let Some(k) = labels_v.iter().position(|&l| l > 9) {
        return Err(parse_err(labels, 8 + k, format!("label {} out of range", labels_v[k])));
    }
    Ok(Dataset {
        rows,
        cols,
        pixels: img[16..need].iter().map(|&p| p as f64 / 255.0).collect(),
        labels: labels_v,
    })
}

/// One example per line: `label,p0,p1,...` with pixel values in `0..=255`.
/// A non-numeric first line is treated as a header. Images are assumed square.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| parse_err(path, e.valid_up_to(), "invalid UTF-8"))?;
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    let mut offset = 0;
    for (k, line) in text.split_inclusive('\n').enumerate() {
        let start = offset;
        offset += line.len();
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let first = fields.next().unwrap_or("").trim();
        let label: u8 = match first.parse() {
            Ok(l) => l,
            Err(_) if k == 0 => continue,
            Err(_) => return Err(parse_err(path, start, format!("bad label {first:?}"))),
        };
        if label > 9 {
            return Err(parse_err(path, start, format!("label {label} out of range")));
        }
        let mut count = 0;
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(path, start, format!("bad pixel value {f:?}")))?;
            if !(0.0..=255.0).contains(&v) {
                return Err(parse_err(path, start, format!("pixel value {v} outside 0..=255")));
            }
            pixels.push(v / 255.0);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(parse_err(path, start, format!("{count} pixels, expected {w}")));
            }
            _ => {}
        }
        labels.push(label);
    }
    let Some(w) = width else {
        return Err(parse_err(path, 0, "no examples"));
    };
    let side = (w as f64).sqrt().round() as usize;
    if side * side != w {
        return Err(parse_err(path, 0, format!("{w} pixels per image is not a square")));
    }
    Ok(Dataset { rows: side, cols: side, pixels, labels })
}

/// Where the digit files live.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "format", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSource {
    Idx { images: PathBuf, labels: PathBuf },
    Csv { path: PathBuf },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Idx { images, labels } => load_idx(images, labels),
            DatasetSource::Csv { path } => load_csv(path),
        }
    }
}
