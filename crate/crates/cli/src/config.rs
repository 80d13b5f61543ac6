//! Experiment configuration: a TOML key tree with per-key overrides.

use crate::error::{CliError, Result};
use lsnn_core::init::{NetworkSpec, TimeConstant};
use lsnn_core::OptimizerSpec;
use lsnn_tasks::dataset::DatasetSource;
use lsnn_tasks::delayed_cue::DelayedCueConfig;
use lsnn_tasks::l2l::L2LConfig;
use lsnn_tasks::rl::MetaRlConfig;
use lsnn_tasks::seq_pixel::SeqPixelConfig;
use lsnn_tasks::TrainingConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const OUTPUT_ROOT_ENV: &str = "LSNN_OUTPUT_ROOT";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportConfig {
    /// Write the spike raster of one test episode after training.
    #[serde(default)]
    pub raster: bool,
    /// Write agent trajectories (meta-RL only).
    #[serde(default)]
    pub trajectories: bool,
    /// Trajectories are written for every iteration divisible by this
    /// (0: only the last iteration).
    #[serde(default)]
    pub trajectory_every: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    DelayedCue(DelayedCueConfig),
    SeqPixel(SeqPixelConfig),
    L2l(L2LConfig),
    MetaRl(MetaRlConfig),
}

impl Experiment {
    pub fn network(&self) -> &NetworkSpec {
        match self {
            Experiment::DelayedCue(c) => &c.network,
            Experiment::SeqPixel(c) => &c.network,
            Experiment::L2l(c) => &c.network,
            Experiment::MetaRl(c) => &c.network,
        }
    }

    pub fn optimizer(&self) -> &OptimizerSpec {
        match self {
            Experiment::DelayedCue(c) => &c.optimizer,
            Experiment::SeqPixel(c) => &c.optimizer,
            Experiment::L2l(c) => &c.optimizer,
            Experiment::MetaRl(c) => &c.optimizer,
        }
    }

    pub fn iterations(&self) -> u64 {
        match self {
            Experiment::DelayedCue(c) => c.training.iterations,
            Experiment::SeqPixel(c) => c.training.iterations,
            Experiment::L2l(c) => c.training.iterations,
            Experiment::MetaRl(c) => c.iterations,
        }
    }

    fn training(&self) -> Option<&TrainingConfig> {
        match self {
            Experiment::DelayedCue(c) => Some(&c.training),
            Experiment::SeqPixel(c) => Some(&c.training),
            Experiment::L2l(c) => Some(&c.training),
            Experiment::MetaRl(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Relative paths are taken relative to `$LSNN_OUTPUT_ROOT` (or the
    /// working directory when it is unset).
    pub output_dir: PathBuf,
    /// Save a checkpoint every this many iterations (0: only at the end).
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub export: ExportConfig,
    pub experiment: Experiment,
}

/// Replaces the value at a dotted key path, creating tables on the way. The
/// value is parsed as a TOML value and taken as a plain string otherwise.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Validation(vec![format!("override {assignment:?} is not of the form key=value")]))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Validation(vec![format!("bad key path {path:?}")]));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut table = root;
    for key in &keys[..keys.len() - 1] {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(vec![format!("{path}: {key} is not a table")]))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses a config text and applies overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Validation(vec![e.message().to_string()]))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(vec![e.message().to_string()]))
    }

    /// Reads a config file; relative dataset paths are resolved against the
    /// directory of the file.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::parse(&text, overrides)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let base = std::path::absolute(base).unwrap_or_else(|_| base.to_path_buf());
        if let Experiment::SeqPixel(c) = &mut self.experiment {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            match &mut c.task.dataset {
                DatasetSource::Idx { images, labels } => {
                    fix(images);
                    fix(labels);
                }
                DatasetSource::Csv { path } => fix(path),
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Validation(vec![e.to_string()]))
    }

    pub fn output_dir(&self) -> PathBuf {
        if self.output_dir.is_absolute() {
            return self.output_dir.clone();
        }
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) => PathBuf::from(root).join(&self.output_dir),
            None => self.output_dir.clone(),
        }
    }

    /// Every problem found, each prefixed with its key.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |key: &str, r: std::result::Result<(), String>| {
            if let Err(e) = r {
                out.push(format!("{key}: {e}"));
            }
        };
        let exp = &self.experiment;
        let net = exp.network();
        for (key, msg) in network_problems(net) {
            let full = if key.is_empty() { "experiment.network".to_string() } else { format!("experiment.network.{key}") };
            push(&full, Err(msg));
        }
        let opt = exp.optimizer();
        push("experiment.optimizer.adam", opt.adam.validate().map_err(|e| e.to_string()));
        push("experiment.optimizer.schedule", opt.schedule.validate().map_err(|e| e.to_string()));
        if let Some(r) = &opt.rewire {
            push("experiment.optimizer.rewire", r.validate().map_err(|e| e.to_string()));
        }
        if let Some(t) = exp.training() {
            push("experiment.training", t.validate().map_err(|e| e.to_string()));
        }
        if let Experiment::SeqPixel(c) = exp {
            let files: Vec<(&str, &PathBuf)> = match &c.task.dataset {
                DatasetSource::Idx { images, labels } => vec![("images", images), ("labels", labels)],
                DatasetSource::Csv { path } => vec![("path", path)],
            };
            for (key, p) in files {
                if !p.is_file() {
                    push(&format!("experiment.task.dataset.{key}"), Err(format!("{} does not exist", p.display())));
                }
            }
        }
        let whole = match exp {
            Experiment::DelayedCue(c) => c.validate(),
            Experiment::SeqPixel(c) => c.validate(),
            Experiment::L2l(c) => c.validate(),
            Experiment::MetaRl(c) => c.validate(),
        };
        let quiet = out.is_empty();
        if let (true, Err(e)) = (quiet, whole) {
            out.push(format!("experiment: {e}"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(p))
        }
    }
}

fn network_problems(n: &NetworkSpec) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    let tc = |t: &TimeConstant| match *t {
        TimeConstant::Fixed(v) => v > 0.0,
        TimeConstant::Uniform { min, max } => min > 0.0 && max >= min,
    };
    if !tc(&n.tau_m) {
        out.push(("tau_m", "time constants must be positive".to_string()));
    }
    if !tc(&n.tau_a) {
        out.push(("tau_a", "time constants must be positive".to_string()));
    }
    if !(n.dt > 0.0) {
        out.push(("dt", "must be positive".to_string()));
    }
    if !(n.b0 > 0.0) {
        out.push(("b0", "must be positive".to_string()));
    }
    if n.beta < 0.0 {
        out.push(("beta", "must be non-negative".to_string()));
    }
    if n.refractory < 0.0 {
        out.push(("refractory", "must be non-negative".to_string()));
    }
    if n.tau_out.is_some_and(|t| !(t > 0.0)) {
        out.push(("tau_out", "must be positive".to_string()));
    }
    if !(n.init.connectivity > 0.0 && n.init.connectivity <= 1.0) {
        out.push(("init.connectivity", "must lie in (0, 1]".to_string()));
    }
    if !(0.0..=1.0).contains(&n.init.frac_excitatory) {
        out.push(("init.frac_excitatory", "must lie in [0, 1]".to_string()));
    }
    if !(0.0..=1.0).contains(&n.input_frac_excitatory) {
        out.push(("input_frac_excitatory", "must lie in [0, 1]".to_string()));
    }
    if n.noise_sigma.is_some_and(|s| s < 0.0) {
        out.push(("noise_sigma", "must be non-negative".to_string()));
    }
    if out.is_empty() {
        if let Err(e) = n.validate() {
            out.push(("", e.to_string()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_create_and_replace() {
        let mut t: toml::Table = toml::from_str("a = 1\n[b]\nc = 2").unwrap();
        apply_override(&mut t, "b.c=3.5").unwrap();
        apply_override(&mut t, "x.y.z = true").unwrap();
        apply_override(&mut t, "s=hello").unwrap();
        assert_eq!(t["b"]["c"].as_float(), Some(3.5));
        assert_eq!(t["x"]["y"]["z"].as_bool(), Some(true));
        assert_eq!(t["s"].as_str(), Some("hello"));
        assert!(apply_override(&mut t, "a.b=1").is_err());
        assert!(apply_override(&mut t, "novalue").is_err());
    }
}
