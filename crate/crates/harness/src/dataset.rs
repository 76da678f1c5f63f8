//! Columnar text format for one task sample, plus the dataset manifest.
//!
//! ```text
//! file    = magic newline meta newline header newline { row newline }
//! magic   = "# smrc-dataset 1"
//! meta    = "#" { " " key "=" token }      keys: task split index washout
//!                                           [jitter] [sigma_in] [n_forward] [narma_order]
//! header  = "t" { ",u" digits } { ",y" digits }
//! row     = uint { "," number }            t counts 0, 1, 2, ... in order
//! ```
//!
//! `u0..` are the input channels and `y0..` the targets. Numbers are written
//! as the shortest decimal that parses back to the same `f64`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use smrc_core::tasks::{self, Dataset, Normalization, SampleMeta, Split, TaskKind, TaskSample};

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::error::{HarnessError, Result};
use crate::fsutil::{fmt_f64, read_to_string, write_atomic};

pub const MAGIC: &str = "# smrc-dataset 1";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn encode_sample(s: &TaskSample) -> String {
    let m = &s.meta;
    let mut out = String::with_capacity(32 * s.len());
    out.push_str(MAGIC);
    out.push('\n');
    write!(out, "# task={} split={} index={} washout={}", m.task, m.split.as_str(), m.index, s.washout).unwrap();
    if let Some(j) = m.jitter {
        write!(out, " jitter={j}").unwrap();
    }
    if let Some(v) = m.sigma_in {
        write!(out, " sigma_in={}", fmt_f64(v)).unwrap();
    }
    if let Some(v) = m.n_forward {
        write!(out, " n_forward={v}").unwrap();
    }
    if let Some(v) = m.narma_order {
        write!(out, " narma_order={v}").unwrap();
    }
    out.push_str("\nt");
    for i in 0..s.inputs.nrows() {
        write!(out, ",u{i}").unwrap();
    }
    for i in 0..s.targets.nrows() {
        write!(out, ",y{i}").unwrap();
    }
    out.push('\n');
    for t in 0..s.len() {
        write!(out, "{t}").unwrap();
        for v in s.inputs.column(t).iter().chain(s.targets.column(t).iter()) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn decode_sample(text: &str, origin: &str) -> Result<TaskSample> {
    let err = |line: usize, message: String| HarnessError::Parse { origin: origin.to_string(), line, message };
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(err(1, format!("expected `{MAGIC}`")));
    }
    let meta_line = lines.next().ok_or_else(|| err(2, "missing metadata line".into()))?;
    let meta_body = meta_line.strip_prefix('#').ok_or_else(|| err(2, "metadata line must start with `#`".into()))?;

    let mut task = None;
    let mut split = None;
    let mut index = None;
    let mut washout = None;
    let mut meta = SampleMeta { task: TaskKind::Attention, split: Split::Train, index: 0, jitter: None, sigma_in: None, n_forward: None, narma_order: None };
    for token in meta_body.split_whitespace() {
        let (k, v) = token.split_once('=').ok_or_else(|| err(2, format!("expected key=value, got `{token}`")))?;
        let bad = |e: &dyn std::fmt::Display| err(2, format!("{k}: `{v}`: {e}"));
        match k {
            "task" => task = Some(v.parse::<TaskKind>().map_err(|e| bad(&e))?),
            "split" => split = Some(v.parse::<Split>().map_err(|e| bad(&e))?),
            "index" => index = Some(v.parse::<usize>().map_err(|e| bad(&e))?),
            "washout" => washout = Some(v.parse::<usize>().map_err(|e| bad(&e))?),
            "jitter" => meta.jitter = Some(v.parse().map_err(|e| bad(&e))?),
            "sigma_in" => meta.sigma_in = Some(v.parse().map_err(|e| bad(&e))?),
            "n_forward" => meta.n_forward = Some(v.parse().map_err(|e| bad(&e))?),
            "narma_order" => meta.narma_order = Some(v.parse().map_err(|e| bad(&e))?),
            _ => return Err(err(2, format!("unknown metadata key `{k}`"))),
        }
    }
    meta.task = task.ok_or_else(|| err(2, "missing task".into()))?;
    meta.split = split.ok_or_else(|| err(2, "missing split".into()))?;
    meta.index = index.ok_or_else(|| err(2, "missing index".into()))?;
    let washout = washout.ok_or_else(|| err(2, "missing washout".into()))?;

    let header = lines.next().ok_or_else(|| err(3, "missing column header".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"t") {
        return Err(err(3, "first column must be `t`".into()));
    }
    let n_in = cols.iter().skip(1).take_while(|c| c.starts_with('u')).count();
    let n_out = cols.len() - 1 - n_in;
    for (i, c) in cols[1..1 + n_in].iter().enumerate() {
        if *c != format!("u{i}") {
            return Err(err(3, format!("expected column `u{i}`, got `{c}`")));
        }
    }
    for (i, c) in cols[1 + n_in..].iter().enumerate() {
        if *c != format!("y{i}") {
            return Err(err(3, format!("expected column `y{i}`, got `{c}`")));
        }
    }
    if n_in == 0 || n_out == 0 {
        return Err(err(3, "need at least one input and one target column".into()));
    }

    let width = n_in + n_out;
    let mut values: Vec<f64> = Vec::new();
    let mut len = 0usize;
    for (i, row) in lines.enumerate() {
        let line = i + 4;
        let mut fields = row.split(',');
        let t: usize = fields.next().unwrap_or("").parse().map_err(|e| err(line, format!("time index: {e}")))?;
        if t != len {
            return Err(err(line, format!("expected time index {len}, got {t}")));
        }
        let before = values.len();
        for f in fields {
            let v: f64 = f.parse().map_err(|e| err(line, format!("`{f}`: {e}")))?;
            if !v.is_finite() {
                return Err(err(line, format!("non-finite value `{f}`")));
            }
            values.push(v);
        }
        if values.len() - before != width {
            return Err(err(line, format!("expected {width} values, got {}", values.len() - before)));
        }
        len += 1;
    }
    if len <= washout {
        return Err(err(3, format!("{len} rows do not exceed the washout {washout}")));
    }
    let inputs = DMatrix::from_fn(n_in, len, |r, t| values[t * width + r]);
    let targets = DMatrix::from_fn(n_out, len, |r, t| values[t * width + n_in + r]);
    Ok(TaskSample { inputs, targets, washout, meta })
}

/// Description of a materialized dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub task_key_hash: String,
    pub task: TaskKind,
    pub seed: u64,
    pub dataset_seed: u64,
    pub sigma_in: Option<f64>,
    pub n_forward: Option<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub train_files: Vec<String>,
    pub test_files: Vec<String>,
    pub normalization: Option<Normalization>,
}

/// Generates the dataset described by `cfg` in memory.
pub fn generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    let t = &cfg.task;
    let seed = cfg.dataset_seed();
    let (n_train, n_test) = t.effective_counts();
    let ds = match t.kind {
        TaskKind::Attention => tasks::gen_attention(t.effective_sigma_in().unwrap_or(0.0), n_train, n_test, t.effective_length(), seed)?,
        TaskKind::Narma5 | TaskKind::Narma10 => tasks::gen_narma(t.kind.narma_order().unwrap_or(10), t.effective_length(), seed)?,
        TaskKind::Lorenz => tasks::gen_lorenz(
            t.effective_n_forward().unwrap_or(20),
            t.effective_sigma_in().unwrap_or(0.0),
            n_train,
            n_test,
            t.normalization,
            seed,
        )?,
    };
    Ok(ds)
}

fn file_name(split: Split, index: usize) -> String {
    format!("{}_{index:03}.csv", split.as_str())
}

/// Writes every sample plus `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, cfg: &ExperimentConfig, ds: &Dataset) -> Result<Manifest> {
    let mut manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        task_key_hash: crate::fsutil::short_hash(&cfg.task_key()),
        task: cfg.task.kind,
        seed: cfg.seed,
        dataset_seed: cfg.dataset_seed(),
        sigma_in: cfg.task.effective_sigma_in(),
        n_forward: cfg.task.effective_n_forward(),
        n_train: ds.train.len(),
        n_test: ds.test.len(),
        train_files: Vec::new(),
        test_files: Vec::new(),
        normalization: ds.normalization.clone(),
    };
    for (samples, names) in [(&ds.train, &mut manifest.train_files), (&ds.test, &mut manifest.test_files)] {
        for s in samples {
            let name = file_name(s.meta.split, s.meta.index);
            write_atomic(&dir.join(&name), encode_sample(s).as_bytes())?;
            names.push(name);
        }
    }
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

/// Loads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<(Manifest, Dataset)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_str(&read_to_string(&manifest_path)?)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(HarnessError::Schema(format!("{} has schema_version {}", manifest_path.display(), manifest.schema_version)));
    }
    let load = |names: &[String]| -> Result<Vec<TaskSample>> {
        names
            .iter()
            .map(|n| {
                let p: PathBuf = dir.join(n);
                decode_sample(&read_to_string(&p)?, &p.display().to_string())
            })
            .collect()
    };
    let train = load(&manifest.train_files)?;
    let test = load(&manifest.test_files)?;
    Ok((manifest.clone(), Dataset { train, test, normalization: manifest.normalization }))
}
