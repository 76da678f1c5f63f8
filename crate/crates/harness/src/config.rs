//! Experiment configuration: a flat `key=value` text format with dotted
//! section prefixes.
//!
//! ```text
//! file    = { line }
//! line    = [ ws ] ( comment | entry | "" ) [ ws ] newline
//! comment = "#" { any character }
//! entry   = key [ ws ] "=" [ ws ] value
//! key     = ident { "." ident }
//! ident   = ( "a".."z" | "_" ) { "a".."z" | "0".."9" | "_" }
//! value   = nonempty text up to end of line, surrounding whitespace trimmed
//! list    = value { "," value }
//! ```
//!
//! Each key may appear at most once per file. Later files (and `--preset`,
//! `--seed`, `--out` on the command line) override earlier ones.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use smrc_core::analysis::SensitivityConfig;
use smrc_core::reservoir::{GateMode, ModelConfig};
use smrc_core::rng;
use smrc_core::tasks::{NormalizationPolicy, TaskKind, ATTENTION_DEFAULT_LENGTH, LORENZ_KEEP, NARMA_DEFAULT_LENGTH};
use smrc_core::training::{ReadoutMode, SnapshotSelection, TrainConfig};

fn core_str<T>(r: smrc_core::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

use crate::error::{HarnessError, Result};
use crate::fsutil::{fmt_f64, hash_u64, read_to_string, short_hash};

pub const SCHEMA_VERSION: u32 = 1;

/// Training budgets: `desk` is 2000 epochs x 10 restarts, `paper` 10000 x 50.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(HarnessError::Config(format!("unknown preset `{s}` (expected desk or paper)"))),
        }
    }
}

impl Preset {
    pub fn apply(self, cfg: &mut ExperimentConfig) {
        let (epochs, restarts) = match self {
            Preset::Desk => (2000, 10),
            Preset::Paper => (10_000, 50),
        };
        cfg.train.epochs = epochs;
        cfg.train.n_restarts = restarts;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchKind {
    Grid,
    Random,
}

impl SearchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchKind::Grid => "grid",
            SearchKind::Random => "random",
        }
    }
}

impl FromStr for SearchKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(SearchKind::Grid),
            "random" => Ok(SearchKind::Random),
            _ => Err(HarnessError::Config(format!("unknown search `{s}` (expected grid or random)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// Input noise level; attention and Lorenz only.
    pub sigma_in: Option<f64>,
    /// Prediction horizon; Lorenz only.
    pub n_forward: Option<usize>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    /// Sequence length; attention and NARMA only.
    pub length: Option<usize>,
    pub normalization: NormalizationPolicy,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::Attention,
            sigma_in: None,
            n_forward: None,
            n_train: None,
            n_test: None,
            length: None,
            normalization: NormalizationPolicy::PerSplit,
        }
    }
}

impl TaskConfig {
    pub fn effective_sigma_in(&self) -> Option<f64> {
        match self.kind {
            TaskKind::Attention => Some(self.sigma_in.unwrap_or(0.1)),
            TaskKind::Lorenz => Some(self.sigma_in.unwrap_or(0.03)),
            TaskKind::Narma5 | TaskKind::Narma10 => None,
        }
    }

    pub fn effective_n_forward(&self) -> Option<usize> {
        (self.kind == TaskKind::Lorenz).then(|| self.n_forward.unwrap_or(20))
    }

    pub fn effective_counts(&self) -> (usize, usize) {
        match self.kind {
            TaskKind::Narma5 | TaskKind::Narma10 => (1, 1),
            _ => (self.n_train.unwrap_or(100), self.n_test.unwrap_or(100)),
        }
    }

    pub fn effective_length(&self) -> usize {
        match self.kind {
            TaskKind::Attention => self.length.unwrap_or(ATTENTION_DEFAULT_LENGTH),
            TaskKind::Narma5 | TaskKind::Narma10 => self.length.unwrap_or(NARMA_DEFAULT_LENGTH),
            TaskKind::Lorenz => LORENZ_KEEP - self.effective_n_forward().unwrap_or(0),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let task = self.kind;
        let narma = task.narma_order().is_some();
        if narma && self.sigma_in.is_some() {
            return bad(format!("task.sigma_in does not apply to {task}"));
        }
        if task != TaskKind::Lorenz && self.n_forward.is_some() {
            return bad(format!("task.n_forward does not apply to {task}"));
        }
        if narma && (self.n_train.is_some() || self.n_test.is_some()) {
            return bad(format!("{task} always has one train and one test sequence"));
        }
        if task == TaskKind::Lorenz && self.length.is_some() {
            return bad("task.length does not apply to lorenz".into());
        }
        if let Some(s) = self.sigma_in {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("task.sigma_in must be finite and >= 0, got {s}"));
            }
        }
        let (n_train, n_test) = self.effective_counts();
        if n_train == 0 || n_test == 0 {
            return bad("task.n_train and task.n_test must be at least 1".into());
        }
        Ok(())
    }
}

/// Optional lists whose cross product defines the cells of a sweep.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepAxes {
    pub n_res: Option<Vec<usize>>,
    pub sigma_in: Option<Vec<f64>>,
    pub n_forward: Option<Vec<usize>>,
    pub gate_mode: Option<Vec<GateMode>>,
}

impl SweepAxes {
    pub fn is_empty(&self) -> bool {
        self.n_res.is_none() && self.sigma_in.is_none() && self.n_forward.is_none() && self.gate_mode.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HpoConfig {
    pub search: SearchKind,
    pub budget: usize,
    pub validation_fraction: f64,
}

impl Default for HpoConfig {
    fn default() -> Self {
        Self { search: SearchKind::Random, budget: 60, validation_fraction: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityRunConfig {
    pub t_p: Vec<usize>,
    /// `t_p` inside is ignored; one profile is computed per entry of `t_p` above.
    pub base: SensitivityConfig,
    pub n_realizations: usize,
}

impl Default for SensitivityRunConfig {
    fn default() -> Self {
        Self { t_p: vec![2], base: SensitivityConfig::default(), n_realizations: 100 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub task: TaskConfig,
    /// `n_in`, `n_out` and `seed` are derived; see [`ExperimentConfig::model_config`].
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sweep: SweepAxes,
    pub hpo: HpoConfig,
    pub sensitivity: SensitivityRunConfig,
    pub output_dir: PathBuf,
    /// Fill the `wallclock_s` column. Off by default so reruns are byte-identical.
    pub record_wallclock: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            task: TaskConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sweep: SweepAxes::default(),
            hpo: HpoConfig::default(),
            sensitivity: SensitivityRunConfig::default(),
            output_dir: PathBuf::from("smrc-out"),
            record_wallclock: false,
        }
    }
}

/// One `key=value` line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

fn valid_key(key: &str) -> bool {
    key.split('.').all(|ident| {
        let mut chars = ident.chars();
        matches!(chars.next(), Some('a'..='z' | '_')) && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_'))
    })
}

/// Splits config text into entries. Checks syntax and duplicate keys only.
pub fn parse_entries(text: &str, origin: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| HarnessError::Parse { origin: origin.to_string(), line, message };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| err(format!("expected key=value, got `{trimmed}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if !valid_key(key) {
            return Err(err(format!("invalid key `{key}`")));
        }
        if value.is_empty() {
            return Err(err(format!("empty value for `{key}`")));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(err(format!("duplicate key `{key}` (first set on line {})", prev.line)));
        }
        out.push(Entry { key: key.to_string(), value: value.to_string(), line });
    }
    Ok(out)
}

fn parse_value<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
}

fn parse_f64(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = parse_value(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("`{v}` is not a finite number"))
    }
}

fn parse_list<T>(v: &str, item: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    v.split(',').map(|s| s.trim()).map(|s| if s.is_empty() { Err("empty list item".to_string()) } else { item(s) }).collect()
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("`{v}` is not true or false")),
    }
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Applies parsed entries on top of `self`.
    pub fn apply_entries(&mut self, entries: &[Entry], origin: &str) -> Result<()> {
        for e in entries {
            self.set(&e.key, &e.value)
                .map_err(|message| HarnessError::Parse { origin: origin.to_string(), line: e.line, message: format!("{}: {message}", e.key) })?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "schema_version" => self.schema_version = parse_value(v)?,
            "seed" => self.seed = parse_value(v)?,
            "task" => self.task.kind = core_str(v.parse())?,
            "task.sigma_in" => self.task.sigma_in = Some(parse_f64(v)?),
            "task.n_forward" => self.task.n_forward = Some(parse_value(v)?),
            "task.n_train" => self.task.n_train = Some(parse_value(v)?),
            "task.n_test" => self.task.n_test = Some(parse_value(v)?),
            "task.length" => self.task.length = Some(parse_value(v)?),
            "task.normalization" => {
                self.task.normalization = match v {
                    "per_split" => NormalizationPolicy::PerSplit,
                    "train_stats" => NormalizationPolicy::TrainStats,
                    _ => return Err(format!("`{v}` is not per_split or train_stats")),
                }
            }
            "model.n_res" => self.model.n_res = parse_value(v)?,
            "model.rho_in" => self.model.rho_in = parse_f64(v)?,
            "model.rho_hat_res" => self.model.rho_hat_res = parse_f64(v)?,
            "model.xi" => self.model.xi = parse_f64(v)?,
            "model.gate_mode" => self.model.gate_mode = core_str(v.parse())?,
            "train.epochs" => self.train.epochs = parse_value(v)?,
            "train.learning_rate" => self.train.learning_rate = parse_f64(v)?,
            "train.n_restarts" => self.train.n_restarts = parse_value(v)?,
            "train.washout" => self.train.washout = parse_value(v)?,
            "train.ridge_lambda" => self.train.ridge_lambda = parse_f64(v)?,
            "train.readout_mode" => self.train.readout_mode = core_str(v.parse::<ReadoutMode>())?,
            "train.adam_beta1" => self.train.adam_beta1 = parse_f64(v)?,
            "train.adam_beta2" => self.train.adam_beta2 = parse_f64(v)?,
            "train.adam_epsilon" => self.train.adam_epsilon = parse_f64(v)?,
            "train.snapshot_selection" => self.train.snapshot_selection = core_str(v.parse::<SnapshotSelection>())?,
            "sweep.n_res" => self.sweep.n_res = Some(parse_list(v, parse_value)?),
            "sweep.sigma_in" => self.sweep.sigma_in = Some(parse_list(v, parse_f64)?),
            "sweep.n_forward" => self.sweep.n_forward = Some(parse_list(v, parse_value)?),
            "sweep.gate_mode" => self.sweep.gate_mode = Some(parse_list(v, |s| core_str(s.parse()))?),
            "hpo.search" => self.hpo.search = v.parse().map_err(|e: HarnessError| e.to_string())?,
            "hpo.budget" => self.hpo.budget = parse_value(v)?,
            "hpo.validation_fraction" => self.hpo.validation_fraction = parse_f64(v)?,
            "sensitivity.t_p" => self.sensitivity.t_p = parse_list(v, parse_value)?,
            "sensitivity.epsilon" => self.sensitivity.base.epsilon = parse_f64(v)?,
            "sensitivity.n_p" => self.sensitivity.base.n_p = parse_value(v)?,
            "sensitivity.mh_proposal_scale" => self.sensitivity.base.mh_proposal_scale = parse_f64(v)?,
            "sensitivity.mh_burn_in" => self.sensitivity.base.mh_burn_in = parse_value(v)?,
            "sensitivity.mh_thinning" => self.sensitivity.base.mh_thinning = parse_value(v)?,
            "sensitivity.n_realizations" => self.sensitivity.n_realizations = parse_value(v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            "output.record_wallclock" => self.record_wallclock = parse_bool(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Parses one config text on top of the defaults and validates it.
    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_entries(&parse_entries(text, origin)?, origin)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults, then `preset`, then each file in order.
    pub fn load(paths: &[impl AsRef<Path>], preset: Option<Preset>) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = preset {
            p.apply(&mut cfg);
        }
        for path in paths {
            let path = path.as_ref();
            let text = read_to_string(path)?;
            let origin = path.display().to_string();
            cfg.apply_entries(&parse_entries(&text, &origin)?, &origin)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Schema(format!(
                "config schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.task.validate()?;
        self.model_config().validate()?;
        self.train.validate()?;
        if self.train.washout >= self.task.effective_length() {
            return bad(format!("train.washout {} must be shorter than the sequences", self.train.washout));
        }
        let s = &self.sweep;
        if [s.n_res.as_ref().map(Vec::len), s.sigma_in.as_ref().map(Vec::len), s.n_forward.as_ref().map(Vec::len), s.gate_mode.as_ref().map(Vec::len)]
            .contains(&Some(0))
        {
            return bad("sweep axes must be nonempty when present".into());
        }
        if self.hpo.budget == 0 {
            return bad("hpo.budget must be at least 1".into());
        }
        if !(self.hpo.validation_fraction > 0.0 && self.hpo.validation_fraction < 1.0) {
            return bad("hpo.validation_fraction must lie in (0, 1)".into());
        }
        if self.sensitivity.t_p.is_empty() || self.sensitivity.t_p.contains(&0) {
            return bad("sensitivity.t_p must list positive integers".into());
        }
        self.sensitivity.base.validate()?;
        if self.sensitivity.n_realizations < 2 {
            return bad("sensitivity.n_realizations must be at least 2".into());
        }
        for cell in self.cells() {
            cell.task.validate()?;
            cell.model_config().validate()?;
        }
        Ok(())
    }

    /// Canonical text listing every setting; parses back to an equal config.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.cell_key());
        let s = &self.sweep;
        let mut line = |k: &str, v: String| writeln!(out, "{k}={v}").expect("writing to a String");
        if let Some(v) = &s.n_res {
            line("sweep.n_res", join(v, |x| x.to_string()));
        }
        if let Some(v) = &s.sigma_in {
            line("sweep.sigma_in", join(v, |x| fmt_f64(*x)));
        }
        if let Some(v) = &s.n_forward {
            line("sweep.n_forward", join(v, |x| x.to_string()));
        }
        if let Some(v) = &s.gate_mode {
            line("sweep.gate_mode", join(v, |x| x.to_string()));
        }
        line("hpo.search", self.hpo.search.as_str().into());
        line("hpo.budget", self.hpo.budget.to_string());
        line("hpo.validation_fraction", fmt_f64(self.hpo.validation_fraction));
        let sens = &self.sensitivity;
        line("sensitivity.t_p", join(&sens.t_p, |x| x.to_string()));
        line("sensitivity.epsilon", fmt_f64(sens.base.epsilon));
        line("sensitivity.n_p", sens.base.n_p.to_string());
        line("sensitivity.mh_proposal_scale", fmt_f64(sens.base.mh_proposal_scale));
        line("sensitivity.mh_burn_in", sens.base.mh_burn_in.to_string());
        line("sensitivity.mh_thinning", sens.base.mh_thinning.to_string());
        line("sensitivity.n_realizations", sens.n_realizations.to_string());
        line("output.dir", self.output_dir.display().to_string());
        line("output.record_wallclock", self.record_wallclock.to_string());
        out
    }

    /// Canonical text of the settings that determine the data only.
    pub fn task_key(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| writeln!(out, "{k}={v}").expect("writing to a String");
        let t = &self.task;
        line("schema_version", self.schema_version.to_string());
        line("seed", self.seed.to_string());
        line("task", t.kind.to_string());
        if let Some(v) = t.sigma_in {
            line("task.sigma_in", fmt_f64(v));
        }
        if let Some(v) = t.n_forward {
            line("task.n_forward", v.to_string());
        }
        if let Some(v) = t.n_train {
            line("task.n_train", v.to_string());
        }
        if let Some(v) = t.n_test {
            line("task.n_test", v.to_string());
        }
        if let Some(v) = t.length {
            line("task.length", v.to_string());
        }
        line(
            "task.normalization",
            match t.normalization {
                NormalizationPolicy::PerSplit => "per_split",
                NormalizationPolicy::TrainStats => "train_stats",
            }
            .into(),
        );
        out
    }

    /// Canonical text of the settings that determine a training cell.
    pub fn cell_key(&self) -> String {
        let mut out = self.task_key();
        let mut line = |k: &str, v: String| writeln!(out, "{k}={v}").expect("writing to a String");
        let m = &self.model;
        line("model.n_res", m.n_res.to_string());
        line("model.rho_in", fmt_f64(m.rho_in));
        line("model.rho_hat_res", fmt_f64(m.rho_hat_res));
        line("model.xi", fmt_f64(m.xi));
        line("model.gate_mode", m.gate_mode.to_string());
        let t = &self.train;
        line("train.epochs", t.epochs.to_string());
        line("train.learning_rate", fmt_f64(t.learning_rate));
        line("train.n_restarts", t.n_restarts.to_string());
        line("train.washout", t.washout.to_string());
        line("train.ridge_lambda", fmt_f64(t.ridge_lambda));
        line("train.readout_mode", t.readout_mode.to_string());
        line("train.adam_beta1", fmt_f64(t.adam_beta1));
        line("train.adam_beta2", fmt_f64(t.adam_beta2));
        line("train.adam_epsilon", fmt_f64(t.adam_epsilon));
        line("train.snapshot_selection", t.snapshot_selection.to_string());
        out
    }

    pub fn config_hash(&self) -> String {
        short_hash(&self.to_config_text())
    }

    pub fn cell_hash(&self) -> String {
        short_hash(&self.cell_key())
    }

    /// Seed for the task generator; shared by every cell on the same data.
    pub fn dataset_seed(&self) -> u64 {
        rng::derive_seed(self.seed, &[rng::tag("dataset"), hash_u64(&self.task_key())])
    }

    /// Model configuration of this cell, with the derived dimensions and seed.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            n_in: 1,
            n_out: 1,
            seed: rng::derive_seed(self.seed, &[rng::tag("cell"), hash_u64(&self.cell_key())]),
            ..self.model.clone()
        }
    }

    /// Sensitivity settings for one propagation horizon.
    pub fn sensitivity_config(&self, t_p: usize) -> SensitivityConfig {
        SensitivityConfig { t_p, ..self.sensitivity.base.clone() }
    }

    /// Cross product of the sweep axes (`n_res` outermost, `gate_mode`
    /// innermost). Without axes, the config itself is the single cell.
    pub fn cells(&self) -> Vec<ExperimentConfig> {
        let s = &self.sweep;
        let n_res = s.n_res.clone().map(|v| v.into_iter().map(Some).collect()).unwrap_or(vec![None]);
        let sigma = s.sigma_in.clone().map(|v| v.into_iter().map(Some).collect()).unwrap_or(vec![None]);
        let n_fwd = s.n_forward.clone().map(|v| v.into_iter().map(Some).collect()).unwrap_or(vec![None]);
        let modes = s.gate_mode.clone().map(|v| v.into_iter().map(Some).collect()).unwrap_or(vec![None]);
        let mut cells = Vec::new();
        for n in &n_res {
            for sg in &sigma {
                for nf in &n_fwd {
                    for gm in &modes {
                        let mut c = self.clone();
                        c.sweep = SweepAxes::default();
                        if let Some(n) = n {
                            c.model.n_res = *n;
                        }
                        if let Some(sg) = sg {
                            c.task.sigma_in = Some(*sg);
                        }
                        if let Some(nf) = nf {
                            c.task.n_forward = Some(*nf);
                        }
                        if let Some(gm) = gm {
                            c.model.gate_mode = *gm;
                        }
                        cells.push(c);
                    }
                }
            }
        }
        cells
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "\
# attention sweep
schema_version = 1
seed=7
task=attention
task.sigma_in=0.1
model.n_res=50
model.gate_mode=dynamic_both
train.epochs = 3
sweep.n_res=20, 30
sweep.gate_mode=conventional,dynamic_both
";

    #[test]
    fn parses_sample() {
        let c = ExperimentConfig::from_text(SAMPLE, "sample").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.task.effective_sigma_in(), Some(0.1));
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.sweep.n_res, Some(vec![20, 30]));
        let cells = c.cells();
        assert_eq!(cells.len(), 4);
        assert_eq!((cells[1].model.n_res, cells[1].model.gate_mode), (20, GateMode::DynamicBoth));
        assert!(cells.iter().all(|c| c.sweep.is_empty()));
    }

    #[test]
    fn canonical_text_round_trips() {
        let c = ExperimentConfig::from_text(SAMPLE, "sample").unwrap();
        let text = c.to_config_text();
        let back = ExperimentConfig::from_text(&text, "canonical").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_config_text(), text);
    }

    #[test]
    fn rejects_bad_input() {
        for (text, needle) in [
            ("seed", "expected key=value"),
            ("Seed=1", "invalid key"),
            ("seed=1\nseed=2", "duplicate key"),
            ("model.nres=3", "unknown key"),
            ("seed=", "empty value"),
            ("model.rho_in=nan", "not a finite number"),
            ("task=narma10\ntask.sigma_in=0.1", "does not apply"),
            ("sweep.n_res=1,,2", "empty list item"),
            ("model.gate_mode=both", "unknown gate mode"),
        ] {
            let err = ExperimentConfig::from_text(text, "t").unwrap_err().to_string();
            assert!(err.contains(needle), "`{text}` gave `{err}`");
        }
        let err = ExperimentConfig::from_text("schema_version=2", "t").unwrap_err();
        assert!(matches!(err, HarnessError::Schema(_)));
    }

    #[test]
    fn presets_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.conf");
        std::fs::write(&p, "train.epochs=5\n").unwrap();
        let c = ExperimentConfig::load(&[&p], Some(Preset::Desk)).unwrap();
        assert_eq!((c.train.epochs, c.train.n_restarts), (5, 10));
        let c = ExperimentConfig::load(&[] as &[&Path], Some(Preset::Paper)).unwrap();
        assert_eq!((c.train.epochs, c.train.n_restarts), (10_000, 50));
    }

    #[test]
    fn seeds_and_hashes() {
        let a = ExperimentConfig::from_text(SAMPLE, "s").unwrap();
        let cells = a.cells();
        assert_eq!(cells[0].dataset_seed(), cells[3].dataset_seed());
        assert_ne!(cells[0].model_config().seed, cells[1].model_config().seed);
        assert_ne!(cells[0].cell_hash(), cells[1].cell_hash());
        let mut b = a.clone();
        b.sensitivity.base.n_p = 3;
        assert_eq!(a.cell_hash(), b.cell_hash());
        assert_ne!(a.config_hash(), b.config_hash());
    }

    proptest! {
        #[test]
        fn parser_never_panics(text in "\\PC{0,200}") {
            let _ = ExperimentConfig::from_text(&text, "fuzz");
        }

        #[test]
        fn numeric_settings_round_trip(rho in 0.0f64..3.0, xi in -1.0f64..1.0, lr in 1e-6f64..1.0, n in 1usize..500, seed in any::<u64>()) {
            let mut c = ExperimentConfig::default();
            c.model.rho_in = rho;
            c.model.xi = xi;
            c.train.learning_rate = lr;
            c.model.n_res = n;
            c.seed = seed;
            let back = ExperimentConfig::from_text(&c.to_config_text(), "rt").unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
