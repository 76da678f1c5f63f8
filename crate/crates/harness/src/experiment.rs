//! Experiment orchestration behind the CLI subcommands.
//!
//! Output layout under the output directory:
//!
//! ```text
//! dataset/                    generate: samples + manifest.json
//! cells/<cell_hash>/          cell.conf, restart_NNN.json, restart_NNN.ckpt.json, best.ckpt.json
//! runs.csv, curves.csv        train / sweep
//! plots/*.csv                 sweep
//! hpo/trials.csv, best.conf   hpo
//! sensitivity/*.csv           sensitivity
//! eval/                       evaluate
//! report.txt                  report
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smrc_core::analysis::{ensemble_stats, model_mse, mse_report, EnsembleQuantity, SeriesStats};
use smrc_core::reservoir::{GateMode, Model};
use smrc_core::rng;
use smrc_core::tasks::{attention_sample, Dataset, TaskKind, TaskSample};
use smrc_core::training::{restart_seed, train_once, TrainOutcome};
use smrc_core::SmrcError;

use crate::checkpoint::{Checkpoint, Provenance};
use crate::config::{ExperimentConfig, SearchKind};
use crate::dataset;
use crate::error::{HarnessError, Result};
use crate::fsutil::{fmt_f64, write_atomic};
use crate::records::{encode_curves, write_runs, RestartResult, RunRecord};

pub const BEST_CHECKPOINT: &str = "best.ckpt.json";

pub fn cell_dir(out: &Path, cfg: &ExperimentConfig) -> PathBuf {
    out.join("cells").join(cfg.cell_hash())
}

pub fn best_checkpoint_path(out: &Path, cfg: &ExperimentConfig) -> PathBuf {
    cell_dir(out, cfg).join(BEST_CHECKPOINT)
}

/// Samples with their washout replaced by the configured one.
pub fn with_washout(samples: &[TaskSample], washout: usize) -> Vec<TaskSample> {
    samples.iter().map(|s| TaskSample { washout, ..s.clone() }).collect()
}

/// All finished restarts of one cell.
#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub cell: ExperimentConfig,
    pub results: Vec<RestartResult>,
    /// Index into `results` of the restart with the lowest train MSE.
    pub best: usize,
    pub failures: Vec<String>,
}

impl CellOutcome {
    pub fn best_record(&self) -> &RunRecord {
        &self.results[self.best].record
    }
}

fn record_for(cfg: &ExperimentConfig, outcome: &TrainOutcome, test_mse: f64, wallclock: Option<f64>) -> RunRecord {
    RunRecord {
        config_hash: cfg.cell_hash(),
        task: cfg.task.kind.to_string(),
        n_res: cfg.model.n_res,
        sigma_in: cfg.task.effective_sigma_in(),
        n_forward: cfg.task.effective_n_forward(),
        gate_mode: cfg.model.gate_mode.to_string(),
        restart: outcome.restart,
        selected_epoch: outcome.selected_epoch,
        train_mse: outcome.train_mse,
        test_mse,
        wallclock_s: wallclock,
        degraded: outcome.degraded,
    }
}

fn run_restart(cfg: &ExperimentConfig, data: &Dataset, dir: &Path, restart: usize) -> Result<RestartResult> {
    let start = Instant::now();
    let mc = cfg.model_config();
    let seed = restart_seed(mc.seed, restart);
    let outcome = train_once(&mc, &data.train, &cfg.train, restart, seed)?;
    // Scored once, after the snapshot has been selected.
    let test_mse = model_mse(&outcome.model, &with_washout(&data.test, cfg.train.washout))?;
    let wallclock = cfg.record_wallclock.then(|| start.elapsed().as_secs_f64());
    let ckpt_name = format!("restart_{restart:03}.ckpt.json");
    let provenance = Provenance {
        cell_hash: cfg.cell_hash(),
        seed,
        restart,
        selected_epoch: outcome.selected_epoch,
        selection: cfg.train.snapshot_selection,
        readout_mode: cfg.train.readout_mode,
    };
    Checkpoint::from_model(&outcome.model, provenance).save(&dir.join(&ckpt_name))?;
    let result = RestartResult {
        record: record_for(cfg, &outcome, test_mse, wallclock),
        curve: outcome.curve.iter().map(|v| v.is_finite().then_some(*v)).collect(),
        checkpoint_file: Some(ckpt_name),
    };
    result.save(&dir.join(format!("restart_{restart:03}.json")))?;
    Ok(result)
}

/// Trains every restart of one cell, reusing finished restarts when `resume`
/// is set, and stores the selected checkpoint as `best.ckpt.json`.
pub fn run_cell(cfg: &ExperimentConfig, data: &Dataset, out: &Path, resume: bool) -> Result<CellOutcome> {
    let dir = cell_dir(out, cfg);
    write_atomic(&dir.join("cell.conf"), cfg.cell_key().as_bytes())?;
    let hash = cfg.cell_hash();
    let runs: Vec<std::result::Result<RestartResult, String>> = (0..cfg.train.n_restarts)
        .into_par_iter()
        .map(|r| {
            let marker = dir.join(format!("restart_{r:03}.json"));
            if resume && marker.exists() {
                match RestartResult::load(&marker) {
                    Ok(done) if done.record.config_hash == hash && done.record.restart == r => return Ok(done),
                    _ => log::warn!("{}: unusable resume marker; retraining", marker.display()),
                }
            }
            log::info!("cell {hash} restart {r}: training");
            run_restart(cfg, data, &dir, r).map_err(|e| format!("cell {hash} restart {r}: {e}"))
        })
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for r in runs {
        match r {
            Ok(v) => results.push(v),
            Err(e) => {
                log::error!("{e}");
                failures.push(e);
            }
        }
    }
    if results.is_empty() {
        return Err(SmrcError::AllRestartsFailed(failures).into());
    }
    let best = results
        .iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, f64)>, (i, r)| match acc {
            Some((_, m)) if m <= r.record.train_mse => acc,
            _ => Some((i, r.record.train_mse)),
        })
        .map(|(i, _)| i)
        .expect("at least one restart");
    let best_file = results[best].checkpoint_file.as_deref().map(|f| dir.join(f));
    match best_file {
        Some(p) if p.exists() => {
            let bytes = std::fs::read(&p).map_err(crate::error::io_err(&p))?;
            write_atomic(&dir.join(BEST_CHECKPOINT), &bytes)?;
        }
        _ => return Err(HarnessError::Missing(dir.join(format!("restart_{:03}.ckpt.json", results[best].record.restart)))),
    }
    Ok(CellOutcome { cell: cfg.clone(), results, best, failures })
}

/// Rows for `runs.csv` and the curve file content for a list of cells.
pub fn write_aggregates(out: &Path, cells: &[CellOutcome]) -> Result<()> {
    let records: Vec<RunRecord> = cells.iter().flat_map(|c| c.results.iter().map(|r| r.record.clone())).collect();
    write_runs(&out.join("runs.csv"), &records)?;
    let curves = encode_curves(
        cells.iter().flat_map(|c| c.results.iter().map(|r| (r.record.config_hash.as_str(), r.record.restart, r.curve.as_slice()))),
    )?;
    write_atomic(&out.join("curves.csv"), curves.as_bytes())
}

/// Human-readable table of one cell's restarts.
pub fn cell_summary(cell: &CellOutcome) -> String {
    let mut s = String::new();
    let c = &cell.cell;
    writeln!(
        s,
        "cell {} task={} n_res={} gate_mode={} readout={}",
        c.cell_hash(),
        c.task.kind,
        c.model.n_res,
        c.model.gate_mode,
        c.train.readout_mode
    )
    .unwrap();
    writeln!(s, "{:>7} {:>8} {:>14} {:>14} {:>8}", "restart", "epoch", "train_mse", "test_mse", "degraded").unwrap();
    for (i, r) in cell.results.iter().enumerate() {
        let rec = &r.record;
        let mark = if i == cell.best { " *" } else { "" };
        writeln!(
            s,
            "{:>7} {:>8} {:>14.6e} {:>14.6e} {:>8}{mark}",
            rec.restart, rec.selected_epoch, rec.train_mse, rec.test_mse, rec.degraded
        )
        .unwrap();
    }
    for f in &cell.failures {
        writeln!(s, "failed: {f}").unwrap();
    }
    s
}

/// `train`: one cell (the config without sweep axes).
pub fn train(cfg: &ExperimentConfig, resume: bool) -> Result<CellOutcome> {
    let data = dataset::generate(cfg)?;
    let cell = run_cell(cfg, &data, &cfg.output_dir, resume)?;
    write_aggregates(&cfg.output_dir, std::slice::from_ref(&cell))?;
    Ok(cell)
}

/// `generate`: materializes the dataset under `<out>/dataset`.
pub fn generate(cfg: &ExperimentConfig) -> Result<dataset::Manifest> {
    let data = dataset::generate(cfg)?;
    dataset::write_dataset(&cfg.output_dir.join("dataset"), cfg, &data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: usize,
    pub rho_in: f64,
    pub rho_hat_res: f64,
    pub xi: f64,
    /// `None` when training failed.
    pub val_mse: Option<f64>,
}

pub const RHO_IN_RANGE: (f64, f64) = (0.01, 2.0);
pub const RHO_HAT_RANGE: (f64, f64) = (0.1, 1.6);
pub const XI_RANGE: (f64, f64) = (0.0, 1.0);

/// Whether the bias `xi` is searched (Lorenz) or fixed at 0.
fn searches_xi(task: TaskKind) -> bool {
    task == TaskKind::Lorenz
}

/// Candidate `(rho_in, rho_hat_res, xi)` triples.
pub fn hpo_candidates(cfg: &ExperimentConfig) -> Vec<(f64, f64, f64)> {
    let budget = cfg.hpo.budget;
    let with_xi = searches_xi(cfg.task.kind);
    let (lo, hi) = (RHO_IN_RANGE.0.ln(), RHO_IN_RANGE.1.ln());
    match cfg.hpo.search {
        SearchKind::Random => {
            let mut s = rng::stream(cfg.seed, &[rng::tag("hpo")]);
            (0..budget)
                .map(|_| {
                    let rho_in = s.random_range(lo..=hi).exp();
                    let rho_hat = s.random_range(RHO_HAT_RANGE.0..=RHO_HAT_RANGE.1);
                    let xi = if with_xi { s.random_range(XI_RANGE.0..=XI_RANGE.1) } else { 0.0 };
                    (rho_in, rho_hat, xi)
                })
                .collect()
        }
        SearchKind::Grid => {
            let dims = if with_xi { 3 } else { 2 };
            let mut k = 1usize;
            while (k + 1).pow(dims) <= budget {
                k += 1;
            }
            let axis = |a: f64, b: f64| -> Vec<f64> {
                if k == 1 {
                    vec![0.5 * (a + b)]
                } else {
                    (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect()
                }
            };
            let rho_in: Vec<f64> = axis(lo, hi).into_iter().map(f64::exp).collect();
            let rho_hat = axis(RHO_HAT_RANGE.0, RHO_HAT_RANGE.1);
            let xi = if with_xi { axis(XI_RANGE.0, XI_RANGE.1) } else { vec![0.0] };
            let mut out = Vec::new();
            for &a in &rho_in {
                for &b in &rho_hat {
                    for &c in &xi {
                        out.push((a, b, c));
                    }
                }
            }
            out
        }
    }
}

/// Splits training data into fit and validation parts: the last
/// `fraction` of the sequences, or, for a single sequence, its last
/// `fraction` of time steps (the validation run still starts at t = 0).
pub fn validation_split(train: &[TaskSample], fraction: f64, washout: usize) -> Result<(Vec<TaskSample>, Vec<TaskSample>)> {
    let train = with_washout(train, washout);
    if train.len() >= 2 {
        let n_val = ((train.len() as f64 * fraction).round() as usize).clamp(1, train.len() - 1);
        let (fit, val) = train.split_at(train.len() - n_val);
        return Ok((fit.to_vec(), val.to_vec()));
    }
    let s = train.first().ok_or_else(|| SmrcError::EmptyData("no training sequences".into()))?;
    let len = s.len();
    let cut = len - ((len as f64 * fraction).round() as usize).max(1);
    if cut <= washout {
        return Err(HarnessError::Config(format!("sequence of {len} steps too short for a validation split after washout {washout}")));
    }
    let fit = TaskSample { inputs: s.inputs.columns(0, cut).into_owned(), targets: s.targets.columns(0, cut).into_owned(), washout, meta: s.meta.clone() };
    let val = TaskSample { washout: cut, ..s.clone() };
    Ok((vec![fit], vec![val]))
}

/// Baseline search over conventional-RC hyperparameters. Every trial uses the
/// same underlying random matrices (rescaled), so trials differ only in the
/// searched values.
pub fn hpo(cfg: &ExperimentConfig) -> Result<(Vec<Trial>, usize)> {
    let mut base = cfg.clone();
    if base.model.gate_mode != GateMode::Conventional {
        log::info!("hpo searches conventional reservoirs; ignoring model.gate_mode={}", base.model.gate_mode);
        base.model.gate_mode = GateMode::Conventional;
    }
    let data = dataset::generate(&base)?;
    let (fit, val) = validation_split(&data.train, base.hpo.validation_fraction, base.train.washout)?;
    let common_seed = restart_seed(base.model_config().seed, 0);
    let candidates = hpo_candidates(&base);
    let trials: Vec<Trial> = candidates
        .par_iter()
        .enumerate()
        .map(|(i, &(rho_in, rho_hat_res, xi))| {
            let mut mc = base.model_config();
            mc.rho_in = rho_in;
            mc.rho_hat_res = rho_hat_res;
            mc.xi = xi;
            let val_mse = train_once(&mc, &fit, &base.train, 0, common_seed)
                .and_then(|o| model_mse(&o.model, &val))
                .ok()
                .filter(|v| v.is_finite());
            Trial { trial: i, rho_in, rho_hat_res, xi, val_mse }
        })
        .collect();
    let best = trials
        .iter()
        .filter_map(|t| t.val_mse.map(|v| (t.trial, v)))
        .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
            Some((_, b)) if b <= v => acc,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
        .ok_or_else(|| SmrcError::AllRestartsFailed(vec!["every hpo trial failed".into()]))?;
    Ok((trials, best))
}

pub fn write_hpo(out: &Path, cfg: &ExperimentConfig, trials: &[Trial], best: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["trial", "rho_in", "rho_hat_res", "xi", "val_mse"])?;
    for t in trials {
        w.write_record([
            t.trial.to_string(),
            fmt_f64(t.rho_in),
            fmt_f64(t.rho_hat_res),
            fmt_f64(t.xi),
            t.val_mse.map(fmt_f64).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    write_atomic(&out.join("hpo").join("trials.csv"), &bytes)?;
    let t = &trials[best];
    let conf = format!(
        "# conventional baseline selected by validation MSE {} over {} trials ({} search)\n# config_hash: {}\nmodel.rho_in={}\nmodel.rho_hat_res={}\nmodel.xi={}\n",
        t.val_mse.map(fmt_f64).unwrap_or_default(),
        trials.len(),
        cfg.hpo.search.as_str(),
        cfg.config_hash(),
        fmt_f64(t.rho_in),
        fmt_f64(t.rho_hat_res),
        fmt_f64(t.xi),
    );
    write_atomic(&out.join("hpo").join("best.conf"), conf.as_bytes())
}

/// Input sequence of realization `i` for the sensitivity ensembles: a fresh
/// jitter-free attention sequence, or for other tasks the first test input of
/// a dataset generated with a derived seed.
pub fn sensitivity_input(cfg: &ExperimentConfig, i: usize) -> Result<DMatrix<f64>> {
    if cfg.task.kind == TaskKind::Attention {
        let mut s = rng::stream(cfg.seed, &[rng::tag("sensitivity-input"), i as u64]);
        let sigma = cfg.task.effective_sigma_in().unwrap_or(0.0);
        return Ok(attention_sample(sigma, cfg.task.effective_length(), 0, &mut s).inputs);
    }
    let mut c = cfg.clone();
    c.seed = rng::derive_seed(cfg.seed, &[rng::tag("sensitivity-input"), i as u64]);
    if c.task.kind == TaskKind::Lorenz {
        c.task.n_train = Some(1);
        c.task.n_test = Some(1);
    }
    Ok(dataset::generate(&c)?.test.remove(0).inputs)
}

fn write_series_file(path: &Path, header: &str, columns: &[&str], series: &[&SeriesStats]) -> Result<()> {
    let mut out = String::from(header);
    out.push('t');
    for c in columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    let len = series.first().map(|s| s.mean.len()).unwrap_or(0);
    for t in 0..len {
        write!(out, "{t}").unwrap();
        for s in series {
            write!(out, ",{},{}", fmt_f64(s.mean[t]), fmt_f64(s.std[t])).unwrap();
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// `sensitivity`: gate statistics plus one sensitivity profile per `t_p`.
/// Returns the files written.
pub fn sensitivity(cfg: &ExperimentConfig, model: &Model, checkpoint_name: &str) -> Result<Vec<PathBuf>> {
    if cfg.task.kind != TaskKind::Attention {
        log::warn!("sensitivity analysis on {} is experimental", cfg.task.kind);
    }
    let n = cfg.sensitivity.n_realizations;
    let dir = cfg.output_dir.join("sensitivity");
    let generate = |i: usize| sensitivity_input(cfg, i).map_err(|e| SmrcError::InvalidConfig(e.to_string()));
    let seed = rng::derive_seed(cfg.seed, &[rng::tag("sensitivity")]);
    let mut written = Vec::new();

    let head = |what: &str| {
        format!(
            "# {what}\n# checkpoint: {checkpoint_name}\n# config_hash: {}\n# realizations: {n} (jitter-free)\n",
            cfg.config_hash()
        )
    };
    let gates = ensemble_stats(model, generate, n, EnsembleQuantity::Gates, &cfg.sensitivity_config(1), seed)?;
    let path = dir.join("gates.csv");
    write_series_file(
        &path,
        &head("input gate and modulated spectral radius rho_res(t) = g_res(t-1) * rho_hat, mean and standard deviation over input realizations"),
        &["g_in_mean", "g_in_std", "rho_res_mean", "rho_res_std"],
        &[&gates[0], &gates[1]],
    )?;
    written.push(path);

    for &t_p in &cfg.sensitivity.t_p {
        let sc = cfg.sensitivity_config(t_p);
        let stats = ensemble_stats(model, generate, n, EnsembleQuantity::Sensitivity, &sc, seed)?;
        let path = dir.join(format!("sensitivity_tp{t_p}.csv"));
        let what = format!(
            "local sensitivity lambda(t) and lambda_max(t), t_p={} epsilon={} n_p={}; floor_hits counts distances clamped at 1e-300",
            sc.t_p,
            fmt_f64(sc.epsilon),
            sc.n_p
        );
        write_series_file(
            &path,
            &head(&what),
            &["lambda_mean", "lambda_mean_std", "lambda_max", "lambda_max_std", "floor_hits_mean", "floor_hits_std"],
            &[&stats[0], &stats[1], &stats[2]],
        )?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub checkpoint_cell: String,
    pub test_mse: f64,
    pub per_sequence_mse: Vec<f64>,
}

/// `evaluate`: test MSE of a checkpoint on a materialized dataset, plus
/// per-sequence predictions.
pub fn evaluate(cfg: &ExperimentConfig, checkpoint: &Path, data_dir: &Path) -> Result<EvalMetrics> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.to_model()?;
    let (_, data) = dataset::read_dataset(data_dir)?;
    let test = with_washout(&data.test, cfg.train.washout);
    let test_mse = model_mse(&model, &test)?;
    let out = cfg.output_dir.join("eval");
    let mut per_sequence = Vec::with_capacity(test.len());
    for s in &test {
        let traj = model.run(&s.inputs, s.washout)?;
        per_sequence.push(mse_report(std::slice::from_ref(&traj.outputs), std::slice::from_ref(&s.targets), s.washout)?);
        let mut text = format!("# predictions of cell {} on {} sequence {}\nt", ck.provenance.cell_hash, s.meta.split.as_str(), s.meta.index);
        for i in 0..s.targets.nrows() {
            write!(text, ",y{i},yhat{i}").unwrap();
        }
        text.push('\n');
        for t in 0..s.len() {
            write!(text, "{t}").unwrap();
            for i in 0..s.targets.nrows() {
                write!(text, ",{},{}", fmt_f64(s.targets[(i, t)]), fmt_f64(traj.outputs[(i, t)])).unwrap();
            }
            text.push('\n');
        }
        write_atomic(&out.join(format!("pred_{}_{:03}.csv", s.meta.split.as_str(), s.meta.index)), text.as_bytes())?;
    }
    let metrics = EvalMetrics { checkpoint_cell: ck.provenance.cell_hash.clone(), test_mse, per_sequence_mse: per_sequence };
    let mut json = serde_json::to_string_pretty(&metrics)?;
    json.push('\n');
    write_atomic(&out.join("metrics.json"), json.as_bytes())?;
    Ok(metrics)
}

/// `sweep`: every cell of the cross product, then aggregates and plot data.
pub fn sweep(cfg: &ExperimentConfig, resume: bool) -> Result<Vec<CellOutcome>> {
    if cfg.sweep.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one sweep.* axis".into()));
    }
    let cells = cfg.cells();
    let mut datasets: BTreeMap<String, Arc<Dataset>> = BTreeMap::new();
    for c in &cells {
        let key = c.task_key();
        if let std::collections::btree_map::Entry::Vacant(e) = datasets.entry(key) {
            e.insert(Arc::new(dataset::generate(c)?));
        }
    }
    let results: Vec<std::result::Result<CellOutcome, String>> = cells
        .par_iter()
        .map(|c| {
            let data = &datasets[&c.task_key()];
            run_cell(c, data, &cfg.output_dir, resume).map_err(|e| format!("cell {}: {e}", c.cell_hash()))
        })
        .collect();
    let mut done = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(c) => {
                failed.extend(c.failures.iter().cloned());
                done.push(c);
            }
            Err(e) => failed.push(e),
        }
    }
    write_aggregates(&cfg.output_dir, &done)?;
    crate::plots::write_plots(&cfg.output_dir.join("plots"), cfg, &done)?;
    if !failed.is_empty() {
        return Err(HarnessError::CellsFailed(failed));
    }
    Ok(done)
}

/// Summary statistics of one cell in `runs.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellReport {
    pub config_hash: String,
    pub first: RunRecord,
    pub restarts: usize,
    pub selected: RunRecord,
    pub median_test_mse: f64,
    pub min_test_mse: f64,
    pub degraded: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Groups records by cell, in order of first appearance.
pub fn summarize(records: &[RunRecord]) -> Vec<CellReport> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        if !groups.contains_key(&r.config_hash) {
            order.push(r.config_hash.clone());
        }
        groups.entry(r.config_hash.clone()).or_default().push(r);
    }
    order
        .into_iter()
        .map(|h| {
            let rs = &groups[&h];
            let sel = select_best_record(rs);
            let mut tests: Vec<f64> = rs.iter().map(|r| r.test_mse).collect();
            let min_test = tests.iter().copied().fold(f64::INFINITY, f64::min);
            CellReport {
                config_hash: h.clone(),
                first: rs[0].clone(),
                restarts: rs.len(),
                selected: rs[sel].clone(),
                median_test_mse: median(&mut tests),
                min_test_mse: min_test,
                degraded: rs.iter().filter(|r| r.degraded).count(),
            }
        })
        .collect()
}

fn select_best_record(rs: &[&RunRecord]) -> usize {
    rs.iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, f64)>, (i, r)| match acc {
            Some((_, m)) if m <= r.train_mse => acc,
            _ => Some((i, r.train_mse)),
        })
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// `report`: a fixed-width table of every cell in `runs.csv`.
pub fn report(records: &[RunRecord]) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{:<16} {:<9} {:>6} {:>8} {:>9} {:<22} {:>8} {:>8} {:>13} {:>13} {:>13} {:>8}",
        "config_hash", "task", "n_res", "sigma_in", "n_forward", "gate_mode", "restarts", "selected", "train_mse", "test_mse", "median_test", "degraded"
    )
    .unwrap();
    for c in summarize(records) {
        let f = &c.first;
        writeln!(
            s,
            "{:<16} {:<9} {:>6} {:>8} {:>9} {:<22} {:>8} {:>8} {:>13.5e} {:>13.5e} {:>13.5e} {:>8}",
            c.config_hash,
            f.task,
            f.n_res,
            f.sigma_in.map(fmt_f64).unwrap_or_else(|| "-".into()),
            f.n_forward.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
            f.gate_mode,
            c.restarts,
            c.selected.restart,
            c.selected.train_mse,
            c.selected.test_mse,
            c.median_test_mse,
            c.degraded
        )
        .unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(text: &str, out: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::from_text(text, "t").unwrap();
        c.output_dir = out.to_path_buf();
        c
    }

    const TINY: &str = "task=attention\ntask.n_train=4\ntask.n_test=3\ntask.length=300\nmodel.n_res=8\ntrain.epochs=3\ntrain.n_restarts=2\n";

    #[test]
    fn train_writes_records_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(TINY, dir.path());
        let cell = train(&cfg, false).unwrap();
        assert_eq!(cell.results.len(), 2);
        let runs = std::fs::read(dir.path().join("runs.csv")).unwrap();
        assert!(best_checkpoint_path(dir.path(), &cfg).exists());
        let again = train(&cfg, true).unwrap();
        assert_eq!(std::fs::read(dir.path().join("runs.csv")).unwrap(), runs);
        assert_eq!(again.best, cell.best);
    }

    #[test]
    fn resume_reruns_missing_restart_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(TINY, dir.path());
        train(&cfg, false).unwrap();
        let cdir = cell_dir(dir.path(), &cfg);
        let kept = std::fs::read(cdir.join("restart_000.json")).unwrap();
        std::fs::remove_file(cdir.join("restart_001.json")).unwrap();
        std::fs::write(cdir.join("restart_000.ckpt.json"), "sentinel").unwrap();
        train(&cfg, true).unwrap();
        assert_eq!(std::fs::read(cdir.join("restart_000.json")).unwrap(), kept);
        assert_eq!(std::fs::read_to_string(cdir.join("restart_000.ckpt.json")).unwrap(), "sentinel");
        assert!(cdir.join("restart_001.json").exists());
    }

    #[test]
    fn conventional_cell_is_single_pass() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(&format!("{TINY}model.gate_mode=conventional\ntrain.epochs=50\n").replace("train.epochs=3\n", ""), dir.path());
        let cell = train(&cfg, false).unwrap();
        assert!(cell.results.iter().all(|r| r.curve.len() == 1 && r.record.selected_epoch == 0));
    }

    #[test]
    fn evaluate_matches_training_record() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(TINY, dir.path());
        let cell = train(&cfg, false).unwrap();
        generate(&cfg).unwrap();
        let m = evaluate(&cfg, &best_checkpoint_path(dir.path(), &cfg), &dir.path().join("dataset")).unwrap();
        assert_eq!(m.test_mse.to_bits(), cell.best_record().test_mse.to_bits());
        assert_eq!(m.per_sequence_mse.len(), 3);
        let err = evaluate(&cfg, &best_checkpoint_path(dir.path(), &cfg), &dir.path().join("missing")).unwrap_err().to_string();
        assert!(err.contains("missing") && err.contains("manifest.json"), "{err}");
    }

    #[test]
    fn hpo_budget_one_and_selection() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(&format!("{TINY}hpo.budget=1\n"), dir.path());
        let (trials, best) = hpo(&cfg).unwrap();
        assert_eq!((trials.len(), best), (1, 0));
        assert_eq!(trials[0].xi, 0.0);
        let cfg = tiny(&format!("{TINY}hpo.budget=5\n"), dir.path());
        let (trials, best) = hpo(&cfg).unwrap();
        let min = trials.iter().filter_map(|t| t.val_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(trials[best].val_mse, Some(min));
        for t in &trials {
            assert!((0.01..=2.0).contains(&t.rho_in) && (0.1..=1.6).contains(&t.rho_hat_res));
        }
    }

    #[test]
    fn grid_candidates_cover_ranges() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny("task=lorenz\nhpo.search=grid\nhpo.budget=30\n", dir.path());
        let c = hpo_candidates(&cfg);
        assert_eq!(c.len(), 27);
        assert!((c[0].0 - 0.01).abs() < 1e-12 && (c[26].0 - 2.0).abs() < 1e-12);
        assert!(c.iter().any(|t| t.2 == 1.0));
    }

    #[test]
    fn single_sequence_validation_split() {
        let data = smrc_core::tasks::gen_narma(10, 1000, 1).unwrap();
        let (fit, val) = validation_split(&data.train, 0.2, 200).unwrap();
        assert_eq!(fit[0].len(), 800);
        assert_eq!((val[0].len(), val[0].washout), (1000, 800));
    }

    #[test]
    fn report_selects_by_train_mse() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(TINY, dir.path());
        train(&cfg, false).unwrap();
        let records = crate::records::read_runs(&dir.path().join("runs.csv")).unwrap();
        let s = summarize(&records);
        assert_eq!(s.len(), 1);
        let best = records.iter().map(|r| r.train_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(s[0].selected.train_mse, best);
        assert!(report(&records).lines().count() == 2);
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }
}
