//! Plot-ready data files written by `sweep`. Each file starts with comment
//! lines naming the comparison it reproduces and the experiment config hash.

use std::fmt::Write as _;
use std::path::Path;

use smrc_core::reservoir::GateMode;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::experiment::{median, CellOutcome};
use crate::fsutil::{fmt_f64, write_atomic};

const CELL_COLUMNS: &str = "config_hash,task,sigma_in,n_forward,gate_mode,readout_mode,n_res,restarts,selected_restart,selected_train_mse,selected_test_mse,median_test_mse";

fn header(analog: &str, cfg: &ExperimentConfig) -> String {
    format!("# analog: {analog}\n# config_hash: {}\n", cfg.config_hash())
}

fn cell_row(c: &CellOutcome) -> String {
    let cell = &c.cell;
    let best = c.best_record();
    let mut tests: Vec<f64> = c.results.iter().map(|r| r.record.test_mse).collect();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}\n",
        cell.cell_hash(),
        cell.task.kind,
        cell.task.effective_sigma_in().map(fmt_f64).unwrap_or_default(),
        cell.task.effective_n_forward().map(|v| v.to_string()).unwrap_or_default(),
        cell.model.gate_mode,
        cell.train.readout_mode,
        cell.model.n_res,
        c.results.len(),
        best.restart,
        fmt_f64(best.train_mse),
        fmt_f64(best.test_mse),
        fmt_f64(median(&mut tests)),
    )
}

fn cell_table(analog: &str, cfg: &ExperimentConfig, cells: &[&CellOutcome]) -> String {
    let mut out = header(analog, cfg);
    out.push_str(CELL_COLUMNS);
    out.push('\n');
    for c in cells {
        out.push_str(&cell_row(c));
    }
    out
}

/// Writes the four plot-data files into `dir`.
pub fn write_plots(dir: &Path, cfg: &ExperimentConfig, cells: &[CellOutcome]) -> Result<()> {
    let by_size = |pred: &dyn Fn(&CellOutcome) -> bool| {
        let mut v: Vec<&CellOutcome> = cells.iter().filter(|c| pred(c)).collect();
        v.sort_by(|a, b| {
            let key = |c: &CellOutcome| (c.cell.task.effective_sigma_in().unwrap_or(0.0), c.cell.task.effective_n_forward(), c.cell.model.gate_mode, c.cell.model.n_res);
            let (ka, kb) = (key(a), key(b));
            ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1)).then(ka.2.cmp(&kb.2)).then(ka.3.cmp(&kb.3))
        });
        v
    };

    let conventional_vs_size = by_size(&|c| matches!(c.cell.model.gate_mode, GateMode::Conventional | GateMode::DynamicBoth));
    write_atomic(
        &dir.join("mse_vs_reservoir_size.csv"),
        cell_table(
            "test MSE versus reservoir size for each input-noise level; conventional rows form the curves, dynamic_both rows give the self-modulated reference",
            cfg,
            &conventional_vs_size,
        )
        .as_bytes(),
    )?;

    let by_mode: Vec<&CellOutcome> = cells.iter().collect();
    write_atomic(
        &dir.join("mse_by_gate_mode.csv"),
        cell_table("test MSE for each gate mode (gate ablation bars)", cfg, &by_mode).as_bytes(),
    )?;

    let gated_vs_size = by_size(&|c| c.cell.model.gate_mode == GateMode::DynamicBoth);
    write_atomic(
        &dir.join("smrc_mse_vs_reservoir_size.csv"),
        cell_table("test MSE of the self-modulated model versus its reservoir size", cfg, &gated_vs_size).as_bytes(),
    )?;

    let mut curves = header("train MSE per epoch for every restart (learning curves)", cfg);
    curves.push_str("config_hash,gate_mode,readout_mode,n_res,restart,epoch,train_mse\n");
    for c in cells {
        for r in &c.results {
            for (epoch, v) in r.curve.iter().enumerate() {
                writeln!(
                    curves,
                    "{},{},{},{},{},{epoch},{}",
                    r.record.config_hash,
                    c.cell.model.gate_mode,
                    c.cell.train.readout_mode,
                    c.cell.model.n_res,
                    r.record.restart,
                    v.map(fmt_f64).unwrap_or_else(|| "nan".into())
                )
                .unwrap();
            }
        }
    }
    write_atomic(&dir.join("learning_curves.csv"), curves.as_bytes())
}
