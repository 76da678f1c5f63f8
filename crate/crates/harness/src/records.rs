//! Per-restart run records and learning curves as CSV.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fsutil::{read_to_string, write_atomic};

pub const RUNS_HEADER: [&str; 12] = [
    "config_hash",
    "task",
    "n_res",
    "sigma_in",
    "n_forward",
    "gate_mode",
    "restart",
    "selected_epoch",
    "train_mse",
    "test_mse",
    "wallclock_s",
    "degraded",
];

/// One row of `runs.csv`: the outcome of one restart of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub task: String,
    pub n_res: usize,
    pub sigma_in: Option<f64>,
    pub n_forward: Option<usize>,
    pub gate_mode: String,
    pub restart: usize,
    pub selected_epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub wallclock_s: Option<f64>,
    pub degraded: bool,
}

/// Everything persisted for one finished restart; the resume marker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartResult {
    pub record: RunRecord,
    /// Train MSE per epoch; `null` marks a non-finite epoch.
    pub curve: Vec<Option<f64>>,
    pub checkpoint_file: Option<String>,
}

impl RestartResult {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        write_atomic(path, s.as_bytes())
    }
}

pub fn encode_runs(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(RUNS_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn decode_runs(text: &str) -> Result<Vec<RunRecord>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().ne(RUNS_HEADER) {
        return Err(crate::error::HarnessError::Schema(format!("runs CSV header is `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<RunRecord>, _>>()?)
}

pub fn write_runs(path: &Path, records: &[RunRecord]) -> Result<()> {
    write_atomic(path, encode_runs(records)?.as_bytes())
}

pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>> {
    decode_runs(&read_to_string(path)?)
}

/// `curves.csv`: one row per (cell, restart, epoch).
pub fn encode_curves<'a>(rows: impl IntoIterator<Item = (&'a str, usize, &'a [Option<f64>])>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["config_hash", "restart", "epoch", "train_mse"])?;
    for (hash, restart, curve) in rows {
        for (epoch, v) in curve.iter().enumerate() {
            let v = v.map(crate::fsutil::fmt_f64).unwrap_or_else(|| "nan".into());
            w.write_record([hash, &restart.to_string(), &epoch.to_string(), &v])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(i: usize) -> RunRecord {
        RunRecord {
            config_hash: "0123456789abcdef".into(),
            task: "lorenz".into(),
            n_res: 100,
            sigma_in: Some(0.03),
            n_forward: if i.is_multiple_of(2) { Some(20) } else { None },
            gate_mode: "dynamic_both".into(),
            restart: i,
            selected_epoch: 1999,
            train_mse: 1.0 / (i + 3) as f64,
            test_mse: 1e-9 * i as f64,
            wallclock_s: None,
            degraded: i == 1,
        }
    }

    #[test]
    fn runs_round_trip() {
        let rs: Vec<_> = (0..4).map(record).collect();
        let text = encode_runs(&rs).unwrap();
        assert!(text.starts_with("config_hash,task,n_res,sigma_in,n_forward,gate_mode,restart,selected_epoch,train_mse,test_mse,wallclock_s,degraded\n"));
        assert!(text.contains(",,false\n"));
        assert_eq!(decode_runs(&text).unwrap(), rs);
        assert_eq!(encode_runs(&decode_runs(&text).unwrap()).unwrap(), text);
    }

    #[test]
    fn empty_runs_keep_header() {
        let text = encode_runs(&[]).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(decode_runs(&text).unwrap().is_empty());
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(decode_runs("a,b\n1,2\n").is_err());
    }

    #[test]
    fn curves_layout() {
        let c = [Some(0.5), None];
        let text = encode_curves([("h", 3, &c[..])]).unwrap();
        assert_eq!(text, "config_hash,restart,epoch,train_mse\nh,3,0,0.5\nh,3,1,nan\n");
    }

    proptest! {
        #[test]
        fn decoder_never_panics(text in "\\PC{0,300}") {
            let _ = decode_runs(&text);
        }

        #[test]
        fn float_fields_round_trip(train in any::<f64>(), test in any::<f64>(), wall in proptest::option::of(0.0f64..1e5)) {
            prop_assume!(train.is_finite() && test.is_finite());
            let mut r = record(0);
            r.train_mse = train;
            r.test_mse = test;
            r.wallclock_s = wall;
            let back = decode_runs(&encode_runs(std::slice::from_ref(&r)).unwrap()).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(back[0].train_mse.to_bits(), train.to_bits());
            prop_assert_eq!(back[0].test_mse.to_bits(), test.to_bits());
            prop_assert_eq!(&back[0], &r);
        }
    }
}
