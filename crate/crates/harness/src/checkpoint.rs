//! Versioned JSON checkpoints. Floats are written as the shortest decimal
//! that parses back to the same value, so save, load, save yields identical
//! bytes. Matrices are stored column-major.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use smrc_core::reservoir::{GateParams, Model, ModelConfig, ReadoutParams, ReservoirParams};
use smrc_core::training::{ReadoutMode, SnapshotSelection};

use crate::config::SCHEMA_VERSION;
use crate::error::{HarnessError, Result};
use crate::fsutil::{read_to_string, write_atomic};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        Self { rows: m.nrows(), cols: m.ncols(), data: m.as_slice().to_vec() }
    }

    fn to_dmatrix(&self, what: &str) -> Result<DMatrix<f64>> {
        if self.rows.checked_mul(self.cols) != Some(self.data.len()) {
            return Err(HarnessError::Schema(format!("{what}: {}x{} matrix with {} values", self.rows, self.cols, self.data.len())));
        }
        Ok(DMatrix::from_column_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub cell_hash: String,
    pub seed: u64,
    pub restart: usize,
    pub selected_epoch: usize,
    pub selection: SnapshotSelection,
    pub readout_mode: ReadoutMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub w_in: Matrix,
    pub w_res: Matrix,
    pub xi: f64,
    pub w_fb_in: Vec<f64>,
    pub b_fb_in: f64,
    pub w_fb_res: Vec<f64>,
    pub b_fb_res: f64,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
    pub provenance: Provenance,
}

impl Checkpoint {
    pub fn from_model(model: &Model, provenance: Provenance) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: model.config.clone(),
            w_in: Matrix::from_dmatrix(&model.reservoir.w_in),
            w_res: Matrix::from_dmatrix(&model.reservoir.w_res),
            xi: model.reservoir.xi,
            w_fb_in: model.gates.w_fb_in.as_slice().to_vec(),
            b_fb_in: model.gates.b_fb_in,
            w_fb_res: model.gates.w_fb_res.as_slice().to_vec(),
            b_fb_res: model.gates.b_fb_res,
            w_out: Matrix::from_dmatrix(&model.readout.w_out),
            b_out: model.readout.b_out.as_slice().to_vec(),
            provenance,
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        let model = Model {
            config: self.model.clone(),
            reservoir: ReservoirParams { w_in: self.w_in.to_dmatrix("w_in")?, w_res: self.w_res.to_dmatrix("w_res")?, xi: self.xi },
            gates: GateParams {
                w_fb_in: DVector::from_vec(self.w_fb_in.clone()),
                b_fb_in: self.b_fb_in,
                w_fb_res: DVector::from_vec(self.w_fb_res.clone()),
                b_fb_res: self.b_fb_res,
            },
            readout: ReadoutParams { w_out: self.w_out.to_dmatrix("w_out")?, b_out: DVector::from_vec(self.b_out.clone()) },
        };
        model.check_dimensions()?;
        Ok(model)
    }

    pub fn encode(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn decode(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Schema(format!(
                "checkpoint schema_version {} is not supported (expected {SCHEMA_VERSION})",
                ck.schema_version
            )));
        }
        ck.to_model()?;
        Ok(ck)
    }

    fn check_finite(&self) -> Result<()> {
        let fields: [(&str, &[f64]); 9] = [
            ("w_in", &self.w_in.data),
            ("w_res", &self.w_res.data),
            ("xi", std::slice::from_ref(&self.xi)),
            ("w_fb_in", &self.w_fb_in),
            ("b_fb_in", std::slice::from_ref(&self.b_fb_in)),
            ("w_fb_res", &self.w_fb_res),
            ("b_fb_res", std::slice::from_ref(&self.b_fb_res)),
            ("w_out", &self.w_out.data),
            ("b_out", &self.b_out),
        ];
        match fields.iter().find(|(_, v)| v.iter().any(|x| !x.is_finite())) {
            Some((name, _)) => Err(HarnessError::Schema(format!("checkpoint parameter {name} is not finite"))),
            None => Ok(()),
        }
    }

    /// Refuses to write a model with non-finite parameters.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.check_finite()?;
        write_atomic(path, self.encode()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_to_string(path)?).map_err(|e| match e {
            HarnessError::Json(j) => HarnessError::Parse { origin: path.display().to_string(), line: j.line(), message: j.to_string() },
            other => other,
        })
    }
}
