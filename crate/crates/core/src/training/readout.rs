//! Minimum-norm least-squares readout fitting.
//!
//! Rows `[x | 1 | y]` are folded into an upper-triangular factor by repeated
//! Householder QR of `[R; block]`, so the pooled state matrix is never formed.
//! The readout is then the pseudo-inverse solution of the small triangular
//! system, computed from its SVD with a rank cutoff.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SmrcError};
use crate::reservoir::ReadoutParams;

const BLOCK_ROWS: usize = 512;

/// Readout and its unregularized residual sum of squares.
#[derive(Clone, Debug)]
pub struct ReadoutFit {
    pub readout: ReadoutParams,
    pub residual_ss: f64,
    /// Numerical rank of `[states | 1]`.
    pub rank: usize,
}

/// Streaming QR accumulator for `min || [X | 1] B - Y ||`.
pub struct LeastSquaresAccumulator {
    n_features: usize,
    n_targets: usize,
    r: Option<DMatrix<f64>>,
    buffer: DMatrix<f64>,
    buffered: usize,
    rows_seen: usize,
}

impl LeastSquaresAccumulator {
    pub fn new(n_features: usize, n_targets: usize) -> Self {
        let cols = n_features + 1 + n_targets;
        Self {
            n_features,
            n_targets,
            r: None,
            buffer: DMatrix::zeros(BLOCK_ROWS.max(cols), cols),
            buffered: 0,
            rows_seen: 0,
        }
    }

    pub fn rows_seen(&self) -> usize {
        self.rows_seen
    }

    pub fn push_row<'a>(
        &mut self,
        features: impl IntoIterator<Item = &'a f64>,
        targets: impl IntoIterator<Item = &'a f64>,
    ) -> Result<()> {
        let row = self.buffered;
        let mut col = 0;
        for &v in features {
            self.buffer[(row, col)] = v;
            col += 1;
        }
        if col != self.n_features {
            return Err(SmrcError::DimensionMismatch(format!("feature row of length {col}, expected {}", self.n_features)));
        }
        self.buffer[(row, col)] = 1.0;
        col += 1;
        for &v in targets {
            self.buffer[(row, col)] = v;
            col += 1;
        }
        if col != self.n_features + 1 + self.n_targets {
            return Err(SmrcError::DimensionMismatch(format!(
                "target row of length {}, expected {}",
                col - self.n_features - 1,
                self.n_targets
            )));
        }
        if self.buffer.row(row).iter().any(|v| !v.is_finite()) {
            return Err(SmrcError::NonFinite(format!("least-squares row {}", self.rows_seen)));
        }
        self.buffered += 1;
        self.rows_seen += 1;
        if self.buffered == self.buffer.nrows() {
            self.reduce();
        }
        Ok(())
    }

    fn reduce(&mut self) {
        if self.buffered == 0 {
            return;
        }
        let cols = self.buffer.ncols();
        let r_rows = self.r.as_ref().map_or(0, |r| r.nrows());
        let mut stacked = DMatrix::zeros(r_rows + self.buffered, cols);
        if let Some(r) = &self.r {
            stacked.rows_mut(0, r_rows).copy_from(r);
        }
        stacked.rows_mut(r_rows, self.buffered).copy_from(&self.buffer.rows(0, self.buffered));
        self.r = Some(stacked.qr().r());
        self.buffered = 0;
    }

    /// Solves for the readout. `ridge_lambda > 0` penalizes `||W_out||^2`
    /// (not the bias).
    pub fn solve(mut self, ridge_lambda: f64) -> Result<ReadoutFit> {
        if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
            return Err(SmrcError::InvalidConfig(format!("ridge_lambda must be finite and >= 0, got {ridge_lambda}")));
        }
        self.reduce();
        let r = self.r.take().ok_or_else(|| SmrcError::EmptyData("no rows for the readout fit".into()))?;
        let q = self.n_features + 1;
        let p = self.n_targets;
        let cols = q + p;

        // Pad to a square factor; zero rows do not change the problem.
        let mut full = DMatrix::zeros(cols, cols);
        full.rows_mut(0, r.nrows()).copy_from(&r);
        let r11 = full.view((0, 0), (q, q)).into_owned();
        let c = full.view((0, q), (q, p)).into_owned();
        let irreducible = full.view((q, q), (p, p)).norm_squared();

        let (sys, rhs) = if ridge_lambda > 0.0 {
            let n = self.n_features;
            let mut aug = DMatrix::zeros(q + n, cols);
            aug.view_mut((0, 0), (q, q)).copy_from(&r11);
            aug.view_mut((0, q), (q, p)).copy_from(&c);
            let s = ridge_lambda.sqrt();
            for i in 0..n {
                aug[(q + i, i)] = s;
            }
            let rr = aug.qr().r();
            (rr.view((0, 0), (q, q)).into_owned(), rr.view((0, q), (q, p)).into_owned())
        } else {
            (r11.clone(), c.clone())
        };

        let svd = sys.svd(true, true);
        let sigma_max = svd.singular_values.max();
        let cutoff = (self.rows_seen.max(q) as f64) * f64::EPSILON * sigma_max;
        let u = svd.u.as_ref().expect("requested U");
        let vt = svd.v_t.as_ref().expect("requested V^T");
        let mut coef = DMatrix::zeros(q, p);
        let mut rank = 0;
        for (i, &s) in svd.singular_values.iter().enumerate() {
            if s > cutoff && s > 0.0 {
                rank += 1;
                let proj = u.column(i).transpose() * &rhs; // 1 x p
                coef += vt.row(i).transpose() * (proj / s);
            }
        }

        let residual_ss = (&r11 * &coef - &c).norm_squared() + irreducible;
        let w_out = coef.rows(0, self.n_features).transpose();
        let b_out = DVector::from_iterator(p, coef.row(self.n_features).iter().copied());
        let readout = ReadoutParams { w_out, b_out };
        if !readout.is_finite() || !residual_ss.is_finite() {
            return Err(SmrcError::NonFinite("readout solution".into()));
        }
        // Rank of [X | 1] is measured on the unregularized factor.
        let rank = if ridge_lambda > 0.0 {
            let sv = r11.singular_values();
            let cut = (self.rows_seen.max(q) as f64) * f64::EPSILON * sv.max();
            sv.iter().filter(|&&s| s > cut && s > 0.0).count()
        } else {
            rank
        };
        Ok(ReadoutFit { readout, residual_ss, rank })
    }
}

/// Fits `targets ~ states W_out^T + b_out` on row-wise data
/// (`S x n_res` states, `S x n_out` targets).
pub fn fit_readout(states: &DMatrix<f64>, targets: &DMatrix<f64>, ridge_lambda: f64) -> Result<ReadoutFit> {
    if states.nrows() == 0 {
        return Err(SmrcError::EmptyData("readout fit needs at least one row".into()));
    }
    if states.nrows() != targets.nrows() {
        return Err(SmrcError::DimensionMismatch(format!(
            "{} state rows but {} target rows",
            states.nrows(),
            targets.nrows()
        )));
    }
    let mut acc = LeastSquaresAccumulator::new(states.ncols(), targets.ncols());
    for i in 0..states.nrows() {
        acc.push_row(states.row(i).iter(), targets.row(i).iter())?;
    }
    acc.solve(ridge_lambda)
}
