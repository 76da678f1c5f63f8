//! Batched forward pass with cache, squared-error loss and exact
//! backpropagation through time.
//!
//! Sequences of equal length and washout are stepped together so that each
//! timestep is one matrix-matrix product per direction. Summation order is
//! fixed by sample order, so results do not depend on scheduling.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SmrcError};
use crate::reservoir::{gate_activation, gate_activation_derivative, GateMode, GateParams, Model, ReadoutParams, ReservoirParams, Trajectory};
use crate::tasks::TaskSample;
use crate::training::readout::{LeastSquaresAccumulator, ReadoutFit};

/// Sequences sharing length and washout, stored column-wise per timestep.
struct Group {
    members: Vec<usize>,
    len: usize,
    washout: usize,
    inputs: Vec<DMatrix<f64>>,
    targets: Vec<DMatrix<f64>>,
    states: Vec<DMatrix<f64>>,
    /// Gate pre-activations evaluated from `x(t)`; empty in conventional mode.
    z_in: Vec<DVector<f64>>,
    z_res: Vec<DVector<f64>>,
}

/// Everything the reverse pass needs, for one set of reservoir and gate parameters.
pub struct ForwardCache {
    groups: Vec<Group>,
    locate: Vec<(usize, usize)>,
    mode: GateMode,
    reservoir: ReservoirParams,
    gates: GateParams,
    n_out: usize,
}

/// Gradient of the summed squared error.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub d_w_fb_in: DVector<f64>,
    pub d_b_fb_in: f64,
    pub d_w_fb_res: DVector<f64>,
    pub d_b_fb_res: f64,
    /// Present only when the readout is trained by gradient.
    pub d_w_out: Option<DMatrix<f64>>,
    pub d_b_out: Option<DVector<f64>>,
}

impl GradientBundle {
    /// Same layout as [`flatten_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.d_w_fb_in.iter().copied().collect();
        out.push(self.d_b_fb_in);
        out.extend(self.d_w_fb_res.iter());
        out.push(self.d_b_fb_res);
        if let (Some(w), Some(b)) = (&self.d_w_out, &self.d_b_out) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// Trainable parameters as one vector: `w_fb_in, b_fb_in, w_fb_res, b_fb_res[, w_out, b_out]`
/// (matrices column-major).
pub fn flatten_params(gates: &GateParams, readout: Option<&ReadoutParams>) -> Vec<f64> {
    let mut out: Vec<f64> = gates.w_fb_in.iter().copied().collect();
    out.push(gates.b_fb_in);
    out.extend(gates.w_fb_res.iter());
    out.push(gates.b_fb_res);
    if let Some(r) = readout {
        out.extend(r.w_out.iter());
        out.extend(r.b_out.iter());
    }
    out
}

/// Inverse of [`flatten_params`].
pub fn unflatten_params(flat: &[f64], gates: &mut GateParams, readout: Option<&mut ReadoutParams>) {
    let n = gates.w_fb_in.len();
    let mut it = flat.iter().copied();
    for v in gates.w_fb_in.iter_mut() {
        *v = it.next().expect("flat parameter vector too short");
    }
    gates.b_fb_in = it.next().expect("flat parameter vector too short");
    for v in gates.w_fb_res.iter_mut() {
        *v = it.next().expect("flat parameter vector too short");
    }
    gates.b_fb_res = it.next().expect("flat parameter vector too short");
    if let Some(r) = readout {
        for v in r.w_out.iter_mut().chain(r.b_out.iter_mut()) {
            *v = it.next().expect("flat parameter vector too short");
        }
    }
    debug_assert!(it.next().is_none(), "flat parameter vector too long for n_res = {n}");
}

fn check_samples(model: &Model, samples: &[TaskSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(SmrcError::EmptyData("no training sequences".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        s.validate()?;
        if s.inputs.nrows() != model.config.n_in || s.targets.nrows() != model.config.n_out {
            return Err(SmrcError::DimensionMismatch(format!(
                "sample {i} has {} inputs and {} targets, model expects {} and {}",
                s.inputs.nrows(),
                s.targets.nrows(),
                model.config.n_in,
                model.config.n_out
            )));
        }
    }
    Ok(())
}

/// Runs all sequences and keeps the states and gate pre-activations.
pub fn forward(model: &Model, samples: &[TaskSample]) -> Result<ForwardCache> {
    model.check_dimensions()?;
    check_samples(model, samples)?;
    let mode = model.config.gate_mode;
    let gated = mode.has_gates();
    let res = &model.reservoir;
    let gates = &model.gates;
    let n = model.config.n_res;

    let mut by_shape: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_shape.entry((s.len(), s.washout)).or_default().push(i);
    }

    let mut locate = vec![(0, 0); samples.len()];
    let mut groups = Vec::with_capacity(by_shape.len());
    for ((len, washout), members) in by_shape {
        let b = members.len();
        for (col, &m) in members.iter().enumerate() {
            locate[m] = (groups.len(), col);
        }
        let column_block = |k: usize, rows: usize, pick: &dyn Fn(&TaskSample) -> &DMatrix<f64>| {
            DMatrix::from_fn(rows, b, |r, c| pick(&samples[members[c]])[(r, k)])
        };
        let mut group = Group {
            members: members.clone(),
            len,
            washout,
            inputs: Vec::with_capacity(len),
            targets: Vec::with_capacity(len),
            states: Vec::with_capacity(len),
            z_in: Vec::new(),
            z_res: Vec::new(),
        };

        let mut x = DMatrix::zeros(n, b);
        let (mut g_in, mut g_res) = if gated {
            (DVector::from_element(b, gate_activation(gates.b_fb_in)), DVector::from_element(b, gate_activation(gates.b_fb_res)))
        } else {
            (DVector::from_element(b, 1.0), DVector::from_element(b, 1.0))
        };
        for k in 0..len {
            let u = column_block(k, model.config.n_in, &|s| &s.inputs);
            let recurrent = &res.w_res * &x;
            let driven = &res.w_in * &u;
            let mut next = DMatrix::zeros(n, b);
            for c in 0..b {
                let (gi, gr) = (g_in[c], g_res[c]);
                for ((out, &r), &v) in next.column_mut(c).iter_mut().zip(recurrent.column(c).iter()).zip(driven.column(c).iter()) {
                    *out = (gr * r + gi * v + res.xi).tanh();
                }
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(SmrcError::NonFiniteState { step: k });
            }
            if gated {
                let zi = next.tr_mul(&gates.w_fb_in).add_scalar(gates.b_fb_in);
                let zr = next.tr_mul(&gates.w_fb_res).add_scalar(gates.b_fb_res);
                g_in = zi.map(gate_activation);
                g_res = zr.map(gate_activation);
                group.z_in.push(zi);
                group.z_res.push(zr);
            }
            group.targets.push(column_block(k, model.config.n_out, &|s| &s.targets));
            group.inputs.push(u);
            x = next;
            group.states.push(x.clone());
        }
        groups.push(group);
    }

    Ok(ForwardCache {
        groups,
        locate,
        mode,
        reservoir: res.clone(),
        gates: gates.clone(),
        n_out: model.config.n_out,
    })
}

impl ForwardCache {
    pub fn n_samples(&self) -> usize {
        self.locate.len()
    }

    /// Number of post-washout (step, sequence, output) terms in the loss.
    pub fn loss_terms(&self) -> usize {
        self.groups.iter().map(|g| (g.len - g.washout) * g.members.len()).sum::<usize>() * self.n_out
    }

    fn outputs(readout: &ReadoutParams, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = &readout.w_out * x;
        for mut col in y.column_iter_mut() {
            col += &readout.b_out;
        }
        y
    }

    /// Sum over sequences and post-washout steps of `||y(t) - target(t)||^2`.
    pub fn loss(&self, readout: &ReadoutParams) -> f64 {
        let mut total = 0.0;
        for g in &self.groups {
            for k in g.washout..g.len {
                total += (Self::outputs(readout, &g.states[k]) - &g.targets[k]).norm_squared();
            }
        }
        total
    }

    /// Pseudo-inverse readout on the pooled post-washout states.
    pub fn fit_readout(&self, ridge_lambda: f64) -> Result<ReadoutFit> {
        let n = self.reservoir.w_res.nrows();
        let mut acc = LeastSquaresAccumulator::new(n, self.n_out);
        for g in &self.groups {
            for k in g.washout..g.len {
                for c in 0..g.members.len() {
                    acc.push_row(g.states[k].column(c).iter(), g.targets[k].column(c).iter())?;
                }
            }
        }
        acc.solve(ridge_lambda)
    }

    /// Reconstructs the trajectory of sample `index` under `readout`.
    pub fn trajectory(&self, index: usize, readout: &ReadoutParams) -> Trajectory {
        let (gi, col) = self.locate[index];
        let g = &self.groups[gi];
        let n = self.reservoir.w_res.nrows();
        let mut states = DMatrix::zeros(n, g.len);
        for (k, x) in g.states.iter().enumerate() {
            states.set_column(k, &x.column(col));
        }
        let outputs = &readout.w_out * &states + DMatrix::from_fn(readout.b_out.len(), g.len, |r, _| readout.b_out[r]);
        let (initial_gates, gates_in, gates_res) = if self.mode.has_gates() {
            (
                (gate_activation(self.gates.b_fb_in), gate_activation(self.gates.b_fb_res)),
                g.z_in.iter().map(|z| gate_activation(z[col])).collect(),
                g.z_res.iter().map(|z| gate_activation(z[col])).collect(),
            )
        } else {
            ((1.0, 1.0), vec![1.0; g.len], vec![1.0; g.len])
        };
        Trajectory { states, gates_in, gates_res, outputs, washout: g.washout, initial_gates }
    }
}

/// Forward pass plus loss under the model's current readout.
pub fn forward_with_cache(model: &Model, samples: &[TaskSample]) -> Result<(f64, ForwardCache)> {
    let cache = forward(model, samples)?;
    let loss = cache.loss(&model.readout);
    Ok((loss, cache))
}

/// Exact gradient of the summed squared error with respect to the trainable
/// gate parameters, and the readout when `include_readout` is set. The readout
/// is otherwise treated as a constant.
pub fn bptt_gradients(model: &Model, cache: &ForwardCache, include_readout: bool) -> Result<GradientBundle> {
    if cache.mode != model.config.gate_mode || cache.gates != model.gates || cache.reservoir != model.reservoir {
        return Err(SmrcError::DimensionMismatch("forward cache was produced with different parameters".into()));
    }
    let mode = model.config.gate_mode;
    let gated = mode.has_gates();
    let n = model.config.n_res;
    let gates = &model.gates;
    let readout = &model.readout;
    let w_res_t = model.reservoir.w_res.transpose();
    let w_out_t = readout.w_out.transpose();

    let mut d_w_fb_in = DVector::zeros(n);
    let mut d_w_fb_res = DVector::zeros(n);
    let mut d_b_fb_in = 0.0;
    let mut d_b_fb_res = 0.0;
    let mut d_w_out = DMatrix::zeros(readout.w_out.nrows(), n);
    let mut d_b_out = DVector::zeros(readout.b_out.len());

    for g in &cache.groups {
        let b = g.members.len();
        let mut carry = DMatrix::<f64>::zeros(n, b);
        for k in (0..g.len).rev() {
            let x = &g.states[k];
            let mut delta_x = carry;
            if k >= g.washout {
                let d_y = (ForwardCache::outputs(readout, x) - &g.targets[k]) * 2.0;
                delta_x += &w_out_t * &d_y;
                if include_readout {
                    d_w_out += &d_y * x.transpose();
                    for c in 0..b {
                        d_b_out += d_y.column(c);
                    }
                }
            }
            // Adjoint of the pre-activation: tanh' = 1 - x^2.
            let delta_a = delta_x.zip_map(x, |d, xv| d * (1.0 - xv * xv));
            if k == 0 && !gated {
                break;
            }
            let back = &w_res_t * &delta_a;
            if !gated {
                carry = back;
                continue;
            }
            let back_in = model.reservoir.w_in.tr_mul(&delta_a);
            let mut next_carry = DMatrix::zeros(n, b);
            for c in 0..b {
                let (z_in_prev, z_res_prev) = if k > 0 { (g.z_in[k - 1][c], g.z_res[k - 1][c]) } else { (gates.b_fb_in, gates.b_fb_res) };
                let d_g_in = back_in.column(c).dot(&g.inputs[k].column(c));
                let dz_in = d_g_in * gate_activation_derivative(z_in_prev);
                d_b_fb_in += dz_in;
                if k == 0 {
                    // x(0) = 0: the recurrent term and the feedback weights see no signal.
                    continue;
                }
                let x_prev = g.states[k - 1].column(c);
                let d_g_res = back.column(c).dot(&x_prev);
                let dz_res = d_g_res * gate_activation_derivative(z_res_prev);
                d_b_fb_res += dz_res;
                d_w_fb_in.axpy(dz_in, &x_prev, 1.0);
                d_w_fb_res.axpy(dz_res, &x_prev, 1.0);
                let g_res_prev = gate_activation(z_res_prev);
                let mut col = next_carry.column_mut(c);
                col.axpy(g_res_prev, &back.column(c), 0.0);
                col.axpy(dz_res, &gates.w_fb_res, 1.0);
                col.axpy(dz_in, &gates.w_fb_in, 1.0);
            }
            carry = next_carry;
        }
    }

    if !gated {
        d_w_fb_in.fill(0.0);
        d_w_fb_res.fill(0.0);
        d_b_fb_in = 0.0;
        d_b_fb_res = 0.0;
    }
    if !mode.input_feedback_trainable() {
        d_w_fb_in.fill(0.0);
    }
    if !mode.reservoir_feedback_trainable() {
        d_w_fb_res.fill(0.0);
    }
    let bundle = GradientBundle {
        d_w_fb_in,
        d_b_fb_in,
        d_w_fb_res,
        d_b_fb_res,
        d_w_out: include_readout.then_some(d_w_out),
        d_b_out: include_readout.then_some(d_b_out),
    };
    if !bundle.is_finite() {
        return Err(SmrcError::NonFinite("gradient".into()));
    }
    Ok(bundle)
}
