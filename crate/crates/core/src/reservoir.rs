//! The self-modulated echo-state network.
//!
//! The reservoir evolves as
//!
//! ```text
//! x(t)     = tanh( g_res(t-1) * W_res x(t-1) + g_in(t-1) * W_in u(t) + xi )
//! g_res(t) = f( w_fb_res . x(t) + b_fb_res )
//! g_in(t)  = f( w_fb_in  . x(t) + b_fb_in  )
//! y(t)     = W_out x(t) + b_out
//! ```
//!
//! with `f(z) = 2 / (1 + exp(-z))`. Clamping both gates to 1 recovers the
//! conventional echo-state network.
//!
//! Sequences are stored column-wise: column `t` of an input matrix is `u(t)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmrcError};
use crate::rng::Stream;

/// Gate activation `f(z) = 2 / (1 + e^-z)`, range `(0, 2)`.
#[inline]
pub fn gate_activation(z: f64) -> f64 {
    2.0 / (1.0 + (-z).exp())
}

/// `f'(z) = f(z) (1 - f(z)/2)`.
#[inline]
pub fn gate_activation_derivative(z: f64) -> f64 {
    let f = gate_activation(z);
    f * (1.0 - 0.5 * f)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Both gates clamped to 1: a plain echo-state network.
    Conventional,
    /// Both gates driven by reservoir feedback.
    DynamicBoth,
    /// Input-gate feedback weights fixed at zero; only its bias is trained.
    StaticInputGate,
    /// Reservoir-gate feedback weights fixed at zero; only its bias is trained.
    StaticReservoirGate,
    /// Both gates reduced to trained constants.
    StaticBoth,
}

impl GateMode {
    pub const ALL: [GateMode; 5] = [
        GateMode::Conventional,
        GateMode::DynamicBoth,
        GateMode::StaticInputGate,
        GateMode::StaticReservoirGate,
        GateMode::StaticBoth,
    ];

    pub fn has_gates(self) -> bool {
        self != GateMode::Conventional
    }

    /// Whether `w_fb_in` is trainable.
    pub fn input_feedback_trainable(self) -> bool {
        matches!(self, GateMode::DynamicBoth | GateMode::StaticReservoirGate)
    }

    /// Whether `w_fb_res` is trainable.
    pub fn reservoir_feedback_trainable(self) -> bool {
        matches!(self, GateMode::DynamicBoth | GateMode::StaticInputGate)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GateMode::Conventional => "conventional",
            GateMode::DynamicBoth => "dynamic_both",
            GateMode::StaticInputGate => "static_input_gate",
            GateMode::StaticReservoirGate => "static_reservoir_gate",
            GateMode::StaticBoth => "static_both",
        }
    }
}

impl fmt::Display for GateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GateMode {
    type Err = SmrcError;

    fn from_str(s: &str) -> Result<Self> {
        GateMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| SmrcError::InvalidConfig(format!("unknown gate mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_res: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub rho_in: f64,
    pub rho_hat_res: f64,
    pub xi: f64,
    pub gate_mode: GateMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_res: 100,
            n_in: 1,
            n_out: 1,
            rho_in: 0.12,
            rho_hat_res: 0.9,
            xi: 0.0,
            gate_mode: GateMode::DynamicBoth,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_res == 0 || self.n_in == 0 || self.n_out == 0 {
            return Err(SmrcError::InvalidConfig("n_res, n_in and n_out must be at least 1".into()));
        }
        if !(self.rho_in >= 0.0 && self.rho_in.is_finite()) {
            return Err(SmrcError::InvalidConfig(format!("rho_in must be finite and >= 0, got {}", self.rho_in)));
        }
        if !(self.rho_hat_res >= 0.0 && self.rho_hat_res.is_finite()) {
            return Err(SmrcError::InvalidConfig(format!(
                "rho_hat_res must be finite and >= 0, got {}",
                self.rho_hat_res
            )));
        }
        if !self.xi.is_finite() {
            return Err(SmrcError::InvalidConfig("xi must be finite".into()));
        }
        Ok(())
    }
}

/// Fixed random input and recurrent weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ReservoirParams {
    /// `n_res x n_in`
    pub w_in: DMatrix<f64>,
    /// `n_res x n_res`
    pub w_res: DMatrix<f64>,
    pub xi: f64,
}

/// Trainable feedback weights of the two scalar gates.
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    pub w_fb_in: DVector<f64>,
    pub b_fb_in: f64,
    pub w_fb_res: DVector<f64>,
    pub b_fb_res: f64,
}

impl GateParams {
    pub fn zeros(n_res: usize) -> Self {
        Self { w_fb_in: DVector::zeros(n_res), b_fb_in: 0.0, w_fb_res: DVector::zeros(n_res), b_fb_res: 0.0 }
    }

    /// Gate values `(g_in, g_res)` computed from state `x`.
    pub fn evaluate(&self, x: &DVector<f64>, mode: GateMode) -> (f64, f64) {
        if !mode.has_gates() {
            return (1.0, 1.0);
        }
        (
            gate_activation(self.w_fb_in.dot(x) + self.b_fb_in),
            gate_activation(self.w_fb_res.dot(x) + self.b_fb_res),
        )
    }

    /// Zero the feedback weights that `mode` holds fixed.
    pub fn apply_mask(&mut self, mode: GateMode) {
        if !mode.input_feedback_trainable() {
            self.w_fb_in.fill(0.0);
        }
        if !mode.reservoir_feedback_trainable() {
            self.w_fb_res.fill(0.0);
        }
    }
}

/// Linear readout `y = W_out x + b_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutParams {
    /// `n_out x n_res`
    pub w_out: DMatrix<f64>,
    pub b_out: DVector<f64>,
}

impl ReadoutParams {
    pub fn zeros(n_out: usize, n_res: usize) -> Self {
        Self { w_out: DMatrix::zeros(n_out, n_res), b_out: DVector::zeros(n_out) }
    }

    pub fn is_finite(&self) -> bool {
        self.w_out.iter().chain(self.b_out.iter()).all(|v| v.is_finite())
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w_out * x + &self.b_out
    }
}

/// Output of a single reservoir update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub state: DVector<f64>,
    /// `g_in` computed from the new state, used at the next step.
    pub gate_in: f64,
    /// `g_res` computed from the new state, used at the next step.
    pub gate_res: f64,
    pub output: DVector<f64>,
}

/// Full time course of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `n_res x T`, column `t` is `x(t)`.
    pub states: DMatrix<f64>,
    pub gates_in: Vec<f64>,
    pub gates_res: Vec<f64>,
    /// `n_out x T`
    pub outputs: DMatrix<f64>,
    pub washout: usize,
    /// Gate values evaluated at the zero initial state, used by the first update.
    pub initial_gates: (f64, f64),
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    /// Reservoir gate value that modulated the update producing `x(t)`.
    pub fn gate_res_before(&self, t: usize) -> f64 {
        if t == 0 {
            self.initial_gates.1
        } else {
            self.gates_res[t - 1]
        }
    }

    /// Modulated spectral radius `g_res(t-1) * rho_hat` at each step.
    pub fn modulated_spectral_radius(&self, rho_hat_res: f64) -> Vec<f64> {
        (0..self.len()).map(|t| self.gate_res_before(t) * rho_hat_res).collect()
    }
}

/// Spectral radius `max |lambda_i|` of a square matrix.
///
/// Orthogonal (block power) iteration on an 8-dimensional subspace with
/// Rayleigh-Ritz extraction: the dominant Ritz value converges even when the
/// dominant eigenvalues form a complex-conjugate pair, where the norm ratio of
/// a single iterate oscillates.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    const MAX_ITER: usize = 10_000;
    const CHECK_EVERY: usize = 4;
    const REL_TOL: f64 = 1e-12;

    let n = m.nrows();
    if m.ncols() != n {
        return Err(SmrcError::DimensionMismatch(format!("spectral radius of a {}x{} matrix", n, m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SmrcError::NonFinite("spectral radius input".into()));
    }
    if n == 0 || m.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }

    let p = n.min(8);
    // Fixed, well-spread start block; determinism does not depend on callers' streams.
    let start = DMatrix::from_fn(n, p, |i, j| {
        let k = (i * 31 + j * 17 + 7) as f64;
        (k * 0.618_033_988_749_895).fract() - 0.5
    });
    let mut q = start.qr().q();

    let mut prev = f64::NAN;
    let mut stable_checks = 0;
    for iter in 1..=MAX_ITER {
        let z = m * &q;
        if z.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }
        q = z.qr().q();
        if iter % CHECK_EVERY != 0 && p < n {
            continue;
        }
        let h = q.transpose() * (m * &q);
        let est = h.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
        if p == n {
            // The subspace is the whole space; the Ritz values are the spectrum.
            return Ok(est);
        }
        if (est - prev).abs() <= REL_TOL * est.max(f64::MIN_POSITIVE) {
            stable_checks += 1;
            if stable_checks >= 3 {
                return Ok(est);
            }
        } else {
            stable_checks = 0;
        }
        prev = est;
    }
    Err(SmrcError::SpectralRadiusNotConverged { iterations: MAX_ITER })
}

/// Draws `W_in ~ U[-rho_in, rho_in]` and `W_res ~ U[-1, 1]` rescaled to spectral
/// radius `rho_hat_res`.
pub fn init_reservoir(config: &ModelConfig, rng: &mut Stream) -> Result<ReservoirParams> {
    config.validate()?;
    let n = config.n_res;
    let w_in = DMatrix::from_fn(n, config.n_in, |_, _| rng.random_range(-1.0..=1.0) * config.rho_in);

    const MAX_ATTEMPTS: usize = 100;
    for _ in 0..MAX_ATTEMPTS {
        let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0));
        let rho = spectral_radius(&raw)?;
        if rho <= 1e-12 {
            log::warn!("sampled recurrent matrix has vanishing spectral radius; resampling");
            continue;
        }
        let w_res = raw * (config.rho_hat_res / rho);
        return Ok(ReservoirParams { w_in, w_res, xi: config.xi });
    }
    Err(SmrcError::GenerationFailed {
        attempts: MAX_ATTEMPTS,
        reason: "recurrent matrix with nonzero spectral radius".into(),
    })
}

/// Feedback weights and biases `~ U[-1/sqrt(n_res), 1/sqrt(n_res)]`, with the
/// weights the gate mode fixes set to zero.
pub fn init_gates(config: &ModelConfig, rng: &mut Stream) -> GateParams {
    let bound = 1.0 / (config.n_res as f64).sqrt();
    let mut draw = || rng.random_range(-bound..=bound);
    let w_fb_in = DVector::from_fn(config.n_res, |_, _| draw());
    let b_fb_in = draw();
    let w_fb_res = DVector::from_fn(config.n_res, |_, _| draw());
    let b_fb_res = draw();
    let mut gates = GateParams { w_fb_in, b_fb_in, w_fb_res, b_fb_res };
    gates.apply_mask(config.gate_mode);
    gates
}

/// A complete model: configuration plus all parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub reservoir: ReservoirParams,
    pub gates: GateParams,
    pub readout: ReadoutParams,
}

impl Model {
    /// Fresh model with random reservoir and gates and a zero readout.
    pub fn init(config: &ModelConfig, reservoir_rng: &mut Stream, gate_rng: &mut Stream) -> Result<Self> {
        let reservoir = init_reservoir(config, reservoir_rng)?;
        let gates = init_gates(config, gate_rng);
        Ok(Self {
            config: config.clone(),
            reservoir,
            gates,
            readout: ReadoutParams::zeros(config.n_out, config.n_res),
        })
    }

    pub fn check_dimensions(&self) -> Result<()> {
        let c = &self.config;
        let r = &self.reservoir;
        let ok = r.w_in.shape() == (c.n_res, c.n_in)
            && r.w_res.shape() == (c.n_res, c.n_res)
            && self.gates.w_fb_in.len() == c.n_res
            && self.gates.w_fb_res.len() == c.n_res
            && self.readout.w_out.shape() == (c.n_out, c.n_res)
            && self.readout.b_out.len() == c.n_out;
        if ok {
            Ok(())
        } else {
            Err(SmrcError::DimensionMismatch("model parameters do not match the model configuration".into()))
        }
    }

    pub fn step(&self, x_prev: &DVector<f64>, u_t: &DVector<f64>) -> Result<StepOutput> {
        step(&self.reservoir, &self.gates, &self.readout, x_prev, u_t, self.config.gate_mode)
    }

    pub fn run(&self, inputs: &DMatrix<f64>, washout: usize) -> Result<Trajectory> {
        run(&self.reservoir, &self.gates, &self.readout, inputs, self.config.gate_mode, washout)
    }
}

/// Pre-activation update `x(t) = tanh(g_res * W_res x + g_in * W_in u + xi)`
/// given the gate values from the previous step.
pub(crate) fn advance(res: &ReservoirParams, x_prev: &DVector<f64>, u_t: &DVector<f64>, g_in: f64, g_res: f64) -> DVector<f64> {
    let recurrent = &res.w_res * x_prev;
    let driven = &res.w_in * u_t;
    recurrent.zip_map(&driven, |r, v| (g_res * r + g_in * v + res.xi).tanh())
}

fn check_step_dims(res: &ReservoirParams, gates: &GateParams, readout: &ReadoutParams, x_len: usize, u_len: usize) -> Result<()> {
    let n = res.w_res.nrows();
    if res.w_res.ncols() != n
        || res.w_in.nrows() != n
        || x_len != n
        || u_len != res.w_in.ncols()
        || gates.w_fb_in.len() != n
        || gates.w_fb_res.len() != n
        || readout.w_out.ncols() != n
        || readout.w_out.nrows() != readout.b_out.len()
    {
        return Err(SmrcError::DimensionMismatch(format!(
            "state length {x_len}, input length {u_len}, reservoir {}x{}, input weights {}x{}",
            res.w_res.nrows(),
            res.w_res.ncols(),
            res.w_in.nrows(),
            res.w_in.ncols()
        )));
    }
    Ok(())
}

/// One update from `x_prev`. The gates applied are evaluated from `x_prev`;
/// the returned gates are evaluated from the new state.
pub fn step(
    res: &ReservoirParams,
    gates: &GateParams,
    readout: &ReadoutParams,
    x_prev: &DVector<f64>,
    u_t: &DVector<f64>,
    mode: GateMode,
) -> Result<StepOutput> {
    check_step_dims(res, gates, readout, x_prev.len(), u_t.len())?;
    let (g_in_prev, g_res_prev) = gates.evaluate(x_prev, mode);
    let state = advance(res, x_prev, u_t, g_in_prev, g_res_prev);
    let (gate_in, gate_res) = gates.evaluate(&state, mode);
    let output = readout.apply(&state);
    Ok(StepOutput { state, gate_in, gate_res, output })
}

/// Runs a whole input sequence (`n_in x T`) from `x(0) = 0`.
pub fn run(
    res: &ReservoirParams,
    gates: &GateParams,
    readout: &ReadoutParams,
    inputs: &DMatrix<f64>,
    mode: GateMode,
    washout: usize,
) -> Result<Trajectory> {
    let n = res.w_res.nrows();
    let len = inputs.ncols();
    if len == 0 {
        return Err(SmrcError::EmptyData("input sequence has no timesteps".into()));
    }
    if washout >= len {
        return Err(SmrcError::InvalidConfig(format!("washout {washout} must be shorter than the sequence ({len})")));
    }
    check_step_dims(res, gates, readout, n, inputs.nrows())?;

    let mut states = DMatrix::zeros(n, len);
    let mut outputs = DMatrix::zeros(readout.w_out.nrows(), len);
    let mut gates_in = Vec::with_capacity(len);
    let mut gates_res = Vec::with_capacity(len);

    let mut x = DVector::zeros(n);
    let initial_gates = gates.evaluate(&x, mode);
    let (mut g_in, mut g_res) = initial_gates;
    for t in 0..len {
        let u = inputs.column(t).into_owned();
        x = advance(res, &x, &u, g_in, g_res);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SmrcError::NonFiniteState { step: t });
        }
        (g_in, g_res) = gates.evaluate(&x, mode);
        states.set_column(t, &x);
        outputs.set_column(t, &readout.apply(&x));
        gates_in.push(g_in);
        gates_res.push(g_res);
    }
    Ok(Trajectory { states, gates_in, gates_res, outputs, washout, initial_gates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn scalar_model(w: f64, gate_mode: GateMode) -> Model {
        let config = ModelConfig { n_res: 1, n_in: 1, n_out: 1, rho_in: 1.0, rho_hat_res: w.abs(), xi: 0.0, gate_mode, seed: 0 };
        Model {
            config,
            reservoir: ReservoirParams { w_in: DMatrix::from_element(1, 1, 1.0), w_res: DMatrix::from_element(1, 1, w), xi: 0.0 },
            gates: GateParams::zeros(1),
            readout: ReadoutParams { w_out: DMatrix::from_element(1, 1, 1.0), b_out: DVector::zeros(1) },
        }
    }

    #[test]
    fn gate_activation_values() {
        assert_eq!(gate_activation(0.0), 1.0);
        // 2 / (1 + e^-10), e^-10 = 4.5399929762484854e-5
        assert_relative_eq!(gate_activation(10.0), 1.999_909_204_262_595, max_relative = 1e-14);
        for x in [-30.0, -3.2, -0.1, 0.7, 5.0, 29.0] {
            assert_relative_eq!(gate_activation(x) + gate_activation(-x), 2.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn gate_derivative_values() {
        assert_eq!(gate_activation_derivative(0.0), 0.5);
        assert!(gate_activation_derivative(30.0) < 1e-12);
        assert!(gate_activation_derivative(30.0) > 0.0);
        let h = 1e-5;
        for i in -40..=40 {
            let x = i as f64 * 0.25;
            let fd = (gate_activation(x + h) - gate_activation(x - h)) / (2.0 * h);
            assert!((fd - gate_activation_derivative(x)).abs() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn spectral_radius_examples() {
        assert_relative_eq!(spectral_radius(&DMatrix::identity(5, 5)).unwrap(), 1.0, max_relative = 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.9]));
        assert_relative_eq!(spectral_radius(&d).unwrap(), 0.9, max_relative = 1e-12);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert_relative_eq!(spectral_radius(&rot).unwrap(), 1.0, max_relative = 1e-12);
        assert_eq!(spectral_radius(&DMatrix::zeros(4, 4)).unwrap(), 0.0);
        assert!(spectral_radius(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn spectral_radius_diagonal_above_subspace_size() {
        let diag: Vec<f64> = (0..30).map(|i| if i == 17 { -2.5 } else { 0.05 * i as f64 }).collect();
        let m = DMatrix::from_diagonal(&DVector::from_vec(diag));
        assert_relative_eq!(spectral_radius(&m).unwrap(), 2.5, max_relative = 1e-9);
    }

    #[test]
    fn init_reservoir_scales_spectral_radius() {
        let config = ModelConfig { n_res: 100, rho_in: 0.12, rho_hat_res: 0.9, ..Default::default() };
        let res = init_reservoir(&config, &mut rng::stream(3, &[])).unwrap();
        let rho = spectral_radius(&res.w_res).unwrap();
        assert!((0.8991..=0.9009).contains(&rho), "rho = {rho}");
        assert!(res.w_in.iter().all(|v| v.abs() <= 0.12));
    }

    #[test]
    fn init_reservoir_degenerate_and_deterministic() {
        let config = ModelConfig { n_res: 10, rho_in: 0.0, ..Default::default() };
        let a = init_reservoir(&config, &mut rng::stream(9, &[])).unwrap();
        assert!(a.w_in.iter().all(|&v| v == 0.0));
        let b = init_reservoir(&config, &mut rng::stream(9, &[])).unwrap();
        assert_eq!(a, b);
        let zero = ModelConfig { n_res: 10, rho_hat_res: 0.0, ..Default::default() };
        let z = init_reservoir(&zero, &mut rng::stream(9, &[])).unwrap();
        assert!(z.w_res.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_gates_masks_and_bounds() {
        let both = ModelConfig { n_res: 100, gate_mode: GateMode::DynamicBoth, ..Default::default() };
        let g = init_gates(&both, &mut rng::stream(1, &[]));
        assert!(g.w_fb_in.iter().chain(g.w_fb_res.iter()).all(|v| v.abs() <= 0.1));
        assert!(g.b_fb_in.abs() <= 0.1 && g.b_fb_res.abs() <= 0.1);
        assert_eq!(g, init_gates(&both, &mut rng::stream(1, &[])));

        let stat = ModelConfig { gate_mode: GateMode::StaticBoth, ..both.clone() };
        let s = init_gates(&stat, &mut rng::stream(1, &[]));
        assert!(s.w_fb_in.iter().chain(s.w_fb_res.iter()).all(|&v| v == 0.0));
        assert_eq!(s.b_fb_in, g.b_fb_in);
        assert_ne!(s.b_fb_res, 0.0);

        let si = init_gates(&ModelConfig { gate_mode: GateMode::StaticInputGate, ..both.clone() }, &mut rng::stream(1, &[]));
        assert!(si.w_fb_in.iter().all(|&v| v == 0.0));
        assert_eq!(si.w_fb_res, g.w_fb_res);
        let sr = init_gates(&ModelConfig { gate_mode: GateMode::StaticReservoirGate, ..both }, &mut rng::stream(1, &[]));
        assert!(sr.w_fb_res.iter().all(|&v| v == 0.0));
        assert_eq!(sr.w_fb_in, g.w_fb_in);
    }

    #[test]
    fn step_scalar_hand_evaluation() {
        let m = scalar_model(0.5, GateMode::DynamicBoth);
        let out = m.step(&DVector::zeros(1), &DVector::from_element(1, 1.0)).unwrap();
        assert_relative_eq!(out.state[0], 1.0_f64.tanh(), max_relative = 1e-15);
        assert_relative_eq!(out.state[0], 0.761_594_155_955_764_9, max_relative = 1e-12);
        assert_eq!(out.gate_in, 1.0);
        assert_eq!(out.gate_res, 1.0);
    }

    #[test]
    fn step_from_rest_with_zero_input() {
        let config = ModelConfig { n_res: 6, gate_mode: GateMode::DynamicBoth, ..Default::default() };
        let mut model = Model::init(&config, &mut rng::stream(2, &[0]), &mut rng::stream(2, &[1])).unwrap();
        model.reservoir.xi = 0.0;
        let out = model.step(&DVector::zeros(6), &DVector::zeros(1)).unwrap();
        assert!(out.state.iter().all(|&v| v == 0.0));
        assert_eq!(out.gate_in, gate_activation(model.gates.b_fb_in));
        assert_eq!(out.gate_res, gate_activation(model.gates.b_fb_res));
    }

    #[test]
    fn step_rejects_bad_dimensions() {
        let m = scalar_model(0.5, GateMode::DynamicBoth);
        assert!(matches!(m.step(&DVector::zeros(2), &DVector::zeros(1)), Err(SmrcError::DimensionMismatch(_))));
        assert!(matches!(m.step(&DVector::zeros(1), &DVector::zeros(3)), Err(SmrcError::DimensionMismatch(_))));
    }

    #[test]
    fn conventional_mode_ignores_gate_parameters() {
        let config = ModelConfig { n_res: 8, gate_mode: GateMode::Conventional, ..Default::default() };
        let mut a = Model::init(&config, &mut rng::stream(4, &[0]), &mut rng::stream(4, &[1])).unwrap();
        a.gates.b_fb_in = 3.0;
        a.gates.w_fb_res.fill(-2.0);
        let mut b = a.clone();
        b.gates = GateParams::zeros(8);
        let u = DMatrix::from_fn(1, 50, |_, t| (t as f64 * 0.3).sin());
        assert_eq!(a.run(&u, 0).unwrap().states, b.run(&u, 0).unwrap().states);
    }

    #[test]
    fn run_zero_input_is_fixed_point() {
        let config = ModelConfig { n_res: 5, gate_mode: GateMode::DynamicBoth, ..Default::default() };
        let mut m = Model::init(&config, &mut rng::stream(5, &[0]), &mut rng::stream(5, &[1])).unwrap();
        m.readout.b_out[0] = 0.25;
        let traj = m.run(&DMatrix::zeros(1, 30), 3).unwrap();
        assert!(traj.states.iter().all(|&v| v == 0.0));
        assert!(traj.outputs.iter().all(|&v| v == 0.25));
        assert_eq!(traj.len(), 30);
        assert_eq!(traj.washout, 3);
    }

    #[test]
    fn run_rejects_bad_washout_and_empty_input() {
        let m = scalar_model(0.5, GateMode::Conventional);
        assert!(m.run(&DMatrix::zeros(1, 0), 0).is_err());
        assert!(m.run(&DMatrix::zeros(1, 4), 4).is_err());
    }

    #[test]
    fn echo_state_property_forgets_initial_state() {
        let config = ModelConfig { n_res: 40, rho_in: 0.5, rho_hat_res: 0.8, gate_mode: GateMode::Conventional, ..Default::default() };
        let m = Model::init(&config, &mut rng::stream(11, &[0]), &mut rng::stream(11, &[1])).unwrap();
        let mut s = rng::stream(11, &[2]);
        let inputs: Vec<DVector<f64>> = (0..500).map(|_| DVector::from_element(1, s.random_range(-1.0..1.0))).collect();
        let mut xa = DVector::zeros(40);
        let mut xb = DVector::from_fn(40, |i, _| if i % 2 == 0 { 0.9 } else { -0.7 });
        for u in &inputs {
            xa = m.step(&xa, u).unwrap().state;
            xb = m.step(&xb, u).unwrap().state;
        }
        assert!((xa - xb).norm() < 1e-6);
    }

    #[test]
    fn modulated_spectral_radius_uses_previous_gate() {
        let config = ModelConfig { n_res: 4, gate_mode: GateMode::DynamicBoth, ..Default::default() };
        let m = Model::init(&config, &mut rng::stream(6, &[0]), &mut rng::stream(6, &[1])).unwrap();
        let traj = m.run(&DMatrix::from_element(1, 5, 0.3), 0).unwrap();
        let rho = traj.modulated_spectral_radius(0.9);
        assert_eq!(rho[0], 0.9 * gate_activation(m.gates.b_fb_res));
        assert_eq!(rho[3], 0.9 * traj.gates_res[2]);
    }

    #[test]
    fn gate_mode_round_trips_through_text() {
        for mode in GateMode::ALL {
            assert_eq!(mode.as_str().parse::<GateMode>().unwrap(), mode);
        }
        assert!("both".parse::<GateMode>().is_err());
    }

    proptest! {
        #[test]
        fn gate_activation_bounded_and_monotone(a in -700.0f64..700.0, b in -700.0f64..700.0) {
            let (fa, fb) = (gate_activation(a), gate_activation(b));
            prop_assert!((0.0..=2.0).contains(&fa));
            if a < b { prop_assert!(fa <= fb); }
        }

        #[test]
        fn trajectories_respect_ranges(seed in 0u64..1000, mode_ix in 0usize..5) {
            let config = ModelConfig { n_res: 12, rho_in: 1.0, rho_hat_res: 1.2, gate_mode: GateMode::ALL[mode_ix], ..Default::default() };
            let m = Model::init(&config, &mut rng::stream(seed, &[0]), &mut rng::stream(seed, &[1])).unwrap();
            let mut s = rng::stream(seed, &[2]);
            let u = DMatrix::from_fn(1, 60, |_, _| s.random_range(-2.0..2.0));
            let traj = m.run(&u, 10).unwrap();
            prop_assert!(traj.states.iter().all(|v| v.abs() <= 1.0));
            prop_assert!(traj.gates_in.iter().chain(traj.gates_res.iter()).all(|&g| g > 0.0 && g < 2.0));
            let rho = traj.modulated_spectral_radius(1.2);
            prop_assert!(rho.iter().all(|&r| r > 0.0 && r < 2.4));
            prop_assert_eq!(traj, m.run(&u, 10).unwrap());
        }
    }
}
