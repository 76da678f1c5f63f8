//! Local sensitivity of the reservoir dynamics and evaluation metrics.
//!
//! The sensitivity at time `t` measures how an ensemble of tiny state
//! perturbations of norm `epsilon` grows over `t_p` steps:
//!
//! ```text
//! lambda(t)     = 1/(t_p N_p) * sum_j ln( |x(t+t_p) - x_j(t+t_p)| / epsilon )
//! lambda_max(t) = 1/t_p       * max_j ln( |x(t+t_p) - x_j(t+t_p)| / epsilon )
//! ```
//!
//! Perturbed trajectories recompute their gates from the perturbed states.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmrcError};
use crate::reservoir::{gate_activation, Model, Trajectory};
use crate::rng::{self, Stream};
use crate::tasks::TaskSample;
use crate::training::bptt::forward;

/// Distances below this are clamped before taking the logarithm.
pub const DISTANCE_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub t_p: usize,
    pub epsilon: f64,
    pub n_p: usize,
    pub mh_proposal_scale: f64,
    pub mh_burn_in: usize,
    pub mh_thinning: usize,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self { t_p: 2, epsilon: 1e-8, n_p: 200, mh_proposal_scale: 0.2, mh_burn_in: 100, mh_thinning: 10 }
    }
}

impl SensitivityConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SmrcError::InvalidConfig(m.to_string()));
        if self.t_p == 0 {
            return bad("t_p must be at least 1");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if self.n_p == 0 {
            return bad("n_p must be at least 1");
        }
        if !(self.mh_proposal_scale > 0.0 && self.mh_proposal_scale.is_finite()) {
            return bad("mh_proposal_scale must be positive");
        }
        if self.mh_thinning == 0 {
            return bad("mh_thinning must be at least 1");
        }
        Ok(())
    }
}

/// Sensitivity time course. Entry `t` describes perturbations applied to
/// `x(t)` and measured at `x(t + t_p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    pub lambda_mean: Vec<f64>,
    pub lambda_max: Vec<f64>,
    /// Per step, the number of perturbed trajectories whose distance hit
    /// [`DISTANCE_FLOOR`].
    pub floor_hits: Vec<usize>,
    pub config: SensitivityConfig,
}

impl SensitivityProfile {
    pub fn len(&self) -> usize {
        self.lambda_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda_mean.is_empty()
    }

    pub fn total_floor_hits(&self) -> usize {
        self.floor_hits.iter().sum()
    }
}

/// Draws `n_p` vectors of norm exactly `epsilon` in `n_dim` dimensions.
///
/// A random-walk Metropolis-Hastings chain targets the uniform density on the
/// unit ball: a Gaussian proposal is accepted iff it lies inside the ball.
/// The proposal standard deviation per component is
/// `mh_proposal_scale / sqrt(n_dim)`, so the proposal step length stays near
/// `mh_proposal_scale` in any dimension. After `mh_burn_in` steps, every
/// `mh_thinning`-th state is kept and rescaled to norm `epsilon`.
pub fn sample_perturbations(n_dim: usize, n_p: usize, epsilon: f64, cfg: &SensitivityConfig, rng: &mut Stream) -> Vec<DVector<f64>> {
    assert!(n_dim >= 1, "perturbations need at least one dimension");
    let sd = cfg.mh_proposal_scale / (n_dim as f64).sqrt();
    let mut current = DVector::<f64>::zeros(n_dim);
    let mut proposal = DVector::<f64>::zeros(n_dim);
    let mut advance = |current: &mut DVector<f64>, rng: &mut Stream| {
        for (p, c) in proposal.iter_mut().zip(current.iter()) {
            let z: f64 = rng.sample(StandardNormal);
            *p = c + sd * z;
        }
        if proposal.norm_squared() <= 1.0 {
            current.copy_from(&proposal);
        }
    };
    for _ in 0..cfg.mh_burn_in {
        advance(&mut current, rng);
    }
    let mut out = Vec::with_capacity(n_p);
    while out.len() < n_p {
        for _ in 0..cfg.mh_thinning.max(1) {
            advance(&mut current, rng);
        }
        let norm = current.norm();
        if norm > 0.0 {
            out.push(&current * (epsilon / norm));
        }
    }
    out
}

/// Propagates a batch of states (`n_res x k`, one per column) one step with
/// per-column gates evaluated from each column.
fn propagate_batch(model: &Model, states: &DMatrix<f64>, u: &DVector<f64>) -> DMatrix<f64> {
    let res = &model.reservoir;
    let mode = model.config.gate_mode;
    let recurrent = &res.w_res * states;
    let driven = &res.w_in * u;
    let mut next = recurrent;
    for (j, mut col) in next.column_iter_mut().enumerate() {
        let (g_in, g_res) = if mode.has_gates() {
            let x = states.column(j);
            (
                gate_activation(model.gates.w_fb_in.dot(&x) + model.gates.b_fb_in),
                gate_activation(model.gates.w_fb_res.dot(&x) + model.gates.b_fb_res),
            )
        } else {
            (1.0, 1.0)
        };
        for (v, d) in col.iter_mut().zip(driven.iter()) {
            *v = (g_res * *v + g_in * d + res.xi).tanh();
        }
    }
    next
}

/// Sensitivity profile of `model` along the reference run on `inputs`
/// (`n_in x T`). The profile has `T - t_p` entries. Perturbation ensembles are
/// drawn independently for every `t` from streams derived from `seed`.
pub fn sensitivity(model: &Model, inputs: &DMatrix<f64>, cfg: &SensitivityConfig, seed: u64) -> Result<SensitivityProfile> {
    cfg.validate()?;
    model.check_dimensions()?;
    let len = inputs.ncols();
    if len <= cfg.t_p {
        return Err(SmrcError::InvalidConfig(format!("sequence of length {len} is too short for t_p = {}", cfg.t_p)));
    }
    let reference = model.run(inputs, 0)?;
    sensitivity_from_reference(model, inputs, &reference, cfg, seed)
}

fn sensitivity_from_reference(
    model: &Model,
    inputs: &DMatrix<f64>,
    reference: &Trajectory,
    cfg: &SensitivityConfig,
    seed: u64,
) -> Result<SensitivityProfile> {
    let n = model.config.n_res;
    let steps = inputs.ncols() - cfg.t_p;
    let per_step: Vec<(f64, f64, usize, usize)> = (0..steps)
        .into_par_iter()
        .map(|t| {
            let mut s = rng::stream(seed, &[rng::tag("perturbation"), t as u64]);
            let perturbations = sample_perturbations(n, cfg.n_p, cfg.epsilon, cfg, &mut s);
            let base = reference.states.column(t);
            let mut clamped = 0;
            let mut batch = DMatrix::from_fn(n, cfg.n_p, |i, j| {
                let v = base[i] + perturbations[j][i];
                if v.abs() > 1.0 {
                    clamped += 1;
                }
                v.clamp(-1.0, 1.0)
            });
            for k in 1..=cfg.t_p {
                let u = inputs.column(t + k).into_owned();
                batch = propagate_batch(model, &batch, &u);
            }
            let target = reference.states.column(t + cfg.t_p);
            let mut sum = 0.0;
            let mut max = f64::NEG_INFINITY;
            let mut hits = 0;
            for col in batch.column_iter() {
                let mut d = (col - target).norm();
                if d.is_nan() || d < DISTANCE_FLOOR {
                    d = DISTANCE_FLOOR;
                    hits += 1;
                }
                let l = (d / cfg.epsilon).ln();
                sum += l;
                max = max.max(l);
            }
            let tp = cfg.t_p as f64;
            // Rounding in the sum must not push the mean above the maximum.
            ((sum / (tp * cfg.n_p as f64)).min(max / tp), max / tp, hits, clamped)
        })
        .collect();

    let clamped: usize = per_step.iter().map(|r| r.3).sum();
    if clamped > 0 {
        log::debug!("{clamped} perturbed state components were clamped to [-1, 1]");
    }
    let floor_hits: Vec<usize> = per_step.iter().map(|r| r.2).collect();
    if floor_hits.iter().any(|&h| h > 0) {
        log::warn!("{} perturbation distances hit the numeric floor", floor_hits.iter().sum::<usize>());
    }
    Ok(SensitivityProfile {
        lambda_mean: per_step.iter().map(|r| r.0).collect(),
        lambda_max: per_step.iter().map(|r| r.1).collect(),
        floor_hits,
        config: cfg.clone(),
    })
}

/// Mean squared error over all post-washout steps, sequences and output
/// dimensions. Each matrix is `n_out x T`.
pub fn mse_report(predictions: &[DMatrix<f64>], targets: &[DMatrix<f64>], washout: usize) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(SmrcError::DimensionMismatch(format!("{} predictions for {} targets", predictions.len(), targets.len())));
    }
    if predictions.is_empty() {
        return Err(SmrcError::EmptyData("no sequences to score".into()));
    }
    let mut sum = 0.0;
    let mut terms = 0usize;
    for (p, y) in predictions.iter().zip(targets) {
        if p.shape() != y.shape() {
            return Err(SmrcError::DimensionMismatch(format!("prediction {:?} vs target {:?}", p.shape(), y.shape())));
        }
        if washout >= p.ncols() {
            return Err(SmrcError::InvalidConfig(format!("washout {washout} must be shorter than the sequence ({})", p.ncols())));
        }
        let cols = p.ncols() - washout;
        let diff = p.columns(washout, cols) - y.columns(washout, cols);
        sum += diff.norm_squared();
        terms += diff.len();
    }
    Ok(sum / terms as f64)
}

/// MSE of `model` on `samples`, each scored after its own washout.
pub fn model_mse(model: &Model, samples: &[TaskSample]) -> Result<f64> {
    let cache = forward(model, samples)?;
    Ok(cache.loss(&model.readout) / cache.loss_terms() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleQuantity {
    /// Series `g_in(t)` and `rho_res(t) = g_res(t-1) * rho_hat`.
    Gates,
    /// Series `lambda_mean(t)`, `lambda_max(t)` and the per-step floor-hit count.
    Sensitivity,
}

/// Per-timestep mean and sample standard deviation of one named series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl SeriesStats {
    /// Statistics across equal-length realizations.
    pub fn from_realizations(name: &str, series: &[Vec<f64>]) -> Result<Self> {
        let len = series.first().map(Vec::len).ok_or_else(|| SmrcError::EmptyData("no realizations".into()))?;
        if series.iter().any(|s| s.len() != len) {
            return Err(SmrcError::DimensionMismatch("realizations differ in length".into()));
        }
        let k = series.len() as f64;
        let mut mean = vec![0.0; len];
        let mut std = vec![0.0; len];
        for t in 0..len {
            let m = series.iter().map(|s| s[t]).sum::<f64>() / k;
            let var = if series.len() > 1 { series.iter().map(|s| (s[t] - m).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
            mean[t] = m;
            std[t] = var.sqrt();
        }
        Ok(Self { name: name.to_string(), mean, std })
    }
}

/// Ensemble statistics over `n_realizations` input sequences produced by
/// `generate(i)`. Sensitivity ensembles for realization `i` use a stream
/// derived from `seed` and `i`.
pub fn ensemble_stats<F>(
    model: &Model,
    generate: F,
    n_realizations: usize,
    quantity: EnsembleQuantity,
    sensitivity_cfg: &SensitivityConfig,
    seed: u64,
) -> Result<Vec<SeriesStats>>
where
    F: Fn(usize) -> Result<DMatrix<f64>> + Sync,
{
    if n_realizations < 2 {
        return Err(SmrcError::InvalidConfig("ensemble statistics need at least 2 realizations".into()));
    }
    let per: Vec<Vec<Vec<f64>>> = (0..n_realizations)
        .into_par_iter()
        .map(|i| -> Result<Vec<Vec<f64>>> {
            let inputs = generate(i)?;
            match quantity {
                EnsembleQuantity::Gates => {
                    let traj = model.run(&inputs, 0)?;
                    Ok(vec![traj.gates_in.clone(), traj.modulated_spectral_radius(model.config.rho_hat_res)])
                }
                EnsembleQuantity::Sensitivity => {
                    let p = sensitivity(model, &inputs, sensitivity_cfg, rng::derive_seed(seed, &[i as u64]))?;
                    let hits = p.floor_hits.iter().map(|&h| h as f64).collect();
                    Ok(vec![p.lambda_mean, p.lambda_max, hits])
                }
            }
        })
        .collect::<Result<_>>()?;
    let names: &[&str] = match quantity {
        EnsembleQuantity::Gates => &["g_in", "rho_res"],
        EnsembleQuantity::Sensitivity => &["lambda_mean", "lambda_max", "floor_hits"],
    };
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let series: Vec<Vec<f64>> = per.iter().map(|r| r[k].clone()).collect();
            SeriesStats::from_realizations(name, &series)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reservoir::{GateMode, GateParams, ModelConfig, ReadoutParams, ReservoirParams};
    use proptest::prelude::*;
    use rand::Rng;

    fn scalar_model(w: f64) -> Model {
        let config = ModelConfig { n_res: 1, rho_hat_res: w.abs(), gate_mode: GateMode::Conventional, ..ModelConfig::default() };
        Model {
            config,
            reservoir: ReservoirParams { w_in: DMatrix::from_element(1, 1, 0.3), w_res: DMatrix::from_element(1, 1, w), xi: 0.0 },
            gates: GateParams::zeros(1),
            readout: ReadoutParams::zeros(1, 1),
        }
    }

    #[test]
    fn perturbations_have_exact_norm() {
        let cfg = SensitivityConfig::default();
        let mut s = rng::stream(3, &[]);
        for p in sample_perturbations(50, 200, 1e-8, &cfg, &mut s) {
            assert!((p.norm() - 1e-8).abs() <= 1e-15 * 1e-8);
        }
    }

    #[test]
    fn one_dimensional_perturbations_are_balanced() {
        let cfg = SensitivityConfig::default();
        let mut s = rng::stream(11, &[]);
        let draws = sample_perturbations(1, 10_000, 1e-8, &cfg, &mut s);
        assert!(draws.iter().all(|p| (p[0].abs() - 1e-8).abs() <= 1e-23));
        let positive = draws.iter().filter(|p| p[0] > 0.0).count() as f64;
        // Successive thinned states are correlated; allow 3 sigma of an
        // effective sample a tenth the size.
        let sigma = (10_000.0f64 * 0.25).sqrt() * 10f64.sqrt();
        assert!((positive - 5_000.0).abs() < 3.0 * sigma, "positive count {positive}");
    }

    #[test]
    fn three_dimensional_projections_are_centred() {
        let cfg = SensitivityConfig::default();
        let mut s = rng::stream(5, &[]);
        let draws = sample_perturbations(3, 10_000, 1.0, &cfg, &mut s);
        for axis in [DVector::from_vec(vec![1.0, 0.0, 0.0]), DVector::from_vec(vec![0.6, 0.0, -0.8])] {
            let proj: Vec<f64> = draws.iter().map(|p| p.dot(&axis)).collect();
            let mean = proj.iter().sum::<f64>() / proj.len() as f64;
            // Uniform sphere in 3-d: projection variance 1/3; widen for chain correlation.
            let se = (1.0 / 3.0 / proj.len() as f64).sqrt() * 10f64.sqrt();
            assert!(mean.abs() < 3.0 * se, "mean {mean}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = SensitivityConfig::default();
        let a = sample_perturbations(7, 30, 1e-8, &cfg, &mut rng::stream(9, &[]));
        let b = sample_perturbations(7, 30, 1e-8, &cfg, &mut rng::stream(9, &[]));
        assert_eq!(a, b);
    }

    #[test]
    fn scalar_linear_probe() {
        let model = scalar_model(0.5);
        let inputs = DMatrix::zeros(1, 20);
        let cfg = SensitivityConfig { t_p: 1, n_p: 20, ..SensitivityConfig::default() };
        let p = sensitivity(&model, &inputs, &cfg, 1).unwrap();
        assert_eq!(p.len(), 19);
        for t in 0..p.len() {
            assert!((p.lambda_mean[t] - 0.5f64.ln()).abs() < 1e-3);
            assert!(p.lambda_max[t] >= p.lambda_mean[t]);
        }
        assert_eq!(p.total_floor_hits(), 0);
    }

    #[test]
    fn contraction_rate_independent_of_horizon() {
        let model = scalar_model(0.8);
        let inputs = DMatrix::zeros(1, 30);
        for t_p in [1, 2, 4, 7] {
            let cfg = SensitivityConfig { t_p, n_p: 10, ..SensitivityConfig::default() };
            let p = sensitivity(&model, &inputs, &cfg, 2).unwrap();
            assert!(p.lambda_mean.iter().all(|l| (l - 0.8f64.ln()).abs() < 1e-3));
        }
    }

    #[test]
    fn zero_map_hits_floor() {
        let mut model = scalar_model(0.0);
        model.config.n_res = 4;
        model.config.gate_mode = GateMode::DynamicBoth;
        model.reservoir = ReservoirParams { w_in: DMatrix::from_element(4, 1, 0.5), w_res: DMatrix::zeros(4, 4), xi: 0.0 };
        model.gates = GateParams {
            w_fb_in: DVector::from_element(4, 0.3),
            b_fb_in: 0.1,
            w_fb_res: DVector::from_element(4, -0.2),
            b_fb_res: 0.0,
        };
        model.readout = ReadoutParams::zeros(1, 4);
        let cfg = SensitivityConfig { n_p: 16, ..SensitivityConfig::default() };
        let p = sensitivity(&model, &DMatrix::zeros(1, 10), &cfg, 0).unwrap();
        assert!(p.floor_hits.iter().all(|&h| h == 16));
        let clamp = (DISTANCE_FLOOR / cfg.epsilon).ln() / 2.0;
        assert!(p.lambda_mean.iter().chain(&p.lambda_max).all(|&l| (l - clamp).abs() < 1e-9));
    }

    #[test]
    fn batch_propagation_matches_single_steps() {
        let config = ModelConfig { n_res: 12, gate_mode: GateMode::DynamicBoth, seed: 4, ..ModelConfig::default() };
        let model = Model::init(&config, &mut rng::stream(1, &[]), &mut rng::stream(2, &[])).unwrap();
        let mut s = rng::stream(8, &[]);
        let states = DMatrix::from_fn(12, 3, |_, _| s.random_range(-0.9..0.9));
        let u = DVector::from_element(1, 0.4);
        let batch = propagate_batch(&model, &states, &u);
        for j in 0..3 {
            let single = model.step(&states.column(j).into_owned(), &u).unwrap().state;
            assert!((batch.column(j) - single).amax() < 1e-14);
        }
    }

    #[test]
    fn mse_definitions() {
        let y = DMatrix::from_fn(2, 10, |i, t| (i + t) as f64);
        assert_eq!(mse_report(std::slice::from_ref(&y), std::slice::from_ref(&y), 3).unwrap(), 0.0);
        let shifted = y.add_scalar(0.25);
        assert!((mse_report(&[shifted], std::slice::from_ref(&y), 3).unwrap() - 0.0625).abs() < 1e-15);
        assert!(mse_report(std::slice::from_ref(&y), std::slice::from_ref(&y), 10).is_err());
        assert!(mse_report(&[], &[], 0).is_err());
    }

    #[test]
    fn model_mse_matches_loss_per_term() {
        let samples = crate::training::bptt::tests::random_samples(6, 3, 40, 10);
        let config = ModelConfig { n_res: 10, gate_mode: GateMode::DynamicBoth, ..ModelConfig::default() };
        let mut model = Model::init(&config, &mut rng::stream(1, &[]), &mut rng::stream(2, &[])).unwrap();
        model.readout.w_out.fill(0.1);
        let preds: Vec<_> = samples.iter().map(|s| model.run(&s.inputs, s.washout).unwrap().outputs).collect();
        let targets: Vec<_> = samples.iter().map(|s| s.targets.clone()).collect();
        let direct = mse_report(&preds, &targets, 10).unwrap();
        assert!((model_mse(&model, &samples).unwrap() - direct).abs() < 1e-12 * direct.max(1.0));
    }

    #[test]
    fn ensemble_of_identical_inputs_has_zero_spread() {
        let config = ModelConfig { n_res: 8, gate_mode: GateMode::DynamicBoth, ..ModelConfig::default() };
        let model = Model::init(&config, &mut rng::stream(1, &[]), &mut rng::stream(2, &[])).unwrap();
        let input = DMatrix::from_fn(1, 30, |_, t| (t as f64 * 0.3).sin());
        let stats = ensemble_stats(&model, |_| Ok(input.clone()), 4, EnsembleQuantity::Gates, &SensitivityConfig::default(), 0).unwrap();
        assert_eq!(stats.len(), 2);
        assert!(stats.iter().all(|s| s.std.iter().all(|&v| v == 0.0)));
        let traj = model.run(&input, 0).unwrap();
        assert_eq!(stats[0].mean, traj.gates_in);
        assert!(ensemble_stats(&model, |_| Ok(input.clone()), 1, EnsembleQuantity::Gates, &SensitivityConfig::default(), 0).is_err());
    }

    #[test]
    fn series_stats_of_constant() {
        let s = SeriesStats::from_realizations("c", &[vec![2.5; 4], vec![2.5; 4], vec![2.5; 4]]).unwrap();
        assert_eq!(s.mean, vec![2.5; 4]);
        assert_eq!(s.std, vec![0.0; 4]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn max_dominates_mean(seed in 0u64..1000, t_p in 1usize..4) {
            let config = ModelConfig { n_res: 10, gate_mode: GateMode::DynamicBoth, seed, ..ModelConfig::default() };
            let model = Model::init(&config, &mut rng::stream(seed, &[1]), &mut rng::stream(seed, &[2])).unwrap();
            let mut s = rng::stream(seed, &[3]);
            let inputs = DMatrix::from_fn(1, 25, |_, _| s.random_range(-1.0..1.0));
            let cfg = SensitivityConfig { t_p, n_p: 12, ..SensitivityConfig::default() };
            let p = sensitivity(&model, &inputs, &cfg, seed).unwrap();
            prop_assert_eq!(p.lambda_mean.len(), p.lambda_max.len());
            for t in 0..p.len() {
                prop_assert!(p.lambda_max[t] >= p.lambda_mean[t]);
            }
        }
    }
}
