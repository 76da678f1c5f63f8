use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmrcError};
use crate::reservoir::{Model, ModelConfig, ReadoutParams};
use crate::rng;
use crate::tasks::TaskSample;
use crate::training::adam::{adam_update, AdamHyper, AdamState};
use crate::training::bptt::{bptt_gradients, flatten_params, forward, unflatten_params};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMode {
    /// Least-squares readout every epoch, then one gradient step on the gates.
    PseudoInverse,
    /// Gates and readout trained jointly by gradient.
    FullBptt,
}

impl ReadoutMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReadoutMode::PseudoInverse => "pseudo_inverse",
            ReadoutMode::FullBptt => "full_bptt",
        }
    }
}

impl fmt::Display for ReadoutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReadoutMode {
    type Err = SmrcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pseudo_inverse" => Ok(ReadoutMode::PseudoInverse),
            "full_bptt" => Ok(ReadoutMode::FullBptt),
            _ => Err(SmrcError::InvalidConfig(format!("unknown readout mode `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotSelection {
    BestTrainMse,
    FinalEpoch,
}

impl SnapshotSelection {
    pub fn as_str(self) -> &'static str {
        match self {
            SnapshotSelection::BestTrainMse => "best_train_mse",
            SnapshotSelection::FinalEpoch => "final_epoch",
        }
    }
}

impl fmt::Display for SnapshotSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SnapshotSelection {
    type Err = SmrcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best_train_mse" => Ok(SnapshotSelection::BestTrainMse),
            "final_epoch" => Ok(SnapshotSelection::FinalEpoch),
            _ => Err(SmrcError::InvalidConfig(format!("unknown snapshot selection `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub n_restarts: usize,
    pub washout: usize,
    pub ridge_lambda: f64,
    pub readout_mode: ReadoutMode,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub snapshot_selection: SnapshotSelection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10_000,
            learning_rate: 1e-3,
            n_restarts: 50,
            washout: 200,
            ridge_lambda: 0.0,
            readout_mode: ReadoutMode::PseudoInverse,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            snapshot_selection: SnapshotSelection::BestTrainMse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SmrcError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.n_restarts == 0 {
            return bad("n_restarts must be at least 1");
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return bad("ridge_lambda must be >= 0");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return bad("adam_epsilon must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper { learning_rate: self.learning_rate, beta1: self.adam_beta1, beta2: self.adam_beta2, epsilon: self.adam_epsilon }
    }
}

/// Result of one training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// Train MSE per epoch; non-finite entries mark discarded epochs.
    pub curve: Vec<f64>,
    pub selected_epoch: usize,
    pub train_mse: f64,
    /// Set when at least one epoch produced a non-finite loss.
    pub degraded: bool,
    pub restart: usize,
    pub seed: u64,
}

/// Seed for restart `index` of a run with base seed `base`.
pub fn restart_seed(base: u64, index: usize) -> u64 {
    rng::derive_seed(base, &[rng::tag("restart"), index as u64])
}

/// Initial model for a restart: reservoir, gates and (for gradient-trained
/// readouts) readout weights all drawn from streams derived from `seed`.
pub fn initial_model(config: &ModelConfig, train: &TrainConfig, seed: u64) -> Result<Model> {
    let mut model = Model::init(config, &mut rng::stream(seed, &[rng::tag("reservoir")]), &mut rng::stream(seed, &[rng::tag("gates")]))?;
    if train.readout_mode == ReadoutMode::FullBptt {
        let mut s = rng::stream(seed, &[rng::tag("readout")]);
        let bound = 1.0 / (config.n_res as f64).sqrt();
        model.readout.w_out.iter_mut().for_each(|v| *v = s.random_range(-bound..=bound));
        model.readout.b_out = DVector::zeros(config.n_out);
    }
    Ok(model)
}

fn check_washout(samples: &[TaskSample], train: &TrainConfig) -> Result<Vec<TaskSample>> {
    let shortest = samples.iter().map(|s| s.len()).min().ok_or_else(|| SmrcError::EmptyData("empty training set".into()))?;
    if train.washout >= shortest {
        return Err(SmrcError::InvalidConfig(format!(
            "washout {} must be shorter than the shortest training sequence ({shortest})",
            train.washout
        )));
    }
    Ok(samples.iter().map(|s| TaskSample { washout: train.washout, ..s.clone() }).collect())
}

/// Trains one restart.
///
/// Pseudo-inverse mode, per epoch: run every sequence, fit the readout on the
/// pooled post-washout states, score, backpropagate with the readout held
/// fixed and take one Adam step on the gate parameters. In conventional mode
/// the single readout fit is the whole training. Full-BPTT mode takes one joint
/// Adam step on gates and readout per epoch.
pub fn train_once(config: &ModelConfig, samples: &[TaskSample], train: &TrainConfig, restart: usize, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    train.validate()?;
    let samples = check_washout(samples, train)?;
    let hyper = train.adam();
    let full = train.readout_mode == ReadoutMode::FullBptt;
    let mut model = initial_model(config, train, seed)?;

    let n_params = flatten_params(&model.gates, full.then_some(&model.readout)).len();
    let mut adam = AdamState::new(n_params);
    let mut curve = Vec::with_capacity(train.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut last_finite: Option<(f64, usize, Model)> = None;
    let mut degraded = false;

    for epoch in 0..train.epochs {
        let cache = forward(&model, &samples)?;
        if !full {
            match cache.fit_readout(train.ridge_lambda) {
                Ok(fit) => model.readout = fit.readout,
                Err(SmrcError::NonFinite(_)) => {
                    model.readout = ReadoutParams { w_out: model.readout.w_out.map(|_| f64::NAN), b_out: model.readout.b_out.clone() }
                }
                Err(e) => return Err(e),
            }
        }
        let loss = cache.loss(&model.readout);
        let mse = loss / cache.loss_terms() as f64;
        curve.push(mse);

        if !mse.is_finite() {
            degraded = true;
            log::warn!("restart {restart}: non-finite loss at epoch {epoch}; resuming from the last finite snapshot");
            match &last_finite {
                Some((_, _, m)) => {
                    model = m.clone();
                    adam = AdamState::new(n_params);
                    continue;
                }
                None => return Err(SmrcError::NonFinite(format!("loss at epoch {epoch} with no finite snapshot"))),
            }
        }

        if best.as_ref().is_none_or(|(b, _, _)| mse < *b) {
            best = Some((mse, epoch, model.clone()));
        }
        last_finite = Some((mse, epoch, model.clone()));

        if !full && !config.gate_mode.has_gates() {
            break;
        }
        if epoch + 1 == train.epochs {
            break;
        }

        let grads = bptt_gradients(&model, &cache, full)?;
        let mut params = flatten_params(&model.gates, full.then_some(&model.readout));
        adam_update(&mut params, &grads.flatten(), &mut adam, &hyper);
        unflatten_params(&params, &mut model.gates, full.then_some(&mut model.readout));
    }

    let (train_mse, selected_epoch, model) = match train.snapshot_selection {
        SnapshotSelection::BestTrainMse => best,
        SnapshotSelection::FinalEpoch => last_finite,
    }
    .ok_or_else(|| SmrcError::NonFinite("no epoch produced a finite loss".into()))?;

    Ok(TrainOutcome { model, curve, selected_epoch, train_mse, degraded, restart, seed })
}

/// All restarts of a run and the index of the selected one.
#[derive(Debug)]
pub struct RestartsOutcome {
    pub runs: Vec<std::result::Result<TrainOutcome, String>>,
    pub best: usize,
}

impl RestartsOutcome {
    pub fn best_run(&self) -> &TrainOutcome {
        self.runs[self.best].as_ref().expect("best restart succeeded")
    }
}

/// Index of the lowest train MSE among successful runs; ties go to the lower index.
pub fn select_best<'a>(runs: impl IntoIterator<Item = Option<&'a TrainOutcome>>) -> Option<usize> {
    runs.into_iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r.train_mse)))
        .fold(None, |acc: Option<(usize, f64)>, (i, m)| match acc {
            Some((_, bm)) if bm <= m => acc,
            _ => Some((i, m)),
        })
        .map(|(i, _)| i)
}

/// Runs `n_restarts` independent restarts (in parallel on the current rayon
/// pool) and selects the one with the lowest train MSE.
pub fn train_restarts(config: &ModelConfig, samples: &[TaskSample], train: &TrainConfig) -> Result<RestartsOutcome> {
    train.validate()?;
    let runs: Vec<_> = (0..train.n_restarts)
        .into_par_iter()
        .map(|r| train_once(config, samples, train, r, restart_seed(config.seed, r)).map_err(|e| format!("restart {r}: {e}")))
        .collect();
    match select_best(runs.iter().map(|r| r.as_ref().ok())) {
        Some(best) => Ok(RestartsOutcome { runs, best }),
        None => Err(SmrcError::AllRestartsFailed(runs.into_iter().filter_map(|r| r.err()).collect())),
    }
}
