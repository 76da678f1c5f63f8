//! Benchmark datasets: delayed-pulse attention, NARMA and Lorenz prediction.
//!
//! Every sample is drawn from its own derived random stream keyed by
//! `(seed, split, index)`, so the train split never depends on the test split
//! and samples can be generated in any order.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmrcError};
use crate::rng::{self, Stream};

pub const DEFAULT_WASHOUT: usize = 200;

/// Input pulse occupies `[250, 259]`, target pulse `[290, 291]`, both shifted by the jitter.
pub const ATTENTION_PULSE_START: usize = 250;
pub const ATTENTION_PULSE_END: usize = 259;
pub const ATTENTION_TARGET_START: usize = 290;
pub const ATTENTION_TARGET_END: usize = 291;
pub const ATTENTION_DEFAULT_LENGTH: usize = 400;
pub const ATTENTION_MAX_JITTER: i32 = 2;

pub const NARMA_DISCARD: usize = 200;
pub const NARMA_DEFAULT_LENGTH: usize = 2000;
const NARMA_DIVERGENCE_BOUND: f64 = 10.0;
const NARMA_MAX_ATTEMPTS: usize = 100;

pub const LORENZ_DT: f64 = 0.01;
pub const LORENZ_DISCARD: usize = 1000;
pub const LORENZ_KEEP: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Attention,
    Narma5,
    Narma10,
    Lorenz,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::Attention, TaskKind::Narma5, TaskKind::Narma10, TaskKind::Lorenz];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Attention => "attention",
            TaskKind::Narma5 => "narma5",
            TaskKind::Narma10 => "narma10",
            TaskKind::Lorenz => "lorenz",
        }
    }

    pub fn narma_order(self) -> Option<usize> {
        match self {
            TaskKind::Narma5 => Some(5),
            TaskKind::Narma10 => Some(10),
            _ => None,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = SmrcError;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| SmrcError::InvalidConfig(format!("unknown task `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        rng::tag(self.as_str())
    }
}

impl FromStr for Split {
    type Err = SmrcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(SmrcError::InvalidConfig(format!("unknown split `{s}`"))),
        }
    }
}

/// Task-specific description of how a sample was generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub task: TaskKind,
    pub split: Split,
    pub index: usize,
    pub jitter: Option<i32>,
    pub sigma_in: Option<f64>,
    pub n_forward: Option<usize>,
    pub narma_order: Option<usize>,
}

/// One input/target sequence pair; column `t` is time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSample {
    /// `n_in x T`
    pub inputs: DMatrix<f64>,
    /// `n_out x T`
    pub targets: DMatrix<f64>,
    pub washout: usize,
    pub meta: SampleMeta,
}

impl TaskSample {
    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.ncols() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.ncols() != self.targets.ncols() {
            return Err(SmrcError::DimensionMismatch(format!(
                "{} input steps but {} target steps",
                self.inputs.ncols(),
                self.targets.ncols()
            )));
        }
        if self.washout >= self.len() {
            return Err(SmrcError::InvalidConfig(format!(
                "washout {} is not shorter than the sequence ({})",
                self.washout,
                self.len()
            )));
        }
        if self.inputs.iter().chain(self.targets.iter()).any(|v| !v.is_finite()) {
            return Err(SmrcError::NonFinite("task sample".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub channel: String,
    /// Mean and variance of the raw channel.
    pub mean: f64,
    pub variance: f64,
    /// Mean and variance after normalization.
    pub normalized_mean: f64,
    pub normalized_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub train: Vec<ChannelStats>,
    pub test: Vec<ChannelStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<TaskSample>,
    pub test: Vec<TaskSample>,
    /// Present for Lorenz only.
    pub normalization: Option<Normalization>,
}

fn gaussian(rng: &mut Stream, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        let z: f64 = rng.sample(StandardNormal);
        sigma * z
    }
}

/// A single attention sample with the given jitter.
pub fn attention_sample(sigma_in: f64, total_length: usize, jitter: i32, rng: &mut Stream) -> TaskSample {
    let mut inputs = DMatrix::zeros(1, total_length);
    let mut targets = DMatrix::zeros(1, total_length);
    let shift = |t: usize| (t as i64 + jitter as i64) as usize;
    let pulse = shift(ATTENTION_PULSE_START)..=shift(ATTENTION_PULSE_END);
    let target = shift(ATTENTION_TARGET_START)..=shift(ATTENTION_TARGET_END);
    for t in 0..total_length {
        inputs[(0, t)] = if pulse.contains(&t) { 1.0 } else { gaussian(rng, sigma_in) };
        if target.contains(&t) {
            targets[(0, t)] = 1.0;
        }
    }
    TaskSample {
        inputs,
        targets,
        washout: DEFAULT_WASHOUT,
        meta: SampleMeta {
            task: TaskKind::Attention,
            split: Split::Train,
            index: 0,
            jitter: Some(jitter),
            sigma_in: Some(sigma_in),
            n_forward: None,
            narma_order: None,
        },
    }
}

/// Delayed-pulse attention task with per-sample jitter in `{-2, ..., 2}`.
pub fn gen_attention(sigma_in: f64, n_train: usize, n_test: usize, total_length: usize, seed: u64) -> Result<Dataset> {
    if !(sigma_in >= 0.0 && sigma_in.is_finite()) {
        return Err(SmrcError::InvalidConfig(format!("sigma_in must be finite and >= 0, got {sigma_in}")));
    }
    let min_len = ATTENTION_TARGET_END + ATTENTION_MAX_JITTER as usize + 1;
    if total_length <= min_len {
        return Err(SmrcError::InvalidConfig(format!("attention sequences need more than {min_len} steps, got {total_length}")));
    }
    let make = |split: Split, index: usize| {
        let mut rng = rng::stream(seed, &[split.tag(), index as u64]);
        let jitter = rng.random_range(-ATTENTION_MAX_JITTER..=ATTENTION_MAX_JITTER);
        let mut sample = attention_sample(sigma_in, total_length, jitter, &mut rng);
        sample.meta.split = split;
        sample.meta.index = index;
        sample
    };
    let train = (0..n_train).into_par_iter().map(|i| make(Split::Train, i)).collect();
    let test = (0..n_test).into_par_iter().map(|i| make(Split::Test, i)).collect();
    Ok(Dataset { train, test, normalization: None })
}

/// NARMA recurrence of order `m` from zero history:
/// `y(t) = 0.3 y(t-1) + 0.05 y(t-1) sum_{i=1..m} y(t-i) + 1.5 s(t-m+1) s(t) + 0.1`.
pub fn narma_series(s: &[f64], m: usize) -> Vec<f64> {
    let mut y = vec![0.0; s.len()];
    for t in 0..s.len() {
        let prev = if t >= 1 { y[t - 1] } else { 0.0 };
        let window: f64 = (1..=m).filter(|&i| i <= t).map(|i| y[t - i]).sum();
        let lagged = if t + 1 >= m { s[t + 1 - m] } else { 0.0 };
        y[t] = 0.3 * prev + 0.05 * prev * window + 1.5 * lagged * s[t] + 0.1;
    }
    y
}

fn narma_sample(m: usize, length: usize, split: Split, rng: &mut Stream) -> Result<TaskSample> {
    let total = NARMA_DISCARD + length;
    for _ in 0..NARMA_MAX_ATTEMPTS {
        let s: Vec<f64> = (0..total).map(|_| rng.random_range(0.0..=0.5)).collect();
        let y = narma_series(&s, m);
        if y.iter().any(|v| !v.is_finite() || v.abs() > NARMA_DIVERGENCE_BOUND) {
            log::warn!("NARMA{m} sequence diverged; regenerating");
            continue;
        }
        let inputs = DMatrix::from_row_slice(1, length, &s[NARMA_DISCARD..]);
        let targets = DMatrix::from_row_slice(1, length, &y[NARMA_DISCARD..]);
        return Ok(TaskSample {
            inputs,
            targets,
            washout: DEFAULT_WASHOUT,
            meta: SampleMeta {
                task: if m == 5 { TaskKind::Narma5 } else { TaskKind::Narma10 },
                split,
                index: 0,
                jitter: None,
                sigma_in: None,
                n_forward: None,
                narma_order: Some(m),
            },
        });
    }
    Err(SmrcError::GenerationFailed { attempts: NARMA_MAX_ATTEMPTS, reason: format!("bounded NARMA{m} sequence") })
}

/// NARMA5/NARMA10: one training and one test sequence of `length` steps
/// after discarding 200 initial steps.
pub fn gen_narma(m: usize, length: usize, seed: u64) -> Result<Dataset> {
    if m != 5 && m != 10 {
        return Err(SmrcError::InvalidConfig(format!("NARMA order must be 5 or 10, got {m}")));
    }
    if length < m || length <= DEFAULT_WASHOUT {
        return Err(SmrcError::InvalidConfig(format!("NARMA length {length} too short")));
    }
    let train = narma_sample(m, length, Split::Train, &mut rng::stream(seed, &[Split::Train.tag()]))?;
    let test = narma_sample(m, length, Split::Test, &mut rng::stream(seed, &[Split::Test.tag()]))?;
    Ok(Dataset { train: vec![train], test: vec![test], normalization: None })
}

/// Lorenz vector field with the classic parameters (10, 28, 8/3).
pub fn lorenz_derivative(s: [f64; 3]) -> [f64; 3] {
    let [x, y, z] = s;
    [10.0 * (y - x), x * (28.0 - z) - y, x * y - (8.0 / 3.0) * z]
}

pub fn euler_step(s: [f64; 3], dt: f64) -> [f64; 3] {
    let d = lorenz_derivative(s);
    [s[0] + dt * d[0], s[1] + dt * d[1], s[2] + dt * d[2]]
}

/// Integrates `discard + keep` Euler steps and returns the last `keep` states.
pub fn lorenz_trajectory(initial: [f64; 3], discard: usize, keep: usize, dt: f64) -> Vec<[f64; 3]> {
    let mut s = initial;
    let mut out = Vec::with_capacity(keep);
    for k in 0..discard + keep {
        if k >= discard {
            out.push(s);
        }
        s = euler_step(s, dt);
    }
    out
}

/// Pairs input `x(t)` with target `z(t + n_forward)`, truncating the tail.
pub fn align_forward<T: Copy>(x: &[T], z: &[T], n_forward: usize) -> (Vec<T>, Vec<T>) {
    let n = x.len().min(z.len()).saturating_sub(n_forward);
    (x[..n].to_vec(), z[n_forward..n_forward + n].to_vec())
}

/// Which statistics normalize the Lorenz test split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationPolicy {
    /// Each split uses its own mean and variance.
    #[default]
    PerSplit,
    /// Both splits use the training statistics.
    TrainStats,
}

/// Mean and population variance, two-pass.
pub fn mean_variance(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (sum, n) = values.clone().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var)
}

struct RawLorenz {
    x: Vec<f64>,
    z: Vec<f64>,
}

fn raw_lorenz_sample(n_forward: usize, rng: &mut Stream) -> RawLorenz {
    loop {
        let ic = [rng.random_range(-10.0..=10.0), rng.random_range(-10.0..=10.0), rng.random_range(-10.0..=10.0)];
        let traj = lorenz_trajectory(ic, LORENZ_DISCARD, LORENZ_KEEP, LORENZ_DT);
        if traj.iter().flatten().any(|v| !v.is_finite()) {
            log::warn!("non-finite Lorenz trajectory; resampling the initial condition");
            continue;
        }
        let xs: Vec<f64> = traj.iter().map(|s| s[0]).collect();
        let zs: Vec<f64> = traj.iter().map(|s| s[2]).collect();
        let (x, z) = align_forward(&xs, &zs, n_forward);
        return RawLorenz { x, z };
    }
}

fn channel_stats(raw: &[RawLorenz]) -> [(f64, f64); 2] {
    [
        mean_variance(raw.iter().flat_map(|r| r.x.iter().copied())),
        mean_variance(raw.iter().flat_map(|r| r.z.iter().copied())),
    ]
}

/// Lorenz `z(t + n_forward)` prediction from noisy `x(t)`.
pub fn gen_lorenz(
    n_forward: usize,
    sigma_in: f64,
    n_train: usize,
    n_test: usize,
    policy: NormalizationPolicy,
    seed: u64,
) -> Result<Dataset> {
    if n_forward >= LORENZ_KEEP - DEFAULT_WASHOUT {
        return Err(SmrcError::InvalidConfig(format!("n_forward {n_forward} leaves no post-washout steps")));
    }
    if !(sigma_in >= 0.0 && sigma_in.is_finite()) {
        return Err(SmrcError::InvalidConfig(format!("sigma_in must be finite and >= 0, got {sigma_in}")));
    }
    let raw_split = |split: Split, n: usize| -> Vec<RawLorenz> {
        (0..n)
            .into_par_iter()
            .map(|i| raw_lorenz_sample(n_forward, &mut rng::stream(seed, &[split.tag(), i as u64])))
            .collect()
    };
    let raw_train = raw_split(Split::Train, n_train);
    let raw_test = raw_split(Split::Test, n_test);
    let train_stats = channel_stats(&raw_train);
    let test_stats = match policy {
        NormalizationPolicy::PerSplit => channel_stats(&raw_test),
        NormalizationPolicy::TrainStats => train_stats,
    };

    let build = |raw: &[RawLorenz], stats: [(f64, f64); 2], split: Split| -> (Vec<TaskSample>, Vec<ChannelStats>) {
        let [(mx, vx), (mz, vz)] = stats;
        let (sx, sz) = (vx.sqrt(), vz.sqrt());
        let samples: Vec<TaskSample> = raw
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let n = r.x.len();
                let mut inputs = DMatrix::from_fn(1, n, |_, t| (r.x[t] - mx) / sx);
                let targets = DMatrix::from_fn(1, n, |_, t| (r.z[t] - mz) / sz);
                if split == Split::Train && sigma_in > 0.0 {
                    let mut noise = rng::stream(seed, &[split.tag(), i as u64, rng::tag("noise")]);
                    for v in inputs.iter_mut() {
                        *v += gaussian(&mut noise, sigma_in);
                    }
                }
                TaskSample {
                    inputs,
                    targets,
                    washout: DEFAULT_WASHOUT,
                    meta: SampleMeta {
                        task: TaskKind::Lorenz,
                        split,
                        index: i,
                        jitter: None,
                        sigma_in: Some(sigma_in),
                        n_forward: Some(n_forward),
                        narma_order: None,
                    },
                }
            })
            .collect();
        let normalized = |ch: usize| {
            mean_variance(raw.iter().flat_map(move |r| {
                let (series, m, s) = if ch == 0 { (&r.x, mx, sx) } else { (&r.z, mz, sz) };
                series.iter().map(move |v| (v - m) / s)
            }))
        };
        let (nmx, nvx) = normalized(0);
        let (nmz, nvz) = normalized(1);
        let records = vec![
            ChannelStats { channel: "x".into(), mean: mx, variance: vx, normalized_mean: nmx, normalized_variance: nvx },
            ChannelStats { channel: "z".into(), mean: mz, variance: vz, normalized_mean: nmz, normalized_variance: nvz },
        ];
        (samples, records)
    };

    let (train, train_records) = build(&raw_train, train_stats, Split::Train);
    let (test, test_records) = build(&raw_test, test_stats, Split::Test);
    Ok(Dataset { train, test, normalization: Some(Normalization { train: train_records, test: test_records }) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn attention_pulse_layout_without_jitter() {
        let s = attention_sample(0.1, 400, 0, &mut rng::stream(1, &[]));
        let ones: Vec<usize> = (0..400).filter(|&t| s.inputs[(0, t)] == 1.0).collect();
        assert_eq!(ones, (250..=259).collect::<Vec<_>>());
        let targets: Vec<usize> = (0..400).filter(|&t| s.targets[(0, t)] == 1.0).collect();
        assert_eq!(targets, vec![290, 291]);
        assert_eq!(s.targets.iter().filter(|&&v| v == 0.0).count(), 398);
        assert_eq!(s.washout, 200);
    }

    #[test]
    fn attention_noise_free_is_exactly_zero_off_pulse() {
        let d = gen_attention(0.0, 20, 5, 400, 3).unwrap();
        for s in d.train.iter().chain(&d.test) {
            let j = s.meta.jitter.unwrap();
            assert!((-2..=2).contains(&j));
            for t in 0..400 {
                let on = (250 + j..=259 + j).contains(&(t as i32));
                assert_eq!(s.inputs[(0, t)], if on { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn attention_jitter_frequencies_are_uniform() {
        let d = gen_attention(0.1, 10_000, 0, 300, 17).unwrap();
        let n = d.train.len() as f64;
        let p = 0.2;
        let sd = (n * p * (1.0 - p)).sqrt();
        for j in -2..=2 {
            let c = d.train.iter().filter(|s| s.meta.jitter == Some(j)).count() as f64;
            assert!((c - n * p).abs() < 3.0 * sd, "jitter {j}: {c}");
        }
    }

    #[test]
    fn attention_rejects_short_sequences() {
        assert!(gen_attention(0.1, 1, 1, 293, 0).is_err());
        assert!(gen_attention(-0.1, 1, 1, 400, 0).is_err());
    }

    #[test]
    fn narma_zero_input_recurrence() {
        let y = narma_series(&[0.0; 4], 5);
        assert_relative_eq!(y[0], 0.1, max_relative = 1e-15);
        assert_relative_eq!(y[1], 0.1305, max_relative = 1e-15);
    }

    #[test]
    fn narma_matches_direct_recurrence() {
        let mut r = rng::stream(5, &[]);
        let s: Vec<f64> = (0..300).map(|_| r.random_range(0.0..0.5)).collect();
        let m = 10;
        let y = narma_series(&s, m);
        let at = |v: &Vec<f64>, i: i64| if i < 0 { 0.0 } else { v[i as usize] };
        for t in 0..300i64 {
            let sum: f64 = (1..=m as i64).map(|i| at(&y, t - i)).sum();
            let expect = 0.3 * at(&y, t - 1) + 0.05 * at(&y, t - 1) * sum + 1.5 * at(&s, t - m as i64 + 1) * s[t as usize] + 0.1;
            assert_relative_eq!(y[t as usize], expect, max_relative = 1e-14);
        }
    }

    #[test]
    fn narma_is_causal() {
        let mut r = rng::stream(6, &[]);
        let s: Vec<f64> = (0..400).map(|_| r.random_range(0.0..0.5)).collect();
        let full = narma_series(&s, 10);
        let prefix = narma_series(&s[..250], 10);
        assert_eq!(&full[..250], &prefix[..]);
    }

    #[test]
    fn narma_dataset_shape_and_bounds() {
        for m in [5, 10] {
            let d = gen_narma(m, 2000, 8).unwrap();
            assert_eq!((d.train.len(), d.test.len()), (1, 1));
            let s = &d.train[0];
            assert_eq!(s.len(), 2000);
            assert!(s.inputs.iter().all(|&v| (0.0..=0.5).contains(&v)));
            assert!(s.targets.iter().all(|v| v.is_finite() && v.abs() <= 10.0));
            assert_eq!(d, gen_narma(m, 2000, 8).unwrap());
            assert_ne!(d.train[0].inputs, d.test[0].inputs);
        }
        assert!(gen_narma(7, 2000, 0).is_err());
    }

    #[test]
    fn lorenz_fixed_points_and_one_step() {
        assert_eq!(euler_step([0.0; 3], LORENZ_DT), [0.0; 3]);
        let c = 72f64.sqrt();
        let d = lorenz_derivative([c, c, 27.0]);
        assert!(d.iter().all(|v| v.abs() < 1e-12));
        let s = euler_step([1.0, 1.0, 1.0], 0.01);
        assert_eq!(s[0], 1.0);
        assert_relative_eq!(s[1], 1.26, max_relative = 1e-15);
        assert_relative_eq!(s[2], 1.0 - 5.0 / 300.0, max_relative = 1e-15);
    }

    #[test]
    fn lorenz_origin_stays_put() {
        assert!(lorenz_trajectory([0.0; 3], 10, 50, LORENZ_DT).iter().all(|s| *s == [0.0; 3]));
    }

    #[test]
    fn forward_alignment_on_monotone_series() {
        let x: Vec<usize> = (0..100).collect();
        let z: Vec<usize> = (1000..1100).collect();
        let (inp, tgt) = align_forward(&x, &z, 20);
        assert_eq!(inp.len(), 80);
        for t in 0..80 {
            assert_eq!(inp[t], t);
            assert_eq!(tgt[t], 1000 + t + 20);
        }
    }

    #[test]
    fn lorenz_dataset_normalization_and_noise() {
        let d = gen_lorenz(20, 0.03, 4, 3, NormalizationPolicy::PerSplit, 9).unwrap();
        assert_eq!(d.train[0].len(), LORENZ_KEEP - 20);
        let norm = d.normalization.as_ref().unwrap();
        for rec in norm.train.iter().chain(&norm.test) {
            assert!(rec.normalized_mean.abs() < 1e-9, "{rec:?}");
            assert!((rec.normalized_variance - 1.0).abs() < 1e-9, "{rec:?}");
        }
        // Test inputs are noise free, hence exactly normalized.
        let (m, v) = mean_variance(d.test.iter().flat_map(|s| s.inputs.iter().copied()));
        assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
        let (m, v) = mean_variance(d.train.iter().flat_map(|s| s.targets.iter().copied()));
        assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
        // Train inputs carry the noise.
        let clean = gen_lorenz(20, 0.0, 4, 3, NormalizationPolicy::PerSplit, 9).unwrap();
        let diff: Vec<f64> = d.train[0].inputs.iter().zip(clean.train[0].inputs.iter()).map(|(a, b)| a - b).collect();
        let (_, nv) = mean_variance(diff.iter().copied());
        assert!((nv.sqrt() - 0.03).abs() < 0.005, "noise sd {}", nv.sqrt());
        for (a, b) in d.test.iter().zip(&clean.test) {
            assert_eq!(a.inputs, b.inputs);
            assert_eq!(a.targets, b.targets);
        }
    }

    #[test]
    fn train_split_independent_of_test_split() {
        let a = gen_attention(0.2, 6, 2, 400, 4).unwrap();
        let b = gen_attention(0.2, 6, 9, 400, 4).unwrap();
        assert_eq!(a.train, b.train);
        let la = gen_lorenz(10, 0.01, 3, 2, NormalizationPolicy::PerSplit, 4).unwrap();
        let lb = gen_lorenz(10, 0.01, 3, 5, NormalizationPolicy::PerSplit, 4).unwrap();
        assert_eq!(la.train, lb.train);
    }

    #[test]
    fn shared_statistics_policy_uses_train_stats() {
        let d = gen_lorenz(10, 0.0, 3, 3, NormalizationPolicy::TrainStats, 2).unwrap();
        let n = d.normalization.unwrap();
        assert_eq!(n.train[0].mean, n.test[0].mean);
        assert_eq!(n.train[1].variance, n.test[1].variance);
    }
}
