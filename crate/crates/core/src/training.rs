//! Objective, optimiser and training loop.
//!
//! Positive clips use a time-weighted log loss whose weight decays with the
//! distance to the accident; negative clips use plain cross-entropy scaled by
//! `ω₁`. Losses are computed from logits for numerical stability.

use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{average_precision, pr_curve, tta_stats, EvalConfig};
use crate::model::{Model, PreparedVideo};
use crate::nn::param::round_f32;
use crate::nn::tape::CustomOp;
use crate::nn::{sigmoid, softplus, ParamStore, Tape, Var};
use crate::scene::{PredictionCurve, VideoSample};

/// Unit of the distance to the accident in the positive-loss weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightUnit {
    Frames,
    #[default]
    Seconds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoKeyword {
    Auto,
}

/// Negative-loss weight: a fixed value or `"auto"` (positive/negative ratio
/// of the training split).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Omega {
    Value(f64),
    Auto(AutoKeyword),
}

impl Default for Omega {
    fn default() -> Self {
        Omega::Auto(AutoKeyword::Auto)
    }
}

impl Omega {
    pub fn resolve(self, n_pos: usize, n_neg: usize) -> Result<f64> {
        match self {
            Omega::Value(v) => Ok(v),
            Omega::Auto(_) if n_neg == 0 => Ok(1.0),
            Omega::Auto(_) if n_pos == 0 => Err(Error::Argument("auto ω₁ needs at least one positive".into())),
            Omega::Auto(_) => Ok(n_pos as f64 / n_neg as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub omega1: Omega,
    pub tta_weight_unit: WeightUnit,
    pub epochs: usize,
    pub seed: u64,
    pub scheduler: SchedulerConfig,
    pub clip_norm: f64,
    /// Share of training clips held out (per class) for the epoch log and
    /// the scheduler.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 10,
            omega1: Omega::default(),
            tta_weight_unit: WeightUnit::Seconds,
            epochs: 50,
            seed: 0,
            scheduler: SchedulerConfig::default(),
            clip_norm: 5.0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "train.learning_rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if let Omega::Value(v) = self.omega1 {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("train.omega1 {v} must be > 0")));
            }
        }
        if !(self.scheduler.factor > 0.0 && self.scheduler.factor < 1.0) {
            return Err(Error::Config("train.scheduler.factor must lie in (0,1)".into()));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::Config("train.clip_norm must be > 0".into()));
        }
        if !(0.0..0.9).contains(&self.validation_fraction) {
            return Err(Error::Config("train.validation_fraction must lie in [0, 0.9)".into()));
        }
        Ok(())
    }
}

/// Weight of frame `i` (1-based) in the positive loss.
pub fn positive_weight(i: usize, y: usize, fps: f64, unit: WeightUnit) -> f64 {
    let frames = y as f64 - i as f64;
    let delta = match unit {
        WeightUnit::Frames => frames,
        WeightUnit::Seconds => frames / fps,
    };
    (-delta.max(0.0)).exp()
}

/// `Σ_i −w_i log P_i` for a positive curve.
pub fn positive_loss(probs: &[f64], y: Option<usize>, fps: f64, unit: WeightUnit) -> Result<f64> {
    let y = y.ok_or_else(|| Error::Argument("positive loss needs an accident frame".into()))?;
    Ok(probs
        .iter()
        .enumerate()
        .map(|(k, &p)| -positive_weight(k + 1, y, fps, unit) * p.ln())
        .sum())
}

/// `Σ_i −log(1 − P_i)` for a negative curve.
pub fn negative_loss(probs: &[f64]) -> f64 {
    probs.iter().map(|&p| -(1.0 - p).ln()).sum()
}

/// `Σ L_pos + ω₁ Σ L_neg`.
pub fn total_loss(positive: &[f64], negative: &[f64], omega1: f64) -> Result<f64> {
    if positive.is_empty() && negative.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    Ok(positive.iter().sum::<f64>() + omega1 * negative.iter().sum::<f64>())
}

/// `Σ_i w_i softplus(∓z_i)` over an `N × 1` logit column.
struct WeightedLogLoss {
    weights: Vec<f64>,
    positive: bool,
}

impl WeightedLogLoss {
    fn value(&self, z: &Array2<f64>) -> f64 {
        z.column(0)
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * if self.positive { softplus(-z) } else { softplus(z) })
            .sum()
    }
}

impl CustomOp for WeightedLogLoss {
    fn name(&self) -> &'static str {
        "weighted_log_loss"
    }

    fn backward(&self, inputs: &[&Array2<f64>], _output: &Array2<f64>, grad: &Array2<f64>) -> Vec<Array2<f64>> {
        let g = grad[[0, 0]];
        let z = inputs[0];
        let mut out = Array2::zeros(z.raw_dim());
        for (i, &w) in self.weights.iter().enumerate() {
            let s = sigmoid(z[[i, 0]]);
            out[[i, 0]] = g * w * if self.positive { s - 1.0 } else { s };
        }
        vec![out]
    }
}

/// Loss of one clip recorded on `tape` from its `N × 1` logits.
pub fn video_loss(tape: &mut Tape, logits: Var, video: &PreparedVideo, unit: WeightUnit, omega1: f64) -> Result<Var> {
    let n = tape.shape(logits).0;
    if tape.shape(logits).1 != 1 || n != video.len() {
        return Err(Error::Dimension(format!(
            "logits {:?} for {} frames",
            tape.shape(logits),
            video.len()
        )));
    }
    let weights = if video.positive {
        let y = video
            .accident_frame
            .ok_or_else(|| Error::Argument(format!("positive clip '{}' without accident frame", video.id)))?;
        (1..=n).map(|i| positive_weight(i, y, video.fps, unit)).collect()
    } else {
        vec![omega1; n]
    };
    let op = WeightedLogLoss {
        weights,
        positive: video.positive,
    };
    let value = op.value(tape.value(logits));
    Ok(tape.custom(&[logits], Array2::from_elem((1, 1), value), Box::new(op)))
}

/// Adaptive-moment optimiser. Parameters are kept representable in f32.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: store.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect(),
            v: store.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, p) in store.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let update = self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                    *w = round_f32(*w - update);
                });
        }
    }
}

/// Scale gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in store.iter_mut() {
            p.grad *= scale;
        }
    }
    norm
}

/// Halves (by `factor`) the learning rate after `patience` epochs without
/// improvement of the monitored metric (higher is better).
#[derive(Clone, Debug)]
pub struct ReduceOnPlateau {
    pub factor: f64,
    pub patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl ReduceOnPlateau {
    pub fn new(config: &SchedulerConfig) -> Self {
        Self {
            factor: config.factor,
            patience: config.patience,
            best: f64::NEG_INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feed one epoch's metric; returns the new learning rate.
    pub fn observe(&mut self, metric: f64, lr: f64) -> f64 {
        if metric > self.best * (1.0 + 1e-4) || self.best == f64::NEG_INFINITY {
            self.best = metric;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            return lr * self.factor;
        }
        lr
    }
}

/// Per-class holdout: `round(fraction · n_c)` clips of each class (at least
/// one when the class has two or more), chosen by `seed`.
pub fn stratified_split(videos: &[VideoSample], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..videos.len()).filter(|&i| videos[i].positive == class).collect();
        idx.shuffle(&mut rng);
        let mut k = (fraction * idx.len() as f64).round() as usize;
        if fraction > 0.0 && k == 0 && idx.len() >= 2 {
            k = 1;
        }
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss per clip.
    pub loss: f64,
    /// Validation AP and mTTA (training split when nothing is held out).
    pub ap: f64,
    pub mtta: f64,
    pub lr: f64,
}

pub fn write_epoch_csv<W: Write>(records: &[EpochRecord], mut out: W) -> Result<()> {
    writeln!(out, "epoch,loss,ap,mtta")?;
    for r in records {
        writeln!(out, "{},{},{},{}", r.epoch, r.loss, r.ap, r.mtta)?;
    }
    Ok(())
}

/// Prediction curves for prepared clips.
pub fn predict_all(model: &Model, videos: &[PreparedVideo]) -> Result<Vec<PredictionCurve>> {
    videos.iter().map(|v| model.predict_prepared(v)).collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation AP.
    pub model: Model,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    pub rng: ChaCha8Rng,
}

/// Train `model` on `videos`. `on_epoch` sees every epoch record as it is
/// produced.
pub fn train(
    mut model: Model,
    videos: &[VideoSample],
    config: &TrainConfig,
    eval: &EvalConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if videos.is_empty() {
        return Err(Error::Argument("training split is empty".into()));
    }
    let (train_idx, val_idx) = stratified_split(videos, config.validation_fraction, config.seed);
    let prepared: Vec<PreparedVideo> = videos.iter().map(|v| model.prepare(v)).collect::<Result<_>>()?;
    let train_set: Vec<&PreparedVideo> = train_idx.iter().map(|&i| &prepared[i]).collect();
    let monitor: Vec<PreparedVideo> = if val_idx.is_empty() {
        train_set.iter().map(|&v| v.clone()).collect()
    } else {
        val_idx.iter().map(|&i| prepared[i].clone()).collect()
    };
    let n_pos = train_set.iter().filter(|v| v.positive).count();
    let omega1 = config.omega1.resolve(n_pos, train_set.len() - n_pos)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(&model.store, config.learning_rate);
    let mut scheduler = ReduceOnPlateau::new(&config.scheduler);
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            model.store.zero_grad();
            let mut store = std::mem::take(&mut model.store);
            for &i in batch {
                let video = train_set[i];
                let mut tape = Tape::new();
                let logits = model.logits_with(&mut tape, &store, video)?;
                let loss = video_loss(&mut tape, logits, video, config.tta_weight_unit, omega1)?;
                let value = tape.value(loss)[[0, 0]];
                if !value.is_finite() {
                    model.store = store;
                    return Err(Error::Divergence(format!(
                        "non-finite loss on '{}' in epoch {epoch}",
                        video.id
                    )));
                }
                epoch_loss += value;
                if let Err(e) = tape.backward(loss, &mut store) {
                    model.store = store;
                    return Err(Error::Divergence(format!("epoch {epoch}, clip '{}': {e}", video.id)));
                }
            }
            clip_grad_norm(&mut store, config.clip_norm);
            adam.step(&mut store);
            model.store = store;
        }
        let curves = predict_all(&model, &monitor)?;
        let ap = pr_curve(&curves).map(|p| average_precision(&p)).unwrap_or(f64::NAN);
        let mtta = tta_stats(&curves, eval.q, eval.tta_convention).0;
        let record = EpochRecord {
            epoch,
            loss: epoch_loss / train_set.len() as f64,
            ap,
            mtta,
            lr: adam.lr,
        };
        on_epoch(&record);
        if ap.is_finite() {
            adam.lr = scheduler.observe(ap, adam.lr);
        }
        if best.as_ref().is_none_or(|b| ap > b.0 || !b.0.is_finite()) {
            best = Some((ap, epoch, model.store.clone()));
        }
        log.push(record);
    }
    let best_epoch = match best {
        Some((_, epoch, store)) => {
            model.store = store;
            epoch
        }
        None => 0,
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        log,
        rng,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_is_one_at_and_after_accident() {
        assert_eq!(positive_weight(5, 5, 10.0, WeightUnit::Frames), 1.0);
        assert_eq!(positive_weight(9, 5, 10.0, WeightUnit::Seconds), 1.0);
    }

    #[test]
    fn omega_parses_auto_and_numbers() {
        let a: Omega = serde_json::from_str("\"auto\"").unwrap();
        assert_eq!(a, Omega::default());
        let v: Omega = serde_json::from_str("0.25").unwrap();
        assert_eq!(v, Omega::Value(0.25));
        assert!(serde_json::from_str::<Omega>("\"half\"").is_err());
    }

    #[test]
    fn plateau_halves_after_patience() {
        let mut s = ReduceOnPlateau::new(&SchedulerConfig::default());
        let mut lr = 1.0;
        for _ in 0..4 {
            lr = s.observe(0.5, lr);
        }
        assert_eq!(lr, 1.0);
        lr = s.observe(0.5, lr);
        assert_eq!(lr, 0.5);
    }

    #[test]
    fn empty_batch_is_error() {
        assert!(matches!(total_loss(&[], &[], 1.0), Err(Error::Argument(_))));
    }
}
