//! Video-level evaluation: precision/recall sweep, AP, precision and
//! time-to-accident at a recall level, mean TTA and ROC AUC.
//!
//! A positive video counts as detected only if it fires before its accident
//! frame; a negative video counts as a false alarm if it fires anywhere.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::PredictionCurve;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_RECALL: f64 = 0.8;

/// Frame convention for time-to-accident.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TtaConvention {
    /// `(y − i*) / fps`
    #[default]
    Standard,
    /// `(y − 1 − i*) / fps`
    OffByOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// Fired at the given 1-based frame, before the accident.
    TruePositive(usize),
    FalseNegative,
    FalsePositive(usize),
    TrueNegative,
}

fn scored_frames(curve: &PredictionCurve) -> &[f64] {
    match (curve.positive, curve.accident_frame) {
        (true, Some(y)) => &curve.probs[..(y - 1).min(curve.probs.len())],
        _ => &curve.probs,
    }
}

/// First 1-based frame reaching `q` within the scored frames.
pub fn firing_frame(curve: &PredictionCurve, q: f64) -> Option<usize> {
    scored_frames(curve).iter().position(|&p| p >= q).map(|i| i + 1)
}

pub fn video_outcome(curve: &PredictionCurve, q: f64) -> Outcome {
    match (curve.positive, firing_frame(curve, q)) {
        (true, Some(f)) => Outcome::TruePositive(f),
        (true, None) => Outcome::FalseNegative,
        (false, Some(f)) => Outcome::FalsePositive(f),
        (false, None) => Outcome::TrueNegative,
    }
}

/// Peak probability over the scored frames; `-inf` for a positive whose
/// accident is at frame 1.
pub fn video_score(curve: &PredictionCurve) -> f64 {
    scored_frames(curve).iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn class_counts(curves: &[PredictionCurve]) -> Result<(usize, usize)> {
    let pos = curves.iter().filter(|c| c.positive).count();
    let neg = curves.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Protocol(format!(
            "need both classes, got {pos} positive and {neg} negative videos"
        )));
    }
    Ok((pos, neg))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Thresholds: every video peak plus 0 and 1, descending, deduplicated.
pub fn sweep_thresholds(curves: &[PredictionCurve]) -> Vec<f64> {
    let mut qs: Vec<f64> = curves
        .iter()
        .map(video_score)
        .filter(|s| s.is_finite())
        .chain([0.0, 1.0])
        .collect();
    qs.sort_by(|a, b| b.total_cmp(a));
    qs.dedup();
    qs
}

pub fn pr_point(curves: &[PredictionCurve], q: f64) -> PrPoint {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for c in curves {
        match video_outcome(c, q) {
            Outcome::TruePositive(_) => tp += 1,
            Outcome::FalseNegative => fn_ += 1,
            Outcome::FalsePositive(_) => fp += 1,
            Outcome::TrueNegative => {}
        }
    }
    PrPoint {
        threshold: q,
        precision: if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        },
        recall: if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        },
        tp,
        fp,
        fn_,
    }
}

pub fn pr_curve(curves: &[PredictionCurve]) -> Result<Vec<PrPoint>> {
    class_counts(curves)?;
    Ok(sweep_thresholds(curves)
        .into_iter()
        .map(|q| pr_point(curves, q))
        .collect())
}

/// Step integration over threshold-descending points.
pub fn average_precision(points: &[PrPoint]) -> f64 {
    let mut prev = 0.0;
    let mut ap = 0.0;
    for p in points {
        ap += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    ap
}

/// Precision at recall `r0`, linearly interpolated between the bracketing
/// recall levels (the best precision at each level). `None` when `r0` is
/// never reached.
pub fn precision_at_recall(points: &[PrPoint], r0: f64) -> Option<f64> {
    let best_at = |r: f64| {
        points
            .iter()
            .filter(|p| p.recall == r)
            .map(|p| p.precision)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let upper = points
        .iter()
        .map(|p| p.recall)
        .filter(|&r| r >= r0)
        .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.min(r))))?;
    let p_hi = best_at(upper);
    if upper == r0 {
        return Some(p_hi);
    }
    let lower = points
        .iter()
        .map(|p| p.recall)
        .filter(|&r| r < r0)
        .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))));
    match lower {
        None => Some(p_hi),
        Some(lower) => {
            let p_lo = best_at(lower);
            Some(p_lo + (r0 - lower) / (upper - lower) * (p_hi - p_lo))
        }
    }
}

/// Time-to-accident in seconds for a positive curve firing at `q`.
pub fn time_to_accident(curve: &PredictionCurve, q: f64, convention: TtaConvention) -> Option<f64> {
    let y = curve.accident_frame.filter(|_| curve.positive)?;
    let i = firing_frame(curve, q)?;
    let frames = match convention {
        TtaConvention::Standard => (y - i) as f64,
        TtaConvention::OffByOne => (y - 1 - i) as f64,
    };
    Some(frames / curve.fps)
}

/// Mean TTA over all positive videos (non-firing ones count zero) and the
/// per-positive values.
pub fn tta_stats(curves: &[PredictionCurve], q: f64, convention: TtaConvention) -> (f64, Vec<f64>) {
    let per: Vec<f64> = curves
        .iter()
        .filter(|c| c.positive)
        .map(|c| time_to_accident(c, q, convention).unwrap_or(0.0))
        .collect();
    let mean = if per.is_empty() {
        0.0
    } else {
        per.iter().sum::<f64>() / per.len() as f64
    };
    (mean, per)
}

/// Mean TTA over the true positives at the largest sweep threshold whose
/// recall reaches `r0` with at least one true positive.
pub fn tta_at_recall(curves: &[PredictionCurve], r0: f64, convention: TtaConvention) -> Result<Option<f64>> {
    let points = pr_curve(curves)?;
    let Some(point) = points.iter().find(|p| p.recall >= r0 && p.tp > 0) else {
        return Ok(None);
    };
    let ttas: Vec<f64> = curves
        .iter()
        .filter_map(|c| time_to_accident(c, point.threshold, convention))
        .collect();
    Ok(Some(ttas.iter().sum::<f64>() / ttas.len() as f64))
}

/// ROC points `(FPR, TPR)` from `(0, 0)` to `(1, 1)` and the trapezoidal
/// area under them.
pub fn roc_auc(curves: &[PredictionCurve]) -> Result<(f64, Vec<(f64, f64)>)> {
    let (n_pos, n_neg) = class_counts(curves)?;
    let scored: Vec<(f64, bool)> = curves.iter().map(|c| (video_score(c), c.positive)).collect();
    let mut qs: Vec<f64> = scored.iter().map(|s| s.0).filter(|s| s.is_finite()).collect();
    qs.sort_by(|a, b| b.total_cmp(a));
    qs.dedup();
    let mut points = vec![(0.0, 0.0)];
    for q in qs {
        let tp = scored.iter().filter(|s| s.1 && s.0 >= q).count();
        let fp = scored.iter().filter(|s| !s.1 && s.0 >= q).count();
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    if points.last() != Some(&(1.0, 1.0)) {
        points.push((1.0, 1.0));
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    Ok((auc, points))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Operating threshold for mTTA.
    pub q: f64,
    /// Recall level for P@R and TTA@R.
    pub r0: f64,
    pub tta_convention: TtaConvention,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            q: DEFAULT_THRESHOLD,
            r0: DEFAULT_RECALL,
            tta_convention: TtaConvention::Standard,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::Config(format!("eval.q {} outside [0,1]", self.q)));
        }
        if !(0.0..=1.0).contains(&self.r0) {
            return Err(Error::Config(format!("eval.r0 {} outside [0,1]", self.r0)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: f64,
    /// `None` when the recall level is unreachable.
    pub p_at_80r: Option<f64>,
    pub mtta_s: f64,
    pub tta_at_80r_s: Option<f64>,
    pub auc: f64,
    pub q: f64,
    pub r0: f64,
    pub n_positive: usize,
    pub n_negative: usize,
    pub pr_points: Vec<PrPoint>,
    pub roc_points: Vec<(f64, f64)>,
}

pub fn evaluate(curves: &[PredictionCurve], config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    let (n_positive, n_negative) = class_counts(curves)?;
    let pr_points = pr_curve(curves)?;
    let (auc, roc_points) = roc_auc(curves)?;
    Ok(EvalReport {
        ap: average_precision(&pr_points),
        p_at_80r: precision_at_recall(&pr_points, config.r0),
        mtta_s: tta_stats(curves, config.q, config.tta_convention).0,
        tta_at_80r_s: tta_at_recall(curves, config.r0, config.tta_convention)?,
        auc,
        q: config.q,
        r0: config.r0,
        n_positive,
        n_negative,
        pr_points,
        roc_points,
    })
}

fn opt(v: Option<f64>, scale: f64, digits: usize) -> String {
    match v {
        Some(v) => format!("{:.*}", digits, v * scale),
        None => "undef".into(),
    }
}

/// Fixed-width table with one row per named report.
pub fn format_table(rows: &[(String, &EvalReport)]) -> String {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(7);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>6}  {:>9}  {:>7}  {:>11}  {:>6}",
        "variant", "AP(%)", "P@80R(%)", "mTTA(s)", "TTA@80R(s)", "AUC"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6.1}  {:>9}  {:>7.2}  {:>11}  {:>6.3}",
            name,
            r.ap * 100.0,
            opt(r.p_at_80r, 100.0, 1),
            r.mtta_s,
            opt(r.tta_at_80r_s, 1.0, 2),
            r.auc
        );
    }
    out
}
