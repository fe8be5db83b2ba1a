//! Video-level metrics against brute-force oracles and hand fixtures.

use anticipation::metrics::{
    average_precision, evaluate, pr_curve, precision_at_recall, roc_auc, tta_at_recall, EvalConfig, TtaConvention,
};
use anticipation::scene::PredictionCurve;
use anticipation::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn curve(id: &str, probs: Vec<f64>, y: Option<usize>) -> PredictionCurve {
    PredictionCurve::new(id, probs, y.is_some(), y, 10.0).unwrap()
}

/// Frames a curve is scored on: those before the accident for positives.
fn scored(c: &PredictionCurve) -> &[f64] {
    match c.accident_frame {
        Some(y) if c.positive => &c.probs[..y - 1],
        _ => &c.probs,
    }
}

/// Step-integrated AP over every distinct frame probability as a threshold.
fn oracle_ap(curves: &[PredictionCurve]) -> f64 {
    let mut qs: Vec<f64> = curves
        .iter()
        .flat_map(|c| c.probs.iter().copied())
        .chain([0.0, 1.0])
        .collect();
    qs.sort_by(|a, b| b.total_cmp(a));
    qs.dedup();
    let n_pos = curves.iter().filter(|c| c.positive).count();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for q in qs {
        let fires = |c: &PredictionCurve| scored(c).iter().any(|&p| p >= q);
        let tp = curves.iter().filter(|c| c.positive && fires(c)).count();
        let fp = curves.iter().filter(|c| !c.positive && fires(c)).count();
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev) * precision;
        prev = recall;
    }
    ap
}

/// Probability that a positive outscores a negative, ties counting half.
fn wilcoxon(curves: &[PredictionCurve]) -> f64 {
    let peak = |c: &PredictionCurve| scored(c).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pos: Vec<f64> = curves.iter().filter(|c| c.positive).map(peak).collect();
    let neg: Vec<f64> = curves.iter().filter(|c| !c.positive).map(peak).collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn random_fixture(rng: &mut ChaCha8Rng, index: usize) -> Vec<PredictionCurve> {
    let n = rng.random_range(2..=40);
    let coarse = rng.random_bool(0.5);
    let mut curves: Vec<PredictionCurve> = (0..n)
        .map(|k| {
            let len = rng.random_range(2..=30);
            let probs: Vec<f64> = (0..len)
                .map(|_| {
                    if coarse {
                        // a coarse grid forces ties between videos
                        rng.random_range(0..=10) as f64 / 10.0
                    } else {
                        rng.random_range(0.0..1.0)
                    }
                })
                .collect();
            let y = if rng.random_bool(0.5) {
                Some(rng.random_range(2..=len))
            } else {
                None
            };
            curve(&format!("f{index}-{k}"), probs, y)
        })
        .collect();
    // both classes present
    curves[0].positive = true;
    curves[0].accident_frame = Some(curves[0].probs.len());
    curves[1].positive = false;
    curves[1].accident_frame = None;
    curves
}

#[test]
fn ap_and_auc_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    for index in 0..50 {
        let curves = random_fixture(&mut rng, index);
        let ap = average_precision(&pr_curve(&curves).unwrap());
        assert_eq!(ap, oracle_ap(&curves), "fixture {index}");
        let (auc, _) = roc_auc(&curves).unwrap();
        assert!(
            (auc - wilcoxon(&curves)).abs() < 1e-9,
            "fixture {index}: {auc} vs {}",
            wilcoxon(&curves)
        );
    }
}

fn three_point() -> Vec<PredictionCurve> {
    vec![
        // the peak at frame 3 is at the accident and does not count
        curve("p1", vec![0.2, 0.9, 0.95], Some(3)),
        curve("p2", vec![0.1, 0.4, 0.3, 0.1], Some(4)),
        curve("n1", vec![0.3, 0.6, 0.2], None),
    ]
}

#[test]
fn three_point_fixture() {
    let curves = three_point();
    let points = pr_curve(&curves).unwrap();
    let at = |q: f64| points.iter().find(|p| p.threshold == q).unwrap();
    assert_eq!((at(0.9).precision, at(0.9).recall), (1.0, 0.5));
    assert_eq!((at(0.6).precision, at(0.6).recall), (0.5, 0.5));
    assert_eq!((at(0.4).precision, at(0.4).recall), (2.0 / 3.0, 1.0));

    let ap = average_precision(&points);
    assert_eq!(ap, 0.5 * 1.0 + 0.0 * 0.5 + 0.5 * (2.0 / 3.0));
    assert_eq!(format!("{ap:.4}"), "0.8333");
    assert_eq!(roc_auc(&curves).unwrap().0, 0.5);
    assert_eq!(
        precision_at_recall(&points, 0.8),
        Some(1.0 + (0.8 - 0.5) / (1.0 - 0.5) * (2.0 / 3.0 - 1.0))
    );

    // q* = 0.4: p1 fires at frame 2 (1 frame early), p2 at frame 2 (2 frames early)
    let tta = tta_at_recall(&curves, 0.8, TtaConvention::Standard).unwrap().unwrap();
    assert!((tta - (0.1 + 0.2) / 2.0).abs() < 1e-15);
}

#[test]
fn separable_scores_and_single_class() {
    let curves = vec![
        curve("p", vec![0.1, 0.8, 0.9], Some(3)),
        curve("n", vec![0.3, 0.2], None),
    ];
    let report = evaluate(&curves, &EvalConfig::default()).unwrap();
    assert_eq!(report.ap, 1.0);
    assert_eq!(report.auc, 1.0);
    // fires at frame 2 of an accident at frame 3, 10 fps
    assert!((report.mtta_s - 0.1).abs() < 1e-15);

    let single = vec![curve("a", vec![0.2], None), curve("b", vec![0.4], None)];
    assert!(matches!(
        evaluate(&single, &EvalConfig::default()),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn tta_example_at_twenty_fps() {
    let mut probs = vec![0.1; 100];
    probs[40] = 0.7;
    let c = PredictionCurve::new("fig", probs, true, Some(90), 20.0).unwrap();
    let standard = anticipation::metrics::time_to_accident(&c, 0.5, TtaConvention::Standard).unwrap();
    let shifted = anticipation::metrics::time_to_accident(&c, 0.5, TtaConvention::OffByOne).unwrap();
    assert!((standard - 2.45).abs() < 1e-12);
    assert!((shifted - 2.40).abs() < 1e-12);
}
