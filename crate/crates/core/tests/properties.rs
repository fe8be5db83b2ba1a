//! Property tests over randomly drawn curves, scenes and clips.

use anticipation::archive::{load_archive, save_archive, Archive};
use anticipation::interaction::spatial_adjacency;
use anticipation::metrics::{average_precision, pr_curve, pr_point, roc_auc, tta_stats, TtaConvention};
use anticipation::scene::PredictionCurve;
use anticipation::synth::{generate_dataset, synthetic_dims, DatasetSpec};
use anticipation::temporal::causal_mask;
use proptest::prelude::*;

fn curves_strategy() -> impl Strategy<Value = Vec<PredictionCurve>> {
    let one = (
        prop::collection::vec(0.0f64..=1.0, 2..20),
        any::<bool>(),
        any::<prop::sample::Index>(),
    );
    prop::collection::vec(one, 2..25).prop_map(|raw| {
        let mut curves: Vec<PredictionCurve> = raw
            .into_iter()
            .enumerate()
            .map(|(k, (probs, positive, at))| {
                let y = positive.then(|| 2 + at.index(probs.len() - 1));
                PredictionCurve::new(format!("v{k}"), probs, positive, y, 10.0).unwrap()
            })
            .collect();
        curves[0].positive = true;
        curves[0].accident_frame = Some(curves[0].probs.len());
        curves[1].positive = false;
        curves[1].accident_frame = None;
        curves
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rank_metrics_ignore_monotone_rescaling(curves in curves_strategy()) {
        let squeezed: Vec<PredictionCurve> = curves
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.probs.iter_mut().for_each(|p| *p = p.powi(3) * 0.5 + 0.25);
                c
            })
            .collect();
        let ap = average_precision(&pr_curve(&curves).unwrap());
        let ap2 = average_precision(&pr_curve(&squeezed).unwrap());
        prop_assert!((ap - ap2).abs() < 1e-12);
        prop_assert!((roc_auc(&curves).unwrap().0 - roc_auc(&squeezed).unwrap().0).abs() < 1e-12);
    }

    #[test]
    fn recall_and_fpr_fall_with_threshold(curves in curves_strategy(), qs in prop::collection::vec(0.0f64..=1.0, 2..10)) {
        let mut qs = qs;
        qs.sort_by(f64::total_cmp);
        let n_neg = curves.iter().filter(|c| !c.positive).count() as f64;
        let points: Vec<_> = qs.iter().map(|&q| pr_point(&curves, q)).collect();
        for w in points.windows(2) {
            prop_assert!(w[1].recall <= w[0].recall);
            prop_assert!(w[1].fp as f64 / n_neg <= w[0].fp as f64 / n_neg);
        }
    }

    #[test]
    fn mtta_at_zero_bounds_every_threshold(curves in curves_strategy(), q in 0.0f64..=1.0) {
        let (m0, _) = tta_stats(&curves, 0.0, TtaConvention::Standard);
        let (mq, _) = tta_stats(&curves, q, TtaConvention::Standard);
        prop_assert!(mq <= m0 + 1e-12);
    }

    #[test]
    fn spatial_weights_form_a_distribution(
        pts in prop::collection::vec((0.0f64..256.0, 0.0f64..256.0, any::<bool>()), 1..16),
        scale in 1.0f64..400.0,
    ) {
        let centers: Vec<[f64; 2]> = pts.iter().map(|p| [p.0, p.1]).collect();
        let mut valid: Vec<bool> = pts.iter().map(|p| p.2).collect();
        valid[0] = true;
        let a = spatial_adjacency(&centers, &valid, scale).unwrap();
        prop_assert!((a.sum() - 1.0).abs() < 1e-9);
        prop_assert!(a.iter().all(|&v| v >= 0.0));
        for m in 0..centers.len() {
            for k in 0..centers.len() {
                prop_assert!((a[[m, k]] - a[[k, m]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn causal_mask_only_looks_back(n in 1usize..60, lookback in prop::option::of(1usize..10)) {
        let mask = causal_mask(n, lookback).unwrap();
        for i in 0..n {
            let sources = mask.sources(i);
            prop_assert!(sources.contains(&i));
            prop_assert!(sources.iter().all(|&j| j <= i));
            if let Some(l) = lookback {
                prop_assert!(sources.iter().all(|&j| i - j <= l));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn archives_round_trip(count in 1usize..6, seed in any::<u64>(), conf in 0.0f64..=1.0) {
        let spec = DatasetSpec { confusable_fraction: conf, ..DatasetSpec::default() };
        let videos = generate_dataset(&spec, count, seed).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        save_archive(&Archive::new(synthetic_dims(), videos.clone()), tmp.path()).unwrap();
        let back = load_archive(tmp.path()).unwrap();
        prop_assert_eq!(back.dims, synthetic_dims());
        prop_assert_eq!(back.videos, videos);
    }
}
