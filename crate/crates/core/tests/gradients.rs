//! Central-difference checks for every trainable operation and the full loss.

use std::sync::Arc;
use std::time::Instant;

use anticipation::depth::project_global_depth;
use anticipation::dynamics::{project_pooled, DynamicsParams};
use anticipation::interaction::{embed_nodes, interaction_features, InteractionParams, InteractionSwitches};
use anticipation::model::{Model, ModelConfig, PreparedVideo, Variant};
use anticipation::nn::attention::gat_aggregate;
use anticipation::nn::graph::{block_matmul, block_mean, rownorm_self_loop};
use anticipation::nn::{
    grad_check, graph_attention, graph_conv, AttentionMask, Blocks, GatParams, GradCheckOptions, Linear, ParamStore,
    Tape, Var,
};
use anticipation::synth::{generate_scenario, synthetic_dims, ScenarioSpec};
use anticipation::temporal::{causal_mask, predict_logits, TemporalParams};
use anticipation::training::{video_loss, WeightUnit};
use anticipation::Result;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

/// Entries bounded away from zero so that ReLU kinks are not straddled.
fn off_zero(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduce any matrix to a scalar through a fixed random mixing and a
/// sigmoid, so every output entry gets a distinct upstream gradient.
fn squash(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let cols = tape.shape(x).1;
    let mix = tape.input(uniform(cols, 2, -1.0, 1.0, &mut rng(seed)));
    let y = tape.matmul(x, mix)?;
    let s = tape.sigmoid(y);
    Ok(tape.sum(s))
}

fn check<F>(what: &str, store: &mut ParamStore, loss: F)
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let report = grad_check(store, loss, &GradCheckOptions::default()).unwrap();
    assert!(report.checked > 0, "{what}: nothing checked");
    assert!(
        report.max_rel_error < TOL,
        "{what}: max relative error {:.3e} at {}[{}]",
        report.max_rel_error,
        report.worst_param,
        report.worst_index
    );
}

#[test]
fn matmul_add_and_add_row() {
    let mut r = rng(1);
    let mut store = ParamStore::new();
    let a = store.insert("a", uniform(3, 4, -1.0, 1.0, &mut r));
    let b = store.insert("b", uniform(4, 2, -1.0, 1.0, &mut r));
    let c = store.insert("c", uniform(3, 2, -1.0, 1.0, &mut r));
    let bias = store.insert("bias", uniform(1, 2, -1.0, 1.0, &mut r));
    check("matmul/add/add_row", &mut store, |s, t| {
        let (a, b, c, bias) = (t.param(s, a), t.param(s, b), t.param(s, c), t.param(s, bias));
        let ab = t.matmul(a, b)?;
        let sum = t.add(ab, c)?;
        let out = t.add_row(sum, bias)?;
        squash(t, out, 2)
    });
}

#[test]
fn activations() {
    let mut r = rng(3);
    let mut store = ParamStore::new();
    let x = store.insert("x", off_zero(5, 3, &mut r));
    check("relu", &mut store, |s, t| {
        let x = t.param(s, x);
        let y = t.relu(x);
        squash(t, y, 4)
    });
    check("leaky_relu", &mut store, |s, t| {
        let x = t.param(s, x);
        let y = t.leaky_relu(x, 0.2);
        squash(t, y, 5)
    });
    check("sigmoid", &mut store, |s, t| {
        let x = t.param(s, x);
        let y = t.sigmoid(x);
        squash(t, y, 6)
    });
}

#[test]
fn concat_scale_rows_and_sum() {
    let mut r = rng(7);
    let mut store = ParamStore::new();
    let a = store.insert("a", uniform(4, 2, -1.0, 1.0, &mut r));
    let b = store.insert("b", uniform(4, 3, -1.0, 1.0, &mut r));
    let c = store.insert("c", uniform(4, 1, -1.0, 1.0, &mut r));
    check("concat/scale_rows", &mut store, |s, t| {
        let parts = [t.param(s, a), t.param(s, b), t.param(s, c)];
        let joined = t.concat(&parts)?;
        let scaled = t.scale_rows(joined, vec![1.0, 0.0, -0.5, 2.0])?;
        squash(t, scaled, 8)
    });
    check("sum", &mut store, |s, t| {
        let a = t.param(s, a);
        let total = t.sum(a);
        squash(t, total, 9)
    });
}

#[test]
fn linear_layer() {
    let mut r = rng(10);
    let mut store = ParamStore::new();
    let layer = Linear::new(&mut store, "lin", 6, 3, &mut r);
    let bias = store.find("lin.bias").unwrap();
    store.get_mut(bias).value = uniform(1, 3, -0.5, 0.5, &mut r);
    let x = uniform(5, 6, -1.0, 1.0, &mut r);
    check("linear", &mut store, |s, t| {
        let x = t.input(x.clone());
        let y = layer.forward(t, s, x)?;
        squash(t, y, 11)
    });
}

fn packed_adjacency(r: &mut ChaCha8Rng) -> (Arc<Blocks>, Arc<Vec<bool>>, Array2<f64>) {
    let blocks = Arc::new(Blocks::from_sizes(&[2, 3, 1]));
    let valid = Arc::new(vec![true, true, true, false, true, true]);
    let mats = [
        uniform(2, 2, 0.05, 1.0, r),
        uniform(3, 3, 0.05, 1.0, r),
        uniform(1, 1, 0.05, 1.0, r),
    ];
    // padding columns are ignored; keep them positive so perturbations stay legal
    let packed = blocks.pack(&mats).unwrap().mapv(|v| if v == 0.0 { 0.5 } else { v });
    (blocks, valid, packed)
}

#[test]
fn row_normalisation_and_block_ops() {
    let mut r = rng(12);
    let (blocks, valid, packed) = packed_adjacency(&mut r);
    let mut store = ParamStore::new();
    let adj = store.insert("adj", packed);
    let x = store.insert("x", uniform(6, 3, -1.0, 1.0, &mut r));
    check("rownorm_self_loop", &mut store, |s, t| {
        let a = t.param(s, adj);
        let n = rownorm_self_loop(t, a, &blocks, &valid)?;
        squash(t, n, 13)
    });
    check("block_matmul", &mut store, |s, t| {
        let (a, x) = (t.param(s, adj), t.param(s, x));
        let y = block_matmul(t, a, x, &blocks)?;
        squash(t, y, 14)
    });
    check("block_mean", &mut store, |s, t| {
        let x = t.param(s, x);
        let y = block_mean(t, x, &blocks, &valid)?;
        squash(t, y, 15)
    });
}

#[test]
fn graph_convolution() {
    let mut r = rng(16);
    let mut store = ParamStore::new();
    let nodes = store.insert("nodes", uniform(4, 3, -1.0, 1.0, &mut r));
    let adj = store.insert("adj", uniform(4, 4, 0.05, 1.0, &mut r));
    let w = store.insert("w", uniform(3, 5, -1.0, 1.0, &mut r));
    let mask = [true, true, false, true];
    check("graph_conv", &mut store, |s, t| {
        let (n, a, w) = (t.param(s, nodes), t.param(s, adj), t.param(s, w));
        let h = graph_conv(t, n, a, w, &mask)?;
        squash(t, h, 17)
    });
}

#[test]
fn attention_aggregation() {
    let mut r = rng(18);
    let n = 6;
    let mask = Arc::new(causal_mask(n, None).unwrap());
    let mut store = ParamStore::new();
    let src = store.insert("source", uniform(n, 4, -1.0, 1.0, &mut r));
    let tgt = store.insert("target", uniform(n, 4, -1.0, 1.0, &mut r));
    let att = store.insert("att", uniform(1, 4, -1.0, 1.0, &mut r));
    for heads in [1, 2] {
        check("gat_aggregate", &mut store, |s, t| {
            let (a, b, c) = (t.param(s, src), t.param(s, tgt), t.param(s, att));
            let y = gat_aggregate(t, a, b, c, &mask, heads, 0.2)?;
            squash(t, y, 19)
        });
    }

    let mut store = ParamStore::new();
    let params = GatParams::new(&mut store, "gat", 5, 4, 2, &mut r).unwrap();
    store.get_mut(params.bias).value = uniform(1, 4, -0.5, 0.5, &mut r);
    let h = store.insert("h", uniform(n, 5, -1.0, 1.0, &mut r));
    let lookback = Arc::new(causal_mask(n, Some(2)).unwrap());
    check("graph_attention", &mut store, |s, t| {
        let h = t.param(s, h);
        let y = graph_attention(t, s, h, &lookback, &params, 0.2)?;
        squash(t, y, 20)
    });

    // dense mask with a bidirectional block, to cover non-causal patterns
    let dense = vec![vec![true, true, false], vec![true, true, true], vec![false, true, true]];
    let mask = Arc::new(AttentionMask::from_dense(&dense).unwrap());
    let mut store = ParamStore::new();
    let src = store.insert("source", uniform(3, 2, -1.0, 1.0, &mut r));
    let tgt = store.insert("target", uniform(3, 2, -1.0, 1.0, &mut r));
    let att = store.insert("att", uniform(1, 2, -1.0, 1.0, &mut r));
    check("gat_aggregate dense", &mut store, |s, t| {
        let (a, b, c) = (t.param(s, src), t.param(s, tgt), t.param(s, att));
        let y = gat_aggregate(t, a, b, c, &mask, 1, 0.2)?;
        squash(t, y, 21)
    });
}

#[test]
fn depth_and_dynamics_projections() {
    let mut r = rng(22);
    let mut store = ParamStore::new();
    let proj = Linear::new(&mut store, "depth", 16, 4, &mut r);
    let flat = uniform(5, 16, 0.0, 1.0, &mut r);
    check("project_global_depth", &mut store, |s, t| {
        let x = t.input(flat.clone());
        let y = project_global_depth(t, s, x, &proj)?;
        squash(t, y, 23)
    });

    let mut store = ParamStore::new();
    let params = DynamicsParams::new(&mut store, 8, 3, &mut r);
    let pooled = uniform(5, 8, -1.0, 1.0, &mut r);
    check("project_pooled", &mut store, |s, t| {
        let x = t.input(pooled.clone());
        let y = project_pooled(t, s, x, &params)?;
        squash(t, y, 24)
    });
}

fn occluded_positive() -> (Model, PreparedVideo) {
    let spec = ScenarioSpec {
        n_agents: 4,
        n_frames: 40,
        fps: 10.0,
        collision: true,
        depth_confusable: false,
        occlusion_windows: vec![(2, 20, 23)],
        rng_seed: 5,
    };
    let (mut video, _) = generate_scenario(&spec, "grad").unwrap();
    video.frames.truncate(30);
    let config = ModelConfig {
        d_e: 3,
        d_gd: 3,
        d_int: 3,
        d_dyn: 2,
        g: 2,
        gat_hidden: 4,
        ..ModelConfig::default()
    };
    let mut model = Model::new(config, synthetic_dims(), Variant::Full.ablation(), 9).unwrap();
    // θ starts at zero; move it off zero so its gradient path is exercised
    let theta = model.store.find("interaction.theta.weight").unwrap();
    let w = &mut model.store.get_mut(theta).value;
    w[[0, 0]] = 3.0;
    w[[4, 1]] = -2.0;
    let prepared = model.prepare(&video).unwrap();
    assert!(
        prepared.scenes.total_reconstructed() > 0,
        "fixture must contain reconstructed nodes"
    );
    (model, prepared)
}

#[test]
fn interaction_branch() {
    let (_, prepared) = occluded_positive();
    let dims = synthetic_dims();
    let mut r = rng(25);
    let mut store = ParamStore::new();
    let params = InteractionParams::new(&mut store, (dims.obj_dim, dims.label_dim, 4), 3, 3, &mut r);
    let theta = store.find("interaction.theta.weight").unwrap();
    store.get_mut(theta).value = uniform(2 * dims.obj_dim, 2, -2.0, 2.0, &mut r);
    let switches = InteractionSwitches {
        spatial: true,
        local_depth: true,
        reconstruction: true,
    };
    check("interaction_features", &mut store, |s, t| {
        let f = interaction_features(t, s, &prepared.scenes, &params, switches)?;
        squash(t, f, 26)
    });

    let scenes = &prepared.scenes;
    let rows = scenes.obj.nrows();
    let factors: Vec<f64> = (0..rows).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 }).collect();
    check("embed_nodes", &mut store, |s, t| {
        let obj = t.input(scenes.obj.clone());
        let label = t.input(scenes.label.clone());
        let depth = t.input(scenes.local_depth.clone());
        let nodes = embed_nodes(t, s, obj, label, Some(depth), &params, Some(factors.clone()))?;
        squash(t, nodes, 27)
    });
}

#[test]
fn temporal_head() {
    let mut r = rng(28);
    let mut store = ParamStore::new();
    let params = TemporalParams::new(&mut store, 5, 4, 1, &mut r).unwrap();
    let fused = uniform(8, 5, -1.0, 1.0, &mut r);
    let mask = Arc::new(causal_mask(8, None).unwrap());
    check("predict_logits", &mut store, |s, t| {
        let x = t.input(fused.clone());
        let z = predict_logits(t, s, x, &mask, &params)?;
        squash(t, z, 29)
    });
}

#[test]
fn clip_losses() {
    let (_, mut prepared) = occluded_positive();
    let mut r = rng(30);
    let n = prepared.len();
    let mut store = ParamStore::new();
    let z = store.insert("z", uniform(n, 1, -3.0, 3.0, &mut r));
    for unit in [WeightUnit::Frames, WeightUnit::Seconds] {
        check("positive loss", &mut store, |s, t| {
            let z = t.param(s, z);
            video_loss(t, z, &prepared, unit, 0.7)
        });
    }
    prepared.positive = false;
    prepared.accident_frame = None;
    check("negative loss", &mut store, |s, t| {
        let z = t.param(s, z);
        video_loss(t, z, &prepared, WeightUnit::Seconds, 0.7)
    });
}

#[test]
fn end_to_end_loss() {
    let started = Instant::now();
    let (model, prepared) = occluded_positive();
    for variant in [Variant::Full, Variant::NoDepth, Variant::NoRec, Variant::DynamicsOnly] {
        let mut m = model.clone();
        m.ablation = variant.ablation();
        let mut store = m.store.clone();
        let opts = GradCheckOptions {
            max_entries_per_param: if variant == Variant::Full { None } else { Some(12) },
            ..GradCheckOptions::default()
        };
        let report = grad_check(
            &mut store,
            |s, t| {
                let z = m.logits_with(t, s, &prepared)?;
                video_loss(t, z, &prepared, WeightUnit::Seconds, 0.5)
            },
            &opts,
        )
        .unwrap();
        assert!(
            report.max_rel_error < TOL,
            "{variant}: {:.3e} at {}[{}]",
            report.max_rel_error,
            report.worst_param,
            report.worst_index
        );
    }
    assert!(started.elapsed().as_secs() < 120);
}
