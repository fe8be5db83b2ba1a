//! Frame graph over a clip and the per-frame probability head.
//!
//! Each frame's node is `[global depth, interaction, dynamics]`. Frames only
//! attend to themselves and to earlier frames, so a prediction never depends
//! on the future.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{graph_attention, AttentionMask, GatParams, Linear, ParamStore, Tape, Var, DEFAULT_LEAKY_SLOPE};

/// Fused node features of a clip plus its causal mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameGraph {
    pub node_features: Array2<f64>,
    /// `a_tem[i][j]` is true iff `j < i`.
    pub a_tem: Vec<Vec<bool>>,
}

impl FrameGraph {
    pub fn new(node_features: Array2<f64>) -> Result<Self> {
        if node_features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("frame graph has non-finite node features".into()));
        }
        let a_tem = temporal_adjacency(node_features.nrows());
        Ok(Self { node_features, a_tem })
    }
}

/// Strictly lower-triangular `n × n` mask.
pub fn temporal_adjacency(n: usize) -> Vec<Vec<bool>> {
    (0..n).map(|i| (0..n).map(|j| j < i).collect()).collect()
}

/// Attention sources per frame: itself and every earlier frame, optionally
/// limited to the last `max_lookback` predecessors.
pub fn causal_mask(n: usize, max_lookback: Option<usize>) -> Result<AttentionMask> {
    let a_tem = temporal_adjacency(n);
    let dense: Vec<Vec<bool>> = a_tem
        .into_iter()
        .enumerate()
        .map(|(i, mut row)| {
            row[i] = true;
            if let Some(l) = max_lookback {
                for (j, v) in row.iter_mut().enumerate() {
                    if j + l < i {
                        *v = false;
                    }
                }
            }
            row
        })
        .collect();
    AttentionMask::from_dense(&dense)
}

/// Concatenate the three per-frame features in the order
/// (depth, interaction, dynamics).
pub fn fuse_node(tape: &mut Tape, depth: Var, interaction: Var, dynamics: Var, widths: [usize; 3]) -> Result<Var> {
    for (name, v, w) in [
        ("depth", depth, widths[0]),
        ("interaction", interaction, widths[1]),
        ("dynamics", dynamics, widths[2]),
    ] {
        if tape.shape(v).1 != w {
            return Err(Error::Dimension(format!(
                "{name} feature width {}, expected {w}",
                tape.shape(v).1
            )));
        }
    }
    tape.concat(&[depth, interaction, dynamics])
}

#[derive(Clone, Copy, Debug)]
pub struct TemporalParams {
    pub gat: GatParams,
    pub head: Linear,
}

impl TemporalParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        d_node: usize,
        hidden: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            gat: GatParams::new(store, "temporal.gat", d_node, hidden, heads, rng)?,
            head: Linear::new(store, "temporal.head", hidden, 1, rng),
        })
    }
}

/// Per-frame logits (`N × 1`).
pub fn predict_logits(
    tape: &mut Tape,
    store: &ParamStore,
    fused: Var,
    mask: &Arc<AttentionMask>,
    params: &TemporalParams,
) -> Result<Var> {
    let h = graph_attention(tape, store, fused, mask, &params.gat, DEFAULT_LEAKY_SLOPE)?;
    params.head.forward(tape, store, h)
}

/// Probabilities for a prepared frame graph, evaluated without gradients.
pub fn predict_curve(
    graph: &FrameGraph,
    store: &ParamStore,
    params: &TemporalParams,
    max_lookback: Option<usize>,
) -> Result<Vec<f64>> {
    let n = graph.node_features.nrows();
    if n == 0 {
        return Err(Error::Argument("frame graph has no frames".into()));
    }
    let mask = Arc::new(causal_mask(n, max_lookback)?);
    let mut tape = Tape::new();
    let x = tape.input(graph.node_features.clone());
    let z = predict_logits(&mut tape, store, x, &mask, params)?;
    let p = tape.sigmoid(z);
    Ok(tape.value(p).column(0).to_vec())
}
