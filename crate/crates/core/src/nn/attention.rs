//! Graph attention with dynamic (two-stage) scoring.
//!
//! For target `i` and permitted source `j` the score is
//! `a · LeakyReLU(W_s h_j + W_t h_i)`, which equals `a · LeakyReLU(W [h_j ‖ h_i])`
//! with `W = [W_s W_t]`. Scores are softmax-normalised over the permitted
//! sources of each target and the output is `Σ_j α_ij W_s h_j + b`.

use std::sync::Arc;

use ndarray::{s, Array2};
use rand::Rng;

use super::param::{ParamId, ParamStore};
use super::tape::{CustomOp, Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// Permitted sources for each target node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    sources: Vec<Vec<usize>>,
}

impl AttentionMask {
    /// From a dense `[target][source]` boolean matrix. Every row needs at
    /// least one permitted source.
    pub fn from_dense(mask: &[Vec<bool>]) -> Result<Self> {
        let n = mask.len();
        let mut sources = Vec::with_capacity(n);
        for (i, row) in mask.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension(format!(
                    "attention mask row {i} has {} entries for {n} nodes",
                    row.len()
                )));
            }
            let permitted: Vec<usize> = (0..n).filter(|&j| row[j]).collect();
            if permitted.is_empty() {
                return Err(Error::Structure(format!(
                    "node {i} has no permitted source; add a self-loop"
                )));
            }
            sources.push(permitted);
        }
        Ok(Self { sources })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn sources(&self, target: usize) -> &[usize] {
        &self.sources[target]
    }
}

/// Trainable weights of one attention layer.
#[derive(Clone, Copy, Debug)]
pub struct GatParams {
    pub w_source: ParamId,
    pub w_target: ParamId,
    pub attention: ParamId,
    pub bias: ParamId,
    pub heads: usize,
}

impl GatParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !hidden.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention width {hidden} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            w_source: store.insert_glorot(format!("{prefix}.w_source"), d_in, hidden, rng),
            w_target: store.insert_glorot(format!("{prefix}.w_target"), d_in, hidden, rng),
            attention: store.insert_glorot(format!("{prefix}.attention"), 1, hidden, rng),
            bias: store.insert_zeros(format!("{prefix}.bias"), 1, hidden),
            heads,
        })
    }
}

fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

/// Attention coefficients per head as dense `N × N` matrices
/// (`[target][source]`, zero where not permitted).
pub fn attention_coefficients(
    source: &Array2<f64>,
    target: &Array2<f64>,
    att: &Array2<f64>,
    mask: &AttentionMask,
    heads: usize,
    slope: f64,
) -> Vec<Array2<f64>> {
    let n = source.nrows();
    let width = source.ncols() / heads;
    let mut out = Vec::with_capacity(heads);
    let mut scores = Vec::new();
    for h in 0..heads {
        let cols = h * width..(h + 1) * width;
        let a = att.slice(s![0, cols.clone()]);
        let mut alpha = Array2::zeros((n, n));
        for i in 0..n {
            let xr = target.slice(s![i, cols.clone()]);
            scores.clear();
            for &j in mask.sources(i) {
                let xl = source.slice(s![j, cols.clone()]);
                let mut e = 0.0;
                for k in 0..width {
                    e += a[k] * leaky(xl[k] + xr[k], slope);
                }
                scores.push(e);
            }
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for e in scores.iter_mut() {
                *e = (*e - max).exp();
                total += *e;
            }
            for (&j, &e) in mask.sources(i).iter().zip(scores.iter()) {
                alpha[[i, j]] = e / total;
            }
        }
        out.push(alpha);
    }
    out
}

struct GatAggregate {
    mask: Arc<AttentionMask>,
    heads: usize,
    slope: f64,
    alpha: Vec<Array2<f64>>,
}

impl CustomOp for GatAggregate {
    fn name(&self) -> &'static str {
        "gat_aggregate"
    }

    fn backward(&self, inputs: &[&Array2<f64>], _output: &Array2<f64>, grad: &Array2<f64>) -> Vec<Array2<f64>> {
        let (xl, xr, att) = (inputs[0], inputs[1], inputs[2]);
        let n = xl.nrows();
        let width = xl.ncols() / self.heads;
        let mut gxl = Array2::zeros(xl.raw_dim());
        let mut gxr = Array2::zeros(xr.raw_dim());
        let mut gatt = Array2::zeros(att.raw_dim());
        let mut dalpha = Vec::new();
        for h in 0..self.heads {
            let c0 = h * width;
            let alpha = &self.alpha[h];
            for i in 0..n {
                let srcs = self.mask.sources(i);
                dalpha.clear();
                for &j in srcs {
                    let mut d = 0.0;
                    for k in 0..width {
                        d += grad[[i, c0 + k]] * xl[[j, c0 + k]];
                    }
                    dalpha.push(d);
                }
                let mean: f64 = srcs.iter().zip(&dalpha).map(|(&j, &d)| alpha[[i, j]] * d).sum();
                for (&j, &d) in srcs.iter().zip(&dalpha) {
                    let a_ij = alpha[[i, j]];
                    let ds = a_ij * (d - mean);
                    for k in 0..width {
                        let c = c0 + k;
                        gxl[[j, c]] += a_ij * grad[[i, c]];
                        let z = xl[[j, c]] + xr[[i, c]];
                        let (act, dact) = if z > 0.0 {
                            (z, 1.0)
                        } else {
                            (self.slope * z, self.slope)
                        };
                        gatt[[0, c]] += ds * act;
                        let dz = ds * att[[0, c]] * dact;
                        gxl[[j, c]] += dz;
                        gxr[[i, c]] += dz;
                    }
                }
            }
        }
        vec![gxl, gxr, gatt]
    }
}

/// Records the attention aggregation given already-projected source and
/// target features. Returns `Σ_j α_ij source_j` per target (no bias).
pub fn gat_aggregate(
    tape: &mut Tape,
    source: Var,
    target: Var,
    att: Var,
    mask: &Arc<AttentionMask>,
    heads: usize,
    slope: f64,
) -> Result<Var> {
    let (n, width) = tape.shape(source);
    if tape.shape(target) != (n, width) || tape.shape(att) != (1, width) {
        return Err(Error::Dimension("attention projections disagree".into()));
    }
    if mask.len() != n {
        return Err(Error::Dimension(format!(
            "attention mask for {} nodes, features for {n}",
            mask.len()
        )));
    }
    if heads == 0 || width % heads != 0 {
        return Err(Error::Dimension(format!("{width} columns over {heads} heads")));
    }
    let alpha = attention_coefficients(
        tape.value(source),
        tape.value(target),
        tape.value(att),
        mask,
        heads,
        slope,
    );
    let xl = tape.value(source);
    let per_head = width / heads;
    let mut out = Array2::zeros((n, width));
    for (h, a) in alpha.iter().enumerate() {
        let cols = h * per_head..(h + 1) * per_head;
        let agg = a.dot(&xl.slice(s![.., cols.clone()]));
        out.slice_mut(s![.., cols]).assign(&agg);
    }
    let op = GatAggregate {
        mask: mask.clone(),
        heads,
        slope,
        alpha,
    };
    Ok(tape.custom(&[source, target, att], out, Box::new(op)))
}

/// Full attention layer: projections, aggregation and bias.
pub fn graph_attention(
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    mask: &Arc<AttentionMask>,
    params: &GatParams,
    slope: f64,
) -> Result<Var> {
    let ws = tape.param(store, params.w_source);
    let wt = tape.param(store, params.w_target);
    let att = tape.param(store, params.attention);
    let bias = tape.param(store, params.bias);
    let source = tape.matmul(h, ws)?;
    let target = tape.matmul(h, wt)?;
    let agg = gat_aggregate(tape, source, target, att, mask, params.heads, slope)?;
    tape.add_row(agg, bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn empty_row_is_structural_error() {
        let mask = vec![vec![true, false], vec![false, false]];
        assert!(matches!(AttentionMask::from_dense(&mask), Err(Error::Structure(_))));
    }

    #[test]
    fn single_self_loop_has_unit_weight() {
        let mask = AttentionMask::from_dense(&[vec![true]]).unwrap();
        let x = array![[0.3, -1.2]];
        let a = attention_coefficients(&x, &x, &array![[0.7, 0.1]], &mask, 1, 0.2);
        assert_eq!(a[0][[0, 0]], 1.0);
    }

    #[test]
    fn identical_sources_split_evenly() {
        let mask = AttentionMask::from_dense(&[
            vec![true, true, true],
            vec![false, true, false],
            vec![false, false, true],
        ])
        .unwrap();
        let src = array![[9.0, 9.0], [0.5, -0.5], [0.5, -0.5]];
        let tgt = array![[0.1, 0.2], [0.0, 0.0], [0.0, 0.0]];
        // row 0 draws from itself and two identical sources; restrict to those two
        let mask2 = AttentionMask::from_dense(&[
            vec![false, true, true],
            vec![false, true, false],
            vec![false, false, true],
        ])
        .unwrap();
        let a = attention_coefficients(&src, &tgt, &array![[1.0, -0.4]], &mask2, 1, 0.2);
        assert_eq!(a[0][[0, 1]], 0.5);
        assert_eq!(a[0][[0, 2]], 0.5);
        let b = attention_coefficients(&src, &tgt, &array![[1.0, -0.4]], &mask, 1, 0.2);
        assert!((b[0].row(0).sum() - 1.0).abs() < 1e-12);
    }
}
