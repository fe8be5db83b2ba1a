//! Per-frame dynamic feature: causal temporal mean followed by an affine
//! reduction.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Linear, ParamStore, Tape, Var};

pub const DEFAULT_WINDOW: usize = 4;

/// Mean of rows `[i-w+1, i]` (clipped at the first frame) for every row `i`.
pub fn causal_pool(features: &Array2<f64>, window: usize) -> Result<Array2<f64>> {
    if window == 0 {
        return Err(Error::Argument("pooling window must be positive".into()));
    }
    let (n, d) = features.dim();
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        let start = (i + 1).saturating_sub(window);
        let mut row = out.row_mut(i);
        for k in start..=i {
            row += &features.row(k);
        }
        row /= (i + 1 - start) as f64;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct DynamicsParams {
    pub projection: Linear,
}

impl DynamicsParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            projection: Linear::new(store, "dynamics.projection", d_in, d_out, rng),
        }
    }
}

/// `pooled · W + b` for already pooled features (`N × d_in`).
pub fn project_pooled(tape: &mut Tape, store: &ParamStore, pooled: Var, params: &DynamicsParams) -> Result<Var> {
    params.projection.forward(tape, store, pooled)
}

/// Pool and project raw per-frame features.
pub fn project_dynamic(
    tape: &mut Tape,
    store: &ParamStore,
    features: &Array2<f64>,
    window: usize,
    params: &DynamicsParams,
) -> Result<Var> {
    let d_in = params.projection.d_in(store);
    if features.ncols() != d_in {
        return Err(Error::Dimension(format!(
            "dynamic feature width {}, expected {d_in}",
            features.ncols()
        )));
    }
    let pooled = tape.input(causal_pool(features, window)?);
    project_pooled(tape, store, pooled, params)
}
