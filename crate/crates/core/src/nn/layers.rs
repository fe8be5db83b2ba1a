use rand::Rng;

use super::param::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Affine map `x W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            weight: store.insert_glorot(format!("{prefix}.weight"), d_in, d_out, rng),
            bias: store.insert_zeros(format!("{prefix}.bias"), 1, d_out),
        }
    }

    /// Zero-initialised map, used where the layer starts as a no-op residual.
    pub fn zeros(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize) -> Self {
        Self {
            weight: store.insert_zeros(format!("{prefix}.weight"), d_in, d_out),
            bias: store.insert_zeros(format!("{prefix}.bias"), 1, d_out),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        linear_forward(tape, x, w, b)
    }

    pub fn d_in(&self, store: &ParamStore) -> usize {
        store.get(self.weight).value.nrows()
    }

    pub fn d_out(&self, store: &ParamStore) -> usize {
        store.get(self.weight).value.ncols()
    }
}

/// `x W + b` with the bias broadcast over rows.
pub fn linear_forward(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    if tape.value(x).iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("linear input".into()));
    }
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

pub fn relu(tape: &mut Tape, x: Var) -> Var {
    tape.relu(x)
}
