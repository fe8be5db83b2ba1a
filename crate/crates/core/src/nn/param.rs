use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable matrix with its accumulated gradient.
///
/// Biases and vectors are stored as `1 × d` matrices so every parameter
/// shares the same layout on the tape and in checkpoints.
#[derive(Clone, Debug)]
pub struct ParamTensor {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.value.nrows(), self.value.ncols()]
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.value.iter().all(|v| v.is_finite()) && self.grad.iter().all(|v| v.is_finite())
    }
}

/// Ordered collection of parameters. Order is stable and defines the
/// checkpoint layout.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(ParamTensor::new(name, value));
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform weights in ±sqrt(6 / (fan_in + fan_out)), rounded to
    /// single precision so checkpoints reproduce them exactly.
    pub fn insert_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let value = Array2::from_shape_fn((fan_in, fan_out), |_| round_f32(rng.random_range(-bound..bound)));
        self.insert(name, value)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.insert(name, Array2::zeros((rows, cols)))
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(ParamTensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Replace every value with data from `other`, matching by name and shape.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for (mine, theirs) in self.params.iter_mut().zip(other.params.iter()) {
            if mine.name != theirs.name || mine.shape() != theirs.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: {} {:?} vs {} {:?}",
                    mine.name,
                    mine.shape(),
                    theirs.name,
                    theirs.shape()
                )));
            }
            mine.value.assign(&theirs.value);
        }
        Ok(())
    }
}

/// Round to the nearest single-precision value.
pub fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}
