//! Reverse-mode differentiation over a linear record of matrix operations.
//!
//! Every value on the tape is a dense `f64` matrix. The forward pass appends
//! one record per primitive; [`Tape::backward`] walks the records once, last
//! to first, and deposits parameter gradients into the owning [`ParamStore`].

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Index of a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for operations that do not fit the built-in set.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, in input order.
    fn backward(&self, inputs: &[&Array2<f64>], output: &Array2<f64>, grad: &Array2<f64>) -> Vec<Array2<f64>>;
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Concat(Vec<Var>),
    ScaleRows(Var, Vec<f64>),
    Sum(Var),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Record {
    value: Array2<f64>,
    op: Op,
}

/// Ordered list of primitive applications for one forward pass.
#[derive(Default)]
pub struct Tape {
    records: Vec<Record>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    visited: usize,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Number of records the backward sweep processed.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

fn check_finite(name: &str, m: &Array2<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{name} contains non-finite entries")))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.records[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.records[v.0].value.dim()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.records.push(Record { value, op });
        Var(self.records.len() - 1)
    }

    /// Constant input; gradients are still reported through [`Gradients`].
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::Dimension(format!("matmul {ar}x{ac} by {br}x{bc}")));
        }
        let out = self.value(a).dot(self.value(b));
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `x + b` with `b` a `1 × d` row broadcast over every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, xc) = self.shape(x);
        let (br, bc) = self.shape(b);
        if br != 1 || bc != xc {
            return Err(Error::Dimension(format!("bias {br}x{bc} for {xc} columns")));
        }
        let out = self.value(x) + self.value(b);
        Ok(self.push(out, Op::AddRow(x, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "add {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).mapv(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of nothing".into()));
        }
        let rows = self.shape(parts[0]).0;
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(Error::Dimension("concat with unequal row counts".into()));
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(1), &views).expect("row counts checked");
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Multiply row `i` by `factors[i]`; used to zero masked rows.
    pub fn scale_rows(&mut self, x: Var, factors: Vec<f64>) -> Result<Var> {
        let (rows, _) = self.shape(x);
        if factors.len() != rows {
            return Err(Error::Dimension(format!(
                "{} row factors for {rows} rows",
                factors.len()
            )));
        }
        let mut out = self.value(x).clone();
        for (mut row, &f) in out.rows_mut().into_iter().zip(&factors) {
            row *= f;
        }
        Ok(self.push(out, Op::ScaleRows(x, factors)))
    }

    /// Sum of all entries as a `1 × 1` value.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        self.push(Array2::from_elem((1, 1), total), Op::Sum(x))
    }

    pub fn custom(&mut self, inputs: &[Var], value: Array2<f64>, op: Box<dyn CustomOp>) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), op))
    }

    /// Reverse sweep from `root`, seeded with ones. Parameter gradients are
    /// added to `store`; all intermediate gradients are returned.
    pub fn backward(&self, root: Var, store: &mut ParamStore) -> Result<Gradients> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.records.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones(self.records[root.0].value.raw_dim()));
        let mut visited = 0;
        for idx in (0..=root.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            visited += 1;
            let record = &self.records[idx];
            let send = |target: Var, g: Array2<f64>, grads: &mut Vec<Option<Array2<f64>>>| match &mut grads[target.0] {
                Some(acc) => *acc += &g,
                slot @ None => *slot = Some(g),
            };
            match &record.op {
                Op::Input => {}
                Op::Param(id) => {
                    check_finite("parameter gradient", &grad)?;
                    store.get_mut(*id).grad += &grad;
                }
                Op::MatMul(a, b) => {
                    let ga = grad.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&grad);
                    send(*a, ga, &mut grads);
                    send(*b, gb, &mut grads);
                }
                Op::AddRow(x, b) => {
                    let gb = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                    send(*b, gb, &mut grads);
                    send(*x, grad.clone(), &mut grads);
                }
                Op::Add(a, b) => {
                    send(*b, grad.clone(), &mut grads);
                    send(*a, grad.clone(), &mut grads);
                }
                Op::Relu(x) => {
                    let mut g = grad.clone();
                    g.zip_mut_with(self.value(*x), |g, &v| {
                        if v <= 0.0 {
                            *g = 0.0
                        }
                    });
                    send(*x, g, &mut grads);
                }
                Op::LeakyRelu(x, slope) => {
                    let mut g = grad.clone();
                    g.zip_mut_with(self.value(*x), |g, &v| {
                        if v <= 0.0 {
                            *g *= slope
                        }
                    });
                    send(*x, g, &mut grads);
                }
                Op::Sigmoid(x) => {
                    let mut g = grad.clone();
                    g.zip_mut_with(&record.value, |g, &p| *g *= p * (1.0 - p));
                    send(*x, g, &mut grads);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let width = self.shape(p).1;
                        let g = grad.slice(s![.., start..start + width]).to_owned();
                        start += width;
                        send(p, g, &mut grads);
                    }
                }
                Op::ScaleRows(x, factors) => {
                    let mut g = grad.clone();
                    for (mut row, &f) in g.rows_mut().into_iter().zip(factors) {
                        row *= f;
                    }
                    send(*x, g, &mut grads);
                }
                Op::Sum(x) => {
                    let g = Array2::from_elem(self.value(*x).raw_dim(), grad[[0, 0]]);
                    send(*x, g, &mut grads);
                }
                Op::Custom(inputs, op) => {
                    let values: Vec<&Array2<f64>> = inputs.iter().map(|&v| self.value(v)).collect();
                    let gs = op.backward(&values, &record.value, &grad);
                    debug_assert_eq!(gs.len(), inputs.len(), "{} backward arity", op.name());
                    for (&v, g) in inputs.iter().zip(gs) {
                        send(v, g, &mut grads);
                    }
                }
            }
            grads[idx] = Some(grad);
        }
        Ok(Gradients { grads, visited })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn backward_visits_each_reachable_record_once() {
        let mut store = ParamStore::new();
        let w = store.insert("w", array![[1.0, -2.0], [0.5, 3.0]]);
        let mut tape = Tape::new();
        let x = tape.input(array![[1.0, 2.0]]);
        let wv = tape.param(&store, w);
        let h = tape.matmul(x, wv).unwrap();
        let r = tape.relu(h);
        let l = tape.sum(r);
        let grads = tape.backward(l, &mut store).unwrap();
        assert_eq!(grads.visited(), tape.len());
        // h = [2, 4]; relu passes both; dL/dW = x^T * 1
        assert_eq!(store.get(w).grad, array![[1.0, 1.0], [2.0, 2.0]]);
    }

    #[test]
    fn shared_value_accumulates() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.input(array![[2.0]]);
        let y = tape.add(x, x).unwrap();
        let l = tape.sum(y);
        let g = tape.backward(l, &mut store).unwrap();
        assert_eq!(g.wrt(x).unwrap()[[0, 0]], 2.0);
    }

    #[test]
    fn softplus_matches_log_form() {
        for x in [-30.0, -2.0, 0.0, 1.5, 40.0] {
            let naive = (1.0f64 + f64::exp(x)).ln();
            assert!((softplus(x) - naive).abs() < 1e-12 * naive.max(1.0));
        }
    }
}
