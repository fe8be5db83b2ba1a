//! Block-diagonal graph primitives.
//!
//! Many small graphs (one per video frame) are packed into one node matrix:
//! graph `f` owns rows `offsets[f]..offsets[f + 1]`. Adjacency for the packed
//! set is stored as an `R × B` matrix where `B` is the largest graph size and
//! row `r` of graph `f` uses only its first `size(f)` columns.

use std::sync::Arc;

use ndarray::{s, Array2};

use super::param::ParamId;
use super::param::ParamStore;
use super::tape::{CustomOp, Tape, Var};
use crate::error::{Error, Result};

/// Row ranges of the packed graphs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Blocks {
    offsets: Vec<usize>,
    width: usize,
}

impl Blocks {
    pub fn from_sizes(sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for &s in sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        let width = sizes.iter().copied().max().unwrap_or(0).max(1);
        Self { offsets, width }
    }

    pub fn single(n: usize) -> Self {
        Self::from_sizes(&[n])
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn rows(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Column count of packed adjacency matrices.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn range(&self, f: usize) -> std::ops::Range<usize> {
        self.offsets[f]..self.offsets[f + 1]
    }

    pub fn size(&self, f: usize) -> usize {
        self.offsets[f + 1] - self.offsets[f]
    }

    /// Pack per-graph square matrices into the `R × B` layout.
    pub fn pack(&self, mats: &[Array2<f64>]) -> Result<Array2<f64>> {
        if mats.len() != self.count() {
            return Err(Error::Dimension(format!(
                "{} adjacency blocks for {} graphs",
                mats.len(),
                self.count()
            )));
        }
        let mut out = Array2::zeros((self.rows(), self.width));
        for (f, m) in mats.iter().enumerate() {
            let n = self.size(f);
            if m.dim() != (n, n) {
                return Err(Error::Dimension(format!(
                    "block {f} is {:?}, expected {n}x{n}",
                    m.dim()
                )));
            }
            let r = self.range(f);
            out.slice_mut(s![r, 0..n]).assign(m);
        }
        Ok(out)
    }

    pub fn unpack(&self, packed: &Array2<f64>, f: usize) -> Array2<f64> {
        let n = self.size(f);
        packed.slice(s![self.range(f), 0..n]).to_owned()
    }
}

/// `rownorm(A + I)` restricted to valid rows and columns of each block.
struct RowNormSelfLoop {
    blocks: Arc<Blocks>,
    valid: Arc<Vec<bool>>,
}

impl RowNormSelfLoop {
    fn row_sum(&self, a: &Array2<f64>, f: usize, r: usize) -> f64 {
        let base = self.blocks.range(f).start;
        let local = r - base;
        let mut sum = 0.0;
        for c in 0..self.blocks.size(f) {
            if self.valid[base + c] {
                sum += a[[r, c]] + if c == local { 1.0 } else { 0.0 };
            }
        }
        sum
    }

    fn forward(&self, a: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(a.raw_dim());
        for f in 0..self.blocks.count() {
            let base = self.blocks.range(f).start;
            for r in self.blocks.range(f) {
                if !self.valid[r] {
                    continue;
                }
                let total = self.row_sum(a, f, r);
                for c in 0..self.blocks.size(f) {
                    if self.valid[base + c] {
                        let self_loop = if base + c == r { 1.0 } else { 0.0 };
                        out[[r, c]] = (a[[r, c]] + self_loop) / total;
                    }
                }
            }
        }
        out
    }
}

impl CustomOp for RowNormSelfLoop {
    fn name(&self) -> &'static str {
        "rownorm_self_loop"
    }

    fn backward(&self, inputs: &[&Array2<f64>], output: &Array2<f64>, grad: &Array2<f64>) -> Vec<Array2<f64>> {
        let a = inputs[0];
        let mut ga = Array2::zeros(a.raw_dim());
        for f in 0..self.blocks.count() {
            let base = self.blocks.range(f).start;
            for r in self.blocks.range(f) {
                if !self.valid[r] {
                    continue;
                }
                let total = self.row_sum(a, f, r);
                let mut dot = 0.0;
                for c in 0..self.blocks.size(f) {
                    if self.valid[base + c] {
                        dot += grad[[r, c]] * output[[r, c]];
                    }
                }
                for c in 0..self.blocks.size(f) {
                    if self.valid[base + c] {
                        ga[[r, c]] = (grad[[r, c]] - dot) / total;
                    }
                }
            }
        }
        vec![ga]
    }
}

/// Per-block product `Â_f · X_f`.
struct BlockMatMul {
    blocks: Arc<Blocks>,
}

impl BlockMatMul {
    fn forward(&self, adj: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), x.ncols()));
        for f in 0..self.blocks.count() {
            let n = self.blocks.size(f);
            if n == 0 {
                continue;
            }
            let r = self.blocks.range(f);
            let a = adj.slice(s![r.clone(), 0..n]);
            let xb = x.slice(s![r.clone(), ..]);
            out.slice_mut(s![r, ..]).assign(&a.dot(&xb));
        }
        out
    }
}

impl CustomOp for BlockMatMul {
    fn name(&self) -> &'static str {
        "block_matmul"
    }

    fn backward(&self, inputs: &[&Array2<f64>], _output: &Array2<f64>, grad: &Array2<f64>) -> Vec<Array2<f64>> {
        let (adj, x) = (inputs[0], inputs[1]);
        let mut gadj = Array2::zeros(adj.raw_dim());
        let mut gx = Array2::zeros(x.raw_dim());
        for f in 0..self.blocks.count() {
            let n = self.blocks.size(f);
            if n == 0 {
                continue;
            }
            let r = self.blocks.range(f);
            let a = adj.slice(s![r.clone(), 0..n]);
            let xb = x.slice(s![r.clone(), ..]);
            let gb = grad.slice(s![r.clone(), ..]);
            gadj.slice_mut(s![r.clone(), 0..n]).assign(&gb.dot(&xb.t()));
            gx.slice_mut(s![r, ..]).assign(&a.t().dot(&gb));
        }
        vec![gadj, gx]
    }
}

/// Mean over the valid rows of each block; blocks without valid rows give
/// a zero row.
struct BlockMean {
    blocks: Arc<Blocks>,
    valid: Arc<Vec<bool>>,
}

impl BlockMean {
    fn count(&self, f: usize) -> usize {
        self.blocks.range(f).filter(|&r| self.valid[r]).count()
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.blocks.count(), x.ncols()));
        for f in 0..self.blocks.count() {
            let n = self.count(f);
            if n == 0 {
                continue;
            }
            let mut row = out.row_mut(f);
            for r in self.blocks.range(f) {
                if self.valid[r] {
                    row += &x.row(r);
                }
            }
            row /= n as f64;
        }
        out
    }
}

impl CustomOp for BlockMean {
    fn name(&self) -> &'static str {
        "block_mean"
    }

    fn backward(&self, inputs: &[&Array2<f64>], _output: &Array2<f64>, grad: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut gx = Array2::zeros(inputs[0].raw_dim());
        for f in 0..self.blocks.count() {
            let n = self.count(f);
            if n == 0 {
                continue;
            }
            let g = grad.row(f).mapv(|v| v / n as f64);
            for r in self.blocks.range(f) {
                if self.valid[r] {
                    gx.row_mut(r).assign(&g);
                }
            }
        }
        vec![gx]
    }
}

fn check_valid_len(blocks: &Blocks, valid: &[bool]) -> Result<()> {
    if valid.len() != blocks.rows() {
        return Err(Error::Dimension(format!(
            "mask of length {} for {} nodes",
            valid.len(),
            blocks.rows()
        )));
    }
    Ok(())
}

/// Records `rownorm(A + I)` per block. Invalid rows and columns are zero.
pub fn rownorm_self_loop(tape: &mut Tape, adj: Var, blocks: &Arc<Blocks>, valid: &Arc<Vec<bool>>) -> Result<Var> {
    check_valid_len(blocks, valid)?;
    let a = tape.value(adj);
    if a.dim() != (blocks.rows(), blocks.width()) {
        return Err(Error::Dimension(format!(
            "packed adjacency {:?}, expected {}x{}",
            a.dim(),
            blocks.rows(),
            blocks.width()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("adjacency contains non-finite entries".into()));
    }
    if a.iter().any(|&v| v < 0.0) {
        return Err(Error::Structure("adjacency must be nonnegative".into()));
    }
    let op = RowNormSelfLoop {
        blocks: blocks.clone(),
        valid: valid.clone(),
    };
    let out = op.forward(a);
    Ok(tape.custom(&[adj], out, Box::new(op)))
}

pub fn block_matmul(tape: &mut Tape, adj: Var, x: Var, blocks: &Arc<Blocks>) -> Result<Var> {
    if tape.shape(x).0 != blocks.rows() {
        return Err(Error::Dimension(format!(
            "{} node rows for {} packed nodes",
            tape.shape(x).0,
            blocks.rows()
        )));
    }
    let op = BlockMatMul { blocks: blocks.clone() };
    let out = op.forward(tape.value(adj), tape.value(x));
    Ok(tape.custom(&[adj, x], out, Box::new(op)))
}

/// Per-graph mean pooling over valid nodes: `R × d → G × d`.
pub fn block_mean(tape: &mut Tape, x: Var, blocks: &Arc<Blocks>, valid: &Arc<Vec<bool>>) -> Result<Var> {
    check_valid_len(blocks, valid)?;
    if tape.shape(x).0 != blocks.rows() {
        return Err(Error::Dimension("pooling rows do not match blocks".into()));
    }
    let op = BlockMean {
        blocks: blocks.clone(),
        valid: valid.clone(),
    };
    let out = op.forward(tape.value(x));
    Ok(tape.custom(&[x], out, Box::new(op)))
}

/// Graph convolution `ReLU(rownorm(A + I) · N · W)` over packed graphs.
pub fn block_graph_conv(
    tape: &mut Tape,
    nodes: Var,
    adj: Var,
    weight: Var,
    blocks: &Arc<Blocks>,
    valid: &Arc<Vec<bool>>,
) -> Result<Var> {
    let norm = rownorm_self_loop(tape, adj, blocks, valid)?;
    let mixed = block_matmul(tape, norm, nodes, blocks)?;
    let projected = tape.matmul(mixed, weight)?;
    Ok(tape.relu(projected))
}

/// Graph convolution over a single graph with an `n × n` adjacency and a
/// node validity mask.
pub fn graph_conv(tape: &mut Tape, nodes: Var, adj: Var, weight: Var, mask: &[bool]) -> Result<Var> {
    let n = tape.shape(nodes).0;
    if tape.shape(adj) != (n, n) {
        return Err(Error::Dimension(format!(
            "adjacency {:?} for {n} nodes",
            tape.shape(adj)
        )));
    }
    let blocks = Arc::new(Blocks::single(n));
    let valid = Arc::new(mask.to_vec());
    block_graph_conv(tape, nodes, adj, weight, &blocks, &valid)
}

/// Weight of a graph convolution layer.
#[derive(Clone, Copy, Debug)]
pub struct GraphConvParams {
    pub weight: ParamId,
}

impl GraphConvParams {
    pub fn new<R: rand::Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.insert_glorot(format!("{prefix}.weight"), d_in, d_out, rng),
        }
    }
}
