//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Tape::backward`] on a scalar walks the record once in reverse creation
//! order and accumulates `∂root/∂node` into per-node gradient buffers. The
//! buffers persist across calls, so two backward passes without
//! [`Tape::zero_grad`] double every gradient.
//!
//! ```
//! use splitguard::autograd::Tape;
//! use splitguard::tensor::Tensor;
//!
//! let tape = Tape::new();
//! let w = tape.leaf(Tensor::matrix(1, 2, vec![3.0, -1.0]));
//! let loss = w.mul(w).unwrap().sum();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(w).unwrap().data(), &[6.0, -2.0]);
//! ```

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Variance floor used by [`Var::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-12;

/// Elementwise nonlinearities available to dense networks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Tanh,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    LeakyRelu(usize, f64),
    Tanh(usize),
    LayerNorm { input: usize, inv_std: Vec<f64>, guarded: Vec<bool> },
    SoftmaxCrossEntropy { logits: usize, labels: Vec<usize>, probs: Tensor },
    Sum(usize),
    Mean(usize),
    Sqrt(usize),
    Recip(usize),
    Acos(usize),
    Clamp(usize, f64, f64),
    RowNormalize { input: usize, norms: Vec<f64> },
    Transpose(usize),
    PairwiseDistances(usize),
    DoubleCenter(usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Operation record for one forward pass.
///
/// Single-threaded by construction (`!Sync`); values read out of it are plain
/// [`Tensor`]s and may be moved across threads.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Tensor>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an input (parameter, data, or constant).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { value, op });
        Var { tape: self, id }
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        self.grads.borrow().get(var.id).cloned().flatten()
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
    }

    /// Back-propagates from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        let shape = root.shape();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {shape:?}"
            )));
        }
        let seed = Tensor::new(shape, vec![1.0])?;
        self.backward_with(root, seed)
    }

    /// Back-propagates an externally supplied upstream gradient for `root`.
    ///
    /// This is how the bottom party of a split model consumes the embedding
    /// gradient it receives from the top party.
    pub fn backward_with(&self, root: Var<'_>, seed: Tensor) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.shape() != seed.shape() {
            return Err(Error::shape(
                "backward",
                format!(
                    "seed {:?} for node of shape {:?}",
                    seed.shape(),
                    nodes[root.id].value.shape()
                ),
            ));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.id + 1];
        adj[root.id] = Some(seed);

        for id in (0..=root.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            propagate(&nodes, node, &g, &mut adj);
            adj[id] = Some(g);
        }

        let mut grads = self.grads.borrow_mut();
        if grads.len() < adj.len() {
            grads.resize(adj.len(), None);
        }
        for (slot, g) in grads.iter_mut().zip(adj) {
            if let Some(g) = g {
                match slot {
                    Some(acc) => acc.add_assign(&g),
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut adj[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn propagate(nodes: &[Node], node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) {
    let val = |id: usize| &nodes[id].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            accumulate(adj, *a, g.matmul_t(val(*b)));
            accumulate(adj, *b, val(*a).t_matmul(g));
        }
        Op::AddBias(x, b) => {
            let cols = g.cols();
            let mut db = vec![0.0; cols];
            for r in 0..g.rows() {
                for (d, v) in db.iter_mut().zip(g.row(r)) {
                    *d += v;
                }
            }
            accumulate(adj, *x, g.clone());
            let shape = val(*b).shape().to_vec();
            accumulate(adj, *b, Tensor::new(shape, db).expect("bias shape"));
        }
        Op::Add(a, b) => {
            accumulate(adj, *a, g.clone());
            accumulate(adj, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(adj, *a, g.clone());
            accumulate(adj, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            accumulate(adj, *a, zip_map(g, val(*b), |g, y| g * y));
            accumulate(adj, *b, zip_map(g, val(*a), |g, x| g * x));
        }
        Op::Scale(a, c) => accumulate(adj, *a, g.map(|v| v * c)),
        Op::AddScalar(a) => accumulate(adj, *a, g.clone()),
        Op::LeakyRelu(x, slope) => {
            let slope = *slope;
            let dx = zip_map(g, val(*x), |g, x| if x > 0.0 { g } else { slope * g });
            accumulate(adj, *x, dx);
        }
        Op::Tanh(x) => accumulate(adj, *x, zip_map(g, &node.value, |g, y| g * (1.0 - y * y))),
        Op::LayerNorm {
            input,
            inv_std,
            guarded,
        } => {
            let y = &node.value;
            let d = y.cols();
            let n = d as f64;
            let mut dx = Vec::with_capacity(y.len());
            for (r, (s, &guarded)) in inv_std.iter().zip(guarded).enumerate() {
                let (gr, yr) = (g.row(r), y.row(r));
                let mean_g = gr.iter().sum::<f64>() / n;
                // A guarded row has a constant scale, so only the centering
                // contributes.
                let mean_gy = if guarded {
                    0.0
                } else {
                    gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n
                };
                dx.extend(gr.iter().zip(yr).map(|(gi, yi)| s * (gi - mean_g - yi * mean_gy)));
            }
            accumulate(adj, *input, Tensor::matrix(y.rows(), d, dx));
        }
        Op::SoftmaxCrossEntropy {
            logits,
            labels,
            probs,
        } => {
            let scale = g.item() / labels.len() as f64;
            let mut dl = probs.clone();
            let c = dl.cols();
            for (r, &y) in labels.iter().enumerate() {
                dl.data_mut()[r * c + y] -= 1.0;
            }
            dl.data_mut().iter_mut().for_each(|v| *v *= scale);
            accumulate(adj, *logits, dl);
        }
        Op::Sum(a) => {
            let shape = val(*a).shape().to_vec();
            accumulate(adj, *a, Tensor::full(&shape, g.item()));
        }
        Op::Mean(a) => {
            let x = val(*a);
            accumulate(adj, *a, Tensor::full(x.shape(), g.item() / x.len() as f64));
        }
        Op::Sqrt(a) => accumulate(
            adj,
            *a,
            zip_map(g, &node.value, |g, y| if y > 0.0 { g / (2.0 * y) } else { 0.0 }),
        ),
        Op::Recip(a) => accumulate(adj, *a, zip_map(g, &node.value, |g, y| -g * y * y)),
        Op::Acos(a) => accumulate(
            adj,
            *a,
            zip_map(g, val(*a), |g, x| {
                let s = 1.0 - x * x;
                if s > 0.0 {
                    -g / s.sqrt()
                } else {
                    0.0
                }
            }),
        ),
        Op::Clamp(a, lo, hi) => {
            let (lo, hi) = (*lo, *hi);
            let dx = zip_map(g, val(*a), |g, x| if (lo..=hi).contains(&x) { g } else { 0.0 });
            accumulate(adj, *a, dx);
        }
        Op::RowNormalize { input, norms } => {
            let y = &node.value;
            let d = y.cols();
            let mut dx = Vec::with_capacity(y.len());
            for (r, norm) in norms.iter().enumerate() {
                let (gr, yr) = (g.row(r), y.row(r));
                let gy: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                dx.extend(gr.iter().zip(yr).map(|(gi, yi)| (gi - yi * gy) / norm));
            }
            accumulate(adj, *input, Tensor::matrix(y.rows(), d, dx));
        }
        Op::Transpose(a) => accumulate(adj, *a, g.transpose()),
        Op::PairwiseDistances(a) => {
            let x = val(*a);
            let dist = &node.value;
            let (n, d) = (x.rows(), x.cols());
            let mut dx = vec![0.0; n * d];
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let dij = dist.get2(i, j);
                    // Coincident rows: take the zero subgradient.
                    if dij == 0.0 {
                        continue;
                    }
                    let w = (g.get2(i, j) + g.get2(j, i)) / dij;
                    if w == 0.0 {
                        continue;
                    }
                    let (xi, xj) = (x.row(i), x.row(j));
                    for k in 0..d {
                        dx[i * d + k] += w * (xi[k] - xj[k]);
                    }
                }
            }
            accumulate(adj, *a, Tensor::matrix(n, d, dx));
        }
        Op::DoubleCenter(a) => accumulate(adj, *a, double_center(g)),
    }
}

/// `A_ij = D_ij − mean_row_i − mean_col_j + mean_all`. Self-adjoint.
fn double_center(d: &Tensor) -> Tensor {
    let (n, m) = (d.rows(), d.cols());
    let row_means: Vec<f64> = (0..n).map(|i| d.row(i).iter().sum::<f64>() / m as f64).collect();
    let mut col_means = vec![0.0; m];
    for i in 0..n {
        for (c, v) in col_means.iter_mut().zip(d.row(i)) {
            *c += v;
        }
    }
    col_means.iter_mut().for_each(|c| *c /= n as f64);
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            out.push(d.get2(i, j) - row_means[i] - col_means[j] + grand);
        }
    }
    Tensor::matrix(n, m, out)
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_matrix(op: &'static str, a: &Tensor) -> Result<()> {
    if a.shape().len() != 2 {
        return Err(Error::shape(op, format!("expected a matrix, got {:?}", a.shape())));
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    fn unary(self, op: impl FnOnce(&Tensor) -> (Tensor, Op)) -> Var<'t> {
        let (value, op) = {
            let nodes = self.tape.nodes.borrow();
            op(&nodes[self.id].value)
        };
        self.tape.push(value, op)
    }

    fn binary(
        self,
        rhs: Var<'t>,
        op: impl FnOnce(&Tensor, &Tensor) -> Result<(Tensor, Op)>,
    ) -> Result<Var<'t>> {
        debug_assert!(std::ptr::eq(self.tape, rhs.tape), "vars from different tapes");
        let (value, op) = {
            let nodes = self.tape.nodes.borrow();
            op(&nodes[self.id].value, &nodes[rhs.id].value)?
        };
        Ok(self.tape.push(value, op))
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.id, rhs.id);
        self.binary(rhs, |x, y| Ok((x.matmul(y)?, Op::MatMul(a, b))))
    }

    /// Adds a bias row (`[n]` or `[1, n]`) to every row of a `[m, n]` matrix.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.id, bias.id);
        self.binary(bias, |x, bv| {
            check_matrix("add_bias", x)?;
            if bv.len() != x.cols() {
                return Err(Error::shape(
                    "add_bias",
                    format!("bias {:?} for {:?}", bv.shape(), x.shape()),
                ));
            }
            let mut out = x.clone();
            let c = x.cols();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += bv.data()[i % c];
            }
            Ok((out, Op::AddBias(a, b)))
        })
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.id, rhs.id);
        self.binary(rhs, |x, y| {
            check_same("add", x, y)?;
            Ok((zip_map(x, y, |p, q| p + q), Op::Add(a, b)))
        })
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.id, rhs.id);
        self.binary(rhs, |x, y| {
            check_same("sub", x, y)?;
            Ok((zip_map(x, y, |p, q| p - q), Op::Sub(a, b)))
        })
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.id, rhs.id);
        self.binary(rhs, |x, y| {
            check_same("mul", x, y)?;
            Ok((zip_map(x, y, |p, q| p * q), Op::Mul(a, b)))
        })
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let a = self.id;
        self.unary(|x| (x.map(|v| v * c), Op::Scale(a, c)))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let a = self.id;
        self.unary(|x| (x.map(|v| v + c), Op::AddScalar(a)))
    }

    /// Leaky ReLU; the derivative at exactly zero is the negative-side slope.
    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let a = self.id;
        self.unary(|x| {
            (
                x.map(|v| if v > 0.0 { v } else { slope * v }),
                Op::LeakyRelu(a, slope),
            )
        })
    }

    pub fn tanh(self) -> Var<'t> {
        let a = self.id;
        self.unary(|x| (x.map(f64::tanh), Op::Tanh(a)))
    }

    pub fn activation(self, kind: Activation) -> Var<'t> {
        match kind {
            Activation::LeakyRelu { slope } => self.leaky_relu(slope),
            Activation::Tanh => self.tanh(),
        }
    }

    /// Per-row `(x − μ)/√max(σ², δ)` with biased variance and no affine
    /// parameters. Rows with `σ² > δ` end up with zero mean and squared norm
    /// equal to the row length; constant rows map to (near) zero.
    pub fn layer_norm(self) -> Result<Var<'t>> {
        let a = self.id;
        let (value, op) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[a].value;
            check_matrix("layer_norm", x)?;
            let d = x.cols();
            if d < 2 {
                return Err(Error::contract("layer_norm needs at least 2 features"));
            }
            let mut out = Vec::with_capacity(x.len());
            let mut inv_std = Vec::with_capacity(x.rows());
            let mut guarded = Vec::with_capacity(x.rows());
            for r in 0..x.rows() {
                let row = x.row(r);
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let s = 1.0 / var.max(LAYER_NORM_EPS).sqrt();
                inv_std.push(s);
                guarded.push(var <= LAYER_NORM_EPS);
                out.extend(row.iter().map(|v| (v - mean) * s));
            }
            (
                Tensor::matrix(x.rows(), d, out),
                Op::LayerNorm {
                    input: a,
                    inv_std,
                    guarded,
                },
            )
        };
        Ok(self.tape.push(value, op))
    }

    /// Mean over the batch of `−log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Result<Var<'t>> {
        let a = self.id;
        let (value, op) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[a].value;
            check_matrix("softmax_cross_entropy", x)?;
            let (n, c) = (x.rows(), x.cols());
            if labels.len() != n {
                return Err(Error::shape(
                    "softmax_cross_entropy",
                    format!("{} labels for {} rows", labels.len(), n),
                ));
            }
            if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
                return Err(Error::Index(format!("label {bad} with {c} classes")));
            }
            let mut probs = Vec::with_capacity(n * c);
            let mut total = 0.0;
            for (r, &y) in labels.iter().enumerate() {
                let row = x.row(r);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                total += z.ln() - (row[y] - max);
                probs.extend(exps.iter().map(|e| e / z));
            }
            let loss = if n == 0 { 0.0 } else { total / n as f64 };
            (
                Tensor::scalar(loss),
                Op::SoftmaxCrossEntropy {
                    logits: a,
                    labels: labels.to_vec(),
                    probs: Tensor::matrix(n, c, probs),
                },
            )
        };
        Ok(self.tape.push(value, op))
    }

    pub fn sum(self) -> Var<'t> {
        let a = self.id;
        self.unary(|x| (Tensor::scalar(x.sum()), Op::Sum(a)))
    }

    pub fn mean(self) -> Var<'t> {
        let a = self.id;
        self.unary(|x| {
            let m = if x.is_empty() { 0.0 } else { x.sum() / x.len() as f64 };
            (Tensor::scalar(m), Op::Mean(a))
        })
    }

    /// Elementwise square root of `max(x, 0)`.
    pub fn sqrt(self) -> Var<'t> {
        let a = self.id;
        self.unary(|x| (x.map(|v| v.max(0.0).sqrt()), Op::Sqrt(a)))
    }

    pub fn recip(self) -> Var<'t> {
        let a = self.id;
        self.unary(|x| (x.map(|v| 1.0 / v), Op::Recip(a)))
    }

    /// Elementwise arccos; inputs are clamped into `[−1, 1]` before evaluation.
    pub fn acos(self) -> Var<'t> {
        let a = self.id;
        self.unary(|x| (x.map(|v| v.clamp(-1.0, 1.0).acos()), Op::Acos(a)))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let a = self.id;
        self.unary(|x| (x.map(|v| v.clamp(lo, hi)), Op::Clamp(a, lo, hi)))
    }

    /// Scales each row to unit Euclidean norm.
    pub fn row_normalize(self) -> Result<Var<'t>> {
        let a = self.id;
        let (value, op) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[a].value;
            check_matrix("row_normalize", x)?;
            let mut out = Vec::with_capacity(x.len());
            let mut norms = Vec::with_capacity(x.rows());
            for r in 0..x.rows() {
                let row = x.row(r);
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                norms.push(norm);
                out.extend(row.iter().map(|v| v / norm));
            }
            (
                Tensor::matrix(x.rows(), x.cols(), out),
                Op::RowNormalize { input: a, norms },
            )
        };
        Ok(self.tape.push(value, op))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let a = self.id;
        let (value, op) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[a].value;
            check_matrix("transpose", x)?;
            (x.transpose(), Op::Transpose(a))
        };
        Ok(self.tape.push(value, op))
    }

    /// Row-pairwise Euclidean distances, `√(‖xᵢ − xⱼ‖² + guard)` off the
    /// diagonal and exactly zero on it.
    pub fn pairwise_distances(self, guard: f64) -> Result<Var<'t>> {
        let a = self.id;
        let (value, op) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[a].value;
            check_matrix("pairwise_distances", x)?;
            (pairwise_distance_matrix(x, guard), Op::PairwiseDistances(a))
        };
        Ok(self.tape.push(value, op))
    }

    /// Double centering of a square matrix (row, column and grand means).
    pub fn double_center(self) -> Result<Var<'t>> {
        let a = self.id;
        let (value, op) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[a].value;
            if x.shape().len() != 2 || x.rows() != x.cols() {
                return Err(Error::shape("double_center", format!("{:?}", x.shape())));
            }
            (double_center(x), Op::DoubleCenter(a))
        };
        Ok(self.tape.push(value, op))
    }
}

pub(crate) fn pairwise_distance_matrix(x: &Tensor, guard: f64) -> Tensor {
    let n = x.rows();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let sq: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            let d = (sq + guard).sqrt();
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    Tensor::matrix(n, n, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small_product() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = tape.leaf(Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap());
        let c = a.matmul(b).unwrap();
        assert_eq!(c.value().data(), &[17.0, 39.0]);
        assert_eq!(c.shape(), vec![2, 1]);
    }

    #[test]
    fn matmul_identity_and_mismatch() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 4.0, 0.0, 3.0]));
        let i = tape.leaf(Tensor::identity(3));
        assert_eq!(a.matmul(i).unwrap().value(), a.value());
        assert!(matches!(i.matmul(a), Err(Error::Shape { .. })));
    }

    #[test]
    fn leaky_relu_and_tanh_values() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 3, vec![-1.0, 0.0, 2.0]));
        assert_eq!(x.leaky_relu(0.01).value().data(), &[-0.01, 0.0, 2.0]);
        let z = tape.leaf(Tensor::scalar(0.0));
        assert_eq!(z.tanh().item(), 0.0);
    }

    #[test]
    fn leaky_relu_derivative_at_zero_is_slope() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 1, vec![0.0]));
        let y = x.leaky_relu(0.1).sum();
        tape.backward(y).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.1]);
    }

    #[test]
    fn layer_norm_two_elements() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 2, vec![1.0, 3.0]));
        let y = x.layer_norm().unwrap().value();
        assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_rejects_single_feature() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 1, vec![1.0, 3.0]));
        assert!(x.layer_norm().is_err());
    }

    #[test]
    fn layer_norm_constant_row_is_near_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 4, vec![2.5; 4]));
        let y = x.layer_norm().unwrap().value();
        assert!(y.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn cross_entropy_uniform_and_stabilized() {
        let tape = Tape::new();
        let l = tape.leaf(Tensor::matrix(1, 2, vec![0.0, 0.0]));
        let ce = l.softmax_cross_entropy(&[0]).unwrap();
        assert!((ce.item() - std::f64::consts::LN_2).abs() < 1e-12);

        let big = tape.leaf(Tensor::matrix(1, 2, vec![1000.0, 0.0]));
        let ce = big.softmax_cross_entropy(&[0]).unwrap();
        assert!(ce.item().is_finite() && ce.item().abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let tape = Tape::new();
        let l = tape.leaf(Tensor::matrix(1, 2, vec![0.0, 0.0]));
        assert!(matches!(l.softmax_cross_entropy(&[2]), Err(Error::Index(_))));
    }

    #[test]
    fn backward_requires_scalar_root() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 2, vec![1.0; 4]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn sum_of_parameter_gives_ones() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::matrix(2, 3, vec![0.3; 6]));
        tape.backward(w.sum()).unwrap();
        assert_eq!(w.grad().unwrap(), Tensor::full(&[2, 3], 1.0));
    }

    #[test]
    fn reused_parameter_sums_path_contributions() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]));
        let y = w.scale(3.0).add(w.scale(-5.0)).unwrap().sum();
        tape.backward(y).unwrap();
        assert_eq!(w.grad().unwrap().data(), &[-2.0, -2.0]);
    }

    #[test]
    fn second_backward_doubles_gradients() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::matrix(1, 3, vec![0.5, -1.5, 2.0]));
        let y = w.mul(w).unwrap().tanh().sum();
        tape.backward(y).unwrap();
        let once = w.grad().unwrap();
        tape.backward(y).unwrap();
        let twice = w.grad().unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
        tape.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn pairwise_distance_diagonal_is_exact_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 2, vec![0.0, 0.0, 3.0, 4.0]));
        let d = x.pairwise_distances(0.0).unwrap().value();
        assert_eq!(d.data(), &[0.0, 5.0, 5.0, 0.0]);
    }
}
