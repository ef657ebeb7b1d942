//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Tape`] records one forward computation as a list of nodes; `backward`
//! walks it once in reverse and accumulates gradients. Graphs are rebuilt per
//! step (define-by-run), so control flow in model code is plain Rust.
//!
//! Gradient conventions at non-smooth points: `abs` and `relu` use the zero
//! subgradient at 0, `min`/`max` route the gradient to the left operand on
//! ties. Finite-difference checks avoid those sets.

use super::tensor::{broadcast_zip, reduce_to_shape, Tensor};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Min(Var, Var),
    Max(Var, Var),
    Neg(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Abs(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Scale(Var, f64),
    AddConst(Var),
    MatMul(Var, Var),
    Transpose(Var),
    SumAll(Var),
    MeanAll(Var),
    /// Sum over columns, per row: `[r, c] -> [r, 1]`.
    SumRowwise(Var),
    /// Sum over rows, per column: `[r, c] -> [1, c]`.
    SumColwise(Var),
    MeanColwise(Var),
    SoftmaxRows(Var),
    LogSumExpRows(Var),
    LayerNormRows(Var, f64),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    /// Per row i, pick column `cols[i]`: `[r, c] -> [r, 1]`.
    SelectPerRow(Var, Vec<usize>),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        debug_assert!(value.is_finite() || matches!(op, Op::Leaf), "non-finite tape value");
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x / y);
        self.push(Op::Div(a, b), v)
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_zip(self.value(a), self.value(b), f64::min);
        self.push(Op::Min(a, b), v)
    }

    pub fn max(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_zip(self.value(a), self.value(b), f64::max);
        self.push(Op::Max(a, b), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push(Op::Neg(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Ln(a), v)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(Op::Sqrt(a), v)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(Op::Softplus(a), v)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(Op::Scale(a, s), v)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddConst(a), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), v)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(Op::MeanAll(a), v)
    }

    pub fn sum_rowwise(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::from_fn(t.rows, 1, |i, _| t.row_slice(i).iter().sum());
        self.push(Op::SumRowwise(a), v)
    }

    pub fn sum_colwise(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut v = Tensor::zeros(1, t.cols);
        for i in 0..t.rows {
            for j in 0..t.cols {
                v.data[j] += t.get(i, j);
            }
        }
        self.push(Op::SumColwise(a), v)
    }

    pub fn mean_colwise(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let rows = t.rows as f64;
        let mut v = Tensor::zeros(1, t.cols);
        for i in 0..t.rows {
            for j in 0..t.cols {
                v.data[j] += t.get(i, j);
            }
        }
        for x in v.data.iter_mut() {
            *x /= rows;
        }
        self.push(Op::MeanColwise(a), v)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut v = Tensor::zeros(t.rows, t.cols);
        for i in 0..t.rows {
            let row = t.row_slice(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - m).exp();
                v.data[i * t.cols + j] = e;
                z += e;
            }
            for j in 0..t.cols {
                v.data[i * t.cols + j] /= z;
            }
        }
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::from_fn(t.rows, 1, |i, _| {
            let row = t.row_slice(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
        });
        self.push(Op::LogSumExpRows(a), v)
    }

    /// Normalize each row to zero mean, unit variance. Affine scale/shift are
    /// applied by the caller with separate parameters.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let mut v = Tensor::zeros(t.rows, t.cols);
        for i in 0..t.rows {
            let row = t.row_slice(i);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..t.cols {
                v.data[i * t.cols + j] = (row[j] - mean) * inv;
            }
        }
        self.push(Op::LayerNormRows(a, eps), v)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols;
        let rows: usize = parts.iter().map(|&p| self.value(p).rows).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows column mismatch");
            v.data[at * cols..(at + t.rows) * cols].copy_from_slice(&t.data);
            at += t.rows;
        }
        self.push(Op::ConcatRows(parts.to_vec()), v)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows, rows, "concat_cols row mismatch");
            for i in 0..rows {
                v.data[i * cols + at..i * cols + at + t.cols].copy_from_slice(t.row_slice(i));
            }
            at += t.cols;
        }
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.rows);
        let v = Tensor::from_vec(len, t.cols, t.data[start * t.cols..(start + len) * t.cols].to_vec());
        self.push(Op::SliceRows(a, start, len), v)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.cols);
        let v = Tensor::from_fn(t.rows, len, |i, j| t.get(i, start + j));
        self.push(Op::SliceCols(a, start, len), v)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let t = self.value(a);
        let mut v = Tensor::zeros(idx.len(), t.cols);
        for (k, &i) in idx.iter().enumerate() {
            assert!(i < t.rows, "gather_rows index out of range");
            v.row_slice_mut(k).copy_from_slice(t.row_slice(i));
        }
        self.push(Op::GatherRows(a, idx.to_vec()), v)
    }

    pub fn select_per_row(&mut self, a: Var, cols: &[usize]) -> Var {
        let t = self.value(a);
        assert_eq!(cols.len(), t.rows, "select_per_row needs one column per row");
        let v = Tensor::from_fn(t.rows, 1, |i, _| t.get(i, cols[i]));
        self.push(Op::SelectPerRow(a, cols.to_vec()), v)
    }

    /// Gradients of scalar node `loss` with respect to every node.
    /// Entries are `None` for nodes the loss does not depend on.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward requires a scalar loss"
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            self.accumulate(id, &grad, &mut grads);
            grads[id] = Some(grad);
        }
        Gradients { grads }
    }

    fn accumulate(&self, id: usize, grad: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_to = |grads: &mut [Option<Tensor>], v: Var, g: Tensor| {
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(grads, *a, reduce_to_shape(grad, self.value(*a).shape()));
                add_to(grads, *b, reduce_to_shape(grad, self.value(*b).shape()));
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, reduce_to_shape(grad, self.value(*a).shape()));
                let gb = grad.map(|x| -x);
                add_to(grads, *b, reduce_to_shape(&gb, self.value(*b).shape()));
            }
            Op::Mul(a, b) => {
                let ga = broadcast_zip(grad, self.value(*b), |g, y| g * y);
                let gb = broadcast_zip(grad, self.value(*a), |g, x| g * x);
                add_to(grads, *a, reduce_to_shape(&ga, self.value(*a).shape()));
                add_to(grads, *b, reduce_to_shape(&gb, self.value(*b).shape()));
            }
            Op::Div(a, b) => {
                let ga = broadcast_zip(grad, self.value(*b), |g, y| g / y);
                let out = &self.nodes[id].value;
                // d(a/b)/db = -a/b^2 = -out/b
                let gb_full = broadcast_zip(out, self.value(*b), |o, y| -o / y);
                let gb = broadcast_zip(grad, &gb_full, |g, d| g * d);
                add_to(grads, *a, reduce_to_shape(&ga, self.value(*a).shape()));
                add_to(grads, *b, reduce_to_shape(&gb, self.value(*b).shape()));
            }
            Op::Min(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let pick_a = broadcast_zip(ta, tb, |x, y| if x <= y { 1.0 } else { 0.0 });
                let ga = broadcast_zip(grad, &pick_a, |g, p| g * p);
                let gb = broadcast_zip(grad, &pick_a, |g, p| g * (1.0 - p));
                add_to(grads, *a, reduce_to_shape(&ga, ta.shape()));
                add_to(grads, *b, reduce_to_shape(&gb, tb.shape()));
            }
            Op::Max(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let pick_a = broadcast_zip(ta, tb, |x, y| if x >= y { 1.0 } else { 0.0 });
                let ga = broadcast_zip(grad, &pick_a, |g, p| g * p);
                let gb = broadcast_zip(grad, &pick_a, |g, p| g * (1.0 - p));
                add_to(grads, *a, reduce_to_shape(&ga, ta.shape()));
                add_to(grads, *b, reduce_to_shape(&gb, tb.shape()));
            }
            Op::Neg(a) => add_to(grads, *a, grad.map(|x| -x)),
            Op::Exp(a) => {
                let out = &self.nodes[id].value;
                add_to(grads, *a, broadcast_zip(grad, out, |g, o| g * o));
            }
            Op::Ln(a) => {
                let ga = broadcast_zip(grad, self.value(*a), |g, x| g / x);
                add_to(grads, *a, ga);
            }
            Op::Sqrt(a) => {
                let out = &self.nodes[id].value;
                add_to(grads, *a, broadcast_zip(grad, out, |g, o| g / (2.0 * o)));
            }
            Op::Abs(a) => {
                let ga = broadcast_zip(grad, self.value(*a), |g, x| g * sign0(x));
                add_to(grads, *a, ga);
            }
            Op::Relu(a) => {
                let ga = broadcast_zip(grad, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                add_to(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let out = &self.nodes[id].value;
                add_to(grads, *a, broadcast_zip(grad, out, |g, o| g * o * (1.0 - o)));
            }
            Op::Softplus(a) => {
                let ga = broadcast_zip(grad, self.value(*a), |g, x| g * sigmoid(x));
                add_to(grads, *a, ga);
            }
            Op::Scale(a, s) => add_to(grads, *a, grad.scale(*s)),
            Op::AddConst(a) => add_to(grads, *a, grad.clone()),
            Op::MatMul(a, b) => {
                let ga = grad.matmul(&self.value(*b).transpose());
                let gb = self.value(*a).transpose().matmul(grad);
                add_to(grads, *a, ga);
                add_to(grads, *b, gb);
            }
            Op::Transpose(a) => add_to(grads, *a, grad.transpose()),
            Op::SumAll(a) => {
                let t = self.value(*a);
                add_to(grads, *a, Tensor::full(t.rows, t.cols, grad.item()));
            }
            Op::MeanAll(a) => {
                let t = self.value(*a);
                let g = grad.item() / t.len() as f64;
                add_to(grads, *a, Tensor::full(t.rows, t.cols, g));
            }
            Op::SumRowwise(a) => {
                let t = self.value(*a);
                let ga = Tensor::from_fn(t.rows, t.cols, |i, _| grad.get(i, 0));
                add_to(grads, *a, ga);
            }
            Op::SumColwise(a) => {
                let t = self.value(*a);
                let ga = Tensor::from_fn(t.rows, t.cols, |_, j| grad.get(0, j));
                add_to(grads, *a, ga);
            }
            Op::MeanColwise(a) => {
                let t = self.value(*a);
                let rows = t.rows as f64;
                let ga = Tensor::from_fn(t.rows, t.cols, |_, j| grad.get(0, j) / rows);
                add_to(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[id].value;
                let mut ga = Tensor::zeros(y.rows, y.cols);
                for i in 0..y.rows {
                    let yi = y.row_slice(i);
                    let gi = grad.row_slice(i);
                    let dot: f64 = yi.iter().zip(gi.iter()).map(|(&a, &b)| a * b).sum();
                    for j in 0..y.cols {
                        ga.data[i * y.cols + j] = yi[j] * (gi[j] - dot);
                    }
                }
                add_to(grads, *a, ga);
            }
            Op::LogSumExpRows(a) => {
                let t = self.value(*a);
                let mut ga = Tensor::zeros(t.rows, t.cols);
                for i in 0..t.rows {
                    let row = t.row_slice(i);
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|&x| (x - m).exp()).sum();
                    let g = grad.get(i, 0);
                    for j in 0..t.cols {
                        ga.data[i * t.cols + j] = g * (row[j] - m).exp() / z;
                    }
                }
                add_to(grads, *a, ga);
            }
            Op::LayerNormRows(a, eps) => {
                let t = self.value(*a);
                let y = &self.nodes[id].value;
                let n = t.cols as f64;
                let mut ga = Tensor::zeros(t.rows, t.cols);
                for i in 0..t.rows {
                    let row = t.row_slice(i);
                    let mean = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let yi = y.row_slice(i);
                    let gi = grad.row_slice(i);
                    let g_mean = gi.iter().sum::<f64>() / n;
                    let gy_mean: f64 =
                        gi.iter().zip(yi.iter()).map(|(&g, &yy)| g * yy).sum::<f64>() / n;
                    for j in 0..t.cols {
                        ga.data[i * t.cols + j] = inv * (gi[j] - g_mean - yi[j] * gy_mean);
                    }
                }
                add_to(grads, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for &p in parts {
                    let t = self.value(p);
                    let gp = Tensor::from_vec(
                        t.rows,
                        t.cols,
                        grad.data[at * t.cols..(at + t.rows) * t.cols].to_vec(),
                    );
                    add_to(grads, p, gp);
                    at += t.rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let t = self.value(p);
                    let gp = Tensor::from_fn(t.rows, t.cols, |i, j| grad.get(i, at + j));
                    add_to(grads, p, gp);
                    at += t.cols;
                }
            }
            Op::SliceRows(a, start, len) => {
                let t = self.value(*a);
                let mut ga = Tensor::zeros(t.rows, t.cols);
                ga.data[start * t.cols..(start + len) * t.cols].copy_from_slice(&grad.data);
                add_to(grads, *a, ga);
            }
            Op::SliceCols(a, start, len) => {
                let t = self.value(*a);
                let mut ga = Tensor::zeros(t.rows, t.cols);
                for i in 0..t.rows {
                    for j in 0..*len {
                        ga.set(i, start + j, grad.get(i, j));
                    }
                }
                add_to(grads, *a, ga);
            }
            Op::GatherRows(a, idx) => {
                let t = self.value(*a);
                let mut ga = Tensor::zeros(t.rows, t.cols);
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..t.cols {
                        ga.data[i * t.cols + j] += grad.get(k, j);
                    }
                }
                add_to(grads, *a, ga);
            }
            Op::SelectPerRow(a, cols) => {
                let t = self.value(*a);
                let mut ga = Tensor::zeros(t.rows, t.cols);
                for (i, &j) in cols.iter().enumerate() {
                    ga.set(i, j, grad.get(i, 0));
                }
                add_to(grads, *a, ga);
            }
        }
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, zeros if the loss does not depend on it.
    pub fn get(&self, tape: &Tape, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let t = tape.value(v);
                Tensor::zeros(t.rows, t.cols)
            }
        }
    }

    pub fn get_opt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        (1.0 + x.exp()).ln()
    }
}

#[inline]
fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_of(build: impl Fn(&mut Tape, Var) -> Var, x0: Tensor) -> (Tensor, Tensor) {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let loss = build(&mut tape, x);
        let grads = tape.backward(loss);
        (grads.get(&tape, x), x0)
    }

    fn numeric_grad(build: impl Fn(&mut Tape, Var) -> Var, x0: &Tensor, eps: f64) -> Tensor {
        let mut g = Tensor::zeros(x0.rows, x0.cols);
        for i in 0..x0.len() {
            let mut plus = x0.clone();
            plus.data[i] += eps;
            let mut minus = x0.clone();
            minus.data[i] -= eps;
            let f = |t: Tensor| {
                let mut tape = Tape::new();
                let x = tape.leaf(t);
                let l = build(&mut tape, x);
                tape.value(l).item()
            };
            g.data[i] = (f(plus) - f(minus)) / (2.0 * eps);
        }
        g
    }

    fn check(build: impl Fn(&mut Tape, Var) -> Var + Copy, x0: Tensor) {
        let (analytic, x0) = grad_of(build, x0);
        let numeric = numeric_grad(build, &x0, 1e-6);
        for i in 0..x0.len() {
            let (a, n) = (analytic.data[i], numeric.data[i]);
            let denom = a.abs().max(n.abs()).max(1.0);
            assert!(
                (a - n).abs() / denom < 1e-6,
                "grad mismatch at {i}: analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn elementwise_chain() {
        let x0 = Tensor::from_vec(2, 3, vec![0.5, -1.2, 2.0, 0.1, -0.4, 1.3]);
        check(
            |t, x| {
                let s = t.sigmoid(x);
                let e = t.exp(s);
                let m = t.mul(e, x);
                t.sum_all(m)
            },
            x0,
        );
    }

    #[test]
    fn matmul_and_softmax() {
        let x0 = Tensor::from_vec(2, 2, vec![0.3, -0.7, 1.1, 0.2]);
        check(
            |t, x| {
                let w = t.constant(Tensor::from_vec(2, 2, vec![0.5, -0.25, 0.75, 1.5]));
                let y = t.matmul(x, w);
                let s = t.softmax_rows(y);
                let l = t.ln(s);
                let m = t.mul(s, l);
                let neg = t.neg(m);
                t.sum_all(neg)
            },
            x0,
        );
    }

    #[test]
    fn layer_norm_grad() {
        let x0 = Tensor::from_vec(2, 4, vec![0.5, -1.0, 2.0, 0.3, -0.2, 0.9, 1.4, -2.2]);
        check(
            |t, x| {
                let y = t.layer_norm_rows(x, 1e-5);
                let w = t.constant(Tensor::from_vec(2, 4, vec![1.0, 2.0, 3.0, 4.0, 0.5, 0.25, -1.0, 1.5]));
                let m = t.mul(y, w);
                let s = t.sigmoid(m);
                t.sum_all(s)
            },
            x0,
        );
    }

    #[test]
    fn broadcast_ops_grad() {
        let x0 = Tensor::from_vec(1, 3, vec![0.4, -0.8, 1.6]);
        check(
            |t, x| {
                let m = t.constant(Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.25]));
                let s = t.add(m, x);
                let d = t.div(s, x);
                let a = t.abs(d);
                t.mean_all(a)
            },
            x0,
        );
    }

    #[test]
    fn slicing_and_concat_grad() {
        let x0 = Tensor::from_vec(3, 4, vec![
            0.5, -1.0, 2.0, 0.3, -0.2, 0.9, 1.4, -2.2, 0.8, 0.1, -0.6, 1.9,
        ]);
        check(
            |t, x| {
                let a = t.slice_rows(x, 0, 2);
                let b = t.slice_rows(x, 1, 2);
                let c = t.concat_cols(&[a, b]);
                let g = t.gather_rows(c, &[1, 0, 1]);
                let sel = t.select_per_row(g, &[0, 3, 5]);
                let sq = t.square(sel);
                t.sum_all(sq)
            },
            x0,
        );
    }

    #[test]
    fn logsumexp_and_select() {
        let x0 = Tensor::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.1, -1.1]);
        check(
            |t, x| {
                let lse = t.logsumexp_rows(x);
                let picked = t.select_per_row(x, &[0, 2]);
                let ce = t.sub(lse, picked);
                t.sum_all(ce)
            },
            x0,
        );
    }

    #[test]
    fn minmax_sqrt_softplus() {
        let x0 = Tensor::from_vec(2, 2, vec![0.7, 1.9, 0.25, 3.0]);
        check(
            |t, x| {
                let c = t.constant(Tensor::from_vec(2, 2, vec![1.0, 1.5, 0.5, 2.5]));
                let mn = t.min(x, c);
                let mx = t.max(x, c);
                let r = t.sqrt(mn);
                let sp = t.softplus(mx);
                let s = t.add(r, sp);
                t.sum_all(s)
            },
            x0,
        );
    }

    #[test]
    fn reused_node_accumulates() {
        // x used twice: d/dx (x*x + 3x) = 2x + 3
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let sq = tape.mul(x, x);
        let tri = tape.scale(x, 3.0);
        let sum = tape.add(sq, tri);
        let grads = tape.backward(sum);
        assert!((grads.get(&tape, x).item() - 7.0).abs() < 1e-12);
    }
}
