use std::cmp::Ordering;
use std::collections::HashMap;

use super::{EngineError, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Softplus,
    Sin,
    Cos,
    Abs,
    Sqrt,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Sigmoid => "sigmoid",
            UnaryOp::Softplus => "softplus",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Abs => "abs",
            UnaryOp::Sqrt => "sqrt",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Neg => -x,
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => x.ln(),
            UnaryOp::Tanh => x.tanh(),
            UnaryOp::Sigmoid => sigmoid(x),
            UnaryOp::Softplus => softplus(x),
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Abs => x.abs(),
            UnaryOp::Sqrt => x.sqrt(),
        }
    }

    /// d(output)/d(input) given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryOp::Neg => -1.0,
            UnaryOp::Exp => y,
            UnaryOp::Log => 1.0 / x,
            UnaryOp::Tanh => 1.0 - y * y,
            UnaryOp::Sigmoid => y * (1.0 - y),
            UnaryOp::Softplus => sigmoid(x),
            UnaryOp::Sin => x.cos(),
            UnaryOp::Cos => -x.sin(),
            UnaryOp::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryOp::Sqrt => {
                if y > 0.0 {
                    0.5 / y
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary(UnaryOp, usize),
    Binary(BinaryOp, usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Scale(usize, f64),
    Shift(usize),
    Pow(usize, f64),
    Sum(usize),
    Mean(usize),
    SumLast(usize),
    SoftmaxLast(usize),
    LogSoftmaxLast(usize),
    CumsumLast(usize),
    SortLast { input: usize, perm: Vec<usize> },
    GatherLast { input: usize, index: Vec<usize> },
    ScatterLast { input: usize, index: Vec<usize> },
    SelectLast { input: usize, cols: Vec<usize> },
    Concat { inputs: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradients of a scalar loss with respect to every leaf that required grad.
#[derive(Debug, Default)]
pub struct Gradients {
    by_leaf: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.by_leaf.get(&var.0)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

/// Records primitive operations for one reverse-mode sweep.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order. Every node keeps its forward value; nodes whose inputs
/// do not require grad are stored as constants with no backward rule.
#[derive(Debug, Default)]
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

    /// Number of nodes carrying a backward rule.
    pub fn recorded_ops(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .count()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var, EngineError> {
        if !value.is_finite() {
            return Err(EngineError::NonFinite("leaf".into()));
        }
        Ok(self.push(value, requires_grad, Op::Leaf))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var, EngineError> {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Result<Var, EngineError> {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, var: Var) -> Result<&Tensor, EngineError> {
        self.node(var).map(|n| &n.value)
    }

    pub fn shape(&self, var: Var) -> Result<&[usize], EngineError> {
        self.value(var).map(Tensor::shape)
    }

    pub fn requires_grad(&self, var: Var) -> Result<bool, EngineError> {
        self.node(var).map(|n| n.requires_grad)
    }

    fn node(&self, var: Var) -> Result<&Node, EngineError> {
        self.nodes.get(var.0).ok_or(EngineError::UnknownVar(var.0))
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, name: &str, value: Tensor, inputs: &[Var], op: Op) -> Result<Var, EngineError> {
        if !value.is_finite() {
            return Err(EngineError::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, requires_grad, op))
    }

    // ---- elementwise -------------------------------------------------------

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Result<Var, EngineError> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|&v| op.apply(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.record(op.name(), value, &[x], Op::Unary(op, x.0))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var, EngineError> {
        self.unary(UnaryOp::Neg, x)
    }
    pub fn exp(&mut self, x: Var) -> Result<Var, EngineError> {
        self.unary(UnaryOp::Exp, x)
    }
    pub fn log(&mut self, x: Var) -> Result<Var, EngineError> {
        self.unary(UnaryOp::Log, x)
    }
    pub fn tanh(&mut self, x: Var) -> Result<Var, EngineError> {
        self.unary(UnaryOp::Tanh, x)
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var, EngineError> {
        self.unary(UnaryOp::Sigmoid, x)
    }
    pub fn softplus(&mut self, x: Var) -> Result<Var, EngineError> {
        self.unary(UnaryOp::Softplus, x)
    }
    pub fn sin(&mut self, x: Var) -> Result<Var, EngineError> {
        self.unary(UnaryOp::Sin, x)
    }
    pub fn cos(&mut self, x: Var) -> Result<Var, EngineError> {
        self.unary(UnaryOp::Cos, x)
    }
    pub fn abs(&mut self, x: Var) -> Result<Var, EngineError> {
        self.unary(UnaryOp::Abs, x)
    }
    pub fn sqrt(&mut self, x: Var) -> Result<Var, EngineError> {
        self.unary(UnaryOp::Sqrt, x)
    }

    /// Elementwise binary op. Shapes must match, or one shape must be a
    /// proper suffix of the other (broadcast over leading axes only).
    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var, EngineError> {
        let av = &self.node(a)?.value;
        let bv = &self.node(b)?.value;
        let shape = broadcast_shape(av.shape(), bv.shape())?;
        let (ad, bd) = (av.data(), bv.data());
        let data: Vec<f64> = if ad.len() == bd.len() {
            ad.iter().zip(bd).map(|(&x, &y)| op.apply(x, y)).collect()
        } else if ad.len() > bd.len() {
            ad.chunks(bd.len())
                .flat_map(|row| row.iter().zip(bd).map(|(&x, &y)| op.apply(x, y)))
                .collect()
        } else {
            bd.chunks(ad.len())
                .flat_map(|row| ad.iter().zip(row).map(|(&x, &y)| op.apply(x, y)))
                .collect()
        };
        let value = Tensor::new(shape, data)?;
        self.record(op.name(), value, &[a, b], Op::Binary(op, a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        self.binary(BinaryOp::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        self.binary(BinaryOp::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        self.binary(BinaryOp::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        self.binary(BinaryOp::Div, a, b)
    }

    /// `c * x` for a constant `c`.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, EngineError> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|&v| v * c).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.record("scale", value, &[x], Op::Scale(x.0, c))
    }

    /// `x + c` for a constant `c`.
    pub fn shift(&mut self, x: Var, c: f64) -> Result<Var, EngineError> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|&v| v + c).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.record("shift", value, &[x], Op::Shift(x.0))
    }

    pub fn pow(&mut self, x: Var, p: f64) -> Result<Var, EngineError> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|&v| v.powf(p)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.record("pow", value, &[x], Op::Pow(x.0, p))
    }

    pub fn square(&mut self, x: Var) -> Result<Var, EngineError> {
        self.mul(x, x)
    }

    // ---- linear algebra ----------------------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let av = &self.node(a)?.value;
        let bv = &self.node(b)?.value;
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(EngineError::ShapeMismatch(format!(
                "matmul {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), (k, 1), bv.data(), (n, 1), &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        self.record("matmul", value, &[a, b], Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, EngineError> {
        let xv = &self.node(x)?.value;
        if xv.ndim() != 2 {
            return Err(EngineError::ShapeMismatch(format!(
                "transpose needs a matrix, got {:?}",
                xv.shape()
            )));
        }
        let value = transpose2(xv);
        self.record("transpose", value, &[x], Op::Transpose(x.0))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, EngineError> {
        let xv = &self.node(x)?.value;
        let value = xv.clone().reshape(shape.to_vec())?;
        self.record("reshape", value, &[x], Op::Reshape(x.0))
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var, EngineError> {
        let s = self.node(x)?.value.data().iter().sum();
        self.record("sum", Tensor::scalar(s), &[x], Op::Sum(x.0))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, EngineError> {
        let xv = &self.node(x)?.value;
        if xv.numel() == 0 {
            return Err(EngineError::ShapeMismatch("mean of empty tensor".into()));
        }
        let s = xv.data().iter().sum::<f64>() / xv.numel() as f64;
        self.record("mean", Tensor::scalar(s), &[x], Op::Mean(x.0))
    }

    /// Sums the last axis away: `[.., w] -> [..]`.
    pub fn sum_last(&mut self, x: Var) -> Result<Var, EngineError> {
        let xv = &self.node(x)?.value;
        let w = xv.last_dim();
        let data = xv.data().chunks(w.max(1)).map(|r| r.iter().sum()).collect();
        let mut shape = xv.shape().to_vec();
        shape.pop();
        let value = Tensor::new(shape, data)?;
        self.record("sum_last", value, &[x], Op::SumLast(x.0))
    }

    pub fn softmax_last(&mut self, x: Var) -> Result<Var, EngineError> {
        let xv = &self.node(x)?.value;
        let w = xv.last_dim();
        let mut data = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(w) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            let mut z = 0.0;
            for &v in row {
                let e = (v - mx).exp();
                z += e;
                data.push(e);
            }
            for v in &mut data[start..] {
                *v /= z;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.record("softmax_last", value, &[x], Op::SoftmaxLast(x.0))
    }

    pub fn log_softmax_last(&mut self, x: Var) -> Result<Var, EngineError> {
        let xv = &self.node(x)?.value;
        let w = xv.last_dim();
        let mut data = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(w) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|v| v - lse));
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.record("log_softmax_last", value, &[x], Op::LogSoftmaxLast(x.0))
    }

    pub fn cumsum_last(&mut self, x: Var) -> Result<Var, EngineError> {
        let xv = &self.node(x)?.value;
        let w = xv.last_dim();
        let mut data = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(w) {
            let mut acc = 0.0;
            for &v in row {
                acc += v;
                data.push(acc);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.record("cumsum_last", value, &[x], Op::CumsumLast(x.0))
    }

    // ---- index ops ---------------------------------------------------------

    /// Sorts each row ascending. Returns the sorted values and, per row, the
    /// source index of every sorted position.
    pub fn sort_last(&mut self, x: Var) -> Result<(Var, Vec<usize>), EngineError> {
        let xv = &self.node(x)?.value;
        let w = xv.last_dim();
        let mut perm = Vec::with_capacity(xv.numel());
        let mut data = Vec::with_capacity(xv.numel());
        let mut order: Vec<usize> = Vec::with_capacity(w);
        for row in xv.data().chunks(w) {
            order.clear();
            order.extend(0..w);
            order.sort_by(|&i, &j| row[i].partial_cmp(&row[j]).unwrap_or(Ordering::Equal));
            perm.extend_from_slice(&order);
            data.extend(order.iter().map(|&i| row[i]));
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let var = self.record(
            "sort_last",
            value,
            &[x],
            Op::SortLast {
                input: x.0,
                perm: perm.clone(),
            },
        )?;
        Ok((var, perm))
    }

    /// `out[i] = x[i, index[i]]` for `x` viewed as `[rows, w]`.
    pub fn gather_last(&mut self, x: Var, index: &[usize]) -> Result<Var, EngineError> {
        let xv = &self.node(x)?.value;
        let w = xv.last_dim();
        if index.len() != xv.rows() || index.iter().any(|&k| k >= w) {
            return Err(EngineError::ShapeMismatch(format!(
                "gather_last: {} indices into {:?}",
                index.len(),
                xv.shape()
            )));
        }
        let data = index
            .iter()
            .enumerate()
            .map(|(i, &k)| xv.data()[i * w + k])
            .collect();
        let mut shape = xv.shape().to_vec();
        shape.pop();
        let value = Tensor::new(shape, data)?;
        self.record(
            "gather_last",
            value,
            &[x],
            Op::GatherLast {
                input: x.0,
                index: index.to_vec(),
            },
        )
    }

    /// Inverse of [`Tape::gather_last`]: places `x[i]` at column `index[i]`
    /// of a zero `[.., width]` tensor.
    pub fn scatter_last(&mut self, x: Var, index: &[usize], width: usize) -> Result<Var, EngineError> {
        let xv = &self.node(x)?.value;
        if index.len() != xv.numel() || index.iter().any(|&k| k >= width) {
            return Err(EngineError::ShapeMismatch(format!(
                "scatter_last: {} indices for {:?} into width {}",
                index.len(),
                xv.shape(),
                width
            )));
        }
        let mut data = vec![0.0; xv.numel() * width];
        for (i, (&k, &v)) in index.iter().zip(xv.data()).enumerate() {
            data[i * width + k] = v;
        }
        let mut shape = xv.shape().to_vec();
        shape.push(width);
        let value = Tensor::new(shape, data)?;
        self.record(
            "scatter_last",
            value,
            &[x],
            Op::ScatterLast {
                input: x.0,
                index: index.to_vec(),
            },
        )
    }

    /// Selects (and possibly repeats or reorders) columns of the last axis.
    pub fn select_last(&mut self, x: Var, cols: &[usize]) -> Result<Var, EngineError> {
        let xv = &self.node(x)?.value;
        let w = xv.last_dim();
        if xv.ndim() == 0 || cols.iter().any(|&c| c >= w) {
            return Err(EngineError::ShapeMismatch(format!(
                "select_last: columns {:?} of {:?}",
                cols,
                xv.shape()
            )));
        }
        let mut data = Vec::with_capacity(xv.rows() * cols.len());
        for row in xv.data().chunks(w) {
            data.extend(cols.iter().map(|&c| row[c]));
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("ndim checked") = cols.len();
        let value = Tensor::new(shape, data)?;
        self.record(
            "select_last",
            value,
            &[x],
            Op::SelectLast {
                input: x.0,
                cols: cols.to_vec(),
            },
        )
    }

    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var, EngineError> {
        let cols: Vec<usize> = (start..end).collect();
        self.select_last(x, &cols)
    }

    /// Splits the last axis into consecutive pieces of the given widths.
    pub fn split_last(&mut self, x: Var, widths: &[usize]) -> Result<Vec<Var>, EngineError> {
        let total: usize = widths.iter().sum();
        if total != self.value(x)?.last_dim() {
            return Err(EngineError::ShapeMismatch(format!(
                "split_last: widths {:?} do not cover {:?}",
                widths,
                self.shape(x)?
            )));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(widths.len());
        for &w in widths {
            out.push(self.slice_last(x, start, start + w)?);
            start += w;
        }
        Ok(out)
    }

    /// Concatenates along the last axis; leading shapes must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var, EngineError> {
        let first = xs
            .first()
            .ok_or_else(|| EngineError::ShapeMismatch("concat of nothing".into()))?;
        let lead = {
            let s = self.shape(*first)?;
            s[..s.len().saturating_sub(1)].to_vec()
        };
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x)?;
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(EngineError::ShapeMismatch(format!(
                    "concat_last: {:?} vs leading {:?}",
                    s, lead
                )));
            }
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                let d = self.nodes[x.0].value.data();
                data.extend_from_slice(&d[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        self.record(
            "concat_last",
            value,
            xs,
            Op::Concat {
                inputs: xs.iter().map(|v| v.0).collect(),
            },
        )
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar `loss`. Returns the gradient of every leaf
    /// that requires grad (zeros for leaves the loss does not reach) and
    /// clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, EngineError> {
        let node = self.node(loss)?;
        if node.value.numel() != 1 || node.value.ndim() > 1 {
            return Err(EngineError::NonScalarLoss(node.value.shape().to_vec()));
        }
        if !node.requires_grad {
            return Err(EngineError::Detached);
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = HashMap::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = node.value.data();
            match &node.op {
                Op::Leaf => {
                    if node.requires_grad {
                        leaf_grads.insert(i, g);
                    }
                }
                Op::Unary(op, x) => {
                    if self.nodes[*x].requires_grad {
                        let xv = self.nodes[*x].value.data();
                        let mut g = g;
                        for k in 0..g.len() {
                            g[k] *= op.derivative(xv[k], y[k]);
                        }
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Binary(op, a, b) => {
                    let av = self.nodes[*a].value.data();
                    let bv = self.nodes[*b].value.data();
                    let (la, lb) = (av.len(), bv.len());
                    if la == g.len() && lb == g.len() {
                        binary_backward_same(*op, &g, av, bv, &mut grads, &self.nodes, *a, *b);
                        continue;
                    }
                    if let Some(ga) = slot(&mut grads, &self.nodes, *a) {
                        for k in 0..g.len() {
                            let w = bv[k % lb];
                            ga[k % la] += match op {
                                BinaryOp::Add | BinaryOp::Sub => g[k],
                                BinaryOp::Mul => g[k] * w,
                                BinaryOp::Div => g[k] / w,
                            };
                        }
                    }
                    if let Some(gb) = slot(&mut grads, &self.nodes, *b) {
                        for k in 0..g.len() {
                            let (x, w) = (av[k % la], bv[k % lb]);
                            gb[k % lb] += match op {
                                BinaryOp::Add => g[k],
                                BinaryOp::Sub => -g[k],
                                BinaryOp::Mul => g[k] * x,
                                BinaryOp::Div => -g[k] * x / (w * w),
                            };
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = {
                        let s = self.nodes[*a].value.shape();
                        (s[0], s[1])
                    };
                    let n = self.nodes[*b].value.shape()[1];
                    let av = self.nodes[*a].value.data();
                    let bv = self.nodes[*b].value.data();
                    if let Some(ga) = slot(&mut grads, &self.nodes, *a) {
                        // dA = G B^T
                        gemm(m, n, k, &g, (n, 1), bv, (1, n), ga);
                    }
                    if let Some(gb) = slot(&mut grads, &self.nodes, *b) {
                        // dB = A^T G
                        gemm(k, m, n, av, (1, k), &g, (n, 1), gb);
                    }
                }
                Op::Transpose(x) => {
                    let s = node.value.shape();
                    let gt = transpose2(&Tensor::new(s.to_vec(), g).expect("grad shape"));
                    if let Some(gx) = slot(&mut grads, &self.nodes, *x) {
                        add_into(gx, gt.data());
                    }
                }
                Op::Reshape(x) | Op::Shift(x) => {
                    if self.nodes[*x].requires_grad {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Scale(x, c) => {
                    if let Some(gx) = slot(&mut grads, &self.nodes, *x) {
                        for (o, v) in gx.iter_mut().zip(&g) {
                            *o += c * v;
                        }
                    }
                }
                Op::Pow(x, p) => {
                    let xv = self.nodes[*x].value.data();
                    if let Some(gx) = slot(&mut grads, &self.nodes, *x) {
                        for k in 0..g.len() {
                            let d = if xv[k] == 0.0 && *p < 1.0 {
                                0.0
                            } else {
                                p * xv[k].powf(p - 1.0)
                            };
                            gx[k] += g[k] * d;
                        }
                    }
                }
                Op::Sum(x) => {
                    if let Some(gx) = slot(&mut grads, &self.nodes, *x) {
                        gx.iter_mut().for_each(|v| *v += g[0]);
                    }
                }
                Op::Mean(x) => {
                    if let Some(gx) = slot(&mut grads, &self.nodes, *x) {
                        let s = g[0] / gx.len() as f64;
                        gx.iter_mut().for_each(|v| *v += s);
                    }
                }
                Op::SumLast(x) => {
                    let w = self.nodes[*x].value.last_dim();
                    if let Some(gx) = slot(&mut grads, &self.nodes, *x) {
                        for (r, row) in gx.chunks_mut(w).enumerate() {
                            row.iter_mut().for_each(|v| *v += g[r]);
                        }
                    }
                }
                Op::SoftmaxLast(x) => {
                    let w = node.value.last_dim();
                    if let Some(gx) = slot(&mut grads, &self.nodes, *x) {
                        for ((gr, yr), gxr) in g.chunks(w).zip(y.chunks(w)).zip(gx.chunks_mut(w)) {
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for j in 0..w {
                                gxr[j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    }
                }
                Op::LogSoftmaxLast(x) => {
                    let w = node.value.last_dim();
                    if let Some(gx) = slot(&mut grads, &self.nodes, *x) {
                        for ((gr, yr), gxr) in g.chunks(w).zip(y.chunks(w)).zip(gx.chunks_mut(w)) {
                            let total: f64 = gr.iter().sum();
                            for j in 0..w {
                                gxr[j] += gr[j] - yr[j].exp() * total;
                            }
                        }
                    }
                }
                Op::CumsumLast(x) => {
                    let w = node.value.last_dim();
                    if let Some(gx) = slot(&mut grads, &self.nodes, *x) {
                        for (gr, gxr) in g.chunks(w).zip(gx.chunks_mut(w)) {
                            let mut acc = 0.0;
                            for j in (0..w).rev() {
                                acc += gr[j];
                                gxr[j] += acc;
                            }
                        }
                    }
                }
                Op::SortLast { input, perm } => {
                    let w = node.value.last_dim();
                    if let Some(gx) = slot(&mut grads, &self.nodes, *input) {
                        for (k, &src) in perm.iter().enumerate() {
                            let r = k / w;
                            gx[r * w + src] += g[k];
                        }
                    }
                }
                Op::GatherLast { input, index } => {
                    let w = self.nodes[*input].value.last_dim();
                    if let Some(gx) = slot(&mut grads, &self.nodes, *input) {
                        for (r, &c) in index.iter().enumerate() {
                            gx[r * w + c] += g[r];
                        }
                    }
                }
                Op::ScatterLast { input, index } => {
                    let w = node.value.last_dim();
                    if let Some(gx) = slot(&mut grads, &self.nodes, *input) {
                        for (r, &c) in index.iter().enumerate() {
                            gx[r] += g[r * w + c];
                        }
                    }
                }
                Op::SelectLast { input, cols } => {
                    let w = self.nodes[*input].value.last_dim();
                    let wo = cols.len();
                    if let Some(gx) = slot(&mut grads, &self.nodes, *input) {
                        for (r, gr) in g.chunks(wo.max(1)).enumerate() {
                            for (j, &c) in cols.iter().enumerate() {
                                gx[r * w + c] += gr[j];
                            }
                        }
                    }
                }
                Op::Concat { inputs } => {
                    let total = node.value.last_dim();
                    let rows = node.value.rows();
                    let mut offset = 0;
                    for &x in inputs {
                        let w = self.nodes[x].value.last_dim();
                        if let Some(gx) = slot(&mut grads, &self.nodes, x) {
                            for r in 0..rows {
                                let src = &g[r * total + offset..r * total + offset + w];
                                add_into(&mut gx[r * w..(r + 1) * w], src);
                            }
                        }
                        offset += w;
                    }
                }
            }
        }

        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let data = leaf_grads
                    .remove(&i)
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                let t = Tensor::new(node.value.shape().to_vec(), data)?;
                out.by_leaf.insert(i, t);
            }
        }
        self.nodes.clear();
        Ok(out)
    }
}

/// Gradient accumulator for node `idx`, created on first use. `None` when the
/// node does not require grad.
fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], idx: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[idx].requires_grad {
        return None;
    }
    Some(grads[idx].get_or_insert_with(|| vec![0.0; nodes[idx].value.numel()]))
}

/// Adds `g` into the gradient slot of `idx`, taking ownership when the slot is empty.
fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, g: Vec<f64>) {
    match &mut grads[idx] {
        Some(gx) => add_into(gx, &g),
        empty => *empty = Some(g),
    }
}

#[allow(clippy::too_many_arguments)]
fn binary_backward_same(
    op: BinaryOp,
    g: &[f64],
    av: &[f64],
    bv: &[f64],
    grads: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    a: usize,
    b: usize,
) {
    if nodes[a].requires_grad {
        let ga: Vec<f64> = match op {
            BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
            BinaryOp::Mul => g.iter().zip(bv).map(|(g, w)| g * w).collect(),
            BinaryOp::Div => g.iter().zip(bv).map(|(g, w)| g / w).collect(),
        };
        accumulate(grads, a, ga);
    }
    if nodes[b].requires_grad {
        let gb: Vec<f64> = match op {
            BinaryOp::Add => g.to_vec(),
            BinaryOp::Sub => g.iter().map(|g| -g).collect(),
            BinaryOp::Mul => g.iter().zip(av).map(|(g, x)| g * x).collect(),
            BinaryOp::Div => g
                .iter()
                .zip(av)
                .zip(bv)
                .map(|((g, x), w)| -g * x / (w * w))
                .collect(),
        };
        accumulate(grads, b, gb);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>, EngineError> {
    if a == b {
        Ok(a.to_vec())
    } else if b.len() < a.len() && a[a.len() - b.len()..] == *b {
        Ok(a.to_vec())
    } else if a.len() < b.len() && b[b.len() - a.len()..] == *a {
        Ok(b.to_vec())
    } else {
        Err(EngineError::ShapeMismatch(format!(
            "cannot broadcast {:?} with {:?}",
            a, b
        )))
    }
}

fn transpose2(x: &Tensor) -> Tensor {
    let (r, c) = (x.shape()[0], x.shape()[1]);
    let src = x.data();
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = src[i * c + j];
        }
    }
    Tensor::new(vec![c, r], data).expect("transpose shape")
}

/// `out[m, n] += A[m, k] * B[k, n]` with explicit (row, col) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    out: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    debug_assert!(out.len() >= m * n);
    // SAFETY: the slices cover every element addressed by the given
    // dimensions and strides, and `out` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
