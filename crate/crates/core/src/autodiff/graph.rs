use std::sync::atomic::{AtomicU32, Ordering};

use super::{Tensor, TensorError};
use crate::exec::{self, Exec};

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;

static NEXT_GRAPH_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node of one particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    graph: u32,
    index: u32,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    LeakyRelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Clamp(Var, f64, f64),
    PairwiseSqDist(Var, Var),
    AddRow(Var, Var),
    StackRows(Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A computation recorded as it is evaluated.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order. [`Graph::backward`] may run once; a second call is
/// rejected rather than accumulating twice.
pub struct Graph {
    id: u32,
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Vec<f64>>>>,
    exec: Exec,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::with_exec(exec::mode())
    }

    pub fn with_exec(exec: Exec) -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: None,
            exec,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Registers a constant leaf; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Copies the current value of `v` into a new constant leaf.
    pub fn detach(&mut self, v: Var) -> Result<Var, TensorError> {
        let t = self.node(v)?.value.clone();
        Ok(self.constant(t))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.graph, self.id, "variable belongs to a different graph");
        &self.nodes[v.index as usize].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index as usize].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let index = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self.id,
            index,
        }
    }

    fn node(&self, v: Var) -> Result<&Node, TensorError> {
        if v.graph != self.id {
            return Err(TensorError::ForeignVar);
        }
        Ok(&self.nodes[v.index as usize])
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index as usize].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        if x.shape() != y.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, TensorError> {
        self.same_shape(name, a, b)?;
        let x = &self.nodes[a.index as usize].value;
        let y = &self.nodes[b.index as usize].value;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, TensorError> {
        let out = self.node(a)?.value.map(f);
        let rg = self.rg(&[a]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, Op::Sub(a, b), |p, q| p - q)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, Op::Mul(a, b), |p, q| p * q)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        };
        if x.shape().len() != 2 || y.shape().len() != 2 {
            return Err(mismatch());
        }
        let (m, k) = (x.shape()[0], x.shape()[1]);
        let (k2, n) = (y.shape()[0], y.shape()[1]);
        if k != k2 {
            return Err(mismatch());
        }
        let data = exec::matmul(self.exec, x.data(), y.data(), m, k, n);
        let out = Tensor::matrix(m, n, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        if let Some(&bad) = self.node(a)?.value.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(TensorError::NonPositiveLog(bad));
        }
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn leaky_relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Op::LeakyRelu(a), |x| if x > 0.0 { x } else { LEAKY_SLOPE * x })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, TensorError> {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.node(a)?.value.data().iter().sum();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = &self.node(a)?.value;
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), rg))
    }

    /// `out[i][j] = Σ_l (a[i][l] − b[j][l])²` for `a: m×L`, `b: n×L`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        let (m, l) = match x.shape() {
            [m, l] => (*m, *l),
            _ => return Err(self.mismatch("pairwise_sq_dist", a, b)),
        };
        let n = match y.shape() {
            [n, l2] if *l2 == l => *n,
            _ => return Err(self.mismatch("pairwise_sq_dist", a, b)),
        };
        let mut out = vec![0.0; m * n];
        let (xd, yd) = (x.data(), y.data());
        exec::for_each_chunk(self.exec, m * n * l, &mut out, n, |i, row| {
            let xi = &xd[i * l..(i + 1) * l];
            for (j, o) in row.iter_mut().enumerate() {
                let yj = &yd[j * l..(j + 1) * l];
                *o = xi.iter().zip(yj).map(|(p, q)| (p - q) * (p - q)).sum();
            }
        });
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::PairwiseSqDist(a, b), rg))
    }

    /// Adds the vector `b` (length n) to every row of `a: m×n`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        let (m, n) = match x.shape() {
            [m, n] => (*m, *n),
            _ => return Err(self.mismatch("add_row", a, b)),
        };
        if y.len() != n || y.dims2() != Some((1, n)) {
            return Err(self.mismatch("add_row", a, b));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(n) {
            for (o, &v) in row.iter_mut().zip(y.data()) {
                *o += v;
            }
        }
        let _ = m;
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::AddRow(a, b), rg))
    }

    /// Concatenates 2-D tensors with a common column count along rows.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::InvalidShape(vec![0]))?;
        let cols = match self.node(*first)?.value.dims2() {
            Some((_, c)) => c,
            None => return Err(self.mismatch("stack_rows", *first, *first)),
        };
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = &self.node(p)?.value;
            match t.dims2() {
                Some((r, c)) if c == cols => {
                    rows += r;
                    data.extend_from_slice(t.data());
                }
                _ => return Err(self.mismatch("stack_rows", *first, p)),
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::StackRows(parts.to_vec()), rg))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            lhs: self.nodes[a.index as usize].value.shape().to_vec(),
            rhs: self.nodes[b.index as usize].value.shape().to_vec(),
        }
    }

    /// Propagates `∂loss/∂node` to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let node = self.node(loss)?;
        if !node.value.is_scalar() {
            return Err(TensorError::NotScalar(node.value.shape().to_vec()));
        }
        if self.grads.is_some() {
            return Err(TensorError::BackwardTwice);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.index as usize] = Some(vec![1.0]);
        for i in (0..=loss.index as usize).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`.
    ///
    /// Nodes that require a gradient but were unreachable from the loss
    /// report zeros.
    pub fn grad(&self, v: Var) -> Result<Tensor, TensorError> {
        let node = self.node(v)?;
        let grads = self.grads.as_ref().ok_or(TensorError::NoGradients)?;
        let data = grads[v.index as usize]
            .clone()
            .unwrap_or_else(|| vec![0.0; node.value.len()]);
        Tensor::new(node.value.shape().to_vec(), data)
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, || g.to_vec());
                self.accumulate(grads, *b, || g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, || g.to_vec());
                self.accumulate(grads, *b, || g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.data(*a), self.data(*b));
                self.accumulate(grads, *a, || zip_map(g, y, |g, y| g * y));
                self.accumulate(grads, *b, || zip_map(g, x, |g, x| g * x));
            }
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k) = (x.shape()[0], x.shape()[1]);
                let n = y.shape()[1];
                self.accumulate(grads, *a, || exec::matmul_a_bt(self.exec, g, y.data(), m, n, k));
                self.accumulate(grads, *b, || exec::matmul_at_b(self.exec, x.data(), g, m, k, n));
            }
            Op::Neg(a) => self.accumulate(grads, *a, || g.iter().map(|x| -x).collect()),
            Op::Exp(a) => self.accumulate(grads, *a, || zip_map(g, out.data(), |g, y| g * y)),
            Op::Log(a) => {
                let x = self.data(*a);
                self.accumulate(grads, *a, || zip_map(g, x, |g, x| g / x))
            }
            Op::Square(a) => {
                let x = self.data(*a);
                self.accumulate(grads, *a, || zip_map(g, x, |g, x| 2.0 * g * x))
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, || vec![g[0]; n])
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, || vec![g[0] / n as f64; n])
            }
            Op::LeakyRelu(a) => {
                let x = self.data(*a);
                self.accumulate(grads, *a, || {
                    zip_map(g, x, |g, x| if x > 0.0 { g } else { LEAKY_SLOPE * g })
                })
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, || zip_map(g, out.data(), |g, y| g * (1.0 - y * y)))
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, || zip_map(g, out.data(), |g, y| g * y * (1.0 - y)))
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, || g.iter().map(|x| x * c).collect()),
            Op::AddScalar(a) => self.accumulate(grads, *a, || g.to_vec()),
            Op::Clamp(a, lo, hi) => {
                let x = self.data(*a);
                self.accumulate(grads, *a, || {
                    zip_map(g, x, |g, x| if x >= *lo && x <= *hi { g } else { 0.0 })
                })
            }
            Op::PairwiseSqDist(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, l) = (x.shape()[0], x.shape()[1]);
                let n = y.shape()[0];
                let (xd, yd) = (x.data(), y.data());
                self.accumulate(grads, *a, || {
                    let mut da = vec![0.0; m * l];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = 2.0 * g[i * n + j];
                            for t in 0..l {
                                da[i * l + t] += gij * (xd[i * l + t] - yd[j * l + t]);
                            }
                        }
                    }
                    da
                });
                self.accumulate(grads, *b, || {
                    let mut db = vec![0.0; n * l];
                    for j in 0..n {
                        for i in 0..m {
                            let gij = 2.0 * g[i * n + j];
                            for t in 0..l {
                                db[j * l + t] -= gij * (xd[i * l + t] - yd[j * l + t]);
                            }
                        }
                    }
                    db
                });
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, || g.to_vec());
                let n = self.value(*b).len();
                self.accumulate(grads, *b, || {
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (o, v) in db.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    db
                });
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    let slice = &g[offset..offset + len];
                    self.accumulate(grads, *p, || slice.to_vec());
                    offset += len;
                }
            }
        }
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.index as usize].value.data()
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: impl FnOnce() -> Vec<f64>) {
        let idx = v.index as usize;
        if !self.nodes[idx].requires_grad {
            return;
        }
        let c = contrib();
        match &mut grads[idx] {
            Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
            slot => *slot = Some(c),
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_of_ones() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[2, 2]));
        let s = g.sum(x).unwrap();
        assert_eq!(g.value(s).item(), 4.0);
    }

    #[test]
    fn exp_of_zeros_is_ones() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 2]));
        let e = g.exp(x).unwrap();
        assert_eq!(g.value(e), &Tensor::ones(&[3, 2]));
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let i = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let c = g.matmul(a, i).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 2]));
        let err = g.add(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "add",
                lhs: vec![2, 3],
                rhs: vec![3, 2]
            }
        );
        assert!(err.to_string().contains("[2, 3]") && err.to_string().contains("[3, 2]"));
        assert!(g.matmul(a, a).is_err());
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[1.0, 0.0]));
        assert_eq!(g.log(a).unwrap_err(), TensorError::NonPositiveLog(0.0));
    }

    #[test]
    fn square_gradient_at_three() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn sum_exp_gradient_is_exp() {
        let mut g = Graph::new();
        let vals = [-1.0, 0.0, 0.5, 2.0];
        let x = g.param(t(&[4], &vals));
        let e = g.exp(x).unwrap();
        let s = g.sum(e).unwrap();
        g.backward(s).unwrap();
        let grad = g.grad(x).unwrap();
        for (gv, v) in grad.data().iter().zip(vals) {
            assert_eq!(*gv, v.exp());
        }
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones(&[3]));
        let unused = g.param(Tensor::ones(&[2, 2]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(unused).unwrap(), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn backward_requires_scalar_and_runs_once() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones(&[3]));
        let e = g.exp(x).unwrap();
        assert_eq!(g.backward(e).unwrap_err(), TensorError::NotScalar(vec![3]));
        let s = g.sum(e).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.backward(s).unwrap_err(), TensorError::BackwardTwice);
    }

    #[test]
    fn grad_before_backward_is_an_error() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones(&[3]));
        assert_eq!(g.grad(x).unwrap_err(), TensorError::NoGradients);
    }

    #[test]
    fn foreign_var_rejected() {
        let mut g1 = Graph::new();
        let mut g2 = Graph::new();
        let x = g1.param(Tensor::ones(&[3]));
        assert_eq!(g2.exp(x).unwrap_err(), TensorError::ForeignVar);
    }

    #[test]
    fn constants_receive_no_gradient_storage() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::ones(&[2]));
        let p = g.param(Tensor::ones(&[2]));
        let m = g.mul(c, p).unwrap();
        let s = g.sum(m).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(p).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(g.grad(c).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn stack_rows_and_add_row_shapes() {
        let mut g = Graph::new();
        let a = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = g.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let s = g.stack_rows(&[a, b]).unwrap();
        assert_eq!(g.value(s).shape(), &[3, 2]);
        let r = g.add_row(s, a).unwrap();
        assert_eq!(g.value(r).data(), &[2.0, 4.0, 4.0, 6.0, 6.0, 8.0]);
        let bad = g.constant(Tensor::zeros(&[1, 3]));
        assert!(g.stack_rows(&[a, bad]).is_err());
        assert!(g.add_row(s, bad).is_err());
    }

    #[test]
    fn pairwise_distance_values() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 1], &[0.0, 1.0]));
        let d = g.pairwise_sq_dist(a, a).unwrap();
        assert_eq!(g.value(d).data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
