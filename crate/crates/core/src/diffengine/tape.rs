//! Reverse-mode tape.
//!
//! Every primitive pushes a node holding its forward value and parent
//! references; nodes are appended in evaluation order, so the node list is
//! already topologically sorted and `backward` walks it once in reverse.
//!
//! Shape mismatches are programming errors and panic with the offending
//! shapes. Domain failures of the KL primitive are reported as `Err`.

use crate::error::{Error, Result};
use crate::kernels::{self, Kernel, Prior};
use crate::relaxation::{self, Temperature};

use std::sync::atomic::{AtomicUsize, Ordering};

use super::tensor::{gemm, Tensor};

const LEAKY_SLOPE: f64 = 0.01;

static RELAXED_NODES: AtomicUsize = AtomicUsize::new(0);

/// Number of `log_sigma_tau` nodes created on any tape in this process.
pub fn relaxed_nodes_created() -> usize {
    RELAXED_NODES.load(Ordering::Relaxed)
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    FloorMin(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    GatherCols(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Kl {
        mu: Var,
        sigma: Var,
        kernel: Kernel,
        prior: Prior,
    },
    LogSigmaTau(Var, Temperature),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Neg(..) => "neg",
            Op::Affine(..) => "affine",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Softplus(..) => "softplus",
            Op::FloorMin(..) => "floor_min",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumLast(..) => "sum_last",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::GatherCols(..) => "gather_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::Reshape(..) => "reshape",
            Op::Kl { .. } => "kl",
            Op::LogSigmaTau(..) => "log_sigma_tau",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Where a non-finite value first appeared (debug builds only).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NonFiniteSite {
    pub node: usize,
    pub op: &'static str,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    non_finite: Option<NonFiniteSite>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn broadcast_dims(a: &Tensor, b: &Tensor, op: &str) -> (usize, usize) {
    let (ra, ca, rb, cb) = (a.rows(), a.cols(), b.rows(), b.cols());
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(ra, rb), dim(ca, cb)) {
        (Some(r), Some(c)) => (r, c),
        _ => panic!(
            "{op}: cannot broadcast {:?} with {:?}",
            a.shape(),
            b.shape()
        ),
    }
}

fn broadcast_binary(a: &Tensor, b: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data).expect("same shape");
    }
    let (r, c) = broadcast_dims(a, b, op);
    let shape = if a.rows() == r && a.cols() == c {
        a.shape().to_vec()
    } else if b.rows() == r && b.cols() == c {
        b.shape().to_vec()
    } else {
        vec![r, c]
    };
    let mut data = Vec::with_capacity(r * c);
    let (ra, ca, rb, cb) = (a.rows(), a.cols(), b.rows(), b.cols());
    for i in 0..r {
        let ia = if ra == 1 { 0 } else { i };
        let ib = if rb == 1 { 0 } else { i };
        for j in 0..c {
            let x = a.data()[ia * ca + if ca == 1 { 0 } else { j }];
            let y = b.data()[ib * cb + if cb == 1 { 0 } else { j }];
            data.push(f(x, y));
        }
    }
    Tensor::new(shape, data).expect("broadcast shape")
}

/// Sums a broadcast gradient back down to `target`'s shape.
fn reduce_to(g: &Tensor, target: &Tensor) -> Tensor {
    if g.shape() == target.shape() {
        return g.clone();
    }
    let (r, c) = (g.rows(), g.cols());
    let (rt, ct) = (target.rows(), target.cols());
    if r == rt && c == ct {
        return g.clone().reshaped(target.shape().to_vec()).expect("same size");
    }
    let mut out = vec![0.0; rt * ct];
    for i in 0..r {
        let it = if rt == 1 { 0 } else { i };
        for j in 0..c {
            let jt = if ct == 1 { 0 } else { j };
            out[it * ct + jt] += g.data()[i * c + j];
        }
    }
    Tensor::new(target.shape().to_vec(), out).expect("target shape")
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(c.max(1)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(c.max(1)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

fn matrix_dims(t: &Tensor, op: &str) -> (usize, usize) {
    assert!(
        t.shape().len() <= 2,
        "{op}: expected a matrix, got shape {:?}",
        t.shape()
    );
    (t.rows(), t.cols())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// First node whose forward value was not finite, if any.
    pub fn first_non_finite(&self) -> Option<&NonFiniteSite> {
        self.non_finite.as_ref()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        if cfg!(debug_assertions) && self.non_finite.is_none() && !value.all_finite() {
            self.non_finite = Some(NonFiniteSite {
                node: self.nodes.len(),
                op: op.name(),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = matrix_dims(av, "matmul");
        let (k2, n) = matrix_dims(bv, "matmul");
        assert_eq!(
            k,
            k2,
            "matmul: {:?} x {:?}",
            av.shape(),
            bv.shape()
        );
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            av.data(),
            (k as isize, 1),
            bv.data(),
            (n as isize, 1),
            &mut out,
            0.0,
        );
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(vec![m, n], out).unwrap(), Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_binary(self.value(a), self.value(b), "add", |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_binary(self.value(a), self.value(b), "sub", |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_binary(self.value(a), self.value(b), "mul", |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Mul(a, b), rg)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(v, op, rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        self.unary(a, Op::Affine(a, scale), |x| scale * x + shift)
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), relaxation::sigmoid)
    }

    pub fn leaky_relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::LeakyRelu(a), |x| if x > 0.0 { x } else { LEAKY_SLOPE * x })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), relaxation::softplus)
    }

    /// `max(a, floor)`; the gradient is zero where the floor is active.
    pub fn floor_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, Op::FloorMin(a, floor), |x| x.max(floor))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        let rg = self.rg(&[a]);
        self.push(v, Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = log_softmax_rows(self.value(a));
        let rg = self.rg(&[a]);
        self.push(v, Op::LogSoftmax(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(&[a]);
        self.push(v, Op::Mean(a), rg)
    }

    /// Row sums over the last axis, shape `[rows, 1]`.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let data: Vec<f64> = t.data().chunks(c.max(1)).map(|r| r.iter().sum()).collect();
        let v = Tensor::new(vec![data.len(), 1], data).unwrap();
        let rg = self.rg(&[a]);
        self.push(v, Op::SumLast(a), rg)
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        for p in parts {
            assert_eq!(
                self.value(*p).rows(),
                rows,
                "concat: row count mismatch"
            );
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let v = Tensor::new(vec![rows, total], data).unwrap();
        let rg = self.rg(parts);
        self.push(v, Op::Concat(parts.to_vec()), rg)
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a);
        assert!(
            start < end && end <= t.cols(),
            "slice {start}..{end} of {:?}",
            t.shape()
        );
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let v = Tensor::new(vec![rows, end - start], data).unwrap();
        let rg = self.rg(&[a]);
        self.push(v, Op::Slice(a, start, end), rg)
    }

    /// Picks `a[r, idx[r]]` for every row, shape `[rows, 1]`.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let t = self.value(a);
        assert_eq!(t.rows(), idx.len(), "gather_cols: one index per row");
        let data: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| {
                assert!(c < t.cols(), "gather_cols: column {c} out of range");
                t.at(r, c)
            })
            .collect();
        let v = Tensor::new(vec![idx.len(), 1], data).unwrap();
        let rg = self.rg(&[a]);
        self.push(v, Op::GatherCols(a, idx.to_vec()), rg)
    }

    /// Row lookup (embedding), shape `[idx.len(), cols]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let t = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * t.cols());
        for &r in idx {
            assert!(r < t.rows(), "gather_rows: row {r} out of range");
            data.extend_from_slice(t.row(r));
        }
        let v = Tensor::new(vec![idx.len(), t.cols()], data).unwrap();
        let rg = self.rg(&[a]);
        self.push(v, Op::GatherRows(a, idx.to_vec()), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self
            .value(a)
            .clone()
            .reshaped(shape.to_vec())
            .unwrap_or_else(|e| panic!("reshape: {e}"));
        let rg = self.rg(&[a]);
        self.push(v, Op::Reshape(a), rg)
    }

    /// Elementwise closed-form KL of per-dimension proposals `(mu, sigma)`.
    pub fn kl(&mut self, mu: Var, sigma: Var, kernel: Kernel, prior: Prior) -> Result<Var> {
        let (m, s) = (self.value(mu), self.value(sigma));
        assert_eq!(m.shape(), s.shape(), "kl: mu and sigma shapes differ");
        let data = m
            .data()
            .iter()
            .zip(s.data())
            .map(|(&a, &b)| kernels::kl(kernel, prior, a, b))
            .collect::<Result<Vec<f64>>>()?;
        let v = Tensor::new(m.shape().to_vec(), data)?;
        let rg = self.rg(&[mu, sigma]);
        Ok(self.push(
            v,
            Op::Kl {
                mu,
                sigma,
                kernel,
                prior,
            },
            rg,
        ))
    }

    /// Elementwise stable `log sigma_tau(x)`; `tau` is a constant.
    pub fn log_sigma_tau(&mut self, x: Var, tau: Temperature) -> Var {
        RELAXED_NODES.fetch_add(1, Ordering::Relaxed);
        self.unary(x, Op::LogSigmaTau(x, tau), |v| relaxation::log_sigma_tau(v, tau))
    }

    /// Reverse pass from a scalar `loss`. The tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(shape, vec![1.0]).unwrap());

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(t.data()) {
                        *e += d;
                    }
                }
                slot => *slot = Some(t),
            }
        };
        let zip_map = |a: &Tensor, f: &dyn Fn(f64, f64) -> f64| {
            let data = g.data().iter().zip(a.data()).map(|(&gv, &av)| f(gv, av)).collect();
            Tensor::new(a.shape().to_vec(), data).unwrap()
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                if self.nodes[a.0].requires_grad {
                    // dA = dC * B^T
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), (n as isize, 1), bv.data(), (1, n as isize), &mut da, 0.0);
                    acc(*a, Tensor::new(av.shape().to_vec(), da).unwrap());
                }
                if self.nodes[b.0].requires_grad {
                    // dB = A^T * dC
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), (1, k as isize), g.data(), (n as isize, 1), &mut db, 0.0);
                    acc(*b, Tensor::new(bv.shape().to_vec(), db).unwrap());
                }
            }
            Op::Add(a, b) => {
                acc(*a, reduce_to(g, self.value(*a)));
                acc(*b, reduce_to(g, self.value(*b)));
            }
            Op::Sub(a, b) => {
                acc(*a, reduce_to(g, self.value(*a)));
                acc(*b, reduce_to(&g.map(|v| -v), self.value(*b)));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    let ga = broadcast_binary(g, bv, "mul", |x, y| x * y);
                    acc(*a, reduce_to(&ga, av));
                }
                if self.nodes[b.0].requires_grad {
                    let gb = broadcast_binary(g, av, "mul", |x, y| x * y);
                    acc(*b, reduce_to(&gb, bv));
                }
            }
            Op::Neg(a) => acc(*a, g.map(|v| -v)),
            Op::Affine(a, s) => {
                let s = *s;
                acc(*a, g.map(|v| v * s));
            }
            Op::Tanh(a) => acc(*a, zip_map(y, &|gv, yv| gv * (1.0 - yv * yv))),
            Op::Sigmoid(a) => acc(*a, zip_map(y, &|gv, yv| gv * yv * (1.0 - yv))),
            Op::LeakyRelu(a) => acc(
                *a,
                zip_map(self.value(*a), &|gv, x| if x > 0.0 { gv } else { LEAKY_SLOPE * gv }),
            ),
            Op::Exp(a) => acc(*a, zip_map(y, &|gv, yv| gv * yv)),
            Op::Log(a) => acc(*a, zip_map(self.value(*a), &|gv, x| gv / x)),
            Op::Softplus(a) => acc(
                *a,
                zip_map(self.value(*a), &|gv, x| gv * relaxation::sigmoid(x)),
            ),
            Op::FloorMin(a, floor) => {
                let f = *floor;
                acc(*a, zip_map(self.value(*a), &|gv, x| if x > f { gv } else { 0.0 }));
            }
            Op::Softmax(a) => {
                let c = y.cols();
                let mut out = vec![0.0; y.len()];
                for ((o, yr), gr) in out
                    .chunks_mut(c)
                    .zip(y.data().chunks(c))
                    .zip(g.data().chunks(c))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((ov, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
                        *ov = yv * (gv - dot);
                    }
                }
                acc(*a, Tensor::new(y.shape().to_vec(), out).unwrap());
            }
            Op::LogSoftmax(a) => {
                let c = y.cols();
                let mut out = vec![0.0; y.len()];
                for ((o, yr), gr) in out
                    .chunks_mut(c)
                    .zip(y.data().chunks(c))
                    .zip(g.data().chunks(c))
                {
                    let gs: f64 = gr.iter().sum();
                    for ((ov, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
                        *ov = gv - yv.exp() * gs;
                    }
                }
                acc(*a, Tensor::new(y.shape().to_vec(), out).unwrap());
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                acc(*a, Tensor::full(av.shape(), g.item()));
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                acc(*a, Tensor::full(av.shape(), g.item() / av.len() as f64));
            }
            Op::SumLast(a) => {
                let av = self.value(*a);
                let c = av.cols();
                let data = g
                    .data()
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv, c))
                    .collect();
                acc(*a, Tensor::new(av.shape().to_vec(), data).unwrap());
            }
            Op::Concat(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let c = pv.cols();
                    if self.nodes[p.0].requires_grad {
                        let mut data = Vec::with_capacity(pv.len());
                        for r in 0..g.rows() {
                            data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        acc(*p, Tensor::new(pv.shape().to_vec(), data).unwrap());
                    }
                    offset += c;
                }
            }
            Op::Slice(a, start, end) => {
                let av = self.value(*a);
                let c = av.cols();
                let w = end - start;
                let mut out = vec![0.0; av.len()];
                for r in 0..av.rows() {
                    out[r * c + start..r * c + end].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                acc(*a, Tensor::new(av.shape().to_vec(), out).unwrap());
            }
            Op::GatherCols(a, idx) => {
                let av = self.value(*a);
                let c = av.cols();
                let mut out = vec![0.0; av.len()];
                for (r, &col) in idx.iter().enumerate() {
                    out[r * c + col] += g.data()[r];
                }
                acc(*a, Tensor::new(av.shape().to_vec(), out).unwrap());
            }
            Op::GatherRows(a, idx) => {
                let av = self.value(*a);
                let c = av.cols();
                let mut out = vec![0.0; av.len()];
                for (r, &src) in idx.iter().enumerate() {
                    for j in 0..c {
                        out[src * c + j] += g.data()[r * c + j];
                    }
                }
                acc(*a, Tensor::new(av.shape().to_vec(), out).unwrap());
            }
            Op::Reshape(a) => {
                let av = self.value(*a);
                acc(*a, g.clone().reshaped(av.shape().to_vec())?);
            }
            Op::Kl {
                mu,
                sigma,
                kernel,
                prior,
            } => {
                let (mv, sv) = (self.value(*mu), self.value(*sigma));
                let mut gm = Vec::with_capacity(mv.len());
                let mut gs = Vec::with_capacity(sv.len());
                for ((&m, &s), &gv) in mv.data().iter().zip(sv.data()).zip(g.data()) {
                    let (dm, ds) = kernels::kl_grad(*kernel, *prior, m, s)?;
                    gm.push(gv * dm);
                    gs.push(gv * ds);
                }
                acc(*mu, Tensor::new(mv.shape().to_vec(), gm)?);
                acc(*sigma, Tensor::new(sv.shape().to_vec(), gs)?);
            }
            Op::LogSigmaTau(a, tau) => {
                let tau = *tau;
                acc(
                    *a,
                    zip_map(self.value(*a), &|gv, x| gv * relaxation::log_sigma_tau_grad(x, tau)),
                );
            }
        }
        Ok(())
    }
}
