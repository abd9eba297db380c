use std::collections::BTreeMap;

use super::params::{Gradients, ParamId};
use super::tensor::{matmul_a_bt, matmul_at_b, matmul_raw, Real, Tensor};
use crate::{Error, Result};

/// Node handle on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Tanh(Var),
    Log(Var),
    Sqrt(Var),
    Abs(Var),
    ClampMin(Var, T),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    SumLastDim(Var),
    Row(Var, usize),
    WeightedSum {
        weights: Var,
        terms: Vec<(usize, Var)>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Define-by-run computation record.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it and a single reverse sweep visits each node once.
#[derive(Clone, Debug)]
pub struct Tape<T = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self { nodes: Vec::new() }
    }
}

#[derive(Clone, Copy)]
enum Bin {
    Add,
    Sub,
    Mul,
    Div,
}

impl Bin {
    fn name(self) -> &'static str {
        match self {
            Bin::Add => "add",
            Bin::Sub => "sub",
            Bin::Mul => "mul",
            Bin::Div => "div",
        }
    }

    fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            Bin::Add => a + b,
            Bin::Sub => a - b,
            Bin::Mul => a * b,
            Bin::Div => a / b,
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf bound to a trainable parameter; its gradient is reported under `id`.
    pub fn param(&mut self, id: ParamId, value: &Tensor<T>) -> Var {
        let v = self.push(value.clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// `a (m×k) · b (k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, kind: Bin, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = if ta.shape() == tb.shape() {
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| kind.apply(x, y))
                .collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else if tb.is_scalar() {
            let y = tb.item();
            ta.map(|x| kind.apply(x, y))
        } else if ta.is_scalar() {
            let x = ta.item();
            tb.map(|y| kind.apply(x, y))
        } else {
            return Err(Error::Shape {
                op: kind.name(),
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        };
        let rg = self.rg(&[a, b]);
        let op = match kind {
            Bin::Add => Op::Add(a, b),
            Bin::Sub => Op::Sub(a, b),
            Bin::Mul => Op::Mul(a, b),
            Bin::Div => Op::Div(a, b),
        };
        Ok(self.push(out, op, rg))
    }

    /// Elementwise sum; either side may be a one-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Bin::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Bin::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Bin::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Bin::Div, a, b)
    }

    /// Adds the vector `bias` (length `n`) to every row of `a (m×n)`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let n = ta.last_dim();
        if ta.shape().len() != 2 || tb.len() != n {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, &b) in row.iter_mut().zip(tb.data()) {
                *x = *x + b;
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, bias]);
        Ok(self.push(out, Op::AddBias(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, T::tanh, Op::Tanh(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, T::ln, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, T::sqrt, Op::Sqrt(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, T::abs, Op::Abs(a))
    }

    /// `max(a, floor)` elementwise; gradient passes where `a >= floor`.
    pub fn clamp_min(&mut self, a: Var, floor: T) -> Var {
        self.unary(
            a,
            move |x| if x >= floor { x } else { floor },
            Op::ClampMin(a, floor),
        )
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let n = ta.last_dim();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let out = Tensor::new(ta.shape().to_vec(), data).expect("shape preserved");
        let rg = self.rg(&[a]);
        self.push(out, Op::Softmax(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / T::from_usize(t.len()).unwrap());
        let rg = self.rg(&[a]);
        self.push(out, Op::Mean(a), rg)
    }

    /// Sums the last dimension away: `m×n → [m]`.
    pub fn sum_last_dim(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.last_dim();
        let data: Vec<T> = t.data().chunks(n).map(|r| r.iter().copied().sum()).collect();
        let mut shape = t.shape().to_vec();
        shape.pop();
        let out = if shape.is_empty() {
            Tensor::scalar(data[0])
        } else {
            Tensor::new(shape, data).expect("shape preserved")
        };
        let rg = self.rg(&[a]);
        self.push(out, Op::SumLastDim(a), rg)
    }

    /// Row `i` of a 2-D tensor as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 || i >= t.shape()[0] {
            return Err(Error::Shape {
                op: "row",
                lhs: t.shape().to_vec(),
                rhs: vec![i],
            });
        }
        let out = Tensor::vector(t.row(i).to_vec());
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Row(a, i), rg))
    }

    /// `Σ_k weights[idx_k] · term_k`; all terms share one shape.
    pub fn weighted_sum(&mut self, weights: Var, terms: &[(usize, Var)]) -> Result<Var> {
        let Some(&(_, first)) = terms.first() else {
            return Err(Error::invalid("weighted_sum needs at least one term"));
        };
        let shape = self.value(first).shape().to_vec();
        let w = self.value(weights).data();
        let mut data = vec![T::zero(); self.value(first).len()];
        for &(idx, term) in terms {
            let t = self.value(term);
            if t.shape() != shape.as_slice() || idx >= w.len() {
                return Err(Error::Shape {
                    op: "weighted_sum",
                    lhs: shape,
                    rhs: t.shape().to_vec(),
                });
            }
            let wk = w[idx];
            for (o, &x) in data.iter_mut().zip(t.data()) {
                *o = *o + wk * x;
            }
        }
        let out = Tensor::new(shape, data)?;
        let mut inputs = vec![weights];
        inputs.extend(terms.iter().map(|&(_, v)| v));
        let rg = self.rg(&inputs);
        Ok(self.push(
            out,
            Op::WeightedSum {
                weights,
                terms: terms.to_vec(),
            },
            rg,
        ))
    }

    /// Mean softmax cross-entropy of `logits (m×C)` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.shape().len() != 2 || t.shape()[0] != labels.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let c = t.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::invalid(format!(
                "cross_entropy: label {bad} out of range for {c} classes"
            )));
        }
        let mut probs = t.data().to_vec();
        let mut total = T::zero();
        for (row, (logit_row, &y)) in probs.chunks_mut(c).zip(t.data().chunks(c).zip(labels)) {
            let max = logit_row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + logit_row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
            total = total + (lse - logit_row[y]);
            softmax_in_place(row);
        }
        let m = T::from_usize(labels.len()).unwrap();
        let out = Tensor::scalar(total / m);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Takes `&self`, so the same tape can be swept repeatedly; each sweep
    /// is deterministic and yields bit-identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let out = &self.nodes[loss.0].value;
        if !out.is_scalar() {
            return Err(Error::NonScalarOutput(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut params: BTreeMap<ParamId, Tensor<T>> = BTreeMap::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    if let Some(pid) = node.param {
                        let shape = node.value.shape().to_vec();
                        match params.get_mut(&pid) {
                            Some(acc) => {
                                for (a, &x) in acc.data_mut().iter_mut().zip(&g) {
                                    *a = *a + x;
                                }
                            }
                            None => {
                                params.insert(pid, Tensor::new(shape, g)?);
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    if self.requires_grad(*a) {
                        let da = matmul_a_bt(&g, tb.data(), m, n, k);
                        self.acc(&mut grads, *a, da);
                    }
                    if self.requires_grad(*b) {
                        let db = matmul_at_b(ta.data(), &g, m, k, n);
                        self.acc(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    self.acc_broadcast(&mut grads, *a, &g, |gi, _| gi);
                    self.acc_broadcast(&mut grads, *b, &g, |gi, _| gi);
                }
                Op::Sub(a, b) => {
                    self.acc_broadcast(&mut grads, *a, &g, |gi, _| gi);
                    self.acc_broadcast(&mut grads, *b, &g, |gi, _| -gi);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    self.acc_broadcast(&mut grads, *a, &g, |gi, j| gi * at(tb, j));
                    self.acc_broadcast(&mut grads, *b, &g, |gi, j| gi * at(ta, j));
                }
                Op::Div(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    self.acc_broadcast(&mut grads, *a, &g, |gi, j| gi / at(tb, j));
                    self.acc_broadcast(&mut grads, *b, &g, |gi, j| {
                        let y = at(tb, j);
                        -gi * at(ta, j) / (y * y)
                    });
                }
                Op::AddBias(a, bias) => {
                    if self.requires_grad(*bias) {
                        let n = self.value(*bias).len();
                        let mut db = vec![T::zero(); n];
                        for row in g.chunks(n) {
                            for (d, &x) in db.iter_mut().zip(row) {
                                *d = *d + x;
                            }
                        }
                        self.acc(&mut grads, *bias, db);
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    self.acc(&mut grads, *a, g.iter().map(|&x| x * c).collect());
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let d = g
                        .iter()
                        .zip(x)
                        .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                        .collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let d = g
                        .iter()
                        .zip(y)
                        .map(|(&gi, &yi)| gi * (T::one() - yi * yi))
                        .collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::Log(a) => {
                    let x = self.value(*a).data();
                    let d = g.iter().zip(x).map(|(&gi, &xi)| gi / xi).collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::Sqrt(a) => {
                    let y = node.value.data();
                    let two = T::one() + T::one();
                    let d = g.iter().zip(y).map(|(&gi, &yi)| gi / (two * yi)).collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::Abs(a) => {
                    let x = self.value(*a).data();
                    let d = g
                        .iter()
                        .zip(x)
                        .map(|(&gi, &xi)| {
                            if xi > T::zero() {
                                gi
                            } else if xi < T::zero() {
                                -gi
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::ClampMin(a, floor) => {
                    let x = self.value(*a).data();
                    let d = g
                        .iter()
                        .zip(x)
                        .map(|(&gi, &xi)| if xi >= *floor { gi } else { T::zero() })
                        .collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let n = y.last_dim();
                    let mut d = Vec::with_capacity(g.len());
                    for (grow, yrow) in g.chunks(n).zip(y.data().chunks(n)) {
                        let s: T = grow.iter().zip(yrow).map(|(&gi, &yi)| gi * yi).sum();
                        d.extend(grow.iter().zip(yrow).map(|(&gi, &yi)| yi * (gi - s)));
                    }
                    self.acc(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    self.acc(&mut grads, *a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    let v = g[0] / T::from_usize(n).unwrap();
                    self.acc(&mut grads, *a, vec![v; n]);
                }
                Op::SumLastDim(a) => {
                    let n = self.value(*a).last_dim();
                    let d = g.iter().flat_map(|&gi| std::iter::repeat_n(gi, n)).collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::Row(a, i) => {
                    let t = self.value(*a);
                    let n = t.last_dim();
                    let mut d = vec![T::zero(); t.len()];
                    d[i * n..(i + 1) * n].copy_from_slice(&g);
                    self.acc(&mut grads, *a, d);
                }
                Op::WeightedSum { weights, terms } => {
                    let w = self.value(*weights);
                    if self.requires_grad(*weights) {
                        let mut dw = vec![T::zero(); w.len()];
                        for &(idx, term) in terms {
                            let t = self.value(term).data();
                            dw[idx] = dw[idx] + g.iter().zip(t).map(|(&gi, &x)| gi * x).sum();
                        }
                        self.acc(&mut grads, *weights, dw);
                    }
                    for &(idx, term) in terms {
                        if self.requires_grad(term) {
                            let wk = w.data()[idx];
                            self.acc(&mut grads, term, g.iter().map(|&gi| gi * wk).collect());
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let c = self.value(*logits).last_dim();
                    let scale = g[0] / T::from_usize(labels.len()).unwrap();
                    let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                    for (i, &y) in labels.iter().enumerate() {
                        d[i * c + y] = d[i * c + y] - scale;
                    }
                    self.acc(&mut grads, *logits, d);
                }
            }
        }
        Ok(Gradients::new(params))
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contrib) {
                    *e = *e + c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    /// Accumulates `f(g_j, j)` into `v`, summing over `j` when `v` was
    /// broadcast as a scalar.
    fn acc_broadcast(
        &self,
        grads: &mut [Option<Vec<T>>],
        v: Var,
        g: &[T],
        f: impl Fn(T, usize) -> T,
    ) {
        if !self.requires_grad(v) {
            return;
        }
        let contrib: Vec<T> = g.iter().enumerate().map(|(j, &gi)| f(gi, j)).collect();
        if self.value(v).len() == g.len() {
            self.acc(grads, v, contrib);
        } else {
            let total = contrib.into_iter().sum();
            self.acc(grads, v, vec![total]);
        }
    }
}

fn at<T: Real>(t: &Tensor<T>, j: usize) -> T {
    if t.is_scalar() {
        t.item()
    } else {
        t.data()[j]
    }
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total = total + *x;
    }
    for x in row.iter_mut() {
        *x = *x / total;
    }
}
