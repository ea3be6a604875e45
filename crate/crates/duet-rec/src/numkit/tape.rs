//! Reverse-mode autodiff on a per-batch Wengert tape.
//!
//! A [`Tape`] is built fresh for every batch: forward calls append nodes and
//! compute values eagerly, `backward` walks the list in reverse and
//! accumulates gradients for [`ParamStore`] leaves. Node ids are indices, so
//! an input always has a smaller id than its consumers and a single reverse
//! sweep sees every node's complete output gradient before dispatching it.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numkit::store::ParamStore;
use crate::numkit::tensor::{self, Tensor};

pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Const,
    /// Leaf tied to a whole named parameter.
    Param { name: String },
    /// Leaf holding selected rows of a rank-2 named parameter; the backward
    /// pass scatter-adds row gradients, so duplicate indices accumulate.
    Gather { name: String, indices: Vec<usize> },
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    /// `[n,m] + [m]`, the bias broadcast over rows.
    AddBias { a: NodeId, b: NodeId },
    AddConst { a: NodeId },
    Scale { a: NodeId, c: f64 },
    LeakyRelu { a: NodeId, slope: f64 },
    Sigmoid { a: NodeId },
    /// Softmax over a rank-1 vector.
    Softmax { a: NodeId },
    /// Concatenation along the last axis.
    Concat { parts: Vec<NodeId> },
    /// Stack rank-1 vectors of equal length into a matrix, one per row.
    StackRows { parts: Vec<NodeId> },
    Reshape { a: NodeId },
    /// Convolution + max-pool fused: `emb [T,d]`, filters `w [q,h,d]`, bias
    /// `b [q]` produce one pooled activation per filter. `argmax` remembers
    /// the winning window start per filter (first window on ties).
    ConvMax {
        emb: NodeId,
        w: NodeId,
        b: NodeId,
        argmax: Vec<usize>,
    },
    SumSquares { a: NodeId },
    Sum { a: NodeId },
    /// Mean binary cross-entropy of probabilities against 0/1 labels, with
    /// probabilities clamped to `[BCE_CLAMP, 1-BCE_CLAMP]`. Clamped
    /// coordinates get zero gradient.
    MeanBce { p: NodeId, labels: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_memo: HashMap<String, NodeId>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = self.value(id);
        if v.len() != 1 {
            return Err(Error::Shape {
                op: "scalar",
                detail: format!("node has shape {:?}", v.shape()),
            });
        }
        Ok(v.data()[0])
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const, value)
    }

    /// Leaf for a whole parameter; memoized per tape so repeated lookups of
    /// one name share a node and their gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.param_memo.get(name) {
            return Ok(id);
        }
        let value = store.get(name)?.clone();
        let id = self.push(
            Op::Param {
                name: name.to_string(),
            },
            value,
        );
        self.param_memo.insert(name.to_string(), id);
        Ok(id)
    }

    /// Leaf of gathered rows `[indices.len(), d]` from a rank-2 parameter.
    pub fn gather(&mut self, store: &ParamStore, name: &str, indices: &[usize]) -> Result<NodeId> {
        let table = store.get(name)?;
        if table.rank() != 2 {
            return Err(Error::Shape {
                op: "gather",
                detail: format!("{name:?} has shape {:?}", table.shape()),
            });
        }
        let (rows, d) = (table.shape()[0], table.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= rows {
                return Err(Error::Argument(format!(
                    "gather index {i} out of range for {name:?} with {rows} rows"
                )));
            }
            data.extend_from_slice(table.row(i));
        }
        let value = Tensor::from_vec(&[indices.len(), d], data)?;
        Ok(self.push(
            Op::Gather {
                name: name.to_string(),
                indices: indices.to_vec(),
            },
            value,
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::matmul_nn(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul { a, b }, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape {
                op: "add",
                detail: format!("{:?} vs {:?}", va.shape(), vb.shape()),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(va.shape(), data)?;
        Ok(self.push(Op::Add { a, b }, value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape {
                op: "sub",
                detail: format!("{:?} vs {:?}", va.shape(), vb.shape()),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::from_vec(va.shape(), data)?;
        Ok(self.push(Op::Sub { a, b }, value))
    }

    pub fn add_bias(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 1 || va.cols() != vb.len() {
            return Err(Error::Shape {
                op: "add_bias",
                detail: format!("{:?} + {:?}", va.shape(), vb.shape()),
            });
        }
        let mut value = va.clone();
        let m = vb.len();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            for j in 0..m {
                row[j] += vb.data()[j];
            }
        }
        // va borrow ended above via clone; recompute nothing else.
        Ok(self.push(Op::AddBias { a, b }, value))
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let mut value = self.value(a).clone();
        for x in value.data_mut() {
            *x += c;
        }
        self.push(Op::AddConst { a }, value)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let mut value = self.value(a).clone();
        for x in value.data_mut() {
            *x *= c;
        }
        self.push(Op::Scale { a, c }, value)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let mut value = self.value(a).clone();
        for x in value.data_mut() {
            *x = tensor::leaky_relu(*x, slope);
        }
        self.push(Op::LeakyRelu { a, slope }, value)
    }

    /// `max(0, x)`: leaky ReLU with slope zero.
    pub fn hinge(&mut self, a: NodeId) -> NodeId {
        self.leaky_relu(a, 0.0)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        for x in value.data_mut() {
            *x = tensor::sigmoid(*x);
        }
        self.push(Op::Sigmoid { a }, value)
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.rank() != 1 || va.is_empty() {
            return Err(Error::Shape {
                op: "softmax",
                detail: format!("want non-empty rank-1, got {:?}", va.shape()),
            });
        }
        let value = Tensor::vector(&tensor::softmax_vec(va.data()));
        Ok(self.push(Op::Softmax { a }, value))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Argument("concat of zero parts".into()));
        }
        let rank = self.value(parts[0]).rank();
        let rows = self.value(parts[0]).rows();
        let mut total_cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rank() != rank || v.rows() != rows || v.rank() > 2 {
                return Err(Error::Shape {
                    op: "concat",
                    detail: format!("incompatible part {:?} (rank {rank}, rows {rows})", v.shape()),
                });
            }
            total_cols += v.cols();
        }
        let mut data = Vec::with_capacity(rows * total_cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let shape: Vec<usize> = if rank == 1 {
            vec![total_cols]
        } else {
            vec![rows, total_cols]
        };
        let value = Tensor::from_vec(&shape, data)?;
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
            },
            value,
        ))
    }

    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Argument("stack_rows of zero parts".into()));
        }
        let m = self.value(parts[0]).len();
        let mut data = Vec::with_capacity(parts.len() * m);
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 1 || v.len() != m {
                return Err(Error::Shape {
                    op: "stack_rows",
                    detail: format!("want rank-1 of len {m}, got {:?}", v.shape()),
                });
            }
            data.extend_from_slice(v.data());
        }
        let value = Tensor::from_vec(&[parts.len(), m], data)?;
        Ok(self.push(
            Op::StackRows {
                parts: parts.to_vec(),
            },
            value,
        ))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(a).reshaped(shape)?;
        Ok(self.push(Op::Reshape { a }, value))
    }

    pub fn conv_max(&mut self, emb: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (ve, vw, vb) = (self.value(emb), self.value(w), self.value(b));
        if ve.rank() != 2 || vw.rank() != 3 || vb.rank() != 1 {
            return Err(Error::Shape {
                op: "conv_max",
                detail: format!(
                    "emb {:?}, w {:?}, b {:?}",
                    ve.shape(),
                    vw.shape(),
                    vb.shape()
                ),
            });
        }
        let (t, d) = (ve.shape()[0], ve.shape()[1]);
        let (q, h, dw) = (vw.shape()[0], vw.shape()[1], vw.shape()[2]);
        if dw != d || vb.len() != q {
            return Err(Error::Shape {
                op: "conv_max",
                detail: format!("dims disagree: emb {:?}, w {:?}, b {:?}", ve.shape(), vw.shape(), vb.shape()),
            });
        }
        if t < h {
            return Err(Error::Shape {
                op: "conv_max",
                detail: format!("sequence length {t} shorter than window {h}"),
            });
        }
        let windows = t - h + 1;
        let mut out = vec![0.0; q];
        let mut argmax = vec![0usize; q];
        for f in 0..q {
            let wf = &vw.data()[f * h * d..(f + 1) * h * d];
            let mut best = f64::NEG_INFINITY;
            let mut best_p = 0;
            for p in 0..windows {
                let win = &ve.data()[p * d..(p + h) * d];
                let score = tensor::dot(wf, win);
                if score > best {
                    best = score;
                    best_p = p;
                }
            }
            out[f] = best + vb.data()[f];
            argmax[f] = best_p;
        }
        Ok(self.push(
            Op::ConvMax {
                emb,
                w,
                b,
                argmax,
            },
            Tensor::vector(&out),
        ))
    }

    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().map(|x| x * x).sum();
        self.push(Op::SumSquares { a }, Tensor::vector(&[s]))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::Sum { a }, Tensor::vector(&[s]))
    }

    pub fn mean_bce(&mut self, p: NodeId, labels: &[f64]) -> Result<NodeId> {
        let vp = self.value(p);
        if vp.len() != labels.len() || labels.is_empty() {
            return Err(Error::Shape {
                op: "mean_bce",
                detail: format!("{} probabilities vs {} labels", vp.len(), labels.len()),
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Argument(format!("label {bad} is not 0 or 1")));
        }
        let mut total = 0.0;
        for (&p_raw, &y) in vp.data().iter().zip(labels) {
            let pc = p_raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            total -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        }
        let value = Tensor::vector(&[total / labels.len() as f64]);
        Ok(self.push(
            Op::MeanBce {
                p,
                labels: labels.to_vec(),
            },
            value,
        ))
    }

    /// Accumulate `d loss / d leaf` into the store's gradient buffers for
    /// every parameter leaf reachable from `loss`, which must be a scalar.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss has shape {:?}", self.value(loss).shape()),
            });
        }
        if !self.value(loss).data()[0].is_finite() {
            return Err(Error::Numeric(format!(
                "loss is {}; refusing to backpropagate",
                self.value(loss).data()[0]
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(
            self.value(loss).shape(),
            vec![1.0],
        )?);

        fn acc(grads: &mut [Option<Tensor>], id: NodeId, c: Tensor) {
            match &mut grads[id.0] {
                Some(g) => {
                    for (a, b) in g.data_mut().iter_mut().zip(c.data()) {
                        *a += *b;
                    }
                }
                slot => *slot = Some(c),
            }
        }

        for i in (0..self.nodes.len()).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param { name } => {
                    let g = store.grad_mut(name)?;
                    for (a, b) in g.data_mut().iter_mut().zip(gout.data()) {
                        *a += *b;
                    }
                }
                Op::Gather { name, indices } => {
                    let g = store.grad_mut(name)?;
                    let d = g.cols();
                    for (slot, &row) in indices.iter().enumerate() {
                        let dst = g.row_mut(row);
                        let src = &gout.data()[slot * d..(slot + 1) * d];
                        for (a, b) in dst.iter_mut().zip(src) {
                            *a += *b;
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let da = tensor::matmul_nt(&gout, self.value(*b))?;
                    let db = tensor::matmul_tn(self.value(*a), &gout)?;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add { a, b } => {
                    acc(&mut grads, *a, gout.clone());
                    acc(&mut grads, *b, gout);
                }
                Op::Sub { a, b } => {
                    let mut neg = gout.clone();
                    for x in neg.data_mut() {
                        *x = -*x;
                    }
                    acc(&mut grads, *a, gout);
                    acc(&mut grads, *b, neg);
                }
                Op::AddBias { a, b } => {
                    let m = self.value(*b).len();
                    let mut db = Tensor::zeros(&[m]);
                    for r in 0..gout.rows() {
                        let row = gout.row(r);
                        for j in 0..m {
                            db.data_mut()[j] += row[j];
                        }
                    }
                    acc(&mut grads, *a, gout);
                    acc(&mut grads, *b, db);
                }
                Op::AddConst { a } => acc(&mut grads, *a, gout),
                Op::Scale { a, c } => {
                    let mut da = gout;
                    for x in da.data_mut() {
                        *x *= c;
                    }
                    acc(&mut grads, *a, da);
                }
                Op::LeakyRelu { a, slope } => {
                    let mut da = gout;
                    for (x, &inp) in da.data_mut().iter_mut().zip(self.value(*a).data()) {
                        if inp <= 0.0 {
                            *x *= slope;
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Sigmoid { a } => {
                    let mut da = gout;
                    for (x, &y) in da.data_mut().iter_mut().zip(node.value.data()) {
                        *x *= y * (1.0 - y);
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Softmax { a } => {
                    let y = node.value.data();
                    let inner: f64 = gout.data().iter().zip(y).map(|(g, yi)| g * yi).sum();
                    let mut da = gout;
                    for (x, &yi) in da.data_mut().iter_mut().zip(y) {
                        *x = yi * (*x - inner);
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Concat { parts } => {
                    let rows = gout.rows();
                    let mut off = 0;
                    for &p in parts {
                        let vp = self.value(p);
                        let cols = vp.cols();
                        let mut c = Tensor::zeros(vp.shape());
                        for r in 0..rows {
                            let src = &gout.row(r)[off..off + cols];
                            c.row_mut(r).copy_from_slice(src);
                        }
                        off += cols;
                        acc(&mut grads, p, c);
                    }
                }
                Op::StackRows { parts } => {
                    for (r, &p) in parts.iter().enumerate() {
                        acc(&mut grads, p, Tensor::vector(gout.row(r)));
                    }
                }
                Op::Reshape { a } => {
                    let c = gout.reshaped(self.value(*a).shape())?;
                    acc(&mut grads, *a, c);
                }
                Op::ConvMax { emb, w, b, argmax } => {
                    let ve = self.value(*emb);
                    let vw = self.value(*w);
                    let d = ve.shape()[1];
                    let h = vw.shape()[1];
                    let mut de = Tensor::zeros(ve.shape());
                    let mut dw = Tensor::zeros(vw.shape());
                    let db = Tensor::vector(gout.data());
                    for (f, (&g, &p)) in gout.data().iter().zip(argmax).enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let wf = &vw.data()[f * h * d..(f + 1) * h * d];
                        let win = &ve.data()[p * d..(p + h) * d];
                        let dwf = &mut dw.data_mut()[f * h * d..(f + 1) * h * d];
                        for (dst, &src) in dwf.iter_mut().zip(win) {
                            *dst += g * src;
                        }
                        let dwin = &mut de.data_mut()[p * d..(p + h) * d];
                        for (dst, &src) in dwin.iter_mut().zip(wf) {
                            *dst += g * src;
                        }
                    }
                    acc(&mut grads, *emb, de);
                    acc(&mut grads, *w, dw);
                    acc(&mut grads, *b, db);
                }
                Op::SumSquares { a } => {
                    let g = gout.data()[0];
                    let mut da = self.value(*a).clone();
                    for x in da.data_mut() {
                        *x *= 2.0 * g;
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Sum { a } => {
                    let g = gout.data()[0];
                    let mut da = Tensor::zeros(self.value(*a).shape());
                    da.data_mut().fill(g);
                    acc(&mut grads, *a, da);
                }
                Op::MeanBce { p, labels } => {
                    let g = gout.data()[0];
                    let vp = self.value(*p);
                    let n = labels.len() as f64;
                    let mut dp = Tensor::zeros(vp.shape());
                    for (k, (&p_raw, &y)) in vp.data().iter().zip(labels).enumerate() {
                        if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p_raw) {
                            continue;
                        }
                        dp.data_mut()[k] = g * (p_raw - y) / (p_raw * (1.0 - p_raw)) / n;
                    }
                    acc(&mut grads, *p, dp);
                }
            }
        }
        Ok(())
    }
}
