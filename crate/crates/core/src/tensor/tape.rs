//! Reverse-mode differentiation over a linear record of executed ops.
//!
//! Every op appends a node holding its output and whatever the backward rule
//! needs. `backward` walks the nodes in reverse insertion order, so the replay
//! is the exact reverse of execution, and gradients flowing into a value from
//! several consumers are summed.

use std::cell::RefCell;
use std::rc::Rc;

use super::kernels::{self, gemm, Activation, KeyMask};
use super::Tensor;
use crate::error::{Error, Result};

/// Storage precision of values recorded on a tape.
///
/// `F32` rounds every op output to single precision while keeping the
/// arithmetic itself in `f64`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    AddTiled(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Act(usize, Activation),
    LayerNorm {
        x: usize,
        gain: Option<usize>,
        bias: Option<usize>,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    Rows {
        x: usize,
        start: usize,
    },
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    WeightedSqErr {
        a: usize,
        b: usize,
        w: Rc<Tensor>,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Records ops for one forward pass. Single-writer; not shared across threads.
#[derive(Default)]
pub struct GradTape {
    nodes: RefCell<Vec<Node>>,
    precision: Precision,
}

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t GradTape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

/// Gradients produced by [`GradTape::backward`], indexed by variable.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: Vec<usize>,
}

impl Gradients {
    /// Ids of the nodes whose backward rule ran, in the order they ran.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }

    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of its shape when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape().to_vec()))
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_precision(precision: Precision) -> Self {
        GradTape {
            nodes: RefCell::default(),
            precision,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, mut value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        if self.precision == Precision::F32 {
            value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = *v as f32 as f64);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf whose gradient is tracked iff `t.requires_grad()`.
    pub fn leaf(&self, t: Tensor) -> Var<'_> {
        let g = t.requires_grad();
        self.push(t, Op::Leaf, g)
    }

    /// Trainable leaf.
    pub fn param(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let values: Vec<Tensor> = parts.iter().map(|p| (*p.value()).clone()).collect();
        for v in &values {
            if v.rank() != 2 {
                return Err(Error::dim("concat_rows", format!("rank-2 inputs only, got {:?}", v.shape())));
            }
        }
        let out = Tensor::concat0(&values)?;
        let g = parts.iter().any(|p| self.needs(p.id));
        Ok(self.push(out, Op::ConcatRows(parts.iter().map(|p| p.id).collect()), g))
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let first = values.first().ok_or_else(|| Error::dim("concat_cols", "no inputs"))?;
        let (rows, _) = first.dims2()?;
        let mut widths = Vec::with_capacity(values.len());
        for v in &values {
            let (r, c) = v.dims2()?;
            if r != rows {
                return Err(Error::shapes("concat_cols", first.shape(), v.shape()));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in values.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let g = parts.iter().any(|p| self.needs(p.id));
        Ok(self.push(
            Tensor::new([rows, total], data)?,
            Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
            g,
        ))
    }

    /// Reverse pass from a one-element output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if out.value.numel() != 1 {
            return Err(Error::dim(
                "backward",
                format!("output must hold one value, shape {:?}", out.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[output.id] = Some(Tensor::ones(out.value.shape().to_vec()));
        let mut visited = Vec::new();

        let acc = |grads: &mut Vec<Option<Tensor>>, id: usize, g: Tensor| {
            if !nodes[id].needs_grad {
                return;
            }
            match &mut grads[id] {
                Some(existing) => existing
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, b)| *a += b),
                slot => *slot = Some(g),
            }
        };

        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].clone() else { continue };
            visited.push(id);
            let val = |i: usize| Rc::clone(&nodes[i].value);
            match &node.op {
                Op::Leaf => {}
                &Op::MatMul(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    let (m, k) = av.dims2()?;
                    let n = bv.dims2()?.1;
                    if nodes[a].needs_grad {
                        let mut ga = Tensor::zeros([m, k]);
                        gemm(m, n, k, 1.0, g.data(), (n, 1), bv.data(), (1, n), 0.0, ga.data_mut(), (k, 1));
                        acc(&mut grads, a, ga);
                    }
                    if nodes[b].needs_grad {
                        let mut gb = Tensor::zeros([k, n]);
                        gemm(k, m, n, 1.0, av.data(), (1, k), g.data(), (n, 1), 0.0, gb.data_mut(), (n, 1));
                        acc(&mut grads, b, gb);
                    }
                }
                &Op::Add(a, b) => {
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, b, g);
                }
                &Op::Sub(a, b) => {
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, b, g.scale(-1.0));
                }
                &Op::Mul(a, b) => {
                    acc(&mut grads, a, g.mul(&val(b))?);
                    acc(&mut grads, b, g.mul(&val(a))?);
                }
                &Op::AddRow(x, row) => {
                    let d = val(row).numel();
                    let mut gr = vec![0.0; d];
                    for r in g.data().chunks_exact(d) {
                        gr.iter_mut().zip(r).for_each(|(a, b)| *a += b);
                    }
                    acc(&mut grads, x, g);
                    acc(&mut grads, row, Tensor::new(val(row).shape().to_vec(), gr)?);
                }
                &Op::MulRow(x, row) => {
                    let (xv, rv) = (val(x), val(row));
                    let d = rv.numel();
                    let mut gx = g.clone();
                    let mut gr = vec![0.0; d];
                    for ((gxr, gr_row), xr) in gx
                        .data_mut()
                        .chunks_exact_mut(d)
                        .zip(g.data().chunks_exact(d))
                        .zip(xv.data().chunks_exact(d))
                    {
                        for j in 0..d {
                            gxr[j] = gr_row[j] * rv.data()[j];
                            gr[j] += gr_row[j] * xr[j];
                        }
                    }
                    acc(&mut grads, x, gx);
                    acc(&mut grads, row, Tensor::new(rv.shape().to_vec(), gr)?);
                }
                &Op::AddTiled(x, y) => {
                    let yv = val(y);
                    let block = yv.numel();
                    let mut gy = vec![0.0; block];
                    for chunk in g.data().chunks_exact(block) {
                        gy.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                    }
                    acc(&mut grads, x, g);
                    acc(&mut grads, y, Tensor::new(yv.shape().to_vec(), gy)?);
                }
                &Op::Scale(x, c) => acc(&mut grads, x, g.scale(c)),
                &Op::AddScalar(x) => acc(&mut grads, x, g),
                &Op::Act(x, act) => {
                    let gx = g.zip_map(&val(x), |gg, xx| gg * act.derivative(xx))?;
                    acc(&mut grads, x, gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    mean,
                    rstd,
                } => {
                    let xv = val(*x);
                    let d = xv.last_dim();
                    let gain_v = gain.map(val);
                    let mut gx = Tensor::zeros(xv.shape().to_vec());
                    let mut gg = vec![0.0; d];
                    let mut gb = vec![0.0; d];
                    let mut xhat = vec![0.0; d];
                    let mut dxhat = vec![0.0; d];
                    for (r, ((xr, gr), gxr)) in xv
                        .data()
                        .chunks_exact(d)
                        .zip(g.data().chunks_exact(d))
                        .zip(gx.data_mut().chunks_exact_mut(d))
                        .enumerate()
                    {
                        let (mu, rs) = (mean[r], rstd[r]);
                        for j in 0..d {
                            xhat[j] = (xr[j] - mu) * rs;
                            let gamma = gain_v.as_ref().map_or(1.0, |t| t.data()[j]);
                            dxhat[j] = gr[j] * gamma;
                            gg[j] += gr[j] * xhat[j];
                            gb[j] += gr[j];
                        }
                        let m1 = dxhat.iter().sum::<f64>() / d as f64;
                        let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            gxr[j] = rs * (dxhat[j] - m1 - xhat[j] * m2);
                        }
                    }
                    acc(&mut grads, *x, gx);
                    if let Some(gi) = *gain {
                        acc(&mut grads, gi, Tensor::new(val(gi).shape().to_vec(), gg)?);
                    }
                    if let Some(bi) = *bias {
                        acc(&mut grads, bi, Tensor::new(val(bi).shape().to_vec(), gb)?);
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                    let (nq, d) = qv.dims2()?;
                    let (nk, dv) = vv.dims2()?;
                    let (dh, dvh) = (d / heads, dv / heads);
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut gq = Tensor::zeros([nq, d]);
                    let mut gk = Tensor::zeros([nk, d]);
                    let mut gv = Tensor::zeros([nk, dv]);
                    let mut dp = vec![0.0; nq * nk];
                    for h in 0..*heads {
                        let p = &probs[h * nq * nk..(h + 1) * nq * nk];
                        gemm(nk, nq, dvh, 1.0, p, (1, nk), &g.data()[h * dvh..], (dv, 1), 0.0, &mut gv.data_mut()[h * dvh..], (dv, 1));
                        gemm(nq, dvh, nk, 1.0, &g.data()[h * dvh..], (dv, 1), &vv.data()[h * dvh..], (1, dv), 0.0, &mut dp, (nk, 1));
                        for (dpr, pr) in dp.chunks_exact_mut(nk).zip(p.chunks_exact(nk)) {
                            let dot: f64 = dpr.iter().zip(pr).map(|(a, b)| a * b).sum();
                            dpr.iter_mut().zip(pr).for_each(|(a, &b)| *a = b * (*a - dot));
                        }
                        gemm(nq, nk, dh, scale, &dp, (nk, 1), &kv.data()[h * dh..], (d, 1), 0.0, &mut gq.data_mut()[h * dh..], (d, 1));
                        gemm(nk, nq, dh, scale, &dp, (1, nk), &qv.data()[h * dh..], (d, 1), 0.0, &mut gk.data_mut()[h * dh..], (d, 1));
                    }
                    acc(&mut grads, *q, gq);
                    acc(&mut grads, *k, gk);
                    acc(&mut grads, *v, gv);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = val(p).shape()[0];
                        acc(&mut grads, p, g.narrow0(offset, rows)?);
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let (rows, total) = g.dims2()?;
                    let mut col = 0;
                    for &p in parts {
                        let w = val(p).dims2()?.1;
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.data()[r * total + col..r * total + col + w]);
                        }
                        acc(&mut grads, p, Tensor::new([rows, w], data)?);
                        col += w;
                    }
                }
                &Op::Rows { x, start } => {
                    let mut gx = Tensor::zeros(val(x).shape().to_vec());
                    gx.assign0(start, &g)?;
                    acc(&mut grads, x, gx);
                }
                &Op::Reshape(x) => acc(&mut grads, x, g.reshape(val(x).shape().to_vec())?),
                &Op::Sum(x) => {
                    let s = g.item()?;
                    acc(&mut grads, x, Tensor::full(val(x).shape().to_vec(), s));
                }
                &Op::Mean(x) => {
                    let xv = val(x);
                    let s = g.item()? / xv.numel() as f64;
                    acc(&mut grads, x, Tensor::full(xv.shape().to_vec(), s));
                }
                Op::WeightedSqErr { a, b, w } => {
                    let (av, bv) = (val(*a), val(*b));
                    let c = 2.0 * g.item()? / av.numel() as f64;
                    let mut ga = av.sub(&bv)?;
                    ga.data_mut()
                        .iter_mut()
                        .zip(w.data())
                        .for_each(|(d, wt)| *d *= c * wt);
                    acc(&mut grads, *b, ga.scale(-1.0));
                    acc(&mut grads, *a, ga);
                }
            }
        }
        Ok(Gradients { grads, visited })
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Position of this value on its tape; ops are numbered in execution order.
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t GradTape {
        self.tape
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "variables from different tapes"
        );
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'t> {
        let g = self.tape.needs(self.id);
        self.tape.push(value, op, g)
    }

    fn binary(self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        self.same_tape(&other);
        let g = self.tape.needs(self.id) || self.tape.needs(other.id);
        self.tape.push(value, op, g)
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let out = kernels::matmul(&self.value(), &rhs.value())?;
        Ok(self.binary(rhs, out, Op::MatMul(self.id, rhs.id)))
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().add(&rhs.value())?;
        Ok(self.binary(rhs, out, Op::Add(self.id, rhs.id)))
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().sub(&rhs.value())?;
        Ok(self.binary(rhs, out, Op::Sub(self.id, rhs.id)))
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().mul(&rhs.value())?;
        Ok(self.binary(rhs, out, Op::Mul(self.id, rhs.id)))
    }

    fn row_broadcast(
        self,
        row: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (xv, rv) = (self.value(), row.value());
        let d = xv.last_dim();
        if rv.numel() != d || xv.rank() == 0 {
            return Err(Error::shapes(name, xv.shape(), rv.shape()));
        }
        let mut out = (*xv).clone().with_grad(false);
        for r in out.data_mut().chunks_exact_mut(d) {
            r.iter_mut().zip(rv.data()).for_each(|(a, &b)| *a = f(*a, b));
        }
        Ok(out)
    }

    /// `self + row`, with `row` (D values) broadcast over every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let out = self.row_broadcast(row, "add_row", |a, b| a + b)?;
        Ok(self.binary(row, out, Op::AddRow(self.id, row.id)))
    }

    /// `self ⊙ row`, with `row` (D values) broadcast over every row.
    pub fn mul_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let out = self.row_broadcast(row, "mul_row", |a, b| a * b)?;
        Ok(self.binary(row, out, Op::MulRow(self.id, row.id)))
    }

    /// Adds `block` repeatedly over consecutive chunks of `self`.
    pub fn add_tiled(self, block: Var<'t>) -> Result<Var<'t>> {
        let (xv, bv) = (self.value(), block.value());
        if bv.numel() == 0 || xv.numel() % bv.numel() != 0 {
            return Err(Error::shapes("add_tiled", xv.shape(), bv.shape()));
        }
        let mut out = (*xv).clone().with_grad(false);
        for chunk in out.data_mut().chunks_exact_mut(bv.numel()) {
            chunk.iter_mut().zip(bv.data()).for_each(|(a, b)| *a += b);
        }
        Ok(self.binary(block, out, Op::AddTiled(self.id, block.id)))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let out = self.value().scale(c);
        self.unary(out, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let out = self.value().map(|v| v + c);
        self.unary(out, Op::AddScalar(self.id))
    }

    pub fn activate(self, act: Activation) -> Var<'t> {
        if act == Activation::Identity {
            return self;
        }
        let out = self.value().map(|v| act.apply(v));
        self.unary(out, Op::Act(self.id, act))
    }

    pub fn gelu(self) -> Var<'t> {
        self.activate(Activation::Gelu)
    }

    pub fn silu(self) -> Var<'t> {
        self.activate(Activation::Silu)
    }

    /// Layer norm over the last axis; `None` gain/bias means 1 and 0.
    pub fn layer_norm(
        self,
        gain: Option<Var<'t>>,
        bias: Option<Var<'t>>,
        eps: f64,
    ) -> Result<Var<'t>> {
        let gv = gain.map(|g| g.value());
        let bv = bias.map(|b| b.value());
        let (out, stats) = kernels::layer_norm_forward(
            &self.value(),
            gv.as_ref().map(|t| t.data()),
            bv.as_ref().map(|t| t.data()),
            eps,
        )?;
        let g = self.tape.needs(self.id)
            || gain.is_some_and(|v| self.tape.needs(v.id))
            || bias.is_some_and(|v| self.tape.needs(v.id));
        Ok(self.tape.push(
            out,
            Op::LayerNorm {
                x: self.id,
                gain: gain.map(|v| v.id),
                bias: bias.map(|v| v.id),
                mean: stats.mean,
                rstd: stats.rstd,
            },
            g,
        ))
    }

    /// Scaled dot-product attention with `self` as queries.
    pub fn attention(
        self,
        keys: Var<'t>,
        values: Var<'t>,
        heads: usize,
        mask: &KeyMask,
    ) -> Result<Var<'t>> {
        self.same_tape(&keys);
        self.same_tape(&values);
        let res = kernels::attention_forward(&self.value(), &keys.value(), &values.value(), heads, mask)?;
        let g = [self, keys, values].iter().any(|v| self.tape.needs(v.id));
        Ok(self.tape.push(
            res.out,
            Op::Attention {
                q: self.id,
                k: keys.id,
                v: values.id,
                heads,
                probs: res.probs,
            },
            g,
        ))
    }

    /// Rows `start..start + len` of a rank-2 value.
    pub fn rows(self, start: usize, len: usize) -> Result<Var<'t>> {
        let out = self.value().narrow0(start, len)?;
        Ok(self.unary(out, Op::Rows { x: self.id, start }))
    }

    pub fn row(self, i: usize) -> Result<Var<'t>> {
        self.rows(i, 1)
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let out = self.value().reshape(shape)?.with_grad(false);
        Ok(self.unary(out, Op::Reshape(self.id)))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let s = self.value().mean();
        self.unary(Tensor::scalar(s), Op::Mean(self.id))
    }

    /// `mean(w ⊙ (self − target)²)` over all elements.
    pub fn weighted_sq_err(self, target: Var<'t>, weights: Rc<Tensor>) -> Result<Var<'t>> {
        let (av, bv) = (self.value(), target.value());
        if av.shape() != bv.shape() || weights.shape() != av.shape() {
            return Err(Error::dim(
                "weighted_sq_err",
                format!("{:?}, {:?}, weights {:?}", av.shape(), bv.shape(), weights.shape()),
            ));
        }
        let n = av.numel().max(1) as f64;
        let s: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .zip(weights.data())
            .map(|((a, b), w)| w * (a - b) * (a - b))
            .sum::<f64>()
            / n;
        Ok(self.binary(
            target,
            Tensor::scalar(s),
            Op::WeightedSqErr {
                a: self.id,
                b: target.id,
                w: weights,
            },
        ))
    }
}
