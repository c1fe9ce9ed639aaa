//! Reverse-mode differentiation over a linear tape.
//!
//! A [`Tape`] owns every value computed through it. Operations append one
//! node each and return a [`Var`] handle; because a node can only refer to
//! handles that already exist, the node list is always in topological order
//! and [`Tape::backward`] simply walks it in reverse.
//!
//! Leaves created with `requires_grad = true` keep a persistent gradient
//! buffer. Backward adds into it, so two backward passes double it.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::imaging::radiometry;
use crate::ops::{self, activation, ConvParams, DeformParams};
use crate::tensor::{Shape, Tensor};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        p: ConvParams,
    },
    DeformConv2d {
        x: usize,
        offsets: usize,
        mask: usize,
        w: usize,
        b: Option<usize>,
        p: DeformParams,
    },
    LeakyRelu(usize, f32),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    Abs(usize),
    MuLaw(usize, f32),
    Concat(Vec<usize>),
    Upsample2x(usize),
    Sum(usize),
    Mean(usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
    shape: Shape,
    requires_grad: bool,
    grad: Option<Tensor>,
    /// Reductions keep their `f64` result for finite-difference checks.
    exact: Option<f64>,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that never records gradients and lets callers free values
    /// with [`Tape::release`].
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ..Tape::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let shape = value.shape();
        self.push_node(Node {
            op: Op::Leaf,
            value: Some(value),
            shape,
            requires_grad: requires_grad && self.recording,
            grad: None,
            exact: None,
        })
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn push_node(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        let i = self.idx(v)?;
        self.nodes[i].value.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("value of node {i} was released"))
        })
    }

    pub fn shape(&self, v: Var) -> Result<Shape> {
        Ok(self.nodes[self.idx(v)?].shape)
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.nodes[self.idx(v)?].requires_grad)
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Result<Option<&Tensor>> {
        Ok(self.nodes[self.idx(v)?].grad.as_ref())
    }

    pub fn take_grad(&mut self, v: Var) -> Result<Option<Tensor>> {
        let i = self.idx(v)?;
        Ok(self.nodes[i].grad.take())
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Scalar value of a one-element node, in `f64` where a reduction kept it.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let i = self.idx(v)?;
        let n = &self.nodes[i];
        if !n.shape.is_scalar() {
            return Err(Error::NonScalarOutput(n.shape.to_string()));
        }
        match n.exact {
            Some(e) => Ok(e),
            None => Ok(self.value(v)?.data()[0] as f64),
        }
    }

    /// Drops a value that is no longer needed. Only effective on inference
    /// tapes; a recording tape keeps everything for backward.
    pub fn release(&mut self, v: Var) -> Result<()> {
        let i = self.idx(v)?;
        if !self.recording {
            self.nodes[i].value = None;
        }
        Ok(())
    }

    pub fn take_value(&mut self, v: Var) -> Result<Tensor> {
        let i = self.idx(v)?;
        if self.recording {
            return Ok(self.value(v)?.clone());
        }
        self.nodes[i]
            .value
            .take()
            .ok_or_else(|| Error::InvalidArgument(format!("value of node {i} was released")))
    }

    fn record(&mut self, op: Op, inputs: &[usize], value: Tensor, name: &str) -> Result<Var> {
        value.ensure_finite(name)?;
        let requires_grad = self.recording && inputs.iter().any(|&i| self.nodes[i].requires_grad);
        let shape = value.shape();
        Ok(self.push_node(Node {
            op,
            value: Some(value),
            shape,
            requires_grad,
            grad: None,
            exact: None,
        }))
    }

    fn val(&self, i: usize) -> Result<&Tensor> {
        self.nodes[i]
            .value
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("value of node {i} was released")))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, p: &ConvParams) -> Result<Var> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        let out = ops::conv2d(
            self.val(xi)?,
            self.val(wi)?,
            bi.map(|b| self.val(b)).transpose()?,
            p,
        )?;
        let mut inputs = vec![xi, wi];
        inputs.extend(bi);
        self.record(Op::Conv2d { x: xi, w: wi, b: bi, p: *p }, &inputs, out, "conv2d")
    }

    pub fn deform_conv2d(
        &mut self,
        x: Var,
        offsets: Var,
        mask: Var,
        w: Var,
        b: Option<Var>,
        p: &DeformParams,
    ) -> Result<Var> {
        let (xi, oi, mi, wi) = (self.idx(x)?, self.idx(offsets)?, self.idx(mask)?, self.idx(w)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        let out = ops::deform_conv2d(
            self.val(xi)?,
            self.val(oi)?,
            self.val(mi)?,
            self.val(wi)?,
            bi.map(|b| self.val(b)).transpose()?,
            p,
        )?;
        let mut inputs = vec![xi, oi, mi, wi];
        inputs.extend(bi);
        let op = Op::DeformConv2d {
            x: xi,
            offsets: oi,
            mask: mi,
            w: wi,
            b: bi,
            p: *p,
        };
        self.record(op, &inputs, out, "deform_conv2d")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Result<Var> {
        let i = self.idx(x)?;
        let out = activation::leaky_relu(self.val(i)?, slope);
        self.record(Op::LeakyRelu(i, slope), &[i], out, "leaky_relu")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let out = activation::relu(self.val(i)?);
        self.record(Op::Relu(i), &[i], out, "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let out = activation::sigmoid(self.val(i)?);
        self.record(Op::Sigmoid(i), &[i], out, "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let out = activation::tanh(self.val(i)?);
        self.record(Op::Tanh(i), &[i], out, "tanh")
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f32, f32) -> f32,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let out = self.val(ai)?.zip_map(self.val(bi)?, f).map_err(|e| e.context(name))?;
        self.record(op(ai, bi), &[ai, bi], out, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Result<Var> {
        let i = self.idx(x)?;
        let out = self.val(i)?.map(|v| v * s);
        self.record(Op::Scale(i, s), &[i], out, "scale")
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let out = self.val(i)?.map(f32::abs);
        self.record(Op::Abs(i), &[i], out, "abs")
    }

    pub fn mu_law(&mut self, x: Var, mu: f32) -> Result<Var> {
        let i = self.idx(x)?;
        let out = radiometry::mu_law(self.val(i)?, mu)?;
        self.record(Op::MuLaw(i, mu), &[i], out, "mu_law")
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let idx = xs.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let vals = idx.iter().map(|&i| self.val(i)).collect::<Result<Vec<_>>>()?;
        let out = Tensor::concat_channels(&vals)?;
        self.record(Op::Concat(idx.clone()), &idx, out, "concat")
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let out = ops::upsample2x(self.val(i)?);
        self.record(Op::Upsample2x(i), &[i], out, "upsample2x")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let s = self.val(i)?.sum_f64();
        let v = self.record(Op::Sum(i), &[i], Tensor::scalar(s as f32), "sum")?;
        self.nodes[v.index].exact = Some(s);
        Ok(v)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let m = self.val(i)?.mean_f64();
        let v = self.record(Op::Mean(i), &[i], Tensor::scalar(m as f32), "mean")?;
        self.nodes[v.index].exact = Some(m);
        Ok(v)
    }

    /// Backpropagates from a scalar output with seed 1.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        let shape = self.shape(out)?;
        if !shape.is_scalar() {
            return Err(Error::NonScalarOutput(shape.to_string()));
        }
        self.backward_with(out, Tensor::ones(shape))
    }

    /// Backpropagates an explicit seed gradient shaped like `out`.
    pub fn backward_with(&mut self, out: Var, seed: Tensor) -> Result<()> {
        let oi = self.idx(out)?;
        if seed.shape() != self.nodes[oi].shape {
            return Err(Error::shape(
                "backward seed",
                format!("{} vs {}", seed.shape(), self.nodes[oi].shape),
            ));
        }
        if !self.nodes[oi].requires_grad {
            return Ok(());
        }
        let mut work: Vec<Option<Tensor>> = (0..=oi).map(|_| None).collect();
        work[oi] = Some(seed);
        for i in (0..=oi).rev() {
            let Some(g) = work[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.node_backward(i, g, &mut work)?;
        }
        Ok(())
    }

    fn node_backward(&mut self, i: usize, g: Tensor, work: &mut [Option<Tensor>]) -> Result<()> {
        let need = |t: &Tape, j: usize| t.nodes[j].requires_grad;
        match &self.nodes[i].op {
            Op::Leaf => {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&g)?,
                    None => node.grad = Some(g),
                }
            }
            Op::Conv2d { x, w, b, p } => {
                let (x, w, b, p) = (*x, *w, *b, *p);
                let want = [need(self, x), need(self, w), b.is_some_and(|b| need(self, b))];
                let grads = ops::conv2d_backward(self.val(x)?, self.val(w)?, &g, &p, want)?;
                accumulate(work, x, grads.input)?;
                accumulate(work, w, grads.weight)?;
                if let Some(b) = b {
                    accumulate(work, b, grads.bias)?;
                }
            }
            Op::DeformConv2d { x, offsets, mask, w, b, p } => {
                let (x, o, m, w, b, p) = (*x, *offsets, *mask, *w, *b, *p);
                let want = [
                    need(self, x),
                    need(self, o),
                    need(self, m),
                    need(self, w),
                    b.is_some_and(|b| need(self, b)),
                ];
                let grads = ops::deform_conv2d_backward(
                    self.val(x)?,
                    self.val(o)?,
                    self.val(m)?,
                    self.val(w)?,
                    &g,
                    &p,
                    want,
                )?;
                accumulate(work, x, grads.input)?;
                accumulate(work, o, grads.offsets)?;
                accumulate(work, m, grads.mask)?;
                accumulate(work, w, grads.weight)?;
                if let Some(b) = b {
                    accumulate(work, b, grads.bias)?;
                }
            }
            Op::LeakyRelu(x, slope) => {
                let gx = activation::leaky_relu_grad(self.val(*x)?, &g, *slope);
                accumulate(work, *x, Some(gx))?;
            }
            Op::Relu(x) => {
                let gx = activation::relu_grad(self.val(*x)?, &g);
                accumulate(work, *x, Some(gx))?;
            }
            Op::Sigmoid(x) => {
                let gx = activation::sigmoid_grad(self.val(i)?, &g);
                accumulate(work, *x, Some(gx))?;
            }
            Op::Tanh(x) => {
                let gx = activation::tanh_grad(self.val(i)?, &g);
                accumulate(work, *x, Some(gx))?;
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                if need(self, b) {
                    accumulate(work, b, Some(g.clone()))?;
                }
                accumulate(work, a, Some(g))?;
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                if need(self, b) {
                    accumulate(work, b, Some(g.map(|v| -v)))?;
                }
                accumulate(work, a, Some(g))?;
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if need(self, a) {
                    accumulate(work, a, Some(g.zip_map(self.val(b)?, |g, y| g * y)?))?;
                }
                if need(self, b) {
                    accumulate(work, b, Some(g.zip_map(self.val(a)?, |g, x| g * x)?))?;
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                accumulate(work, *x, Some(g.map(|v| v * s)))?;
            }
            Op::Abs(x) => {
                let gx = self.val(*x)?.zip_map(&g, |x, g| if x >= 0.0 { g } else { -g })?;
                accumulate(work, *x, Some(gx))?;
            }
            Op::MuLaw(x, mu) => {
                let gx = radiometry::mu_law_grad(self.val(*x)?, &g, *mu)?;
                accumulate(work, *x, Some(gx))?;
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts.clone().iter() {
                    let c = self.nodes[p].shape.c;
                    if need(self, p) {
                        accumulate(work, p, Some(g.channel_slice(start, c)?))?;
                    }
                    start += c;
                }
            }
            Op::Upsample2x(x) => {
                let gx = ops::upsample2x_backward(&g, self.nodes[*x].shape)?;
                accumulate(work, *x, Some(gx))?;
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                accumulate(work, *x, Some(Tensor::full(self.nodes[*x].shape, gv)))?;
            }
            Op::Mean(x) => {
                let s = self.nodes[*x].shape;
                let gv = (g.data()[0] as f64 / s.numel().max(1) as f64) as f32;
                accumulate(work, *x, Some(Tensor::full(s, gv)))?;
            }
        }
        Ok(())
    }
}

fn accumulate(work: &mut [Option<Tensor>], i: usize, g: Option<Tensor>) -> Result<()> {
    let Some(g) = g else { return Ok(()) };
    match &mut work[i] {
        Some(acc) => acc.add_assign(&g)?,
        slot @ None => *slot = Some(g),
    }
    Ok(())
}

/// Largest relative disagreement between the tape gradient of scalar `f` at
/// `x` and a central finite difference with step `eps`.
///
/// Per element the error is `|a - n| / max(|a|, |n|, 1e-8)`. The numeric
/// derivative divides by the perturbation actually representable in `f32`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = f(&mut tape, xv)?;
    tape.backward(out)?;
    let analytic = tape
        .grad(xv)?
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(t.clone());
        let out = f(&mut tape, v)?;
        let s = tape.scalar(out)?;
        if s.is_finite() {
            Ok(s)
        } else {
            Err(Error::NonFinite {
                context: "grad_check objective".into(),
            })
        }
    };

    let mut worst = 0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        let hi = (orig as f64 + eps) as f32;
        let lo = (orig as f64 - eps) as f32;
        probe.data_mut()[i] = hi;
        let f_hi = eval(&probe)?;
        probe.data_mut()[i] = lo;
        let f_lo = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (f_hi - f_lo) / (hi as f64 - lo as f64);
        let a = analytic.data()[i] as f64;
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
