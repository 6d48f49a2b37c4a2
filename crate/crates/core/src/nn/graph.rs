//! Reverse-mode automatic differentiation on a per-step tape.
//!
//! Every backward rule is written in terms of other graph operations, so the
//! gradients returned by [`Graph::grad`] are themselves nodes of the graph and
//! can be differentiated again. That is what makes penalties on
//! `‖∇ₓ h(x)‖` trainable. The one exception is the fused batch-normalization
//! kernel, whose backward node refuses a second differentiation.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Linear re-indexing `out[i] = src[index[i]]` (zero where the index is absent).
///
/// Covers transposes of 4-d tensors, im2col and the like; its adjoint is a
/// scatter-add with the same map.
#[derive(Debug)]
pub struct IndexMap {
    pub src_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub index: Vec<Option<usize>>,
}

impl IndexMap {
    fn gather(&self, src: &Tensor) -> Tensor {
        let d = src.data();
        let data = self.index.iter().map(|i| i.map_or(0.0, |i| d[i])).collect();
        Tensor::new(self.out_shape.clone(), data).expect("index map shape")
    }

    fn scatter_add(&self, g: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(&self.src_shape);
        let o = out.data_mut();
        for (&i, &v) in self.index.iter().zip(g.data()) {
            if let Some(i) = i {
                o[i] += v;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Powf(Var, f64),
    LeakyRelu(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    BroadcastTo(Var),
    SumTo(Var),
    Gather(Var, Rc<IndexMap>),
    ScatterAdd(Var, Rc<IndexMap>),
    /// Per-channel standardization over (N, H, W); output is x̂.
    BatchStandardize {
        x: Var,
        inv_std: Rc<Vec<f64>>,
    },
    /// First-order backward of `BatchStandardize`; parents are (x̂, upstream).
    BatchStandardizeGrad {
        xhat: Var,
        upstream: Var,
    },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => vec![*a, *b],
            Neg(a) | Scale(a, _) | Offset(a) | Exp(a) | Log(a) | Tanh(a) | Powf(a, _)
            | LeakyRelu(a, _) | Transpose(a) | Reshape(a) | BroadcastTo(a) | SumTo(a)
            | Gather(a, _) | ScatterAdd(a, _) => vec![*a],
            BatchStandardize { x, .. } => vec![*x],
            BatchStandardizeGrad { xhat, upstream, .. } => vec![*xhat, *upstream],
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Div(..) => "div",
            Neg(..) => "neg",
            Scale(..) => "scale",
            Offset(..) => "offset",
            Exp(..) => "exp",
            Log(..) => "log",
            Tanh(..) => "tanh",
            Powf(..) => "powf",
            LeakyRelu(..) => "leaky_relu",
            MatMul(..) => "matmul",
            Transpose(..) => "transpose",
            Reshape(..) => "reshape",
            BroadcastTo(..) => "broadcast_to",
            SumTo(..) => "sum_to",
            Gather(..) => "gather",
            ScatterAdd(..) => "scatter_add",
            BatchStandardize { .. } => "batch_norm",
            BatchStandardizeGrad { .. } => "batch_norm_backward",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A tape of tensor operations. Build one per training step.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Inserts a leaf. Leaves are differentiable iff they appear in a `wrt` list.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        tensor::zip_broadcast(self.value(a), self.value(b), f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x + y)?;
        self.push(t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x - y)?;
        self.push(t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x * y)?;
        self.push(t, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x / y)?;
        self.push(t, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|x| -x);
        self.push(t, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a).map(|x| c * x);
        self.push(t, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a).map(|x| x + c);
        self.push(t, Op::Offset(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(f64::exp);
        self.push(t, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(f64::ln);
        self.push(t, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        let t = self.value(a).map(|x| x.powf(p));
        self.push(t, Op::Powf(a, p))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let t = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(t, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.leaky_relu(a, 0.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = tensor::matmul(self.value(a), self.value(b))?;
        self.push(t, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = tensor::transpose(self.value(a))?;
        self.push(t, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        self.push(t, Op::Reshape(a))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = tensor::broadcast_to(self.value(a), shape)?;
        self.push(t, Op::BroadcastTo(a))
    }

    /// Sums over every axis where `shape` has extent 1.
    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = tensor::sum_to(self.value(a), shape)?;
        self.push(t, Op::SumTo(a))
    }

    /// Sum of all entries, as a shape-`[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ones = vec![1; self.shape(a).len()];
        let s = self.sum_to(a, &ones)?;
        self.reshape(s, &[1])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::Invalid("mean of an empty tensor".into()));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Sums every non-leading axis: `(N, ...) -> (N, 1)`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut keep = vec![1; shape.len()];
        keep[0] = shape[0];
        let s = self.sum_to(a, &keep)?;
        self.reshape(s, &[shape[0], 1])
    }

    pub fn gather(&mut self, a: Var, map: Rc<IndexMap>) -> Result<Var> {
        if self.shape(a) != map.src_shape.as_slice() {
            return Err(Error::Shape(format!(
                "gather source {:?} vs map {:?}",
                self.shape(a),
                map.src_shape
            )));
        }
        let t = map.gather(self.value(a));
        self.push(t, Op::Gather(a, map))
    }

    fn scatter_add(&mut self, a: Var, map: Rc<IndexMap>) -> Result<Var> {
        let t = map.scatter_add(self.value(a));
        self.push(t, Op::ScatterAdd(a, map))
    }

    /// Row-wise `log(Σ exp(z))` for a `(N, K)` input, stabilized by the
    /// (constant) row maximum.
    pub fn logsumexp_rows(&mut self, z: Var) -> Result<Var> {
        let zt = self.value(z);
        let (n, k) = (zt.shape()[0], zt.shape()[1]);
        let maxes: Vec<f64> = (0..n)
            .map(|i| zt.row(i).iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)))
            .collect();
        if maxes.iter().any(|m| !m.is_finite()) || k == 0 {
            return Err(Error::NonFinite("logsumexp input".into()));
        }
        let m = self.leaf(Tensor::new(vec![n, 1], maxes)?);
        let shifted = self.sub(z, m)?;
        let e = self.exp(shifted)?;
        let s = self.sum_rows(e)?;
        let l = self.log(s)?;
        self.add(l, m)
    }

    pub fn log_softmax_rows(&mut self, z: Var) -> Result<Var> {
        let lse = self.logsumexp_rows(z)?;
        self.sub(z, lse)
    }

    pub fn softmax_rows(&mut self, z: Var) -> Result<Var> {
        let ls = self.log_softmax_rows(z)?;
        self.exp(ls)
    }

    /// Per-channel standardization over the batch and spatial axes of a
    /// `(N, C)` or `(N, C, H, W)` input, with ε inside the square root.
    pub fn batch_standardize(&mut self, x: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let xt = self.value(x);
        let shape = xt.shape().to_vec();
        let (n, c) = (shape[0], shape[1]);
        let hw: usize = shape[2..].iter().product();
        let count = (n * hw) as f64;
        let d = xt.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for s in 0..n {
            for (ch, m) in mean.iter_mut().enumerate() {
                let base = (s * c + ch) * hw;
                *m += d[base..base + hw].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                var[ch] += d[base..base + hw]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = vec![0.0; d.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for j in base..base + hw {
                    out[j] = (d[j] - mean[ch]) * inv_std[ch];
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        let v = self.push(
            t,
            Op::BatchStandardize {
                x,
                inv_std: Rc::new(inv_std),
            },
        )?;
        Ok((v, mean, var))
    }

    fn batch_standardize_grad(&mut self, xhat: Var, upstream: Var, inv_std: &[f64]) -> Result<Var> {
        let xh = self.value(xhat);
        let dy = self.value(upstream);
        let shape = xh.shape().to_vec();
        let (n, c) = (shape[0], shape[1]);
        let hw: usize = shape[2..].iter().product();
        let count = (n * hw) as f64;
        let (xd, gd) = (xh.data(), dy.data());
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for j in base..base + hw {
                    sum_dy[ch] += gd[j];
                    sum_dy_xhat[ch] += gd[j] * xd[j];
                }
            }
        }
        let mut out = vec![0.0; xd.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for j in base..base + hw {
                    out[j] = inv_std[ch] / count
                        * (count * gd[j] - sum_dy[ch] - xd[j] * sum_dy_xhat[ch]);
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        self.push(
            t,
            Op::BatchStandardizeGrad { xhat, upstream },
        )
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// The returned vars live in this graph and may be differentiated again.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.value(output).numel() != 1 {
            return Err(Error::Shape(format!(
                "grad of non-scalar output {:?}",
                self.shape(output)
            )));
        }
        let top = output.0;
        let mut depends = vec![false; top + 1];
        for w in wrt {
            if w.0 <= top {
                depends[w.0] = true;
            }
        }
        for i in 0..=top {
            if !depends[i] {
                depends[i] = self.nodes[i].op.parents().iter().any(|p| depends[p.0]);
            }
        }

        let mut grads: Vec<Option<Var>> = vec![None; top + 1];
        let seed_shape = self.shape(output).to_vec();
        grads[top] = Some(self.leaf(Tensor::full(&seed_shape, 1.0)));

        for i in (0..=top).rev() {
            let Some(g) = grads[i] else { continue };
            if !depends[i] {
                continue;
            }
            for (parent, contrib) in self.backward_node(i, g, &depends)? {
                grads[parent.0] = Some(match grads[parent.0] {
                    Some(acc) => self.add(acc, contrib)?,
                    None => contrib,
                });
            }
        }

        wrt.iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.shape(*w).to_vec();
                    Ok(self.leaf(Tensor::zeros(&shape)))
                }
            })
            .collect()
    }

    fn backward_node(&mut self, i: usize, g: Var, depends: &[bool]) -> Result<Vec<(Var, Var)>> {
        let out = Var(i);
        let needs = |v: &Var| depends[v.0];
        let mut contribs = Vec::new();
        let op = self.nodes[i].op.clone();
        if let Op::BatchStandardizeGrad { .. } = op {
            return Err(Error::NoHigherOrder("batch_norm"));
        }
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(&a) {
                    contribs.push((a, self.reduce_like(g, a)?));
                }
                if needs(&b) {
                    contribs.push((b, self.reduce_like(g, b)?));
                }
            }
            Op::Sub(a, b) => {
                if needs(&a) {
                    contribs.push((a, self.reduce_like(g, a)?));
                }
                if needs(&b) {
                    let r = self.reduce_like(g, b)?;
                    contribs.push((b, self.neg(r)?));
                }
            }
            Op::Mul(a, b) => {
                if needs(&a) {
                    let t = self.mul(g, b)?;
                    contribs.push((a, self.reduce_like(t, a)?));
                }
                if needs(&b) {
                    let t = self.mul(g, a)?;
                    contribs.push((b, self.reduce_like(t, b)?));
                }
            }
            Op::Div(a, b) => {
                if needs(&a) {
                    let t = self.div(g, b)?;
                    contribs.push((a, self.reduce_like(t, a)?));
                }
                if needs(&b) {
                    let t = self.mul(g, out)?;
                    let t = self.div(t, b)?;
                    let t = self.neg(t)?;
                    contribs.push((b, self.reduce_like(t, b)?));
                }
            }
            Op::Neg(a) => contribs.push((a, self.neg(g)?)),
            Op::Scale(a, c) => contribs.push((a, self.scale(g, c)?)),
            Op::Offset(a) => contribs.push((a, g)),
            Op::Exp(a) => contribs.push((a, self.mul(g, out)?)),
            Op::Log(a) => contribs.push((a, self.div(g, a)?)),
            Op::Tanh(a) => {
                let sq = self.square(out)?;
                let t = self.mul(g, sq)?;
                contribs.push((a, self.sub(g, t)?));
            }
            Op::Powf(a, p) => {
                let d = self.powf(a, p - 1.0)?;
                let t = self.mul(g, d)?;
                contribs.push((a, self.scale(t, p)?));
            }
            Op::LeakyRelu(a, slope) => {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { slope });
                let m = self.leaf(mask);
                contribs.push((a, self.mul(g, m)?));
            }
            Op::MatMul(a, b) => {
                if needs(&a) {
                    let bt = self.transpose(b)?;
                    contribs.push((a, self.matmul(g, bt)?));
                }
                if needs(&b) {
                    let at = self.transpose(a)?;
                    contribs.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(a) => contribs.push((a, self.transpose(g)?)),
            Op::Reshape(a) => {
                let shape = self.shape(a).to_vec();
                contribs.push((a, self.reshape(g, &shape)?));
            }
            Op::BroadcastTo(a) => contribs.push((a, self.reduce_like(g, a)?)),
            Op::SumTo(a) => {
                let shape = self.shape(a).to_vec();
                contribs.push((a, self.broadcast_to(g, &shape)?));
            }
            Op::Gather(a, m) => contribs.push((a, self.scatter_add(g, m)?)),
            Op::ScatterAdd(a, m) => contribs.push((a, self.gather(g, m)?)),
            Op::BatchStandardize { x, inv_std } => {
                contribs.push((x, self.batch_standardize_grad(out, g, &inv_std)?));
            }
            Op::BatchStandardizeGrad { .. } => unreachable!(),
        }
        Ok(contribs)
    }

    fn reduce_like(&mut self, g: Var, like: Var) -> Result<Var> {
        if self.shape(g) == self.shape(like) {
            return Ok(g);
        }
        let shape = self.shape(like).to_vec();
        self.sum_to(g, &shape)
    }
}
