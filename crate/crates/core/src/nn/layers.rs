//! Dense and convolutional layers.

use std::rc::Rc;

use rand::Rng;

use super::graph::IndexMap;
use super::{ParamGroup, ParamId, ParamStore, Session, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `y = x W + b`, with `W` stored as `(in, out)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add_normal(format!("{name}.weight"), group, &[in_dim, out_dim], rng);
        let bias = bias.then(|| store.add(format!("{name}.bias"), group, Tensor::zeros(&[1, out_dim])));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let shape = s.graph.shape(x);
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::Shape(format!(
                "linear expects (N, {}), got {:?}",
                self.in_dim, shape
            )));
        }
        let w = s.param(self.weight);
        let y = s.graph.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = s.param(b);
                s.graph.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Square-kernel 2-d convolution implemented as im2col + matmul.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: ParamGroup,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let weight = store.add_normal(
            format!("{name}.weight"),
            group,
            &[in_channels * kernel * kernel, out_channels],
            rng,
        );
        let bias = store.add(
            format!("{name}.bias"),
            group,
            Tensor::zeros(&[1, out_channels, 1, 1]),
        );
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |d: usize| (d + 2 * self.padding - self.kernel) / self.stride + 1;
        (f(h), f(w))
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let shape = s.graph.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects (N, {}, H, W), got {:?}",
                self.in_channels, shape
            )));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let (oh, ow) = self.output_hw(h, w);
        let k = self.kernel;
        let pad = self.padding as isize;

        let mut index = Vec::with_capacity(n * oh * ow * c * k * k);
        for b in 0..n {
            for y in 0..oh {
                for xo in 0..ow {
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * self.stride + ky) as isize - pad;
                                let ix = (xo * self.stride + kx) as isize - pad;
                                let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                                index.push(inside.then(|| ((b * c + ci) * h + iy as usize) * w + ix as usize));
                            }
                        }
                    }
                }
            }
        }
        let im2col = Rc::new(IndexMap {
            src_shape: shape.clone(),
            out_shape: vec![n * oh * ow, c * k * k],
            index,
        });

        let o = self.out_channels;
        let mut index = Vec::with_capacity(n * o * oh * ow);
        for b in 0..n {
            for oc in 0..o {
                for y in 0..oh {
                    for xo in 0..ow {
                        index.push(Some(((b * oh + y) * ow + xo) * o + oc));
                    }
                }
            }
        }
        let to_nchw = Rc::new(IndexMap {
            src_shape: vec![n * oh * ow, o],
            out_shape: vec![n, o, oh, ow],
            index,
        });

        let cols = s.graph.gather(x, im2col)?;
        let wv = s.param(self.weight);
        let y = s.graph.matmul(cols, wv)?;
        let y = s.graph.gather(y, to_nchw)?;
        let b = s.param(self.bias);
        s.graph.add(y, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    pub fn forward(self, s: &mut Session, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => s.graph.relu(x),
            Activation::LeakyRelu(a) => s.graph.leaky_relu(x, a),
            Activation::Tanh => s.graph.tanh(x),
        }
    }
}
