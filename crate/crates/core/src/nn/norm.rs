//! Batch normalization and the layer-normalization variants for
//! `(N, C, H, W)` activations.
//!
//! Layer norm pools (μ, σ²) per sample, either over all C·H·W positions
//! (`StatsScope::Singleton`) or per channel over H·W (`StatsScope::PerChannel`).
//! Its gain and bias are shaped `(1, C, 1, 1)` (`ParamScope::PerChannel`) or
//! `(1, 1, H, W)` (`ParamScope::PerPixel`) and broadcast. Batch norm pools
//! per channel over (N, H, W). Both use the biased variance and put ε
//! inside the square root.
//!
//! Dense `(N, D)` activations are treated as `(N, D, 1, 1)`.

use crate::config::{NormalizationKind, ParamScope, StatsScope};
use crate::error::{Error, Result};
use crate::tensor::{broadcast_shape, Tensor};

use super::{Graph, ParamGroup, ParamId, ParamStore, Session, Var};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Shape of layer-norm gain/bias for a `(C, H, W)` activation.
pub fn layer_norm_param_shape(scope: ParamScope, c: usize, h: usize, w: usize) -> Vec<usize> {
    match scope {
        ParamScope::PerChannel => vec![1, c, 1, 1],
        ParamScope::PerPixel => vec![1, 1, h, w],
    }
}

/// Shape of the per-sample statistics tensor for an `(N, C, H, W)` input.
pub fn layer_norm_stats_shape(scope: StatsScope, x_shape: &[usize]) -> Vec<usize> {
    match scope {
        StatsScope::Singleton => vec![x_shape[0], 1, 1, 1],
        StatsScope::PerChannel => vec![x_shape[0], x_shape[1], 1, 1],
    }
}

/// `y = g ⊙ (x − μ)/sqrt(σ² + ε) + b` on the tape.
pub fn layer_norm(
    g: &mut Graph,
    x: Var,
    gain: Var,
    bias: Var,
    stats: StatsScope,
    eps: f64,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 4 {
        return Err(Error::Shape(format!("layer norm expects (N, C, H, W), got {shape:?}")));
    }
    for p in [gain, bias] {
        if broadcast_shape(&shape, g.shape(p))? != shape {
            return Err(Error::Shape(format!(
                "layer norm parameter {:?} does not broadcast to {:?}",
                g.shape(p),
                shape
            )));
        }
    }
    let stat_shape = layer_norm_stats_shape(stats, &shape);
    let count = (shape.iter().product::<usize>() / stat_shape.iter().product::<usize>()) as f64;
    let s = g.sum_to(x, &stat_shape)?;
    let mu = g.scale(s, 1.0 / count)?;
    let xc = g.sub(x, mu)?;
    let sq = g.square(xc)?;
    let ss = g.sum_to(sq, &stat_shape)?;
    let var = g.scale(ss, 1.0 / count)?;
    let ve = g.offset(var, eps)?;
    let inv = g.powf(ve, -0.5)?;
    let xhat = g.mul(xc, inv)?;
    let y = g.mul(xhat, gain)?;
    g.add(y, bias)
}

/// Layer norm on plain tensors.
pub fn layer_norm_forward(
    x: &Tensor,
    stats: StatsScope,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let gv = g.leaf(gain.clone());
    let bv = g.leaf(bias.clone());
    let y = layer_norm(&mut g, xv, gv, bv, stats, eps)?;
    Ok(g.value(y).clone())
}

/// Batch norm on plain tensors with batch statistics (training mode).
pub fn batch_norm_forward(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    if x.shape()[0] < 2 {
        return Err(Error::Invalid("batch norm in training mode needs batch size >= 2".into()));
    }
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let gv = g.leaf(gain.clone());
    let bv = g.leaf(bias.clone());
    let (xhat, _, _) = g.batch_standardize(xv, eps)?;
    let y = g.mul(xhat, gv)?;
    let y = g.add(y, bv)?;
    Ok(g.value(y).clone())
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub stats: StatsScope,
    pub params: ParamScope,
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    /// For an activation of per-sample shape `(c, h, w)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        stats: StatsScope,
        params: ParamScope,
        c: usize,
        h: usize,
        w: usize,
    ) -> Self {
        let shape = layer_norm_param_shape(params, c, h, w);
        let gain = store.add(format!("{name}.gain"), group, Tensor::full(&shape, 1.0));
        let bias = store.add(format!("{name}.bias"), group, Tensor::zeros(&shape));
        Self {
            stats,
            params,
            gain,
            bias,
            eps: NORM_EPS,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let gain = s.param(self.gain);
        let bias = s.param(self.bias);
        layer_norm(&mut s.graph, x, gain, bias, self.stats, self.eps)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    /// `rank` is the rank of the activations (2 for dense, 4 for conv).
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, channels: usize, rank: usize) -> Self {
        let mut shape = vec![1; rank];
        shape[1] = channels;
        let gain = store.add(format!("{name}.gain"), group, Tensor::full(&shape, 1.0));
        let bias = store.add(format!("{name}.bias"), group, Tensor::zeros(&shape));
        let running_mean = store.add(
            format!("{name}.running_mean"),
            ParamGroup::Buffer,
            Tensor::zeros(&[channels]),
        );
        let running_var = store.add(
            format!("{name}.running_var"),
            ParamGroup::Buffer,
            Tensor::full(&[channels], 1.0),
        );
        Self {
            gain,
            bias,
            running_mean,
            running_var,
            eps: NORM_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let shape = s.graph.shape(x).to_vec();
        let c = shape[1];
        let xhat = if s.is_train() {
            if shape[0] < 2 {
                return Err(Error::Invalid(
                    "batch norm in training mode needs batch size >= 2".into(),
                ));
            }
            let (xhat, mean, var) = s.graph.batch_standardize(x, self.eps)?;
            let m = self.momentum;
            let rm: Vec<f64> = s
                .buffer(self.running_mean)
                .data()
                .iter()
                .zip(&mean)
                .map(|(r, b)| (1.0 - m) * r + m * b)
                .collect();
            let rv: Vec<f64> = s
                .buffer(self.running_var)
                .data()
                .iter()
                .zip(&var)
                .map(|(r, b)| (1.0 - m) * r + m * b)
                .collect();
            s.record_buffer(self.running_mean, Tensor::new(vec![c], rm)?);
            s.record_buffer(self.running_var, Tensor::new(vec![c], rv)?);
            xhat
        } else {
            let mut stat_shape = vec![1; shape.len()];
            stat_shape[1] = c;
            let mean = s.buffer(self.running_mean).reshape(&stat_shape)?;
            let inv = s
                .buffer(self.running_var)
                .map(|v| 1.0 / (v + self.eps).sqrt())
                .reshape(&stat_shape)?;
            let mv = s.input(mean);
            let iv = s.input(inv);
            let xc = s.graph.sub(x, mv)?;
            s.graph.mul(xc, iv)?
        };
        let gain = s.param(self.gain);
        let bias = s.param(self.bias);
        let y = s.graph.mul(xhat, gain)?;
        s.graph.add(y, bias)
    }
}

/// Normalization slot of a hidden layer.
#[derive(Clone, Debug)]
pub enum Norm {
    None,
    Layer(LayerNorm),
    Batch(BatchNorm),
}

impl Norm {
    /// Builds the configured normalization for activations of per-sample
    /// shape `(c, h, w)`; `rank` is 2 for dense layers, 4 for conv layers.
    pub fn build(
        kind: NormalizationKind,
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        (c, h, w): (usize, usize, usize),
        rank: usize,
    ) -> Self {
        match kind {
            NormalizationKind::NoNorm => Norm::None,
            NormalizationKind::BatchNorm => Norm::Batch(BatchNorm::new(store, name, group, c, rank)),
            NormalizationKind::LayerNorm { stats, params } => {
                Norm::Layer(LayerNorm::new(store, name, group, stats, params, c, h, w))
            }
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        match self {
            Norm::None => Ok(x),
            Norm::Batch(bn) => bn.forward(s, x),
            Norm::Layer(ln) => {
                let shape = s.graph.shape(x).to_vec();
                if shape.len() == 2 {
                    let x4 = s.graph.reshape(x, &[shape[0], shape[1], 1, 1])?;
                    let y = ln.forward(s, x4)?;
                    s.graph.reshape(y, &shape)
                } else {
                    ln.forward(s, x)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_maps_to_bias() {
        let x = Tensor::full(&[2, 3, 2, 2], 5.0);
        for stats in [StatsScope::Singleton, StatsScope::PerChannel] {
            let g = Tensor::full(&[1, 3, 1, 1], 1.0);
            let b = Tensor::zeros(&[1, 3, 1, 1]);
            let y = layer_norm_forward(&x, stats, &g, &b, NORM_EPS).unwrap();
            assert!(y.max_abs() <= 5.0 * NORM_EPS.sqrt());
            let g = Tensor::full(&[1, 1, 2, 2], 7.5);
            let b = Tensor::full(&[1, 1, 2, 2], 3.0);
            let y = layer_norm_forward(&x, stats, &g, &b, NORM_EPS).unwrap();
            assert!(y.data().iter().all(|v| (v - 3.0).abs() < 1e-12));
        }
    }

    #[test]
    fn mismatched_parameters_are_rejected() {
        let x = Tensor::zeros(&[2, 3, 2, 2]);
        let g = Tensor::full(&[1, 2, 1, 1], 1.0);
        assert!(layer_norm_forward(&x, StatsScope::Singleton, &g, &g, NORM_EPS).is_err());
    }

    #[test]
    fn batch_norm_constant_batch_gives_bias() {
        let x = Tensor::full(&[4, 2], 3.3);
        let g = Tensor::full(&[1, 2], 2.0);
        let b = Tensor::full(&[1, 2], -2.0);
        let y = batch_norm_forward(&x, &g, &b, NORM_EPS).unwrap();
        assert!(y.data().iter().all(|v| (v + 2.0).abs() < 1e-12));
        let one = Tensor::full(&[1, 2], 3.3);
        assert!(batch_norm_forward(&one, &g, &b, NORM_EPS).is_err());
    }
}
