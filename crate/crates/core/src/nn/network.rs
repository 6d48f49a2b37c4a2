//! The critic backbone Φ_ω and the generator g_θ.

use rand::Rng;

use super::layers::{Activation, Conv2d, Linear};
use super::norm::Norm;
use super::{ParamGroup, ParamStore, Session, Var};
use crate::config::{BackboneSpec, NormalizationKind};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Block {
    Dense { linear: Linear, norm: Norm },
    Conv { conv: Conv2d, norm: Norm },
    Flatten,
    /// Dense projection after the conv stack; activation but no normalization.
    Projection(Linear),
}

/// Φ_ω: maps samples of `input_shape` to `feature_dim` features.
///
/// Every hidden block is `affine → norm → leaky ReLU`, with the same
/// normalization kind throughout.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    blocks: Vec<Block>,
    input_shape: Vec<usize>,
    feature_dim: usize,
    activation: Activation,
}

impl FeatureExtractor {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        spec: &BackboneSpec,
        norm: NormalizationKind,
        input_shape: &[usize],
        leaky_slope: f64,
    ) -> Result<Self> {
        let group = ParamGroup::Backbone;
        let mut blocks = Vec::new();
        match spec {
            BackboneSpec::Mlp { hidden, feature_dim } => {
                let mut width: usize = input_shape.iter().product();
                for (i, &out) in hidden.iter().chain(std::iter::once(feature_dim)).enumerate() {
                    let name = format!("critic.phi.{i}");
                    let linear = Linear::new(store, rng, &name, group, width, out, true);
                    let norm = Norm::build(norm, store, &format!("{name}.norm"), group, (out, 1, 1), 2);
                    blocks.push(Block::Dense { linear, norm });
                    width = out;
                }
            }
            BackboneSpec::Conv {
                channels,
                strides,
                feature_dim,
            } => {
                let [mut c, mut h, mut w] = <[usize; 3]>::try_from(input_shape)
                    .map_err(|_| Error::Shape(format!("conv backbone needs (C, H, W) input, got {input_shape:?}")))?;
                for (i, (&out, &stride)) in channels.iter().zip(strides).enumerate() {
                    let name = format!("critic.phi.conv{i}");
                    let conv = Conv2d::new(store, rng, &name, group, c, out, 3, stride, 1);
                    (h, w) = conv.output_hw(h, w);
                    c = out;
                    let norm = Norm::build(norm, store, &format!("{name}.norm"), group, (c, h, w), 4);
                    blocks.push(Block::Conv { conv, norm });
                }
                blocks.push(Block::Flatten);
                blocks.push(Block::Projection(Linear::new(
                    store,
                    rng,
                    "critic.phi.proj",
                    group,
                    c * h * w,
                    *feature_dim,
                    true,
                )));
            }
        }
        Ok(Self {
            blocks,
            input_shape: input_shape.to_vec(),
            feature_dim: spec.feature_dim(),
            activation: Activation::LeakyRelu(leaky_slope),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// `x` is `(N, *input_shape)`; returns `(N, feature_dim)`.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let shape = s.graph.shape(x).to_vec();
        if shape[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!(
                "critic expects samples of shape {:?}, got {:?}",
                self.input_shape,
                &shape[1..]
            )));
        }
        let n = shape[0];
        let mut h = x;
        if matches!(self.blocks.first(), Some(Block::Dense { .. })) && shape.len() != 2 {
            h = s.graph.reshape(h, &[n, shape[1..].iter().product()])?;
        }
        for block in &self.blocks {
            h = match block {
                Block::Dense { linear, norm } => {
                    let y = linear.forward(s, h)?;
                    let y = norm.forward(s, y)?;
                    self.activation.forward(s, y)?
                }
                Block::Conv { conv, norm } => {
                    let y = conv.forward(s, h)?;
                    let y = norm.forward(s, y)?;
                    self.activation.forward(s, y)?
                }
                Block::Flatten => {
                    let d: usize = s.graph.shape(h)[1..].iter().product();
                    s.graph.reshape(h, &[n, d])?
                }
                Block::Projection(linear) => {
                    let y = linear.forward(s, h)?;
                    self.activation.forward(s, y)?
                }
            };
        }
        Ok(h)
    }
}

/// g_θ: dense layers with batch norm and ReLU, then a linear output reshaped
/// to the sample shape (tanh for image data, identity otherwise).
#[derive(Clone, Debug)]
pub struct Generator {
    hidden: Vec<(Linear, Norm)>,
    output: Linear,
    output_activation: Activation,
    noise_dim: usize,
    sample_shape: Vec<usize>,
}

impl Generator {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        noise_dim: usize,
        hidden: &[usize],
        sample_shape: &[usize],
    ) -> Self {
        let group = ParamGroup::Generator;
        let mut layers = Vec::new();
        let mut width = noise_dim;
        for (i, &out) in hidden.iter().enumerate() {
            let name = format!("gen.{i}");
            let linear = Linear::new(store, rng, &name, group, width, out, true);
            let norm = Norm::build(
                NormalizationKind::BatchNorm,
                store,
                &format!("{name}.bn"),
                group,
                (out, 1, 1),
                2,
            );
            layers.push((linear, norm));
            width = out;
        }
        let out_dim = sample_shape.iter().product();
        let output = Linear::new(store, rng, "gen.out", group, width, out_dim, true);
        let output_activation = if sample_shape.len() == 3 {
            Activation::Tanh
        } else {
            Activation::Identity
        };
        Self {
            hidden: layers,
            output,
            output_activation,
            noise_dim,
            sample_shape: sample_shape.to_vec(),
        }
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// `z` is `(N, noise_dim)`; returns `(N, *sample_shape)`.
    pub fn forward(&self, s: &mut Session, z: Var) -> Result<Var> {
        let n = s.graph.shape(z)[0];
        let mut h = z;
        for (linear, norm) in &self.hidden {
            let y = linear.forward(s, h)?;
            let y = norm.forward(s, y)?;
            h = s.graph.relu(y)?;
        }
        let y = self.output.forward(s, h)?;
        let y = self.output_activation.forward(s, y)?;
        let mut shape = vec![n];
        shape.extend_from_slice(&self.sample_shape);
        s.graph.reshape(y, &shape)
    }
}
