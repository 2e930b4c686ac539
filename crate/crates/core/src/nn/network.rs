//! Declarative encoder-decoder networks with skip connections.
//!
//! A [`NetworkSpec`] is an ordered list of layers. `Concat { from }` appends
//! the output of an earlier layer (the encoder side) in front of the current
//! decoder tensor along the channel axis; `(from, index)` pairs are the skip
//! connections.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::activation::{maxpool2, maxpool2_backward, relu, relu_backward, softmax_backward, softmax_channels};
use crate::nn::batchnorm::{BatchNorm2d, BatchNormCache, Mode};
use crate::nn::conv::{effective_kernel, Conv2d, TransposeConv2d};
use crate::nn::Param;
use crate::tensor::{Shape, Tensor};

/// Architecture family. `Custom` skips the atrous-block count check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "AC")]
    Atrous,
    #[serde(rename = "SC")]
    Standard,
    #[serde(rename = "custom")]
    Custom,
}

/// Number of dilated convolutions required in the atrous bridge.
pub const ATROUS_BLOCKS: usize = 4;
pub const ATROUS_DILATION: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerDesc {
    /// Stride-1 convolution with "same" padding.
    Conv {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        dilation: usize,
    },
    BatchNorm,
    Relu,
    MaxPool,
    TransposeConv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    },
    Concat {
        from: usize,
    },
    Softmax,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SkipPair {
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub variant: Variant,
    pub in_channels: usize,
    pub classes: usize,
    pub layers: Vec<LayerDesc>,
}

impl NetworkSpec {
    /// Symmetric encoder-decoder: one `(conv3×3, BN, ReLU) ×2, maxpool`
    /// block per entry of `encoder`, a four-block bridge at
    /// `bridge_channels` (dilation 2 for [`Variant::Atrous`]), then per level
    /// an upsampling transpose conv, a skip concat and two conv blocks. Ends
    /// in a 1×1 conv to `classes` channels and a channel softmax.
    ///
    /// The atrous variant upsamples with 5×5 stride-2 transpose convs
    /// followed by BN and ReLU; the standard variant uses bare 2×2 stride-2
    /// transpose convs.
    pub fn encoder_decoder(
        variant: Variant,
        in_channels: usize,
        classes: usize,
        encoder: &[usize],
        bridge_channels: usize,
    ) -> NetworkSpec {
        let mut layers = Vec::new();
        let block = |layers: &mut Vec<LayerDesc>, out: usize, dilation: usize| {
            layers.push(LayerDesc::Conv {
                out_channels: out,
                kernel: 3,
                dilation,
            });
            layers.push(LayerDesc::BatchNorm);
            layers.push(LayerDesc::Relu);
        };
        let mut skips = Vec::new();
        for &ch in encoder {
            block(&mut layers, ch, 1);
            block(&mut layers, ch, 1);
            skips.push((layers.len() - 1, ch));
            layers.push(LayerDesc::MaxPool);
        }
        let bridge_dilation = match variant {
            Variant::Atrous => ATROUS_DILATION,
            _ => 1,
        };
        for _ in 0..ATROUS_BLOCKS {
            block(&mut layers, bridge_channels, bridge_dilation);
        }
        for &(from, ch) in skips.iter().rev() {
            match variant {
                Variant::Atrous => {
                    layers.push(LayerDesc::TransposeConv {
                        out_channels: ch,
                        kernel: 5,
                        stride: 2,
                        padding: 2,
                        output_padding: 1,
                    });
                    layers.push(LayerDesc::BatchNorm);
                    layers.push(LayerDesc::Relu);
                }
                _ => layers.push(LayerDesc::TransposeConv {
                    out_channels: ch,
                    kernel: 2,
                    stride: 2,
                    padding: 0,
                    output_padding: 0,
                }),
            }
            layers.push(LayerDesc::Concat { from });
            block(&mut layers, ch, 1);
            block(&mut layers, ch, 1);
        }
        layers.push(LayerDesc::Conv {
            out_channels: classes,
            kernel: 1,
            dilation: 1,
        });
        layers.push(LayerDesc::Softmax);
        NetworkSpec {
            variant,
            in_channels,
            classes,
            layers,
        }
    }

    /// Desk-scale default: encoder 32, 64, 128 with a 128-channel bridge.
    pub fn default_for(variant: Variant) -> NetworkSpec {
        Self::encoder_decoder(variant, 4, 6, &[32, 64, 128], 128)
    }

    /// Small model used by tests and the synthetic demo.
    pub fn toy(variant: Variant, in_channels: usize) -> NetworkSpec {
        Self::encoder_decoder(variant, in_channels, 6, &[8, 16], 16)
    }

    pub fn skips(&self) -> Vec<SkipPair> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(to, l)| match l {
                LayerDesc::Concat { from } => Some(SkipPair { from: *from, to }),
                _ => None,
            })
            .collect()
    }

    pub fn pool_depth(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerDesc::MaxPool)).count()
    }

    /// Spatial extents must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.pool_depth()
    }

    pub fn atrous_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerDesc::Conv { dilation, .. } if *dilation > 1))
            .count()
    }

    /// Output shape of every layer for a given input shape.
    pub fn infer_shapes(&self, input: Shape) -> Result<Vec<Shape>> {
        if input.c() != self.in_channels {
            return Err(Error::InvalidShape(format!(
                "network expects {} input channels, got {input}",
                self.in_channels
            )));
        }
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.layers.len());
        let mut cur = input;
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match *layer {
                LayerDesc::Conv {
                    out_channels,
                    kernel,
                    dilation,
                } => {
                    if kernel % 2 == 0 || dilation == 0 {
                        return Err(Error::Config(format!(
                            "layer {i}: same-padded conv needs an odd kernel and positive dilation"
                        )));
                    }
                    Shape::new(cur.n(), out_channels, cur.h(), cur.w())
                }
                LayerDesc::BatchNorm | LayerDesc::Relu | LayerDesc::Softmax => cur,
                LayerDesc::MaxPool => {
                    if cur.h() % 2 != 0 || cur.w() % 2 != 0 {
                        return Err(Error::InvalidShape(format!(
                            "layer {i}: max pooling needs even extents, got {cur}; input extents must be divisible by {}",
                            self.divisor()
                        )));
                    }
                    Shape::new(cur.n(), cur.c(), cur.h() / 2, cur.w() / 2)
                }
                LayerDesc::TransposeConv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    output_padding,
                } => {
                    let ext = |n| {
                        crate::nn::conv::transpose_output_extent(n, kernel, stride, padding, output_padding)
                    };
                    match (ext(cur.h()), ext(cur.w())) {
                        (Some(h), Some(w)) => Shape::new(cur.n(), out_channels, h, w),
                        _ => {
                            return Err(Error::Config(format!(
                                "layer {i}: transpose conv yields no output for {cur}"
                            )))
                        }
                    }
                }
                LayerDesc::Concat { from } => {
                    if from >= i {
                        return Err(Error::Config(format!(
                            "layer {i}: skip source {from} must precede the merge point"
                        )));
                    }
                    let enc = shapes[from];
                    if enc.n() != cur.n() || enc.h() != cur.h() || enc.w() != cur.w() {
                        return Err(Error::Config(format!(
                            "skip {from} -> {i} joins {enc} with {cur}"
                        )));
                    }
                    Shape::new(cur.n(), enc.c() + cur.c(), cur.h(), cur.w())
                }
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layers.len();
        if n < 2 || self.layers[n - 1] != LayerDesc::Softmax {
            return Err(Error::Config("network must end in a softmax layer".into()));
        }
        match self.layers[n - 2] {
            LayerDesc::Conv {
                out_channels,
                kernel: 1,
                ..
            } if out_channels == self.classes => {}
            _ => {
                return Err(Error::Config(format!(
                    "softmax must follow a 1x1 conv with {} filters",
                    self.classes
                )))
            }
        }
        if self.layers[..n - 1].contains(&LayerDesc::Softmax) {
            return Err(Error::Config("softmax is only allowed as the final layer".into()));
        }
        match (self.variant, self.atrous_count()) {
            (Variant::Atrous, c) if c != ATROUS_BLOCKS => {
                return Err(Error::Config(format!(
                    "atrous variant needs exactly {ATROUS_BLOCKS} dilated convs, found {c}"
                )))
            }
            (Variant::Standard, c) if c != 0 => {
                return Err(Error::Config(format!("standard variant has {c} dilated convs")))
            }
            _ => {}
        }
        let probe = 4 * self.divisor();
        self.infer_shapes(Shape::new(1, self.in_channels, probe, probe))?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<NetworkSpec> {
        let spec: NetworkSpec = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv(Conv2d),
    TransposeConv(TransposeConv2d),
    BatchNorm(BatchNorm2d),
    Relu,
    MaxPool,
    Concat { from: usize },
    Softmax,
}

#[derive(Clone, Debug)]
enum Aux {
    None,
    BatchNorm(BatchNormCache),
    Pool(Vec<usize>),
    Concat(usize),
}

#[derive(Clone, Debug)]
struct ForwardCache {
    input: Tensor,
    outputs: Vec<Tensor>,
    aux: Vec<Aux>,
}

#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    mode: Mode,
    cache: Option<ForwardCache>,
}

impl Network {
    /// Instantiates `spec` with He fan-in initialization drawn from `seed`.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Network> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut he = |shape: Shape, fan_in: f64| -> Tensor {
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            Tensor::from_fn(shape, |_| normal.sample(&mut rng))
        };
        let mut channels = spec.in_channels;
        let mut chan_at = Vec::with_capacity(spec.layers.len());
        let mut layers = Vec::with_capacity(spec.layers.len());
        for desc in &spec.layers {
            let layer = match *desc {
                LayerDesc::Conv {
                    out_channels,
                    kernel,
                    dilation,
                } => {
                    let w = he(
                        Shape::new(out_channels, channels, kernel, kernel),
                        (channels * kernel * kernel) as f64,
                    );
                    let pad = (effective_kernel(kernel, dilation) - 1) / 2;
                    channels = out_channels;
                    Layer::Conv(Conv2d::new(w, Tensor::zeros(Shape::new(1, out_channels, 1, 1)), 1, pad, dilation)?)
                }
                LayerDesc::TransposeConv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    output_padding,
                } => {
                    // each output pixel sees about k²/s² taps per input channel
                    let fan_in = (channels * kernel * kernel) as f64 / (stride * stride) as f64;
                    let w = he(Shape::new(channels, out_channels, kernel, kernel), fan_in.max(1.0));
                    channels = out_channels;
                    Layer::TransposeConv(TransposeConv2d::new(
                        w,
                        Tensor::zeros(Shape::new(1, out_channels, 1, 1)),
                        stride,
                        padding,
                        output_padding,
                    )?)
                }
                LayerDesc::BatchNorm => Layer::BatchNorm(BatchNorm2d::new(channels)),
                LayerDesc::Relu => Layer::Relu,
                LayerDesc::MaxPool => Layer::MaxPool,
                LayerDesc::Concat { from } => {
                    channels += chan_at[from];
                    Layer::Concat { from }
                }
                LayerDesc::Softmax => Layer::Softmax,
            };
            chan_at.push(channels);
            layers.push(layer);
        }
        Ok(Network {
            spec: spec.clone(),
            layers,
            mode: Mode::Train,
            cache: None,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Runs the network and returns per-pixel class probabilities. The
    /// intermediate activations are kept for a following backward pass.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        let d = self.spec.divisor();
        if s.c() != self.spec.in_channels {
            return Err(Error::InvalidShape(format!(
                "network expects {} input channels, got {s}",
                self.spec.in_channels
            )));
        }
        if s.h() % d != 0 || s.w() % d != 0 || s.h() == 0 || s.w() == 0 {
            return Err(Error::InvalidShape(format!(
                "input extents {}x{} must be positive multiples of {d}",
                s.h(),
                s.w()
            )));
        }
        let mode = self.mode;
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        let mut aux = Vec::with_capacity(self.layers.len());
        for i in 0..self.layers.len() {
            let input = if i == 0 { x } else { &outputs[i - 1] };
            let (out, a) = match &mut self.layers[i] {
                Layer::Conv(c) => (c.forward(input)?, Aux::None),
                Layer::TransposeConv(t) => (t.forward(input)?, Aux::None),
                Layer::BatchNorm(bn) => {
                    let (y, cache) = bn.forward(input, mode)?;
                    (y, Aux::BatchNorm(cache))
                }
                Layer::Relu => (relu(input), Aux::None),
                Layer::MaxPool => {
                    let (y, arg) = maxpool2(input)?;
                    (y, Aux::Pool(arg))
                }
                Layer::Concat { from } => {
                    let enc = &outputs[*from];
                    (Tensor::concat_channels(enc, input)?, Aux::Concat(enc.shape().c()))
                }
                Layer::Softmax => (softmax_channels(input), Aux::None),
            };
            outputs.push(out);
            aux.push(a);
        }
        let probs = outputs.last().cloned().expect("validated spec is non-empty");
        self.cache = Some(ForwardCache {
            input: x.clone(),
            outputs,
            aux,
        });
        Ok(probs)
    }

    /// Forward pass without keeping activations; batch-norm statistics are
    /// not updated.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut net = Network {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            mode: Mode::Eval,
            cache: None,
        };
        net.forward(x)
    }

    /// Backpropagates a gradient with respect to the output probabilities.
    /// Parameter gradients are stored in each [`Param`]; returns the input
    /// gradient.
    pub fn backward(&mut self, grad_probs: &Tensor) -> Result<Tensor> {
        self.backward_from(self.layers.len(), grad_probs)
    }

    /// Backpropagates a gradient with respect to the pre-softmax logits.
    pub fn backward_logits(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        self.backward_from(self.layers.len() - 1, grad_logits)
    }

    fn backward_from(&mut self, end: usize, grad: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Config("backward called before forward".into()))?;
        let result = self.backward_with(&cache, end, grad);
        self.cache = Some(cache);
        result
    }

    fn backward_with(&mut self, cache: &ForwardCache, end: usize, grad: &Tensor) -> Result<Tensor> {
        let expected = cache.outputs[end - 1].shape();
        if grad.shape() != expected {
            return Err(Error::ShapeMismatch(grad.shape(), expected));
        }
        let mut pending: HashMap<usize, Tensor> = HashMap::new();
        let mut g = grad.clone();
        for i in (0..end).rev() {
            if let Some(extra) = pending.remove(&i) {
                g = g.add(&extra)?;
            }
            let input = if i == 0 { &cache.input } else { &cache.outputs[i - 1] };
            let output = &cache.outputs[i];
            g = match (&mut self.layers[i], &cache.aux[i]) {
                (Layer::Conv(c), _) => {
                    let grads = c.backward(input, &g)?;
                    c.weight.grad = grads.w;
                    c.bias.grad = grads.b;
                    grads.x
                }
                (Layer::TransposeConv(t), _) => {
                    let grads = t.backward(input, &g)?;
                    t.weight.grad = grads.w;
                    t.bias.grad = grads.b;
                    grads.x
                }
                (Layer::BatchNorm(bn), Aux::BatchNorm(bc)) => {
                    let grads = bn.backward(input, bc, &g)?;
                    bn.gamma.grad = grads.gamma;
                    bn.beta.grad = grads.beta;
                    grads.x
                }
                (Layer::Relu, _) => relu_backward(output, &g)?,
                (Layer::MaxPool, Aux::Pool(arg)) => maxpool2_backward(input.shape(), arg, &g)?,
                (Layer::Concat { from }, Aux::Concat(enc_c)) => {
                    let enc = g.slice_channels(0..*enc_c)?;
                    let rest = g.slice_channels(*enc_c..g.shape().c())?;
                    let merged = match pending.remove(from) {
                        Some(p) => p.add(&enc)?,
                        None => enc,
                    };
                    pending.insert(*from, merged);
                    rest
                }
                (Layer::Softmax, _) => softmax_backward(output, &g)?,
                _ => unreachable!("cache kind always matches its layer"),
            };
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&c.weight, &c.bias]),
                Layer::TransposeConv(t) => out.extend([&t.weight, &t.bias]),
                Layer::BatchNorm(bn) => out.extend([&bn.gamma, &bn.beta]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&mut c.weight, &mut c.bias]),
                Layer::TransposeConv(t) => out.extend([&mut t.weight, &mut t.bias]),
                Layer::BatchNorm(bn) => out.extend([&mut bn.gamma, &mut bn.beta]),
                _ => {}
            }
        }
        out
    }

    /// Parameter names in [`Network::params`] order, e.g. `l03_conv_weight`.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let (kind, names): (&str, [&str; 2]) = match layer {
                Layer::Conv(_) => ("conv", ["weight", "bias"]),
                Layer::TransposeConv(_) => ("tconv", ["weight", "bias"]),
                Layer::BatchNorm(_) => ("bn", ["gamma", "beta"]),
                _ => continue,
            };
            out.extend(names.iter().map(|n| format!("l{i:02}_{kind}_{n}")));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}
