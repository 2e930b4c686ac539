//! Layers and the encoder-decoder network.

pub mod activation;
pub mod batchnorm;
pub mod checkpoint;
pub mod conv;
pub mod network;

pub use activation::{maxpool2, maxpool2_backward, relu, relu_backward, softmax_backward, softmax_channels};
pub use batchnorm::{BatchNorm2d, Mode};
pub use conv::{Conv2d, ConvGrads, TransposeConv2d};
pub use network::{Layer, LayerDesc, Network, NetworkSpec, SkipPair, Variant};

use crate::error::Result;
use crate::tensor::Tensor;

/// A trainable tensor and its most recent gradient.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }
}

/// Inclusive pixel bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundingBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl BoundingBox {
    pub fn height(&self) -> usize {
        self.bottom - self.top + 1
    }

    pub fn width(&self) -> usize {
        self.right - self.left + 1
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.top <= other.top && self.left <= other.left && self.bottom >= other.bottom && self.right >= other.right
    }

    /// Contains `other` with a margin on every side.
    pub fn strictly_contains(&self, other: &BoundingBox) -> bool {
        self.top < other.top && self.left < other.left && self.bottom > other.bottom && self.right > other.right
    }
}

/// Input region influencing the class-0 logit at `(row, col)` of item 0,
/// found by backpropagating a one-hot gradient in eval mode. `None` when no
/// input pixel receives a nonzero gradient.
pub fn receptive_field(net: &Network, input: &Tensor, row: usize, col: usize) -> Result<Option<BoundingBox>> {
    let mut probe = net.clone();
    probe.set_mode(Mode::Eval);
    let probs = probe.forward(input)?;
    let mut seed = Tensor::zeros(probs.shape());
    seed.set(0, 0, row, col, 1.0);
    let grad = probe.backward_logits(&seed)?;
    let s = grad.shape();
    let mut bbox: Option<BoundingBox> = None;
    for c in 0..s.c() {
        let plane = grad.plane(0, c);
        for y in 0..s.h() {
            for x in 0..s.w() {
                if plane[y * s.w() + x] != 0.0 {
                    let b = bbox.get_or_insert(BoundingBox {
                        top: y,
                        left: x,
                        bottom: y,
                        right: x,
                    });
                    b.top = b.top.min(y);
                    b.left = b.left.min(x);
                    b.bottom = b.bottom.max(y);
                    b.right = b.right.max(x);
                }
            }
        }
    }
    Ok(bbox)
}
