use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::NUM_CLASSES;
use crate::tensor::Tensor;

/// Probabilities are clamped to this floor before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-class loss weights, in class-index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!(
                "class weights must be positive and finite, got {weights:?}"
            )));
        }
        Ok(ClassWeights(weights))
    }

    pub fn uniform(classes: usize) -> Self {
        ClassWeights(vec![1.0; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for ClassWeights {
    /// background, building, car, impervious surface, low vegetation, tree
    fn default() -> Self {
        ClassWeights(vec![5.0, 1.0, 100.0, 1.0, 2.0, 1.0])
    }
}

const _: () = assert!(NUM_CLASSES == 6);

#[derive(Clone, Debug)]
pub struct LossOutput {
    /// `−Σ_pixels w[y]·log p[y]`.
    pub sum: f64,
    /// `sum` divided by the number of pixels.
    pub mean: f64,
    /// Gradient of `sum` with respect to the pre-softmax logits,
    /// `w[y]·(p − onehot)` at every pixel.
    pub grad: Tensor,
    /// Pixels whose argmax equals the reference class.
    pub correct: usize,
    pub pixels: usize,
}

/// Weighted cross-entropy of softmax probabilities against one-hot labels.
pub fn weighted_cross_entropy(probs: &Tensor, onehot: &Tensor, weights: &ClassWeights) -> Result<LossOutput> {
    let s = probs.shape();
    if onehot.shape() != s {
        return Err(Error::ShapeMismatch(s, onehot.shape()));
    }
    if weights.len() != s.c() {
        return Err(Error::Config(format!(
            "{} class weights for {} channels",
            weights.len(),
            s.c()
        )));
    }
    let w = weights.as_slice();
    let p = s.plane();
    let mut grad = Tensor::zeros(s);
    let mut sum = 0.0;
    let mut correct = 0;
    for n in 0..s.n() {
        let (pr, oh) = (probs.item(n), onehot.item(n));
        let g = grad.item_mut(n);
        for i in 0..p {
            let mut class = None;
            for c in 0..s.c() {
                let v = oh[c * p + i];
                if v == 1.0 && class.is_none() {
                    class = Some(c);
                } else if v != 0.0 {
                    class = None;
                    break;
                }
            }
            let y = class.ok_or_else(|| {
                Error::Config(format!("one-hot labels of item {n}, pixel {i} do not hold exactly one 1"))
            })?;
            sum -= w[y] * pr[y * p + i].max(PROB_FLOOR).ln();
            let mut best = 0;
            for c in 0..s.c() {
                g[c * p + i] = w[y] * (pr[c * p + i] - oh[c * p + i]);
                if pr[c * p + i] > pr[best * p + i] {
                    best = c;
                }
            }
            correct += usize::from(best == y);
        }
    }
    let pixels = s.n() * p;
    Ok(LossOutput {
        sum,
        mean: if pixels == 0 { 0.0 } else { sum / pixels as f64 },
        grad,
        correct,
        pixels,
    })
}
