use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::{Shape, Tensor};

/// An input stack `(1, C, H, W)` with its reference labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub labels: LabelMap,
}

impl Sample {
    pub fn new(image: Tensor, labels: LabelMap) -> Result<Self> {
        let s = image.shape();
        if s.n() != 1 || s.h() != labels.height() || s.w() != labels.width() {
            return Err(Error::InvalidShape(format!(
                "image {s} does not match {}x{} labels",
                labels.height(),
                labels.width()
            )));
        }
        Ok(Sample { image, labels })
    }
}

/// Seeded random partition into a training and a validation part.
/// The training part gets `floor(n·a/(a+b))` items for ratio `a:b`.
pub fn split_dataset<T>(items: Vec<T>, ratio: (u32, u32), seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if ratio.0 == 0 || ratio.1 == 0 {
        return Err(Error::Config(format!("split ratio {}:{} must be positive", ratio.0, ratio.1)));
    }
    if items.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 items to split, got {}",
            items.len()
        )));
    }
    let n = items.len();
    let n_train = n * ratio.0 as usize / (ratio.0 + ratio.1) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut train = Vec::with_capacity(n_train);
    let mut val = Vec::with_capacity(n - n_train);
    for (k, i) in order.into_iter().enumerate() {
        let item = slots[i].take().expect("each index drawn once");
        if k < n_train {
            train.push(item);
        } else {
            val.push(item);
        }
    }
    Ok((train, val))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flip {
    Identity,
    Horizontal,
    Vertical,
    /// Both axes, i.e. a 180° rotation.
    Both,
}

impl Flip {
    pub const ALL: [Flip; 4] = [Flip::Identity, Flip::Horizontal, Flip::Vertical, Flip::Both];

    #[inline]
    fn source(self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            Flip::Identity => (y, x),
            Flip::Horizontal => (y, w - 1 - x),
            Flip::Vertical => (h - 1 - y, x),
            Flip::Both => (h - 1 - y, w - 1 - x),
        }
    }

    pub fn apply_tensor(self, t: &Tensor) -> Tensor {
        let s = t.shape();
        Tensor::from_fn(s, |[n, c, y, x]| {
            let (sy, sx) = self.source(y, x, s.h(), s.w());
            t.get(n, c, sy, sx)
        })
    }

    pub fn apply_labels(self, l: &LabelMap) -> LabelMap {
        let (h, w) = (l.height(), l.width());
        LabelMap::from_fn(h, w, |y, x| {
            let (sy, sx) = self.source(y, x, h, w);
            l.get(sy, sx) as u8
        })
    }
}

/// The four flip variants of a square sample, labels transformed alongside
/// the image.
pub fn augment(sample: &Sample) -> Result<Vec<Sample>> {
    let s: Shape = sample.image.shape();
    if s.h() != s.w() {
        return Err(Error::InvalidShape(format!("augmentation needs a square patch, got {s}")));
    }
    Ok(Flip::ALL
        .iter()
        .map(|f| Sample {
            image: f.apply_tensor(&sample.image),
            labels: f.apply_labels(&sample.labels),
        })
        .collect())
}
