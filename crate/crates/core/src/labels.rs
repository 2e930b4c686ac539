//! Per-pixel class indices and the land-cover class table.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 6;

/// Class order used throughout, matching the loss-weight vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum LandCover {
    Background = 0,
    Building = 1,
    Car = 2,
    ImperviousSurface = 3,
    LowVegetation = 4,
    Tree = 5,
}

impl LandCover {
    pub const ALL: [LandCover; NUM_CLASSES] = [
        LandCover::Background,
        LandCover::Building,
        LandCover::Car,
        LandCover::ImperviousSurface,
        LandCover::LowVegetation,
        LandCover::Tree,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            LandCover::Background => "Background",
            LandCover::Building => "Building",
            LandCover::Car => "Car",
            LandCover::ImperviousSurface => "Imp. surf.",
            LandCover::LowVegetation => "Low veg.",
            LandCover::Tree => "Tree",
        }
    }

    pub fn from_index(i: usize) -> Option<LandCover> {
        Self::ALL.get(i).copied()
    }
}

/// Class index per pixel, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "label map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(LabelMap { height, width, data })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Self {
        LabelMap {
            height,
            width,
            data: vec![class; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        LabelMap { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> usize {
        self.data[y * self.width + x] as usize
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, class: u8) {
        self.data[y * self.width + x] = class;
    }

    /// Fails when any label is `>= classes`.
    pub fn check_range(&self, classes: usize) -> Result<()> {
        match self.data.iter().find(|&&l| l as usize >= classes) {
            Some(&l) => Err(Error::LabelOutOfRange {
                label: l as usize,
                classes,
            }),
            None => Ok(()),
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<LabelMap> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::InvalidShape(format!(
                "crop {h}x{w} at ({y0},{x0}) outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(LabelMap::from_fn(h, w, |y, x| self.data[(y0 + y) * self.width + x0 + x]))
    }

    /// Fraction of pixels where both maps agree.
    pub fn agreement(&self, other: &LabelMap) -> Result<f64> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::InvalidShape(format!(
                "label maps {}x{} and {}x{} differ",
                self.height, self.width, other.height, other.width
            )));
        }
        if self.data.is_empty() {
            return Ok(1.0);
        }
        let same = self.data.iter().zip(&other.data).filter(|(a, b)| a == b).count();
        Ok(same as f64 / self.data.len() as f64)
    }
}

/// Per-pixel argmax over channels of every batch item. Ties go to the
/// lowest class index.
pub fn argmax(probs: &Tensor) -> Vec<LabelMap> {
    let s = probs.shape();
    let p = s.plane();
    (0..s.n())
        .map(|n| {
            let item = probs.item(n);
            let data = (0..p)
                .map(|i| {
                    let mut best = 0;
                    for c in 1..s.c() {
                        if item[c * p + i] > item[best * p + i] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMap {
                height: s.h(),
                width: s.w(),
                data,
            }
        })
        .collect()
}
