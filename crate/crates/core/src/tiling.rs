//! Training patch extraction and overlapped patchwise prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::{Shape, Tensor};
use crate::train::Sample;

/// Prediction tiling: patches of `patch` pixels at stride `core`, keeping
/// only each patch's central `core × core` window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileScheme {
    patch: usize,
    core: usize,
}

impl Default for TileScheme {
    fn default() -> Self {
        TileScheme { patch: 256, core: 128 }
    }
}

impl TileScheme {
    pub fn new(patch: usize, core: usize) -> Result<Self> {
        if core == 0 || core % 2 != 0 || patch != 2 * core {
            return Err(Error::Config(format!(
                "tile scheme needs patch = 2 x core with an even core, got patch {patch}, core {core}"
            )));
        }
        Ok(TileScheme { patch, core })
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn core(&self) -> usize {
        self.core
    }

    pub fn stride(&self) -> usize {
        self.core
    }

    /// Reflect padding added on every side.
    pub fn margin(&self) -> usize {
        self.core / 2
    }

    /// Patch origins along one axis of length `extent`, in padded
    /// coordinates. The core of the patch at `o` covers original `[o, o+core)`.
    pub fn origins(&self, extent: usize) -> Vec<usize> {
        (0..extent.div_ceil(self.core)).map(|k| k * self.core).collect()
    }
}

/// Offsets of `size`-long windows at `stride` along `extent`; a final
/// window is shifted inward to end exactly at `extent`.
pub fn grid_offsets(extent: usize, size: usize, stride: usize) -> Result<Vec<usize>> {
    if size == 0 || stride == 0 {
        return Err(Error::Config("patch size and stride must be positive".into()));
    }
    if extent < size {
        return Err(Error::InvalidShape(format!("extent {extent} is smaller than patch size {size}")));
    }
    let mut out: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o + size <= extent).collect();
    let last = extent - size;
    if *out.last().expect("offset 0 fits") != last {
        out.push(last);
    }
    Ok(out)
}

/// A training patch and its top-left corner in the source image.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub y: usize,
    pub x: usize,
    pub sample: Sample,
}

/// Aligned image/label crops on a regular grid.
pub fn extract_training_patches(image: &Tensor, labels: &LabelMap, size: usize, stride: usize) -> Result<Vec<Patch>> {
    let s = image.shape();
    if s.n() != 1 || s.h() != labels.height() || s.w() != labels.width() {
        return Err(Error::InvalidShape(format!(
            "image {s} does not match {}x{} labels",
            labels.height(),
            labels.width()
        )));
    }
    let ys = grid_offsets(s.h(), size, stride)?;
    let xs = grid_offsets(s.w(), size, stride)?;
    let mut out = Vec::with_capacity(ys.len() * xs.len());
    for &y in &ys {
        for &x in &xs {
            out.push(Patch {
                y,
                x,
                sample: Sample::new(image.crop(y, x, size, size)?, labels.crop(y, x, size, size)?)?,
            });
        }
    }
    Ok(out)
}

/// Mirror index without repeating the edge sample, folding as often as
/// needed so any offset maps into `[0, n)`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Stitched prediction plus how many times each pixel was written.
pub struct Stitched {
    pub probs: Tensor,
    pub coverage: Vec<u32>,
}

/// Runs `predict` on reflect-padded patches of `image` `(1, C, H, W)` and
/// keeps each patch's central window. `predict` maps `(1, C, p, p)` to
/// `(1, K, p, p)`.
pub fn tile_predict(
    image: &Tensor,
    predict: impl FnMut(&Tensor) -> Result<Tensor>,
    scheme: TileScheme,
) -> Result<Tensor> {
    Ok(tile_predict_with_coverage(image, predict, scheme)?.probs)
}

pub fn tile_predict_with_coverage(
    image: &Tensor,
    mut predict: impl FnMut(&Tensor) -> Result<Tensor>,
    scheme: TileScheme,
) -> Result<Stitched> {
    let s = image.shape();
    if s.n() != 1 || s.h() == 0 || s.w() == 0 {
        return Err(Error::InvalidShape(format!("tiling needs a single non-empty image, got {s}")));
    }
    let (h, w, p, core, margin) = (s.h(), s.w(), scheme.patch(), scheme.core(), scheme.margin());
    let mut probs: Option<Tensor> = None;
    let mut coverage = vec![0u32; h * w];
    for oy in scheme.origins(h) {
        for ox in scheme.origins(w) {
            let input = Tensor::from_fn(Shape::new(1, s.c(), p, p), |[_, c, y, x]| {
                let sy = reflect_index((oy + y) as isize - margin as isize, h);
                let sx = reflect_index((ox + x) as isize - margin as isize, w);
                image.get(0, c, sy, sx)
            });
            let pred = predict(&input)?;
            let ps = pred.shape();
            if ps.n() != 1 || ps.h() != p || ps.w() != p || ps.c() == 0 {
                return Err(Error::InvalidShape(format!(
                    "patch prediction has shape {ps}, expected (1, K, {p}, {p})"
                )));
            }
            let out = probs.get_or_insert_with(|| Tensor::zeros(Shape::new(1, ps.c(), h, w)));
            if out.shape().c() != ps.c() {
                return Err(Error::ShapeMismatch(out.shape(), ps));
            }
            for y in oy..(oy + core).min(h) {
                for x in ox..(ox + core).min(w) {
                    for c in 0..ps.c() {
                        out.set(0, c, y, x, pred.get(0, c, y - oy + margin, x - ox + margin));
                    }
                    coverage[y * w + x] += 1;
                }
            }
        }
    }
    Ok(Stitched {
        probs: probs.expect("at least one patch"),
        coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        assert_eq!(grid_offsets(256, 128, 128).unwrap(), vec![0, 128]);
        assert_eq!(grid_offsets(300, 128, 128).unwrap(), vec![0, 128, 172]);
        assert_eq!(grid_offsets(128, 128, 64).unwrap(), vec![0]);
        assert!(grid_offsets(100, 128, 128).is_err());
    }

    #[test]
    fn patches_align_with_labels() {
        let image = Tensor::from_fn(Shape::new(1, 2, 300, 260), |[_, c, y, x]| (c * 100_000 + y * 1000 + x) as f64);
        let labels = LabelMap::from_fn(300, 260, |y, x| ((y * 7 + x * 3) % 6) as u8);
        let patches = extract_training_patches(&image, &labels, 128, 128).unwrap();
        assert_eq!(patches.len(), 9);
        let last = patches.last().unwrap();
        assert_eq!((last.y, last.x), (172, 132));
        for p in &patches {
            for (y, x) in [(0, 0), (127, 5), (64, 127)] {
                assert_eq!(p.sample.image.get(0, 1, y, x), (100_000 + (p.y + y) * 1000 + p.x + x) as f64);
                assert_eq!(p.sample.labels.get(y, x), labels.get(p.y + y, p.x + x));
            }
        }
        let four = extract_training_patches(&image.crop(0, 0, 256, 256).unwrap(), &labels.crop(0, 0, 256, 256).unwrap(), 128, 128);
        assert_eq!(four.unwrap().len(), 4);
    }

    #[test]
    fn reflect_folds() {
        let idx: Vec<usize> = (-5..9).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![1, 2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1, 2]);
        assert_eq!(reflect_index(-7, 1), 0);
    }

    #[test]
    fn scheme_validation() {
        assert!(TileScheme::new(256, 128).is_ok());
        assert!(TileScheme::new(200, 128).is_err());
        assert!(TileScheme::new(0, 0).is_err());
        assert!(TileScheme::new(6, 3).is_err());
    }

    #[test]
    fn single_patch_center_is_original() {
        let image = Tensor::from_fn(Shape::new(1, 1, 128, 128), |[_, _, y, x]| (y * 128 + x) as f64);
        let mut seen = Vec::new();
        let out = tile_predict(
            &image,
            |p| {
                seen.push(p.clone());
                Ok(p.clone())
            },
            TileScheme::default(),
        )
        .unwrap();
        assert_eq!(seen.len(), 1);
        assert_eq!(seen[0].crop(64, 64, 128, 128).unwrap(), image);
        assert_eq!(out, image);
    }

    #[test]
    fn constant_prediction_and_shape_check() {
        let image = Tensor::zeros(Shape::new(1, 3, 37, 50));
        let scheme = TileScheme::new(16, 8).unwrap();
        let out = tile_predict_with_coverage(&image, |_| Ok(Tensor::full(Shape::new(1, 2, 16, 16), 0.5)), scheme).unwrap();
        assert_eq!(out.probs.shape(), Shape::new(1, 2, 37, 50));
        assert!(out.probs.data().iter().all(|&v| v == 0.5));
        assert!(out.coverage.iter().all(|&c| c == 1));
        assert!(tile_predict(&image, |_| Ok(Tensor::zeros(Shape::new(1, 2, 8, 8))), scheme).is_err());
    }
}
