use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::{Shape, Tensor};

/// Probabilities below this are clamped before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Largest pixel count the O(N²) routines accept by default.
pub const DEFAULT_GUARD: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrfParams {
    /// Appearance kernel weight.
    pub w1: f64,
    /// Smoothness kernel weight.
    pub w2: f64,
    /// Appearance kernel position bandwidth, pixels.
    pub sigma_alpha: f64,
    /// Appearance kernel color bandwidth, 8-bit intensity units.
    pub sigma_beta: f64,
    /// Smoothness kernel position bandwidth, pixels.
    pub sigma_gamma: f64,
    pub iterations: usize,
}

impl Default for CrfParams {
    fn default() -> Self {
        CrfParams {
            w1: 10.0,
            w2: 3.0,
            sigma_alpha: 80.0,
            sigma_beta: 13.0,
            sigma_gamma: 3.0,
            iterations: 10,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w1", self.w1), ("w2", self.w2)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {w}")));
            }
        }
        for (name, s) in [
            ("sigma_alpha", self.sigma_alpha),
            ("sigma_beta", self.sigma_beta),
            ("sigma_gamma", self.sigma_gamma),
        ] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {s}")));
            }
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// `θ = −ln(max(P, 1e-12))` elementwise.
pub fn unary_from_probs(probs: &Tensor) -> Result<Tensor> {
    if !probs.all_finite() {
        return Err(Error::NonFinite("probability map".into()));
    }
    Ok(probs.map(|p| -p.max(PROB_FLOOR).ln()))
}

/// Per-pixel positions and colors of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureField {
    height: usize,
    width: usize,
    color_dims: usize,
    /// Point-major, `color_dims` values per pixel.
    colors: Vec<f64>,
}

/// Features of one pixel: `(x, y)` position and color vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelFeature<'a> {
    pub position: [f64; 2],
    pub color: &'a [f64],
}

impl FeatureField {
    pub fn new(height: usize, width: usize, color_dims: usize, colors: Vec<f64>) -> Result<Self> {
        if colors.len() != height * width * color_dims {
            return Err(Error::InvalidShape(format!(
                "{} color values for {height}x{width} pixels with {color_dims} bands",
                colors.len()
            )));
        }
        if colors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("color features".into()));
        }
        Ok(FeatureField {
            height,
            width,
            color_dims,
            colors,
        })
    }

    /// Uses the first `bands` channels of a `(1, C, H, W)` image scaled to
    /// `[0, 1]`, converted to 8-bit intensity units.
    pub fn from_image(image: &Tensor, bands: usize) -> Result<Self> {
        let s = image.shape();
        if s.n() != 1 || s.c() < bands {
            return Err(Error::InvalidShape(format!(
                "need a single image with at least {bands} channels, got {s}"
            )));
        }
        let plane = s.plane();
        let mut colors = vec![0.0; plane * bands];
        for c in 0..bands {
            for (i, v) in image.plane(0, c).iter().enumerate() {
                colors[i * bands + c] = v * 255.0;
            }
        }
        FeatureField::new(s.h(), s.w(), bands, colors)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn color_dims(&self) -> usize {
        self.color_dims
    }

    pub fn pixel(&self, i: usize) -> PixelFeature<'_> {
        PixelFeature {
            position: [(i % self.width) as f64, (i / self.width) as f64],
            color: &self.colors[i * self.color_dims..(i + 1) * self.color_dims],
        }
    }

    /// `(x/σα, y/σα, I/σβ)` per pixel, point-major.
    pub fn appearance_features(&self, sigma_alpha: f64, sigma_beta: f64) -> Vec<f64> {
        let d = 2 + self.color_dims;
        let mut out = Vec::with_capacity(self.len() * d);
        for i in 0..self.len() {
            let p = self.pixel(i);
            out.push(p.position[0] / sigma_alpha);
            out.push(p.position[1] / sigma_alpha);
            out.extend(p.color.iter().map(|c| c / sigma_beta));
        }
        out
    }

    /// `(x/σγ, y/σγ)` per pixel, point-major.
    pub fn smoothness_features(&self, sigma_gamma: f64) -> Vec<f64> {
        (0..self.len())
            .flat_map(|i| {
                let p = self.pixel(i).position;
                [p[0] / sigma_gamma, p[1] / sigma_gamma]
            })
            .collect()
    }
}

/// Two-kernel pairwise weight between pixel features.
pub fn kernel_eval(fi: PixelFeature, fj: PixelFeature, params: &CrfParams) -> f64 {
    assert_eq!(fi.color.len(), fj.color.len(), "feature dimensions differ");
    let dp = (fi.position[0] - fj.position[0]).powi(2) + (fi.position[1] - fj.position[1]).powi(2);
    let di: f64 = fi.color.iter().zip(fj.color).map(|(a, b)| (a - b).powi(2)).sum();
    let a2 = params.sigma_alpha * params.sigma_alpha;
    let b2 = params.sigma_beta * params.sigma_beta;
    let g2 = params.sigma_gamma * params.sigma_gamma;
    params.w1 * (-dp / (2.0 * a2) - di / (2.0 * b2)).exp() + params.w2 * (-dp / (2.0 * g2)).exp()
}

/// Potts compatibility.
pub fn potts(a: usize, b: usize) -> f64 {
    if a == b {
        0.0
    } else {
        1.0
    }
}

/// Gibbs energy of a labeling: unary terms plus the pairwise sum over
/// ordered pairs `i ≠ j`. Refuses more than `guard` pixels.
pub fn energy(labels: &LabelMap, unary: &Tensor, features: &FeatureField, params: &CrfParams, guard: usize) -> Result<f64> {
    let s = unary.shape();
    let (h, w) = (labels.height(), labels.width());
    if s != Shape::new(1, s.c(), h, w) || features.height() != h || features.width() != w {
        return Err(Error::InvalidShape(format!(
            "labels {h}x{w}, unary {s}, features {}x{}",
            features.height(),
            features.width()
        )));
    }
    let n = h * w;
    if n > guard {
        return Err(Error::GuardExceeded { pixels: n, limit: guard });
    }
    labels.check_range(s.c())?;
    let data = labels.data();
    let mut e: f64 = (0..n).map(|i| unary.get(0, data[i] as usize, i / w, i % w)).sum();
    for i in 0..n {
        for j in 0..n {
            if i != j && data[i] != data[j] {
                e += kernel_eval(features.pixel(i), features.pixel(j), params);
            }
        }
    }
    Ok(e)
}
