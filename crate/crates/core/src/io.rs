//! Raster codecs, the class color palette, one-hot encoding and the dataset
//! manifest.
//!
//! Rasters are 8-bit PNG (gray or RGB) or RT01 tensors. PNG samples map to
//! `[0, 1]` by dividing by 255.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::labels::{LabelMap, LandCover, NUM_CLASSES};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Png,
    Raw,
}

fn format_of(path: &Path) -> Result<Format> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(Format::Png),
        "rt" | "rt01" => Ok(Format::Raw),
        _ => Err(Error::Unsupported(format!(
            "{}: expected .png or .rt",
            path.display()
        ))),
    }
}

/// Decoded 8-bit image, interleaved.
struct Png8 {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

fn read_png(path: &Path) -> Result<Png8> {
    let file = BufReader::new(File::open(path)?);
    let decoder = png::Decoder::new(file);
    let corrupt = |e: png::DecodingError| Error::Corrupt(format!("{}: {e}", path.display()));
    let mut reader = decoder.read_info().map_err(corrupt)?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Unsupported(format!(
            "{}: bit depth {:?}, only 8-bit rasters are supported",
            path.display(),
            info.bit_depth
        )));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::Unsupported(format!(
                "{}: color type {other:?}, expected gray or RGB",
                path.display()
            )))
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Corrupt(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let out = reader.next_frame(&mut buf).map_err(corrupt)?;
    let (width, height) = (out.width as usize, out.height as usize);
    let mut data = Vec::with_capacity(width * height * channels);
    for row in buf.chunks(out.line_size).take(height) {
        data.extend_from_slice(&row[..width * channels]);
    }
    Ok(Png8 {
        width,
        height,
        channels,
        data,
    })
}

fn write_png(path: &Path, width: usize, height: usize, channels: usize, data: &[u8]) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(if channels == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    enc.set_depth(png::BitDepth::Eight);
    let encode = |e: png::EncodingError| Error::Io(std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(encode)?;
    writer.write_image_data(data).map_err(encode)?;
    writer.finish().map_err(encode)?;
    Ok(())
}

/// Loads a raster as a `(1, C, H, W)` tensor.
pub fn load_raster(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    match format_of(path)? {
        Format::Raw => Tensor::load(path),
        Format::Png => {
            let img = read_png(path)?;
            let (h, w, c) = (img.height, img.width, img.channels);
            Ok(Tensor::from_fn(Shape::new(1, c, h, w), |[_, ch, y, x]| {
                img.data[(y * w + x) * c + ch] as f64 / 255.0
            }))
        }
    }
}

/// Saves a raster. PNG output needs a single item with 1 or 3 channels and
/// stores `round(255·v)` with values clamped to `[0, 1]`.
pub fn save_raster(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match format_of(path)? {
        Format::Raw => t.save(path),
        Format::Png => {
            let s = t.shape();
            if s.n() != 1 || !(s.c() == 1 || s.c() == 3) {
                return Err(Error::Unsupported(format!("cannot write {s} as an 8-bit PNG")));
            }
            let mut data = Vec::with_capacity(s.len());
            for y in 0..s.h() {
                for x in 0..s.w() {
                    for c in 0..s.c() {
                        data.push(to_u8(t.get(0, c, y, x)));
                    }
                }
            }
            write_png(path, s.w(), s.h(), s.c(), &data)
        }
    }
}

#[inline]
fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn load(path: impl AsRef<Path>) -> Result<RgbImage> {
        let path = path.as_ref();
        if format_of(path)? != Format::Png {
            return Err(Error::Unsupported(format!("{}: label images must be PNG", path.display())));
        }
        let img = read_png(path)?;
        if img.channels != 3 {
            return Err(Error::Unsupported(format!(
                "{}: label images must be RGB",
                path.display()
            )));
        }
        Ok(RgbImage {
            height: img.height,
            width: img.width,
            pixels: img.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let data: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        write_png(path.as_ref(), self.width, self.height, 3, &data)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_fn(Shape::new(1, 3, self.height, self.width), |[_, c, y, x]| {
            self.pixels[y * self.width + x][c] as f64 / 255.0
        })
    }
}

/// Bijection between class indices and label colors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelColorMap {
    colors: Vec<[u8; 3]>,
}

impl LabelColorMap {
    pub fn new(colors: Vec<[u8; 3]>) -> Result<Self> {
        for (i, c) in colors.iter().enumerate() {
            if colors[..i].contains(c) {
                return Err(Error::Config(format!("color {c:?} assigned to two classes")));
            }
        }
        Ok(LabelColorMap { colors })
    }

    /// The benchmark palette for the six land-cover classes.
    pub fn isprs() -> Self {
        let mut colors = vec![[0u8; 3]; NUM_CLASSES];
        for class in LandCover::ALL {
            colors[class.index()] = match class {
                LandCover::ImperviousSurface => [255, 255, 255],
                LandCover::Building => [0, 0, 255],
                LandCover::LowVegetation => [0, 255, 255],
                LandCover::Tree => [0, 255, 0],
                LandCover::Car => [255, 255, 0],
                LandCover::Background => [255, 0, 0],
            };
        }
        LabelColorMap { colors }
    }

    pub fn classes(&self) -> usize {
        self.colors.len()
    }

    pub fn color(&self, class: usize) -> Option<[u8; 3]> {
        self.colors.get(class).copied()
    }

    pub fn class_of(&self, rgb: [u8; 3]) -> Option<usize> {
        self.colors.iter().position(|&c| c == rgb)
    }
}

impl Default for LabelColorMap {
    fn default() -> Self {
        Self::isprs()
    }
}

pub fn labels_to_colors(labels: &LabelMap, palette: &LabelColorMap) -> Result<RgbImage> {
    labels.check_range(palette.classes())?;
    Ok(RgbImage {
        height: labels.height(),
        width: labels.width(),
        pixels: labels
            .data()
            .iter()
            .map(|&l| palette.color(l as usize).expect("range checked"))
            .collect(),
    })
}

pub fn colors_to_labels(img: &RgbImage, palette: &LabelColorMap) -> Result<LabelMap> {
    let mut data = Vec::with_capacity(img.pixels.len());
    for (i, &[r, g, b]) in img.pixels.iter().enumerate() {
        let class = palette.class_of([r, g, b]).ok_or(Error::UnknownColor {
            r,
            g,
            b,
            row: i / img.width.max(1),
            col: i % img.width.max(1),
        })?;
        data.push(class as u8);
    }
    LabelMap::new(img.height, img.width, data)
}

/// `(1, K, H, W)` indicator tensor.
pub fn one_hot(labels: &LabelMap, classes: usize) -> Result<Tensor> {
    labels.check_range(classes)?;
    let (h, w) = (labels.height(), labels.width());
    let mut t = Tensor::zeros(Shape::new(1, classes, h, w));
    let p = h * w;
    let data = t.data_mut();
    for (i, &l) in labels.data().iter().enumerate() {
        data[l as usize * p + i] = 1.0;
    }
    Ok(t)
}

/// Concatenates the spectral bands with the optional height channel.
pub fn stack_inputs(bands: &Tensor, ndsm: Option<&Tensor>) -> Result<Tensor> {
    let Some(ndsm) = ndsm else {
        return Ok(bands.clone());
    };
    if ndsm.shape().c() != 1 {
        return Err(Error::InvalidShape(format!(
            "height raster must have one channel, got {}",
            ndsm.shape()
        )));
    }
    Tensor::concat_channels(bands, ndsm)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// One line of a dataset manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileRecord {
    pub image: PathBuf,
    pub ndsm: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub split: Split,
}

/// Parses tab-separated `image  ndsm  labels  split` lines. `-` marks a
/// missing file; `#` starts a comment. Relative paths resolve against
/// `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<TileRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |msg: &str| Error::Config(format!("manifest line {}: {msg}", lineno + 1));
        if fields.len() != 4 {
            return Err(bad("expected image, ndsm, labels, split separated by tabs"));
        }
        let path = |f: &str| -> Option<PathBuf> {
            (f != "-").then(|| {
                let p = PathBuf::from(f);
                if p.is_absolute() {
                    p
                } else {
                    base.join(p)
                }
            })
        };
        let split = match fields[3].to_ascii_lowercase().as_str() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(bad(&format!("unknown split {other:?}"))),
        };
        out.push(TileRecord {
            image: path(fields[0]).ok_or_else(|| bad("image path is required"))?,
            ndsm: path(fields[1]),
            labels: path(fields[2]),
            split,
        });
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<TileRecord>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&std::fs::read_to_string(path)?, base)
}

/// Loads a tile's input stack and, when present, its labels.
pub fn load_tile(record: &TileRecord, palette: &LabelColorMap, use_ndsm: bool) -> Result<(Tensor, Option<LabelMap>)> {
    let bands = load_raster(&record.image)?;
    let ndsm = match (&record.ndsm, use_ndsm) {
        (Some(p), true) => Some(load_raster(p)?),
        (None, true) => {
            return Err(Error::Config(format!(
                "{} has no height raster; pass --no-ndsm to use the bands alone",
                record.image.display()
            )))
        }
        _ => None,
    };
    let input = stack_inputs(&bands, ndsm.as_ref())?;
    let labels = match &record.labels {
        Some(p) => {
            let l = colors_to_labels(&RgbImage::load(p)?, palette)?;
            if (l.height(), l.width()) != (input.shape().h(), input.shape().w()) {
                return Err(Error::InvalidShape(format!(
                    "labels {} are {}x{}, image is {}",
                    p.display(),
                    l.height(),
                    l.width(),
                    input.shape()
                )));
            }
            Some(l)
        }
        None => None,
    };
    Ok((input, labels))
}
