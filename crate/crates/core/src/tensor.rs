//! Dense `(N, C, H, W)` tensors and the `RT01` raw file format.
//!
//! Values are held as `f64` in row-major order. The on-disk format can store
//! either `f32` or `f64` payloads:
//!
//! ```text
//! bytes 0..4   magic "RT01"
//! byte  4      dtype tag (1 = f32, 2 = f64)
//! bytes 5..8   reserved, zero
//! bytes 8..40  N, C, H, W as little-endian u64
//! bytes 40..   payload, row-major, little-endian
//! ```

use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RT01";
const HEADER_LEN: usize = 40;

/// Extents of a 4-axis tensor in `(N, C, H, W)` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }

    pub fn c(&self) -> usize {
        self.0[1]
    }

    pub fn h(&self) -> usize {
        self.0[2]
    }

    pub fn w(&self) -> usize {
        self.0[3]
    }

    /// Number of elements, or `None` on overflow.
    pub fn checked_len(&self) -> Option<usize> {
        self.0.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e))
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one `(H, W)` plane.
    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "({n}, {c}, {h}, {w})")
    }
}

/// Storage precision for serialized tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn tag(self) -> u8 {
        match self {
            Precision::F32 => 1,
            Precision::F64 => 2,
        }
    }

    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Binary operations supported by [`Tensor::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Max,
}

impl BinaryOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Max => a.max(b),
        }
    }
}

/// Right-hand operand of an elementwise operation.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

impl<'a> From<&'a Tensor> for Operand<'a> {
    fn from(t: &'a Tensor) -> Self {
        Operand::Tensor(t)
    }
}

impl From<f64> for Operand<'_> {
    fn from(v: f64) -> Self {
        Operand::Scalar(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        let expected = shape
            .checked_len()
            .ok_or(Error::ExtentOverflow(shape.0.map(|e| e as u64)))?;
        if data.len() != expected {
            return Err(Error::InvalidShape(format!(
                "shape {shape} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let [n, c, h, w] = shape.0;
        let mut data = Vec::with_capacity(shape.len());
        for i in 0..n {
            for j in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([i, j, y, x]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cs, hs, ws] = self.shape.0;
        ((n * cs + c) * hs + y) * ws + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let o = self.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// The `(H, W)` plane of item `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c() + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c() + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of batch item `n`, as a contiguous `C·H·W` slice.
    pub fn item(&self, n: usize) -> &[f64] {
        let s = self.shape.c() * self.shape.plane();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let s = self.shape.c() * self.shape.plane();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.len() != self.data.len() {
            return Err(Error::ShapeMismatch(self.shape, shape));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn elementwise<'a>(&self, op: BinaryOp, rhs: impl Into<Operand<'a>>) -> Result<Tensor> {
        let data = match rhs.into() {
            Operand::Scalar(b) => self.data.iter().map(|&a| op.apply(a, b)).collect(),
            Operand::Tensor(t) => {
                if t.shape != self.shape {
                    return Err(Error::ShapeMismatch(self.shape, t.shape));
                }
                self.data
                    .iter()
                    .zip(&t.data)
                    .map(|(&a, &b)| op.apply(a, b))
                    .collect()
            }
        };
        Ok(Tensor {
            shape: self.shape,
            data,
        })
    }

    pub fn add<'a>(&self, rhs: impl Into<Operand<'a>>) -> Result<Tensor> {
        self.elementwise(BinaryOp::Add, rhs)
    }

    pub fn sub<'a>(&self, rhs: impl Into<Operand<'a>>) -> Result<Tensor> {
        self.elementwise(BinaryOp::Sub, rhs)
    }

    pub fn mul<'a>(&self, rhs: impl Into<Operand<'a>>) -> Result<Tensor> {
        self.elementwise(BinaryOp::Mul, rhs)
    }

    pub fn max<'a>(&self, rhs: impl Into<Operand<'a>>) -> Result<Tensor> {
        self.elementwise(BinaryOp::Max, rhs)
    }

    /// Sum of all elements, accumulated in `f64`.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(self.shape, other.shape));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks `a`'s channels followed by `b`'s.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.shape, b.shape);
        if sa.n() != sb.n() || sa.h() != sb.h() || sa.w() != sb.w() {
            return Err(Error::ShapeMismatch(sa, sb));
        }
        let shape = Shape::new(sa.n(), sa.c() + sb.c(), sa.h(), sa.w());
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..sa.n() {
            data.extend_from_slice(a.item(n));
            data.extend_from_slice(b.item(n));
        }
        Ok(Tensor { shape, data })
    }

    /// Copies channels `range` into a new tensor.
    pub fn slice_channels(&self, range: Range<usize>) -> Result<Tensor> {
        if range.start > range.end || range.end > self.shape.c() {
            return Err(Error::InvalidShape(format!(
                "channel range {range:?} outside {}",
                self.shape
            )));
        }
        let p = self.shape.plane();
        let shape = Shape::new(self.shape.n(), range.len(), self.shape.h(), self.shape.w());
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..self.shape.n() {
            let item = self.item(n);
            data.extend_from_slice(&item[range.start * p..range.end * p]);
        }
        Ok(Tensor { shape, data })
    }

    /// Copies batch items `range` into a new tensor.
    pub fn slice_batch(&self, range: Range<usize>) -> Result<Tensor> {
        if range.start > range.end || range.end > self.shape.n() {
            return Err(Error::InvalidShape(format!(
                "batch range {range:?} outside {}",
                self.shape
            )));
        }
        let s = self.shape.c() * self.shape.plane();
        Ok(Tensor {
            shape: Shape::new(range.len(), self.shape.c(), self.shape.h(), self.shape.w()),
            data: self.data[range.start * s..range.end * s].to_vec(),
        })
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack_batch(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidShape("cannot stack an empty list".into()))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.len() * items.len());
        let mut n = 0;
        for t in items {
            if t.shape.c() != s.c() || t.shape.h() != s.h() || t.shape.w() != s.w() {
                return Err(Error::ShapeMismatch(s, t.shape));
            }
            n += t.shape.n();
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: Shape::new(n, s.c(), s.h(), s.w()),
            data,
        })
    }

    /// Copies a spatial window `[y0, y0+h) × [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor> {
        let s = self.shape;
        if y0 + h > s.h() || x0 + w > s.w() {
            return Err(Error::InvalidShape(format!(
                "crop {h}x{w} at ({y0},{x0}) outside {s}"
            )));
        }
        let out = Shape::new(s.n(), s.c(), h, w);
        let mut data = Vec::with_capacity(out.len());
        for n in 0..s.n() {
            for c in 0..s.c() {
                let plane = self.plane(n, c);
                for y in y0..y0 + h {
                    data.extend_from_slice(&plane[y * s.w() + x0..y * s.w() + x0 + w]);
                }
            }
        }
        Ok(Tensor { shape: out, data })
    }

    pub fn to_bytes(&self, precision: Precision) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * precision.width());
        out.extend_from_slice(MAGIC);
        out.push(precision.tag());
        out.extend_from_slice(&[0, 0, 0]);
        for e in self.shape.0 {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        match precision {
            Precision::F32 => {
                for v in &self.data {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
            Precision::F64 => {
                for v in &self.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Tensor> {
        if bytes.len() < 4 {
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let precision = match bytes[4] {
            1 => Precision::F32,
            2 => Precision::F64,
            t => return Err(Error::BadDtype(t)),
        };
        let mut raw = [0u64; 4];
        for (i, e) in raw.iter_mut().enumerate() {
            let o = 8 + 8 * i;
            *e = u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        }
        let overflow = || Error::ExtentOverflow(raw);
        let mut extents = [0usize; 4];
        for (dst, &src) in extents.iter_mut().zip(&raw) {
            *dst = usize::try_from(src).map_err(|_| overflow())?;
        }
        let shape = Shape(extents);
        let count = shape.checked_len().ok_or_else(overflow)?;
        let payload = count
            .checked_mul(precision.width())
            .and_then(|p| p.checked_add(HEADER_LEN))
            .ok_or_else(overflow)?;
        if bytes.len() < payload {
            return Err(Error::Truncated {
                expected: payload,
                found: bytes.len(),
            });
        }
        let body = &bytes[HEADER_LEN..payload];
        let data = match precision {
            Precision::F32 => body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            Precision::F64 => body
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        Ok(Tensor { shape, data })
    }

    pub fn write_to(&self, mut w: impl Write, precision: Precision) -> Result<()> {
        w.write_all(&self.to_bytes(precision))?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Tensor> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Tensor::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes(Precision::F64))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        Tensor::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: [usize; 4], data: &[f64]) -> Tensor {
        Tensor::from_vec(Shape(shape), data.to_vec()).unwrap()
    }

    #[test]
    fn add_componentwise() {
        let a = t([1, 1, 1, 2], &[1.0, 2.0]);
        let b = t([1, 1, 1, 2], &[3.0, 4.0]);
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn mul_by_zero_is_zero() {
        let a = t([1, 2, 1, 2], &[1.0, -2.0, 3.5, 7.0]);
        let z = a.mul(0.0).unwrap();
        assert_eq!(z.shape(), a.shape());
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let a = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let b = Tensor::zeros(Shape::new(1, 2, 2, 2));
        let msg = a.sub(&b).unwrap_err().to_string();
        assert!(msg.contains("(1, 1, 2, 2)") && msg.contains("(1, 2, 2, 2)"), "{msg}");
    }

    #[test]
    fn concat_irrg_and_ndsm() {
        let irrg = Tensor::full(Shape::new(1, 3, 128, 128), 0.5);
        let ndsm = Tensor::full(Shape::new(1, 1, 128, 128), 0.25);
        let stacked = Tensor::concat_channels(&irrg, &ndsm).unwrap();
        assert_eq!(stacked.shape(), Shape::new(1, 4, 128, 128));
        assert_eq!(stacked.get(0, 3, 5, 5), 0.25);
    }

    #[test]
    fn concat_with_empty_is_identity() {
        let a = Tensor::from_fn(Shape::new(2, 2, 3, 3), |[n, c, y, x]| (n * 100 + c * 10 + y * 3 + x) as f64);
        let e = Tensor::zeros(Shape::new(2, 0, 3, 3));
        assert_eq!(Tensor::concat_channels(&a, &e).unwrap(), a);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let b = Tensor::zeros(Shape::new(1, 1, 4, 5));
        assert!(matches!(Tensor::concat_channels(&a, &b), Err(Error::ShapeMismatch(..))));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = Tensor::zeros(Shape::new(1, 1, 1, 1)).to_bytes(Precision::F64);
        bytes[0] = b'X';
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::BadMagic(_))));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = Tensor::zeros(Shape::new(2, 2, 2, 2)).to_bytes(Precision::F64);
        bytes.truncate(HEADER_LEN + 15 * 8);
        match Tensor::from_bytes(&bytes) {
            Err(Error::Truncated { expected, found }) => {
                assert_eq!(expected, HEADER_LEN + 16 * 8);
                assert_eq!(found, HEADER_LEN + 15 * 8);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn extent_overflow() {
        let mut bytes = Tensor::zeros(Shape::new(1, 1, 1, 1)).to_bytes(Precision::F64);
        for i in 0..4 {
            let o = 8 + 8 * i;
            bytes[o..o + 8].copy_from_slice(&(u64::MAX / 3).to_le_bytes());
        }
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::ExtentOverflow(_))));
    }

    #[test]
    fn header_layout() {
        let bytes = Tensor::zeros(Shape::new(1, 2, 3, 4)).to_bytes(Precision::F32);
        assert_eq!(&bytes[..4], b"RT01");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..8], &[0, 0, 0]);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 40 + 24 * 4);
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        (0usize..3, 0usize..4, 0usize..5, 0usize..5).prop_flat_map(|(n, c, h, w)| {
            let shape = Shape::new(n, c, h, w);
            prop::collection::vec(any::<f64>(), shape.len())
                .prop_map(move |data| Tensor::from_vec(shape, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn rt01_round_trip_is_bit_exact(t in arb_tensor()) {
            let back = Tensor::from_bytes(&t.to_bytes(Precision::F64)).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }

        #[test]
        fn concat_then_split_recovers_operands(
            (a, b) in (1usize..3, 0usize..3, 0usize..3, 1usize..4, 1usize..4).prop_map(|(n, ca, cb, h, w)| {
                let a = Tensor::from_fn(Shape::new(n, ca, h, w), |[i, c, y, x]| (i * 7 + c * 5 + y * 3 + x) as f64 * 0.1);
                let b = Tensor::from_fn(Shape::new(n, cb, h, w), |[i, c, y, x]| -((i + c + y + x) as f64));
                (a, b)
            })
        ) {
            let s = Tensor::concat_channels(&a, &b).unwrap();
            let ca = a.shape().c();
            prop_assert_eq!(s.slice_channels(0..ca).unwrap(), a);
            prop_assert_eq!(s.slice_channels(ca..s.shape().c()).unwrap(), b);
        }

        #[test]
        fn elementwise_preserves_shape(t in arb_tensor(), s in -5.0f64..5.0) {
            for op in [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Max] {
                prop_assert_eq!(t.elementwise(op, s).unwrap().shape(), t.shape());
                prop_assert_eq!(t.elementwise(op, &t).unwrap().shape(), t.shape());
            }
        }
    }
}
