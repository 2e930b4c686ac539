//! Dilated 2-D convolution via im2col + GEMM, and its transpose.

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::{Shape, Tensor};

/// A row-major matrix view: element `(i, j)` lives at `i·rs + j·cs`.
#[derive(Clone, Copy)]
pub(crate) struct View {
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn rows(ld: usize) -> View {
        View { rs: ld, cs: 1 }
    }

    pub fn cols(ld: usize) -> View {
        View { rs: 1, cs: ld }
    }

    fn span(self, r: usize, c: usize) -> usize {
        if r == 0 || c == 0 {
            0
        } else {
            (r - 1) * self.rs + (c - 1) * self.cs + 1
        }
    }
}

/// `c = a · b (+ c when accumulate)` with `a` of size `m×k` and `b` of size
/// `k×n`, each read through its [`View`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    av: View,
    b: &[f64],
    bv: View,
    c: &mut [f64],
    cv: View,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= av.span(m, k) && b.len() >= bv.span(k, n) && c.len() >= cv.span(m, n));
    if k == 0 {
        if !accumulate {
            for i in 0..m {
                for j in 0..n {
                    c[i * cv.rs + j * cv.cs] = 0.0;
                }
            }
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the assertion above bounds every index reached through the views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr(),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr(),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

/// Output columns handled per GEMM; wider products fall out of cache.
const CHUNK_COLS: usize = 512;

/// Sliding-window geometry of a convolution from an `(in_c, in_h, in_w)`
/// plane stack to `(out_h, out_w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Kernel footprint once taps are spaced `dilation` apart.
pub fn effective_kernel(kernel: usize, dilation: usize) -> usize {
    kernel + (kernel - 1) * (dilation - 1)
}

/// `floor((n + 2·pad − k_eff)/stride) + 1`, or `None` when non-positive.
pub fn conv_output_extent(n: usize, kernel: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
    let span = n + 2 * pad;
    let keff = effective_kernel(kernel, dilation);
    if span < keff {
        None
    } else {
        Some((span - keff) / stride + 1)
    }
}

impl Geometry {
    pub fn conv(
        in_c: usize,
        in_h: usize,
        in_w: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        dilation: usize,
    ) -> Result<Geometry> {
        let oh = conv_output_extent(in_h, kernel, stride, pad, dilation);
        let ow = conv_output_extent(in_w, kernel, stride, pad, dilation);
        match (oh, ow) {
            (Some(out_h), Some(out_w)) => Ok(Geometry {
                in_c,
                in_h,
                in_w,
                kernel,
                stride,
                pad,
                dilation,
                out_h,
                out_w,
            }),
            _ => Err(Error::InvalidShape(format!(
                "{in_h}x{in_w} input with kernel {kernel}, dilation {dilation}, pad {pad} gives no output"
            ))),
        }
    }

    fn rows(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate range hit by tap `t` as output index varies; returns
    /// the first and one-past-last output index that land inside `[0, n)`.
    fn valid_range(&self, tap: usize, n_in: usize, n_out: usize) -> (usize, usize) {
        let off = (tap * self.dilation) as isize - self.pad as isize;
        let s = self.stride as isize;
        // o*s + off >= 0  and  o*s + off < n_in
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = if (n_in as isize) <= off {
            0
        } else {
            ((n_in as isize - off) + s - 1) / s
        };
        let lo = (lo as usize).min(n_out);
        let hi = (hi as usize).min(n_out).max(lo);
        (lo, hi)
    }

    /// Output row ranges of roughly [`CHUNK_COLS`] columns each.
    pub(crate) fn row_chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let step = (CHUNK_COLS / self.out_w.max(1)).max(1);
        let oh = self.out_h;
        (0..oh).step_by(step).map(move |y| (y, (y + step).min(oh)))
    }

    /// Columns for output rows `[oy0, oy1)`: `cols` is
    /// `rows × (oy1 − oy0)·out_w`.
    pub(crate) fn im2col_rows(&self, x: &[f64], cols: &mut [f64], oy0: usize, oy1: usize) {
        let ow = self.out_w;
        let nc = (oy1 - oy0) * ow;
        let k = self.kernel;
        for c in 0..self.in_c {
            let plane = &x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ki in 0..k {
                let (ylo, yhi) = self.valid_range(ki, self.in_h, self.out_h);
                let (ylo, yhi) = (ylo.clamp(oy0, oy1), yhi.clamp(oy0, oy1));
                for kj in 0..k {
                    let (xlo, xhi) = self.valid_range(kj, self.in_w, ow);
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * nc..(row + 1) * nc];
                    dst.fill(0.0);
                    let xoff = (kj * self.dilation) as isize - self.pad as isize;
                    for oy in ylo..yhi {
                        let iy = (oy * self.stride + ki * self.dilation) - self.pad;
                        let src = &plane[iy * self.in_w..(iy + 1) * self.in_w];
                        let d = &mut dst[(oy - oy0) * ow..(oy - oy0 + 1) * ow];
                        if self.stride == 1 {
                            let start = (xlo as isize + xoff) as usize;
                            d[xlo..xhi].copy_from_slice(&src[start..start + (xhi - xlo)]);
                        } else {
                            for ox in xlo..xhi {
                                d[ox] = src[(ox as isize * self.stride as isize + xoff) as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col_rows`]: scatter-adds columns into `x`.
    pub(crate) fn col2im_rows(&self, cols: &[f64], x: &mut [f64], oy0: usize, oy1: usize) {
        let ow = self.out_w;
        let nc = (oy1 - oy0) * ow;
        let k = self.kernel;
        for c in 0..self.in_c {
            let plane = &mut x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ki in 0..k {
                let (ylo, yhi) = self.valid_range(ki, self.in_h, self.out_h);
                let (ylo, yhi) = (ylo.clamp(oy0, oy1), yhi.clamp(oy0, oy1));
                for kj in 0..k {
                    let (xlo, xhi) = self.valid_range(kj, self.in_w, ow);
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * nc..(row + 1) * nc];
                    let xoff = (kj * self.dilation) as isize - self.pad as isize;
                    for oy in ylo..yhi {
                        let iy = (oy * self.stride + ki * self.dilation) - self.pad;
                        let dst = &mut plane[iy * self.in_w..(iy + 1) * self.in_w];
                        let s = &src[(oy - oy0) * ow..(oy - oy0 + 1) * ow];
                        if self.stride == 1 {
                            let start = (xlo as isize + xoff) as usize;
                            for (d, v) in dst[start..start + (xhi - xlo)].iter_mut().zip(&s[xlo..xhi]) {
                                *d += v;
                            }
                        } else {
                            for ox in xlo..xhi {
                                dst[(ox as isize * self.stride as isize + xoff) as usize] += s[ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scratch length for the widest row chunk.
    fn chunk_len(&self) -> usize {
        let step = (CHUNK_COLS / self.out_w.max(1)).max(1).min(self.out_h);
        self.rows() * step * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Gradients of a convolution-like layer.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub x: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

/// Cross-correlation with dilated taps. Weights are `(C_out, C_in, k, k)`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Conv2d {
    pub fn new(weight: Tensor, bias: Tensor, stride: usize, padding: usize, dilation: usize) -> Result<Self> {
        let ws = weight.shape();
        if ws.h() != ws.w() || ws.h() == 0 {
            return Err(Error::InvalidShape(format!("conv kernel must be square, got {ws}")));
        }
        if bias.len() != ws.n() {
            return Err(Error::InvalidShape(format!(
                "bias has {} values for {} filters",
                bias.len(),
                ws.n()
            )));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::Config("stride and dilation must be positive".into()));
        }
        Ok(Conv2d {
            weight: Param::new(weight),
            bias: Param::new(bias),
            stride,
            padding,
            dilation,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape().n()
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape().c()
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape().h()
    }

    pub fn geometry(&self, input: Shape) -> Result<Geometry> {
        if input.c() != self.in_channels() {
            return Err(Error::InvalidShape(format!(
                "conv expects {} input channels, got {input}",
                self.in_channels()
            )));
        }
        Geometry::conv(
            input.c(),
            input.h(),
            input.w(),
            self.kernel(),
            self.stride,
            self.padding,
            self.dilation,
        )
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.geometry(x.shape())?;
        let cout = self.out_channels();
        let n = x.shape().n();
        let plane = g.cols();
        let mut out = Tensor::zeros(Shape::new(n, cout, g.out_h, g.out_w));
        let mut cols = vec![0.0; if g.is_pointwise() { 0 } else { g.chunk_len() }];
        let w = self.weight.value.data();
        let bias = self.bias.value.data();
        for i in 0..n {
            let dst = out.item_mut(i);
            for (y0, y1) in g.row_chunks() {
                let (start, nc) = (y0 * g.out_w, (y1 - y0) * g.out_w);
                if g.is_pointwise() {
                    let src = &x.item(i)[start..];
                    gemm(cout, g.rows(), nc, w, View::rows(g.rows()), src, View::rows(plane), &mut dst[start..], View::rows(plane), false);
                } else {
                    g.im2col_rows(x.item(i), &mut cols, y0, y1);
                    gemm(cout, g.rows(), nc, w, View::rows(g.rows()), &cols, View::rows(nc), &mut dst[start..], View::rows(plane), false);
                }
            }
            for (co, p) in dst.chunks_exact_mut(plane).enumerate() {
                p.iter_mut().for_each(|v| *v += bias[co]);
            }
        }
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
        let g = self.geometry(x.shape())?;
        let cout = self.out_channels();
        let n = x.shape().n();
        let expected = Shape::new(n, cout, g.out_h, g.out_w);
        if grad_out.shape() != expected {
            return Err(Error::ShapeMismatch(grad_out.shape(), expected));
        }
        let plane = g.cols();
        let in_plane = g.in_h * g.in_w;
        let rows = g.rows();
        let w = self.weight.value.data();
        let mut gx = Tensor::zeros(x.shape());
        let mut gw = Tensor::zeros(self.weight.value.shape());
        let mut gb = Tensor::zeros(self.bias.value.shape());
        let mut cols = vec![0.0; g.chunk_len()];
        for i in 0..n {
            let go = grad_out.item(i);
            for (co, p) in go.chunks_exact(plane).enumerate() {
                gb.data_mut()[co] += p.iter().sum::<f64>();
            }
            for (y0, y1) in g.row_chunks() {
                let (start, nc) = (y0 * g.out_w, (y1 - y0) * g.out_w);
                let go = &go[start..];
                if g.is_pointwise() {
                    let xs = &x.item(i)[start..];
                    gemm(cout, nc, rows, go, View::rows(plane), xs, View::cols(in_plane), gw.data_mut(), View::rows(rows), true);
                    let gxi = &mut gx.item_mut(i)[start..];
                    gemm(rows, cout, nc, w, View::cols(rows), go, View::rows(plane), gxi, View::rows(in_plane), false);
                } else {
                    g.im2col_rows(x.item(i), &mut cols, y0, y1);
                    gemm(cout, nc, rows, go, View::rows(plane), &cols, View::cols(nc), gw.data_mut(), View::rows(rows), true);
                    gemm(rows, cout, nc, w, View::cols(rows), go, View::rows(plane), &mut cols, View::rows(nc), false);
                    g.col2im_rows(&cols, gx.item_mut(i), y0, y1);
                }
            }
        }
        Ok(ConvGrads { x: gx, w: gw, b: gb })
    }
}

/// Transposed convolution: the adjoint of a strided convolution.
/// Weights are `(C_in, C_out, k, k)`.
#[derive(Clone, Debug)]
pub struct TransposeConv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

/// `(n−1)·stride − 2·pad + k + output_padding`, or `None` when non-positive.
pub fn transpose_output_extent(n: usize, kernel: usize, stride: usize, pad: usize, output_padding: usize) -> Option<usize> {
    if n == 0 {
        return None;
    }
    let grown = (n - 1) * stride + kernel + output_padding;
    grown.checked_sub(2 * pad).filter(|&e| e > 0)
}

impl TransposeConv2d {
    pub fn new(weight: Tensor, bias: Tensor, stride: usize, padding: usize, output_padding: usize) -> Result<Self> {
        let ws = weight.shape();
        if ws.h() != ws.w() || ws.h() == 0 {
            return Err(Error::InvalidShape(format!("kernel must be square, got {ws}")));
        }
        if bias.len() != ws.c() {
            return Err(Error::InvalidShape(format!(
                "bias has {} values for {} output channels",
                bias.len(),
                ws.c()
            )));
        }
        if stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        if output_padding >= stride {
            return Err(Error::Config(format!(
                "output_padding {output_padding} must be smaller than stride {stride}"
            )));
        }
        Ok(TransposeConv2d {
            weight: Param::new(weight),
            bias: Param::new(bias),
            stride,
            padding,
            output_padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape().n()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape().c()
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape().h()
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c() != self.in_channels() {
            return Err(Error::InvalidShape(format!(
                "transpose conv expects {} input channels, got {input}",
                self.in_channels()
            )));
        }
        let k = self.kernel();
        let ext = |n| transpose_output_extent(n, k, self.stride, self.padding, self.output_padding);
        match (ext(input.h()), ext(input.w())) {
            (Some(h), Some(w)) => Ok(Shape::new(input.n(), self.out_channels(), h, w)),
            _ => Err(Error::InvalidShape(format!(
                "transpose conv (k={k}, stride={}, pad={}) gives no output for {input}",
                self.stride, self.padding
            ))),
        }
    }

    /// Geometry of the forward convolution this layer is the adjoint of:
    /// it maps the upsampled output back down to the input grid.
    fn adjoint_geometry(&self, input: Shape, output: Shape) -> Geometry {
        Geometry {
            in_c: output.c(),
            in_h: output.h(),
            in_w: output.w(),
            kernel: self.kernel(),
            stride: self.stride,
            pad: self.padding,
            dilation: 1,
            out_h: input.h(),
            out_w: input.w(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let g = self.adjoint_geometry(x.shape(), out_shape);
        let cin = self.in_channels();
        let plane = g.cols();
        let mut out = Tensor::zeros(out_shape);
        let mut cols = vec![0.0; g.chunk_len()];
        let w = self.weight.value.data();
        let bias = self.bias.value.data();
        for i in 0..x.shape().n() {
            let dst = out.item_mut(i);
            for (y0, y1) in g.row_chunks() {
                let (start, nc) = (y0 * g.out_w, (y1 - y0) * g.out_w);
                let xs = &x.item(i)[start..];
                gemm(g.rows(), cin, nc, w, View::cols(g.rows()), xs, View::rows(plane), &mut cols, View::rows(nc), false);
                g.col2im_rows(&cols, dst, y0, y1);
            }
            for (co, p) in dst.chunks_exact_mut(out_shape.plane()).enumerate() {
                p.iter_mut().for_each(|v| *v += bias[co]);
            }
        }
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
        let out_shape = self.output_shape(x.shape())?;
        if grad_out.shape() != out_shape {
            return Err(Error::ShapeMismatch(grad_out.shape(), out_shape));
        }
        let g = self.adjoint_geometry(x.shape(), out_shape);
        let cin = self.in_channels();
        let plane = g.cols();
        let rows = g.rows();
        let w = self.weight.value.data();
        let mut gx = Tensor::zeros(x.shape());
        let mut gw = Tensor::zeros(self.weight.value.shape());
        let mut gb = Tensor::zeros(self.bias.value.shape());
        let mut cols = vec![0.0; g.chunk_len()];
        for i in 0..x.shape().n() {
            let go = grad_out.item(i);
            for (co, p) in go.chunks_exact(out_shape.plane()).enumerate() {
                gb.data_mut()[co] += p.iter().sum::<f64>();
            }
            for (y0, y1) in g.row_chunks() {
                let (start, nc) = (y0 * g.out_w, (y1 - y0) * g.out_w);
                g.im2col_rows(go, &mut cols, y0, y1);
                let gxi = &mut gx.item_mut(i)[start..];
                gemm(cin, rows, nc, w, View::rows(rows), &cols, View::rows(nc), gxi, View::rows(plane), false);
                let xs = &x.item(i)[start..];
                gemm(cin, nc, rows, xs, View::rows(plane), &cols, View::cols(nc), gw.data_mut(), View::rows(rows), true);
            }
        }
        Ok(ConvGrads { x: gx, w: gw, b: gb })
    }
}
