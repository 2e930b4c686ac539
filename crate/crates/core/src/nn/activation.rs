use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of [`relu`] given its output.
pub fn relu_backward(out: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if out.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch(out.shape(), grad_out.shape()));
    }
    let data = out
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(out.shape(), data)
}

/// 2×2 max pooling with stride 2.
///
/// Returns the pooled tensor and, per output element, the flat offset of the
/// winning input element. Ties go to the first position in row-major window
/// order.
pub fn maxpool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let s = x.shape();
    if s.h() % 2 != 0 || s.w() % 2 != 0 {
        return Err(Error::InvalidShape(format!(
            "max pooling needs even spatial extents, got {s}"
        )));
    }
    let out_shape = Shape::new(s.n(), s.c(), s.h() / 2, s.w() / 2);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut arg = Vec::with_capacity(out_shape.len());
    for n in 0..s.n() {
        for c in 0..s.c() {
            for oy in 0..out_shape.h() {
                for ox in 0..out_shape.w() {
                    let mut best = x.offset(n, c, 2 * oy, 2 * ox);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let o = x.offset(n, c, 2 * oy + dy, 2 * ox + dx);
                        if x.data()[o] > x.data()[best] {
                            best = o;
                        }
                    }
                    out.push(x.data()[best]);
                    arg.push(best);
                }
            }
        }
    }
    Ok((Tensor::from_vec(out_shape, out)?, arg))
}

pub fn maxpool2_backward(input_shape: Shape, argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::InvalidShape(format!(
            "{} pooling indices for gradient {}",
            argmax.len(),
            grad_out.shape()
        )));
    }
    let mut gx = Tensor::zeros(input_shape);
    for (&o, &g) in argmax.iter().zip(grad_out.data()) {
        gx.data_mut()[o] += g;
    }
    Ok(gx)
}

/// Softmax over the channel axis at every pixel.
pub fn softmax_channels(x: &Tensor) -> Tensor {
    let s = x.shape();
    let p = s.plane();
    let mut out = x.clone();
    for n in 0..s.n() {
        let item = out.item_mut(n);
        for i in 0..p {
            let max = (0..s.c()).map(|c| item[c * p + i]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..s.c() {
                let e = (item[c * p + i] - max).exp();
                item[c * p + i] = e;
                z += e;
            }
            for c in 0..s.c() {
                item[c * p + i] /= z;
            }
        }
    }
    out
}

/// Gradient of [`softmax_channels`] given its output.
pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if probs.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch(probs.shape(), grad_out.shape()));
    }
    let s = probs.shape();
    let p = s.plane();
    let mut gx = Tensor::zeros(s);
    for n in 0..s.n() {
        let (pr, go) = (probs.item(n), grad_out.item(n));
        let dst = gx.item_mut(n);
        for i in 0..p {
            let dot: f64 = (0..s.c()).map(|c| pr[c * p + i] * go[c * p + i]).sum();
            for c in 0..s.c() {
                dst[c * p + i] = pr[c * p + i] * (go[c * p + i] - dot);
            }
        }
    }
    Ok(gx)
}
