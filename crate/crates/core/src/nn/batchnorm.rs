use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalization.
///
/// Running statistics start at mean 0 / variance 1, so evaluation mode is
/// defined before any training step. Running variance tracks the unbiased
/// batch variance.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

/// Values saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub mode: Mode,
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads {
    pub x: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(Tensor::full(Shape::new(1, channels, 1, 1), 1.0)),
            beta: Param::new(Tensor::zeros(Shape::new(1, channels, 1, 1))),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape().c() != self.channels() {
            return Err(Error::InvalidShape(format!(
                "batch norm expects {} channels, got {}",
                self.channels(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Normalizes `x`. In train mode batch statistics are used and the
    /// running statistics are updated.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
        self.check(x)?;
        let s = x.shape();
        let count = s.n() * s.plane();
        let c = self.channels();
        let (mean, inv_std) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::InvalidShape(format!(
                        "batch norm in train mode needs at least 2 values per channel, got {s}"
                    )));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let m = (0..s.n()).map(|n| x.plane(n, ch).iter().sum::<f64>()).sum::<f64>() / count as f64;
                    let v = (0..s.n())
                        .map(|n| x.plane(n, ch).iter().map(|&v| (v - m) * (v - m)).sum::<f64>())
                        .sum::<f64>()
                        / count as f64;
                    mean[ch] = m;
                    var[ch] = v;
                    let unbiased = v * count as f64 / (count - 1) as f64;
                    self.running_mean[ch] = (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * m;
                    self.running_var[ch] = (1.0 - self.momentum) * self.running_var[ch] + self.momentum * unbiased;
                }
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
                (mean, inv_std)
            }
            Mode::Eval => (
                self.running_mean.clone(),
                self.running_var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect(),
            ),
        };
        let mut out = x.clone();
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for n in 0..s.n() {
            for ch in 0..c {
                let (m, is) = (mean[ch], inv_std[ch]);
                out.plane_mut(n, ch)
                    .iter_mut()
                    .for_each(|v| *v = g[ch] * (*v - m) * is + b[ch]);
            }
        }
        Ok((out, BatchNormCache { mode, mean, inv_std }))
    }

    pub fn backward(&self, x: &Tensor, cache: &BatchNormCache, grad_out: &Tensor) -> Result<BatchNormGrads> {
        self.check(x)?;
        if grad_out.shape() != x.shape() {
            return Err(Error::ShapeMismatch(grad_out.shape(), x.shape()));
        }
        let s = x.shape();
        let c = self.channels();
        let count = (s.n() * s.plane()) as f64;
        let gamma = self.gamma.value.data();
        let mut gx = Tensor::zeros(s);
        let mut gg = Tensor::zeros(self.gamma.value.shape());
        let mut gb = Tensor::zeros(self.beta.value.shape());
        for ch in 0..c {
            let (m, is) = (cache.mean[ch], cache.inv_std[ch]);
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for n in 0..s.n() {
                for (&xv, &dy) in x.plane(n, ch).iter().zip(grad_out.plane(n, ch)) {
                    sum_dy += dy;
                    sum_dy_xhat += dy * (xv - m) * is;
                }
            }
            gg.data_mut()[ch] = sum_dy_xhat;
            gb.data_mut()[ch] = sum_dy;
            for n in 0..s.n() {
                let xs = x.plane(n, ch);
                let gs = grad_out.plane(n, ch);
                let dst = gx.plane_mut(n, ch);
                match cache.mode {
                    Mode::Train => {
                        let k = gamma[ch] * is / count;
                        for ((d, &xv), &dy) in dst.iter_mut().zip(xs).zip(gs) {
                            let xhat = (xv - m) * is;
                            *d = k * (count * dy - sum_dy - xhat * sum_dy_xhat);
                        }
                    }
                    Mode::Eval => {
                        for (d, &dy) in dst.iter_mut().zip(gs) {
                            *d = gamma[ch] * is * dy;
                        }
                    }
                }
            }
        }
        Ok(BatchNormGrads { x: gx, gamma: gg, beta: gb })
    }
}
