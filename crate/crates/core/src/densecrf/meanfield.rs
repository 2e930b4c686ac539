use crate::densecrf::filter::{FilterBackend, PreparedFilter};
use crate::densecrf::potentials::{CrfParams, FeatureField};
use crate::error::{Error, Result};
use crate::labels::{argmax, LabelMap};
use crate::tensor::{Shape, Tensor};

/// Normalized `exp(−θ − pairwise)` for one pixel, written into `out`.
fn normalize_into(neg_energy: impl Iterator<Item = f64>, out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (o, e) in out.iter_mut().zip(neg_energy) {
        *o = e;
        max = max.max(e);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// One mean-field update from messages `m` (point-major, `K` per pixel):
/// Potts compatibility gives `pairwise(l) = Σ_{l'≠l} m(l')`.
/// Returns the updated distribution, point-major.
pub fn meanfield_step(unary: &[f64], messages: &[f64], classes: usize) -> Vec<f64> {
    let mut q = vec![0.0; unary.len()];
    for ((u, m), q) in unary
        .chunks(classes)
        .zip(messages.chunks(classes))
        .zip(q.chunks_mut(classes))
    {
        let total: f64 = m.iter().sum();
        normalize_into(u.iter().zip(m).map(|(u, m)| -u - (total - m)), q);
    }
    q
}

fn to_point_major(t: &Tensor) -> Vec<f64> {
    let s = t.shape();
    let (k, plane) = (s.c(), s.plane());
    let mut out = vec![0.0; k * plane];
    for c in 0..k {
        for (i, v) in t.plane(0, c).iter().enumerate() {
            out[i * k + c] = *v;
        }
    }
    out
}

fn to_tensor(values: &[f64], shape: Shape) -> Tensor {
    let (k, w) = (shape.c(), shape.w());
    Tensor::from_fn(shape, |[_, c, y, x]| values[(y * w + x) * k + c])
}

/// Mean-field inference for the fully connected CRF. `unary` is `(1, K, H, W)`;
/// `features` supplies positions and colors. Returns `Q` and its argmax.
pub fn meanfield_infer(
    unary: &Tensor,
    features: &FeatureField,
    params: &CrfParams,
    backend: FilterBackend,
) -> Result<(Tensor, LabelMap)> {
    params.validate()?;
    let s = unary.shape();
    if s.n() != 1 || s.h() != features.height() || s.w() != features.width() {
        return Err(Error::InvalidShape(format!(
            "unary {s} does not match {}x{} features",
            features.height(),
            features.width()
        )));
    }
    if !unary.all_finite() {
        return Err(Error::NonFinite("unary potentials".into()));
    }
    let k = s.c();
    let theta = to_point_major(unary);
    let mut q = meanfield_step(&theta, &vec![0.0; theta.len()], k);

    let app_feats;
    let smooth_feats;
    let mut filters = Vec::new();
    if params.w1 > 0.0 {
        app_feats = features.appearance_features(params.sigma_alpha, params.sigma_beta);
        filters.push((params.w1, PreparedFilter::new(backend, &app_feats, 2 + features.color_dims())?));
    }
    if params.w2 > 0.0 {
        smooth_feats = features.smoothness_features(params.sigma_gamma);
        filters.push((params.w2, PreparedFilter::new(backend, &smooth_feats, 2)?));
    }
    if !filters.is_empty() {
        for it in 0..params.iterations {
            let mut messages = vec![0.0; q.len()];
            for (w, f) in &filters {
                for (m, v) in messages.iter_mut().zip(f.apply(&q, k)?) {
                    *m += w * v;
                }
            }
            q = meanfield_step(&theta, &messages, k);
            if q.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("mean-field iteration {}", it + 1)));
            }
        }
    }
    let q = to_tensor(&q, s);
    let labels = argmax(&q).pop().expect("one image");
    Ok((q, labels))
}
