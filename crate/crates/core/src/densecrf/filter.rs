use crate::densecrf::lattice::{Lattice, MAX_DIM};
use crate::error::{Error, Result};

fn check(values: &[f64], channels: usize, features: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || features.len() % dim != 0 {
        return Err(Error::InvalidShape(format!(
            "{} feature values with dimension {dim}",
            features.len()
        )));
    }
    let n = features.len() / dim;
    if values.len() != n * channels {
        return Err(Error::InvalidShape(format!(
            "{} values for {n} points x {channels} channels",
            values.len()
        )));
    }
    Ok(n)
}

/// Exact `out_i = Σ_{j≠i} exp(−‖f_i − f_j‖²/2)·v_j` for features already
/// divided by their bandwidths. Values and features are point-major.
pub fn gaussian_filter_bruteforce(
    values: &[f64],
    channels: usize,
    features: &[f64],
    dim: usize,
    guard: usize,
) -> Result<Vec<f64>> {
    let n = check(values, channels, features, dim)?;
    if n > guard {
        return Err(Error::GuardExceeded { pixels: n, limit: guard });
    }
    let mut out = vec![0.0; n * channels];
    for i in 0..n {
        let fi = &features[i * dim..(i + 1) * dim];
        for j in 0..n {
            if i == j {
                continue;
            }
            let fj = &features[j * dim..(j + 1) * dim];
            let d2: f64 = fi.iter().zip(fj).map(|(a, b)| (a - b) * (a - b)).sum();
            let k = (-0.5 * d2).exp();
            for c in 0..channels {
                out[i * channels + c] += k * values[j * channels + c];
            }
        }
    }
    Ok(out)
}

/// Lattice approximation of [`gaussian_filter_bruteforce`], self term removed.
pub fn permutohedral_filter(values: &[f64], channels: usize, features: &[f64], dim: usize) -> Result<Vec<f64>> {
    check(values, channels, features, dim)?;
    if dim > MAX_DIM {
        return Err(Error::Config(format!("feature dimension {dim} exceeds {MAX_DIM}")));
    }
    Lattice::new(features, dim)?.filter_excluding_self(values, channels)
}

/// Which filtering implementation mean-field inference uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterBackend {
    Permutohedral,
    /// Exact O(N²) filtering, refused above `guard` pixels.
    BruteForce { guard: usize },
}

/// A prepared Gaussian filter over a fixed feature set.
pub(crate) enum PreparedFilter<'a> {
    Lattice(Lattice),
    Exact { features: &'a [f64], dim: usize, guard: usize },
}

impl<'a> PreparedFilter<'a> {
    pub(crate) fn new(backend: FilterBackend, features: &'a [f64], dim: usize) -> Result<Self> {
        match backend {
            FilterBackend::Permutohedral => Ok(PreparedFilter::Lattice(Lattice::new(features, dim)?)),
            FilterBackend::BruteForce { guard } => {
                let n = features.len() / dim.max(1);
                if n > guard {
                    return Err(Error::GuardExceeded { pixels: n, limit: guard });
                }
                Ok(PreparedFilter::Exact { features, dim, guard })
            }
        }
    }

    pub(crate) fn apply(&self, values: &[f64], channels: usize) -> Result<Vec<f64>> {
        match self {
            PreparedFilter::Lattice(l) => l.filter_excluding_self(values, channels),
            PreparedFilter::Exact { features, dim, guard } => {
                gaussian_filter_bruteforce(values, channels, features, *dim, *guard)
            }
        }
    }
}
