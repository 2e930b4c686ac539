//! Permutohedral lattice for approximate high-dimensional Gaussian filtering.
//!
//! Feature vectors (already divided by their bandwidths) are embedded in the
//! `d`-dimensional hyperplane of `R^{d+1}`, each point is splatted onto the
//! `d+1` vertices of its enclosing simplex with barycentric weights, values
//! are blurred with a `[½ 1 ½]` kernel along each of the `d+1` lattice
//! directions, and the result is sliced back with the same weights.
//!
//! The self-contribution of every point (the part of its output that came
//! from its own splat) is computed exactly: two vertices of one simplex
//! differ by a sum over a subset `D` of lattice directions, so the blur can
//! carry mass between them along only two paths (steps `+δ_j` for `j ∈ D`,
//! or `−δ_j` for `j ∉ D`), plus the stay/full-cycle paths from a vertex to
//! itself.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 16;
const NONE: u32 = u32::MAX;

type Key = [i32; MAX_DIM];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeOptions {
    /// Blur rounds. More rounds use a proportionally finer lattice so the
    /// overall kernel variance stays one.
    pub rounds: u32,
    /// Create vertices reached by the blur instead of treating them as zero.
    pub expand: bool,
    /// Normalize by the analytic kernel mass instead of `1/(1+2^-d)`.
    pub analytic_scale: bool,
}

impl Default for LatticeOptions {
    fn default() -> Self {
        LatticeOptions {
            rounds: 1,
            expand: true,
            analytic_scale: true,
        }
    }
}

impl LatticeOptions {
    /// Ratio of the default lattice spacing to the refined one: blur
    /// contributes `3n/4r²` of the variance and splat/slice `1/4r²`.
    pub fn refinement(&self) -> f64 {
        ((3.0 * self.rounds as f64 + 1.0) / 4.0).sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct Lattice {
    dim: usize,
    points: usize,
    vertices: usize,
    /// Vertex index per `(point, simplex corner)`.
    offsets: Vec<u32>,
    barycentric: Vec<f64>,
    /// `(n1, n2)` vertex neighbors along each direction, `dim+1` blocks of
    /// `vertices` entries.
    neighbors: Vec<[u32; 2]>,
    /// Response of each point to its own splat, including `alpha`.
    self_weight: Vec<f64>,
    alpha: f64,
    rounds: u32,
}

impl Lattice {
    /// Builds the lattice for `features`, laid out point-major with `dim`
    /// values per point.
    pub fn new(features: &[f64], dim: usize) -> Result<Lattice> {
        Lattice::with_options(features, dim, LatticeOptions::default())
    }

    pub fn with_options(features: &[f64], dim: usize, options: LatticeOptions) -> Result<Lattice> {
        if options.rounds == 0 || (options.rounds > 1 && !options.expand) {
            return Err(Error::Config(format!("unsupported lattice options {options:?}")));
        }
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Config(format!(
                "lattice dimension {dim} outside 1..={MAX_DIM}"
            )));
        }
        if features.len() % dim != 0 {
            return Err(Error::InvalidShape(format!(
                "{} feature values are not a multiple of dimension {dim}",
                features.len()
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("lattice feature {i}")));
        }
        let d = dim;
        let n = features.len() / d;
        let d1 = d + 1;

        // Scale so the blur approximates a unit-variance Gaussian.
        let inv_std = (2.0f64 / 3.0).sqrt() * d1 as f64 * options.refinement();
        let rounds = options.rounds;
        let scale: Vec<f64> = (0..d)
            .map(|i| inv_std / (((i + 1) * (i + 2)) as f64).sqrt())
            .collect();
        // canonical simplex: corner r, coordinate ranked k
        let canonical: Vec<i32> = (0..d1)
            .flat_map(|r| (0..d1).map(move |k| if k <= d - r { r as i32 } else { r as i32 - d1 as i32 }))
            .collect();

        let mut table: HashMap<Key, u32> = HashMap::with_capacity(n * d1 / 4 + 16);
        let mut keys: Vec<Key> = Vec::new();
        let mut offsets = vec![0u32; n * d1];
        let mut barycentric = vec![0.0; n * d1];
        let mut corner_sets: Vec<u32> = vec![0; n * d1];

        let mut elevated = vec![0.0; d1];
        let mut rem0 = vec![0i32; d1];
        let mut rank = vec![0i32; d1];
        let mut bary = vec![0.0; d + 2];
        for i in 0..n {
            let f = &features[i * d..(i + 1) * d];
            let mut sm = 0.0;
            for j in (1..=d).rev() {
                let cf = f[j - 1] * scale[j - 1];
                elevated[j] = sm - j as f64 * cf;
                sm += cf;
            }
            elevated[0] = sm;

            let down = 1.0 / d1 as f64;
            let mut sum = 0i32;
            for k in 0..d1 {
                let rd = (down * elevated[k]).round() as i32;
                rem0[k] = rd * d1 as i32;
                sum += rd;
            }
            rank.iter_mut().for_each(|r| *r = 0);
            for a in 0..d {
                let da = elevated[a] - rem0[a] as f64;
                for b in a + 1..d1 {
                    if da < elevated[b] - rem0[b] as f64 {
                        rank[a] += 1;
                    } else {
                        rank[b] += 1;
                    }
                }
            }
            for k in 0..d1 {
                rank[k] += sum;
                if rank[k] < 0 {
                    rank[k] += d1 as i32;
                    rem0[k] += d1 as i32;
                } else if rank[k] > d as i32 {
                    rank[k] -= d1 as i32;
                    rem0[k] -= d1 as i32;
                }
            }
            bary.iter_mut().for_each(|b| *b = 0.0);
            for k in 0..d1 {
                let v = (elevated[k] - rem0[k] as f64) * down;
                let r = d - rank[k] as usize;
                bary[r] += v;
                bary[r + 1] -= v;
            }
            bary[0] += 1.0 + bary[d1];

            for r in 0..d1 {
                let mut key: Key = [0; MAX_DIM];
                for k in 0..d {
                    key[k] = rem0[k] + canonical[r * d1 + rank[k] as usize];
                }
                let next = keys.len() as u32;
                let idx = *table.entry(key).or_insert_with(|| {
                    keys.push(key);
                    next
                });
                offsets[i * d1 + r] = idx;
                barycentric[i * d1 + r] = bary[r];
                // directions j whose coordinate is shifted at corner r
                let mut set = 0u32;
                for k in 0..d1 {
                    if rank[k] as usize > d - r {
                        set |= 1 << k;
                    }
                }
                corner_sets[i * d1 + r] = set;
            }
        }

        let step = |key: &Key, j: usize, side: usize| -> Key {
            let mut out = *key;
            let (all, own) = if side == 0 { (-1, d as i32) } else { (1, -(d as i32)) };
            for k in 0..d {
                out[k] += all;
            }
            if j < d {
                out[j] = key[j] + own;
            }
            out
        };
        if options.expand {
            for _ in 0..rounds {
                for j in 0..d1 {
                    let existing = keys.len();
                    for v in 0..existing {
                        for side in 0..2 {
                            let nk = step(&keys[v], j, side);
                            let next = keys.len() as u32;
                            table.entry(nk).or_insert_with(|| {
                                keys.push(nk);
                                next
                            });
                        }
                    }
                }
            }
        }
        let m = keys.len();
        let mut neighbors = vec![[NONE; 2]; d1 * m];
        for j in 0..d1 {
            for (v, key) in keys.iter().enumerate() {
                neighbors[j * m + v] = [
                    table.get(&step(key, j, 0)).copied().unwrap_or(NONE),
                    table.get(&step(key, j, 1)).copied().unwrap_or(NONE),
                ];
            }
        }

        let alpha = if options.analytic_scale {
            // Gaussian mass over (blur gain x feature-space volume per vertex)
            let df = d as f64;
            let covolume = (d1 as f64).sqrt() * (d1 as f64).powi(d as i32 - 1) / inv_std.powi(d as i32);
            (2.0 * std::f64::consts::PI).powf(df / 2.0) / (2f64.powi((d1 as u32 * rounds) as i32) * covolume)
        } else {
            1.0 / (1.0 + 0.5f64.powi(d as i32))
        };
        let mut lattice = Lattice {
            dim: d,
            points: n,
            vertices: m,
            offsets,
            barycentric,
            neighbors,
            self_weight: Vec::new(),
            alpha,
            rounds,
        };
        lattice.self_weight = (0..n).map(|i| lattice.self_response(i, &corner_sets)).collect();
        Ok(lattice)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> usize {
        self.points
    }

    /// Number of occupied lattice vertices.
    pub fn vertices(&self) -> usize {
        self.vertices
    }

    /// Walks one blur path from vertex `from`; `step(j)` gives `Some(0)`
    /// for an n1 step, `Some(1)` for an n2 step and `None` to stay.
    fn walk(&self, from: u32, step: impl Fn(usize) -> Option<usize>) -> Option<u32> {
        let m = self.vertices;
        let mut at = from;
        for j in 0..=self.dim {
            if let Some(side) = step(j) {
                at = self.neighbors[j * m + at as usize][side];
                if at == NONE {
                    return None;
                }
            }
        }
        Some(at)
    }

    fn transfer(&self, from: u32, to: u32, set_from: u32, set_to: u32) -> f64 {
        let d1 = self.dim + 1;
        if self.rounds > 1 {
            // every vertex the blur reaches exists, so the response only
            // depends on the displacement
            let shift: Vec<i64> = (0..d1)
                .map(|j| {
                    let (a, b) = (set_from >> j & 1, set_to >> j & 1);
                    b as i64 - a as i64
                })
                .collect();
            return blur_response(&shift, self.rounds);
        }
        if from == to {
            let cycle = 0.5f64.powi(d1 as i32);
            let mut g = 1.0;
            for side in 0..2 {
                if self.walk(from, |_| Some(side)) == Some(to) {
                    g += cycle;
                }
            }
            return g;
        }
        // corner sets are nested; moving to a larger set is a sum of n2 steps
        let (up, diff) = if set_to & set_from == set_from {
            (true, set_to & !set_from)
        } else {
            (false, set_from & !set_to)
        };
        let size = diff.count_ones() as i32;
        let (inside, outside) = if up { (1, 0) } else { (0, 1) };
        let mut g = 0.0;
        if self.walk(from, |j| (diff >> j & 1 == 1).then_some(inside)) == Some(to) {
            g += 0.5f64.powi(size);
        }
        if self.walk(from, |j| (diff >> j & 1 == 0).then_some(outside)) == Some(to) {
            g += 0.5f64.powi(d1 as i32 - size);
        }
        g
    }

    fn self_response(&self, i: usize, corner_sets: &[u32]) -> f64 {
        let d1 = self.dim + 1;
        let base = i * d1;
        let mut total = 0.0;
        for r in 0..d1 {
            let br = self.barycentric[base + r];
            for s in 0..d1 {
                let bs = self.barycentric[base + s];
                total += br
                    * bs
                    * self.transfer(
                        self.offsets[base + s],
                        self.offsets[base + r],
                        corner_sets[base + s],
                        corner_sets[base + r],
                    );
            }
        }
        self.alpha * total
    }

    /// Response of each point to its own splat.
    pub fn self_weights(&self) -> &[f64] {
        &self.self_weight
    }

    /// Approximates `out_i = Σ_j exp(−‖f_i − f_j‖²/2)·v_j` (including
    /// `j = i`). `values` is point-major with `channels` values per point.
    pub fn filter(&self, values: &[f64], channels: usize) -> Result<Vec<f64>> {
        let (n, d1, m, vd) = (self.points, self.dim + 1, self.vertices, channels);
        if values.len() != n * vd {
            return Err(Error::InvalidShape(format!(
                "{} values for {n} points x {vd} channels",
                values.len()
            )));
        }
        // slot 0 stays zero and stands for missing neighbors
        let mut grid = vec![0.0; (m + 1) * vd];
        for i in 0..n {
            let v = &values[i * vd..(i + 1) * vd];
            for r in 0..d1 {
                let o = (self.offsets[i * d1 + r] as usize + 1) * vd;
                let w = self.barycentric[i * d1 + r];
                for c in 0..vd {
                    grid[o + c] += w * v[c];
                }
            }
        }
        let mut next = vec![0.0; (m + 1) * vd];
        for j in (0..self.rounds).flat_map(|_| 0..d1) {
            for v in 0..m {
                let [n1, n2] = self.neighbors[j * m + v];
                let a = if n1 == NONE { 0 } else { n1 as usize + 1 };
                let b = if n2 == NONE { 0 } else { n2 as usize + 1 };
                let o = (v + 1) * vd;
                for c in 0..vd {
                    next[o + c] = grid[o + c] + 0.5 * (grid[a * vd + c] + grid[b * vd + c]);
                }
            }
            std::mem::swap(&mut grid, &mut next);
        }
        let mut out = vec![0.0; n * vd];
        for i in 0..n {
            let dst = &mut out[i * vd..(i + 1) * vd];
            for r in 0..d1 {
                let o = (self.offsets[i * d1 + r] as usize + 1) * vd;
                let w = self.barycentric[i * d1 + r] * self.alpha;
                for c in 0..vd {
                    dst[c] += w * grid[o + c];
                }
            }
        }
        Ok(out)
    }

    /// [`Lattice::filter`] with each point's own contribution removed.
    pub fn filter_excluding_self(&self, values: &[f64], channels: usize) -> Result<Vec<f64>> {
        let mut out = self.filter(values, channels)?;
        for (i, sw) in self.self_weight.iter().enumerate() {
            for c in 0..channels {
                out[i * channels + c] -= sw * values[i * channels + c];
            }
        }
        Ok(out)
    }
}

/// Infinite-lattice response of `rounds` blur rounds at the displacement
/// `Σ_j shift_j·δ_j`. Shifts are defined up to a common constant since the
/// lattice directions sum to zero.
fn blur_response(shift: &[i64], rounds: u32) -> f64 {
    let n = rounds as i64;
    let coef = |k: i64| -> f64 {
        if k.abs() > n {
            return 0.0;
        }
        // C(2n, n+k) / 2^n
        let top = (n + k) as u32;
        let mut c = 1.0;
        for i in 0..top.min(2 * n as u32 - top) {
            c = c * (2 * n as u32 - i) as f64 / (i + 1) as f64;
        }
        c / 2f64.powi(n as i32)
    };
    let lo = shift.iter().max().unwrap() - n;
    let hi = shift.iter().min().unwrap() + n;
    (-hi..=-lo)
        .map(|c| shift.iter().map(|&s| coef(s + c)).product::<f64>())
        .sum()
}
