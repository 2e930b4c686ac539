//! Fully connected CRF with Gaussian pairwise kernels and Potts
//! compatibility, solved by mean-field inference.

mod filter;
mod lattice;
mod meanfield;
mod potentials;

pub use filter::{gaussian_filter_bruteforce, permutohedral_filter, FilterBackend};
pub use lattice::{Lattice, LatticeOptions, MAX_DIM};
pub use meanfield::{meanfield_infer, meanfield_step};
pub use potentials::{
    energy, kernel_eval, potts, unary_from_probs, CrfParams, FeatureField, PixelFeature, DEFAULT_GUARD, PROB_FLOOR,
};
