//! Land-cover semantic segmentation: an encoder-decoder CNN with atrous
//! convolutions, weighted cross-entropy training, tiled prediction, dense
//! CRF refinement and confusion-matrix evaluation.

pub mod densecrf;
pub mod error;
pub mod io;
pub mod labels;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod tiling;
pub mod train;

pub use error::{Error, Result};
pub use labels::{LabelMap, LandCover, NUM_CLASSES};
pub use tensor::{Shape, Tensor};
