use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Land-cover segmentation with an atrous encoder-decoder CNN and dense CRF
/// refinement.
///
/// Settings come from built-in defaults, then `--config FILE` (TOML with
/// sections model, train, patches, tiling, crf, demo), then flags. The
/// resolved settings are logged and stored in the run directory manifest.
#[derive(Debug, Parser)]
#[command(name = "segcrf", version)]
pub struct Cli {
    /// More log output; repeat for debug level.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network on the train split of a dataset manifest.
    Train {
        /// Tab-separated manifest: image, ndsm, labels, split.
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Tiled inference: writes probability maps (RT01) and color label maps.
    Predict {
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Single IRRG image (PNG or RT01).
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        input: Option<PathBuf>,
        /// Height raster for `--input`.
        #[arg(long, requires = "input")]
        ndsm: Option<PathBuf>,
        /// Predict every test-split tile of a manifest instead.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        tiles: TileArgs,
    },
    /// Dense CRF refinement of a stored probability map.
    Refine {
        /// Probability map `(1, K, H, W)` in RT01 format.
        #[arg(long)]
        probs: PathBuf,
        /// Image supplying the spectral bands for the color features.
        #[arg(long)]
        image: PathBuf,
        /// Height raster, used only with `--crf-ndsm`.
        #[arg(long)]
        ndsm: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        crf: CrfArgs,
    },
    /// Score predicted label maps against a reference.
    Evaluate {
        /// Reference color label map.
        #[arg(long)]
        reference: PathBuf,
        /// Predicted color label map, optionally `NAME=PATH`; repeat to
        /// compare models in one table.
        #[arg(long, required = true)]
        pred: Vec<String>,
        /// Class index left out of the per-class table (overall accuracy
        /// still counts it). Repeatable.
        #[arg(long)]
        ignore_class: Vec<usize>,
        /// Ignore reference pixels within this many pixels of a class border.
        #[arg(long)]
        erode: Option<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Synthetic end-to-end run needing no external data.
    Demo {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        tiles: TileArgs,
        #[command(flatten)]
        crf: CrfArgs,
        /// Edge of each synthetic scene in pixels.
        #[arg(long)]
        scene_size: Option<usize>,
        #[arg(long)]
        train_scenes: Option<usize>,
        #[arg(long)]
        test_scenes: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory for all outputs [default: runs/<command>-<unix time>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use the three spectral bands without the nDSM channel.
    #[arg(long)]
    pub no_ndsm: bool,
    /// Append the nDSM to the CRF color features.
    #[arg(long)]
    pub crf_ndsm: bool,
    /// Upper bound on worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantArg {
    /// Atrous convolutions, 5x5 upsampling with BN and ReLU.
    Ac,
    /// Standard convolutions, bare 2x2 upsampling.
    Sc,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Encoder widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub encoder: Option<Vec<usize>>,
    /// Bridge width.
    #[arg(long)]
    pub bridge: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub no_augment: bool,
    /// Training patch edge.
    #[arg(long)]
    pub train_patch: Option<usize>,
    /// Training patch grid stride.
    #[arg(long)]
    pub patch_stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    /// Prediction patch edge (twice the core).
    #[arg(long)]
    pub patch: Option<usize>,
    /// Central window kept from each prediction patch.
    #[arg(long)]
    pub core: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CrfArgs {
    /// Appearance kernel weight.
    #[arg(long)]
    pub w1: Option<f64>,
    /// Smoothness kernel weight.
    #[arg(long)]
    pub w2: Option<f64>,
    /// Appearance position bandwidth, pixels.
    #[arg(long)]
    pub sa: Option<f64>,
    /// Appearance color bandwidth, 8-bit units.
    #[arg(long)]
    pub sb: Option<f64>,
    /// Smoothness position bandwidth, pixels.
    #[arg(long)]
    pub sg: Option<f64>,
    /// Mean-field iterations.
    #[arg(long)]
    pub iters: Option<usize>,
}
