//! Glue between the stages: tiled network inference, CRF refinement and the
//! synthetic end-to-end demo.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::densecrf::{meanfield_infer, unary_from_probs, CrfParams, FeatureField, FilterBackend};
use crate::error::{Error, Result};
use crate::io::stack_inputs;
use crate::labels::{argmax, LabelMap, NUM_CLASSES};
use crate::metrics::{accumulate, confusion, ConfusionMatrix};
use crate::nn::{Network, NetworkSpec, Variant};
use crate::synth::{generate_scene, Scene, SceneConfig};
use crate::tensor::Tensor;
use crate::tiling::{extract_training_patches, tile_predict, TileScheme};
use crate::train::{train_loop, EpochRecord, Sample, TrainConfig};

/// Class probabilities for a whole `(1, C, H, W)` input via overlapped tiles.
pub fn predict_image(net: &Network, input: &Tensor, scheme: TileScheme) -> Result<Tensor> {
    if scheme.patch() % net.spec().divisor() != 0 {
        return Err(Error::Config(format!(
            "patch size {} is not a multiple of the network divisor {}",
            scheme.patch(),
            net.spec().divisor()
        )));
    }
    tile_predict(input, |patch| net.predict(patch), scheme)
}

/// Mean-field refinement of `probs` using the first `bands` channels of
/// `image` as CRF colors. Three bands gives the spectral-only kernel; a
/// fourth channel holding the nDSM adds height to the color features.
pub fn refine(
    probs: &Tensor,
    image: &Tensor,
    bands: usize,
    params: &CrfParams,
    backend: FilterBackend,
) -> Result<(Tensor, LabelMap)> {
    let unary = unary_from_probs(probs)?;
    let features = FeatureField::from_image(image, bands)?;
    meanfield_infer(&unary, &features, params, backend)
}

/// Synthetic end-to-end run: scenes, patches, training, tiled prediction,
/// CRF refinement and evaluation on held-out scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub scene_size: usize,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub noise: f64,
    pub seed: u64,
    /// Training patch edge and extraction stride.
    pub patch: usize,
    pub patch_stride: usize,
    pub use_ndsm: bool,
    /// Append the nDSM to the CRF color features.
    pub crf_ndsm: bool,
    pub spec: NetworkSpec,
    pub train: TrainConfig,
    pub tiles: TileScheme,
    pub crf: CrfParams,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            scene_size: 128,
            train_scenes: 4,
            test_scenes: 2,
            noise: 0.05,
            seed: 7,
            patch: 64,
            patch_stride: 32,
            use_ndsm: true,
            crf_ndsm: true,
            spec: NetworkSpec::toy(Variant::Atrous, 4),
            train: TrainConfig {
                batch_size: 8,
                lr: 1e-3,
                epochs: 20,
                seed: 7,
                class_weights: crate::train::ClassWeights::uniform(NUM_CLASSES),
                ..TrainConfig::default()
            },
            tiles: TileScheme::new(64, 32).expect("valid scheme"),
            crf: CrfParams {
                sigma_beta: 25.0,
                ..CrfParams::default()
            },
        }
    }
}

pub struct DemoOutcome {
    pub network: Network,
    pub history: Vec<EpochRecord>,
    pub raw: ConfusionMatrix,
    pub refined: ConfusionMatrix,
    /// Wall-clock time of each stage, in order.
    pub timings: Vec<(&'static str, Duration)>,
}

fn scene_input(scene: &Scene, use_ndsm: bool) -> Result<Tensor> {
    stack_inputs(&scene.image, use_ndsm.then_some(&scene.ndsm))
}

pub fn run_demo(config: &DemoConfig) -> Result<DemoOutcome> {
    let channels = if config.use_ndsm { 4 } else { 3 };
    if config.spec.in_channels != channels {
        return Err(Error::Config(format!(
            "network takes {} input channels but the demo provides {channels}",
            config.spec.in_channels
        )));
    }
    if config.train_scenes == 0 || config.test_scenes == 0 {
        return Err(Error::Config("demo needs at least one training and one test scene".into()));
    }
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&'static str, Duration)>| {
        timings.push((name, clock.elapsed()));
        clock = Instant::now();
    };

    let scenes = (0..config.train_scenes + config.test_scenes)
        .map(|i| {
            generate_scene(&SceneConfig {
                height: config.scene_size,
                width: config.scene_size,
                noise: config.noise,
                seed: config.seed.wrapping_mul(1000).wrapping_add(i as u64),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (train_scenes, test_scenes) = scenes.split_at(config.train_scenes);
    let mut dataset: Vec<Sample> = Vec::new();
    for scene in train_scenes {
        let input = scene_input(scene, config.use_ndsm)?;
        for p in extract_training_patches(&input, &scene.labels, config.patch, config.patch_stride)? {
            dataset.push(p.sample);
        }
    }
    lap("data", &mut timings);

    let outcome = train_loop(&config.train, &config.spec, dataset, None)?;
    lap("train", &mut timings);

    let (mut raw, mut refined) = (Vec::new(), Vec::new());
    let mut predictions = Vec::new();
    for scene in test_scenes {
        let input = scene_input(scene, config.use_ndsm)?;
        predictions.push(predict_image(&outcome.network, &input, config.tiles)?);
    }
    lap("predict", &mut timings);
    for (scene, probs) in test_scenes.iter().zip(&predictions) {
        let input = scene_input(scene, config.use_ndsm)?;
        let bands = if config.use_ndsm && config.crf_ndsm { 4 } else { 3 };
        let (_, labels) = refine(probs, &input, bands, &config.crf, FilterBackend::Permutohedral)?;
        let raw_labels = argmax(probs).pop().expect("one image");
        raw.push(confusion(&scene.labels, &raw_labels, NUM_CLASSES, None)?);
        refined.push(confusion(&scene.labels, &labels, NUM_CLASSES, None)?);
    }
    lap("refine", &mut timings);

    Ok(DemoOutcome {
        network: outcome.network,
        history: outcome.history,
        raw: accumulate(&raw)?,
        refined: accumulate(&refined)?,
        timings,
    })
}
