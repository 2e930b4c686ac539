//! Run settings: built-in defaults, then an optional TOML file merged over
//! them key by key, then command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use segcrf::densecrf::CrfParams;
use segcrf::nn::{LayerDesc, NetworkSpec, Variant};
use segcrf::pipeline::DemoConfig;
use segcrf::tiling::TileScheme;
use segcrf::train::TrainConfig;
use segcrf::NUM_CLASSES;

use crate::args::{CommonArgs, CrfArgs, ModelArgs, TileArgs, TrainArgs, VariantArg};
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    pub variant: Variant,
    pub encoder: Vec<usize>,
    pub bridge: usize,
    /// Explicit layer list; replaces the encoder-decoder built from
    /// `encoder` and `bridge`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerDesc>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSettings {
    pub size: usize,
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSettings {
    pub scene_size: usize,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Stack the nDSM as a fourth input channel.
    pub use_ndsm: bool,
    /// Append the nDSM to the CRF color features.
    pub crf_ndsm: bool,
    /// Worker cap. Every stage currently runs on one thread.
    pub threads: usize,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub patches: PatchSettings,
    pub tiling: TileScheme,
    pub crf: CrfParams,
    pub demo: SceneSettings,
}

impl Settings {
    /// Defaults for real data.
    pub fn standard() -> Settings {
        Settings {
            use_ndsm: true,
            crf_ndsm: false,
            threads: 1,
            model: ModelSettings {
                variant: Variant::Atrous,
                encoder: vec![32, 64, 128],
                bridge: 128,
                layers: None,
            },
            train: TrainConfig::default(),
            patches: PatchSettings { size: 128, stride: 128 },
            tiling: TileScheme::default(),
            crf: CrfParams::default(),
            demo: SceneSettings::from(&DemoConfig::default()),
        }
    }

    /// Defaults for the synthetic demo.
    pub fn demo() -> Settings {
        let d = DemoConfig::default();
        Settings {
            use_ndsm: d.use_ndsm,
            crf_ndsm: d.crf_ndsm,
            model: ModelSettings {
                variant: d.spec.variant,
                encoder: vec![8, 16],
                bridge: 16,
                layers: None,
            },
            train: d.train.clone(),
            patches: PatchSettings { size: d.patch, stride: d.patch_stride },
            tiling: d.tiles,
            crf: d.crf,
            demo: SceneSettings::from(&d),
            ..Settings::standard()
        }
    }

    /// Merges the TOML document at `path` over `self`.
    pub fn merge_file(self, path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let overlay: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let mut base = toml::Table::try_from(&self).expect("settings serialize to a table");
        merge(&mut base, overlay);
        base.try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn apply_common(&mut self, args: &CommonArgs) {
        if args.no_ndsm {
            self.use_ndsm = false;
        }
        if args.crf_ndsm {
            self.crf_ndsm = true;
        }
        if let Some(t) = args.threads {
            self.threads = t;
        }
    }

    pub fn apply_model(&mut self, args: &ModelArgs) {
        if let Some(v) = args.variant {
            self.model.variant = match v {
                VariantArg::Ac => Variant::Atrous,
                VariantArg::Sc => Variant::Standard,
            };
        }
        if let Some(e) = &args.encoder {
            self.model.encoder = e.clone();
        }
        if let Some(b) = args.bridge {
            self.model.bridge = b;
        }
    }

    pub fn apply_train(&mut self, args: &TrainArgs) {
        let t = &mut self.train;
        set(&mut t.epochs, args.epochs);
        set(&mut t.lr, args.lr);
        set(&mut t.batch_size, args.batch_size);
        set(&mut t.seed, args.seed);
        if args.max_steps.is_some() {
            t.max_steps = args.max_steps;
        }
        if args.no_augment {
            t.augment = false;
        }
        set(&mut self.patches.size, args.train_patch);
        set(&mut self.patches.stride, args.patch_stride);
    }

    pub fn apply_tiles(&mut self, args: &TileArgs) -> Result<(), CliError> {
        if args.patch.is_some() || args.core.is_some() {
            let core = args.core.unwrap_or_else(|| args.patch.map_or(self.tiling.core(), |p| p / 2));
            let patch = args.patch.unwrap_or(2 * core);
            self.tiling = TileScheme::new(patch, core).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_crf(&mut self, args: &CrfArgs) {
        let c = &mut self.crf;
        set(&mut c.w1, args.w1);
        set(&mut c.w2, args.w2);
        set(&mut c.sigma_alpha, args.sa);
        set(&mut c.sigma_beta, args.sb);
        set(&mut c.sigma_gamma, args.sg);
        set(&mut c.iterations, args.iters);
    }

    pub fn input_channels(&self) -> usize {
        if self.use_ndsm {
            4
        } else {
            3
        }
    }

    pub fn crf_bands(&self) -> usize {
        if self.use_ndsm && self.crf_ndsm {
            4
        } else {
            3
        }
    }

    pub fn network_spec(&self) -> Result<NetworkSpec, CliError> {
        let in_channels = self.input_channels();
        let spec = match &self.model.layers {
            Some(layers) => NetworkSpec {
                variant: self.model.variant,
                in_channels,
                classes: NUM_CLASSES,
                layers: layers.clone(),
            },
            None => NetworkSpec::encoder_decoder(
                self.model.variant,
                in_channels,
                NUM_CLASSES,
                &self.model.encoder,
                self.model.bridge,
            ),
        };
        spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(spec)
    }

    /// Checks the combinations no single field can.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: segcrf::Error| CliError::Usage(e.to_string());
        if self.threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        self.train.validate().map_err(usage)?;
        self.crf.validate().map_err(usage)?;
        TileScheme::new(self.tiling.patch(), self.tiling.core()).map_err(usage)?;
        if self.patches.size == 0 || self.patches.stride == 0 {
            return Err(CliError::Usage("training patch size and stride must be positive".into()));
        }
        if self.train.class_weights.len() != NUM_CLASSES {
            return Err(CliError::Usage(format!(
                "class_weights has {} entries, expected {NUM_CLASSES}",
                self.train.class_weights.len()
            )));
        }
        let divisor = self.network_spec()?.divisor();
        for (what, size) in [("training patch", self.patches.size), ("tile patch", self.tiling.patch())] {
            if size % divisor != 0 {
                return Err(CliError::Usage(format!(
                    "{what} size {size} is not a multiple of the network divisor {divisor}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize")
    }

    pub fn demo_config(&self) -> Result<DemoConfig, CliError> {
        Ok(DemoConfig {
            scene_size: self.demo.scene_size,
            train_scenes: self.demo.train_scenes,
            test_scenes: self.demo.test_scenes,
            noise: self.demo.noise,
            seed: self.demo.seed,
            patch: self.patches.size,
            patch_stride: self.patches.stride,
            use_ndsm: self.use_ndsm,
            crf_ndsm: self.crf_ndsm,
            spec: self.network_spec()?,
            train: self.train.clone(),
            tiles: self.tiling,
            crf: self.crf,
        })
    }
}

impl From<&DemoConfig> for SceneSettings {
    fn from(d: &DemoConfig) -> Self {
        SceneSettings {
            scene_size: d.scene_size,
            train_scenes: d.train_scenes,
            test_scenes: d.test_scenes,
            noise: d.noise,
            seed: d.seed,
        }
    }
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

/// Recursive merge: tables merge key by key, everything else replaces.
fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
