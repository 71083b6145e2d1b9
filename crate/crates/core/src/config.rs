//! Run configuration: one flat TOML table, every key optional.
//!
//! Unknown keys are rejected and every value is range-checked on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{make_split, ratio_denominator, Augment, SceneSpec, SplitManifest};
use crate::error::{Error, Result};
use crate::eval::{Blend, EvalSettings};
use crate::losses::{LossWeights, Thresholds};
use crate::models::{DualConfig, EncoderConfig, FusionMode};

/// Named experiment grids.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// A single run of the configuration as written.
    #[default]
    None,
    /// Component ablation: supervised only, plus consistency, plus distillation.
    Table5,
    /// Senior twice as wide as the junior versus an equal-width pair.
    Table6,
    /// Senior at two and four times the junior width.
    Table7,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Preset::None),
            "table5" => Ok(Preset::Table5),
            "table6" => Ok(Preset::Table6),
            "table7" => Ok(Preset::Table7),
            other => Err(Error::Config(format!(
                "preset: unknown value {other:?} (expected none, table5, table6 or table7)"
            ))),
        }
    }
}

/// Which unlabeled/labeled forward passes feed the distillation term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KdTarget {
    Labeled,
    #[default]
    Unlabeled,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // run
    /// Seeds weight init, batch order and augmentation.
    pub seed: u64,
    pub preset: Preset,
    pub epochs: usize,
    /// `0` derives it from the unlabeled pool size and batch size.
    pub iters_per_epoch: usize,
    /// Per-stream batch size; each step sees this many labeled and unlabeled images.
    pub batch_size: usize,
    /// Evaluate every this many epochs (the final epoch is always evaluated).
    pub eval_every: usize,
    /// Predictions written to `preds/` for the first this many validation images.
    pub save_preds: usize,

    // data
    /// Seeds scene rendering and the labeled split; kept apart from `seed`
    /// so that runs with different seeds share one dataset.
    pub data_seed: u64,
    pub dataset_size: usize,
    pub val_size: usize,
    pub ratio: String,
    pub image_height: usize,
    pub image_width: usize,
    pub num_classes: usize,
    pub shapes_min: usize,
    pub shapes_max: usize,
    pub noise_sigma: f64,
    pub colors_per_class: usize,
    pub color_jitter: f64,
    pub illumination: f64,
    pub hflip: bool,
    /// Random square crop side for training batches; `0` disables cropping.
    pub crop: usize,

    // model
    pub senior_width: usize,
    pub junior_width: usize,
    pub num_stages: usize,
    pub kernel_size: usize,
    pub blocks_per_stage: usize,
    pub fusion: FusionMode,
    pub fusion_detach: bool,

    // losses
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub conf_tau: f64,
    /// Clamp `conf_tau` into `[0, 1]` before use.
    pub conf_tau_clamp: bool,
    pub kd_temperature: f64,
    pub kd_target: KdTarget,
    pub kd_detach: bool,

    // optimizer
    pub base_lr: f64,
    pub decoder_lr_multiplier: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub poly_power: f64,
    /// Global gradient-norm limit; `0` disables clipping.
    pub grad_clip: f64,

    // eval
    /// Sliding window side; `0` predicts whole images.
    pub eval_window: usize,
    /// `0` means half the window.
    pub eval_stride: usize,
    pub eval_blend: Blend,
    /// Also score the senior branch.
    pub eval_senior: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scene = SceneSpec::default();
        RunConfig {
            seed: 0,
            preset: Preset::None,
            epochs: 4,
            iters_per_epoch: 0,
            batch_size: 8,
            eval_every: 1,
            save_preds: 4,

            data_seed: 0,
            dataset_size: 1464,
            val_size: 128,
            ratio: "1/8".into(),
            image_height: scene.height,
            image_width: scene.width,
            num_classes: scene.num_classes,
            shapes_min: scene.shapes_min,
            shapes_max: scene.shapes_max,
            noise_sigma: scene.noise_sigma,
            colors_per_class: scene.colors_per_class,
            color_jitter: scene.color_jitter,
            illumination: scene.illumination,
            hflip: true,
            crop: 0,

            senior_width: 16,
            junior_width: 8,
            num_stages: 2,
            kernel_size: 3,
            blocks_per_stage: 1,
            fusion: FusionMode::Add,
            fusion_detach: true,

            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            conf_tau: 0.95,
            conf_tau_clamp: true,
            kd_temperature: 2.0,
            kd_target: KdTarget::Unlabeled,
            kd_detach: true,

            base_lr: 1e-3,
            decoder_lr_multiplier: 40.0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            poly_power: 0.9,
            grad_clip: 0.0,

            eval_window: 0,
            eval_stride: 0,
            eval_blend: Blend::Logits,
            eval_senior: false,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be a finite value > 0, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")))
    }
}

fn at_least_one(name: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be >= 1")))
    }
}

/// Lets `lambda3 = 0` stand for `lambda3 = 0.0` in float fields.
fn coerce_integers(table: &mut toml::Table) {
    let defaults = match toml::Value::try_from(RunConfig::default()).expect("config serializes") {
        toml::Value::Table(t) => t,
        _ => unreachable!("config is a table"),
    };
    for (key, value) in table.iter_mut() {
        if let (Some(toml::Value::Float(_)), toml::Value::Integer(i)) = (defaults.get(key), &*value) {
            *value = toml::Value::Float(*i as f64);
        }
    }
}

impl RunConfig {
    /// Parses TOML text; errors name the offending key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        coerce_integers(&mut table);
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies one `key = value` override, with the value in TOML syntax
    /// (bare words are accepted as strings).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table = match toml::Value::try_from(&*self).expect("config serializes") {
            toml::Value::Table(t) => t,
            _ => unreachable!("config is a table"),
        };
        if !table.contains_key(key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.to_string(), parsed);
        coerce_integers(&mut table);
        let updated: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {}", e.message())))?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        at_least_one("batch_size", self.batch_size)?;
        at_least_one("eval_every", self.eval_every)?;
        at_least_one("dataset_size", self.dataset_size)?;
        at_least_one("val_size", self.val_size)?;
        ratio_denominator(&self.ratio)?;
        self.scene_spec().validate()?;
        self.dual_config().validate()?;
        let divisor = self.dual_config().input_divisor();
        if self.crop > 0 {
            if self.crop > self.image_height.min(self.image_width) {
                return Err(Error::Config(format!("crop {} exceeds the image size", self.crop)));
            }
            if !self.crop.is_multiple_of(divisor) {
                return Err(Error::Config(format!("crop {} must be a multiple of {divisor}", self.crop)));
            }
        }
        self.loss_weights().validate()?;
        non_negative("conf_tau", self.conf_tau)?;
        self.thresholds().validate()?;
        positive("base_lr", self.base_lr)?;
        positive("decoder_lr_multiplier", self.decoder_lr_multiplier)?;
        non_negative("weight_decay", self.weight_decay)?;
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "beta1 and beta2 must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        positive("eps", self.eps)?;
        non_negative("poly_power", self.poly_power)?;
        non_negative("grad_clip", self.grad_clip)?;
        if self.eval_window > 0 && self.eval_stride > self.eval_window {
            return Err(Error::Config(format!(
                "eval_stride {} exceeds eval_window {}",
                self.eval_stride, self.eval_window
            )));
        }
        Ok(())
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            height: self.image_height,
            width: self.image_width,
            num_classes: self.num_classes,
            shapes_min: self.shapes_min,
            shapes_max: self.shapes_max,
            noise_sigma: self.noise_sigma,
            colors_per_class: self.colors_per_class,
            color_jitter: self.color_jitter,
            illumination: self.illumination,
            seed: self.data_seed,
        }
    }

    pub fn split(&self) -> Result<SplitManifest> {
        make_split(self.dataset_size, &self.ratio, self.data_seed)
    }

    pub fn augment(&self) -> Augment {
        Augment { hflip: self.hflip, crop: (self.crop > 0).then_some(self.crop) }
    }

    pub fn dual_config(&self) -> DualConfig {
        let encoder = |width| EncoderConfig {
            base_width: width,
            num_stages: self.num_stages,
            kernel_size: self.kernel_size,
            blocks_per_stage: self.blocks_per_stage,
        };
        DualConfig {
            senior: encoder(self.senior_width),
            junior: encoder(self.junior_width),
            num_classes: self.num_classes,
            in_channels: 3,
            fusion: self.fusion,
            fusion_detach: self.fusion_detach,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { lambda1: self.lambda1, lambda2: self.lambda2, lambda3: self.lambda3 }
    }

    /// Thresholds as used in training, after the optional clamp.
    pub fn thresholds(&self) -> Thresholds {
        let conf_tau = if self.conf_tau_clamp { self.conf_tau.clamp(0.0, 1.0) } else { self.conf_tau };
        Thresholds { conf_tau, kd_temperature: self.kd_temperature }
    }

    pub fn eval_settings(&self) -> EvalSettings {
        let stride = if self.eval_stride == 0 { (self.eval_window / 2).max(1) } else { self.eval_stride };
        EvalSettings {
            window: self.eval_window,
            stride,
            blend: self.eval_blend,
            divisor: self.dual_config().input_divisor(),
        }
    }
}
