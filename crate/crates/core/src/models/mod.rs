//! The senior/junior network pair and the feature connector between them.

mod branch;
pub mod checkpoint;
mod exec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use branch::{BranchNet, EncoderConfig, ParamGroup, ParamList};
use branch::ConvLayer;
use checkpoint::Record;
use exec::{Eager, Exec};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// How projected junior features enter the senior encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// No connector; the branches only interact through the losses.
    None,
    /// `senior + conv1x1(junior)`, projection initialised to zero.
    Add,
    /// `conv1x1([senior, junior])`, initialised to pass the senior through.
    Concat,
}

impl FusionMode {
    fn code(self) -> f64 {
        match self {
            FusionMode::None => 0.0,
            FusionMode::Add => 1.0,
            FusionMode::Concat => 2.0,
        }
    }

    fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            0 => Some(FusionMode::None),
            1 => Some(FusionMode::Add),
            2 => Some(FusionMode::Concat),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualConfig {
    pub senior: EncoderConfig,
    pub junior: EncoderConfig,
    pub num_classes: usize,
    pub in_channels: usize,
    pub fusion: FusionMode,
    /// Stop gradients from the senior flowing into the junior through the
    /// connector.
    pub fusion_detach: bool,
}

impl Default for DualConfig {
    fn default() -> Self {
        DualConfig {
            senior: EncoderConfig { base_width: 16, ..EncoderConfig::default() },
            junior: EncoderConfig::default(),
            num_classes: 4,
            in_channels: 3,
            fusion: FusionMode::Add,
            fusion_detach: true,
        }
    }
}

impl DualConfig {
    pub fn validate(&self) -> Result<()> {
        self.senior.validate()?;
        self.junior.validate()?;
        if self.num_classes < 2 || self.num_classes >= crate::IGNORE_INDEX as usize {
            return Err(Error::Config(format!(
                "num_classes must be in 2..{}, got {}",
                crate::IGNORE_INDEX,
                self.num_classes
            )));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be >= 1".into()));
        }
        if self.fusion != FusionMode::None && self.senior.num_stages != self.junior.num_stages {
            return Err(Error::Config(format!(
                "feature fusion needs equal stage counts (senior {}, junior {})",
                self.senior.num_stages, self.junior.num_stages
            )));
        }
        Ok(())
    }

    /// Spatial divisor that both encoders require of their input.
    pub fn input_divisor(&self) -> usize {
        self.senior.output_stride().max(self.junior.output_stride())
    }
}

/// Outputs of [`DualModel::forward_dual`], as tape handles.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub senior_logits: Var,
    pub junior_logits: Var,
    pub junior_features: Vec<Var>,
}

/// Model parameters registered on a tape for one step.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub senior: Vec<Var>,
    pub junior: Vec<Var>,
    pub fusion: Vec<Var>,
}

/// Which parameter list a parameter lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Part {
    Senior,
    Junior,
    Fusion,
}

#[derive(Clone, Debug)]
pub struct DualModel {
    config: DualConfig,
    senior: BranchNet,
    junior: BranchNet,
    fusion_layers: Vec<ConvLayer>,
    fusion: ParamList,
}

impl DualModel {
    /// Fresh model; all weights are drawn from a ChaCha stream seeded by `seed`.
    pub fn new(config: DualConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let junior = BranchNet::new("junior", config.junior, config.in_channels, config.num_classes, &mut rng)?;
        let senior = BranchNet::new("senior", config.senior, config.in_channels, config.num_classes, &mut rng)?;
        let mut fusion = ParamList::default();
        let mut fusion_layers = Vec::new();
        if config.fusion != FusionMode::None {
            for s in 0..config.senior.num_stages {
                let sw = config.senior.stage_width(s);
                let jw = config.junior.stage_width(s);
                let in_ch = match config.fusion {
                    FusionMode::Add => jw,
                    _ => sw + jw,
                };
                let mut weight = vec![0.0; sw * in_ch];
                if config.fusion == FusionMode::Concat {
                    for c in 0..sw {
                        weight[c * in_ch + c] = 1.0;
                    }
                }
                let w = fusion.push(
                    format!("fusion.stage{s}.weight"),
                    ParamGroup::Decoder,
                    Tensor::from_parts(vec![sw, in_ch, 1, 1], weight),
                );
                let b = fusion.push(format!("fusion.stage{s}.bias"), ParamGroup::Decoder, Tensor::zeros(vec![sw]));
                fusion_layers.push(ConvLayer { weight: w, bias: b, stride: 1, padding: 0 });
            }
        }
        Ok(DualModel { config, senior, junior, fusion_layers, fusion })
    }

    pub fn config(&self) -> &DualConfig {
        &self.config
    }

    pub fn senior(&self) -> &BranchNet {
        &self.senior
    }

    pub fn junior(&self) -> &BranchNet {
        &self.junior
    }

    pub fn fusion_params(&self) -> &ParamList {
        &self.fusion
    }

    pub fn part(&self, part: Part) -> &ParamList {
        match part {
            Part::Senior => self.senior.params(),
            Part::Junior => self.junior.params(),
            Part::Fusion => &self.fusion,
        }
    }

    pub fn part_mut(&mut self, part: Part) -> &mut ParamList {
        match part {
            Part::Senior => self.senior.params_mut(),
            Part::Junior => self.junior.params_mut(),
            Part::Fusion => &mut self.fusion,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.senior.parameter_count() + self.junior.parameter_count() + self.fusion.count()
    }

    /// Drops the senior network and the connector, keeping the deployable junior.
    pub fn into_junior(self) -> BranchNet {
        self.junior
    }

    /// Every parameter with its optimizer group, in senior, junior, fusion order
    /// (the order of [`BoundParams`]).
    pub(crate) fn params_with_groups_mut(&mut self) -> (Vec<&mut Tensor>, Vec<ParamGroup>) {
        let mut tensors = Vec::new();
        let mut groups = Vec::new();
        for list in [&mut self.senior.params, &mut self.junior.params, &mut self.fusion] {
            groups.extend(list.groups.iter().copied());
            tensors.extend(list.values.iter_mut());
        }
        (tensors, groups)
    }

    pub(crate) fn all_params(&self) -> Vec<&Tensor> {
        [self.senior.params(), self.junior.params(), &self.fusion]
            .into_iter()
            .flat_map(|l| l.values().iter())
            .collect()
    }

    /// Registers every parameter as a trainable tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let mut bind = |list: &ParamList| list.values().iter().map(|t| tape.param(t.clone())).collect();
        BoundParams {
            senior: bind(self.senior.params()),
            junior: bind(self.junior.params()),
            fusion: bind(&self.fusion),
        }
    }

    fn run<E: Exec>(
        &self,
        ex: &mut E,
        senior_p: &[E::V],
        junior_p: &[E::V],
        fusion_p: &[E::V],
        images: &E::V,
        h: usize,
        w: usize,
        with_senior: bool,
    ) -> Result<(Option<E::V>, E::V, Vec<E::V>)> {
        let mut features = Vec::with_capacity(self.config.junior.num_stages);
        let mut x = images.clone();
        for s in 0..self.config.junior.num_stages {
            x = self.junior.stage(ex, junior_p, s, &x)?;
            features.push(x.clone());
        }
        let junior_logits = self.junior.classify(ex, junior_p, &x, h, w)?;
        if !with_senior {
            return Ok((None, junior_logits, features));
        }

        let mut y = images.clone();
        for s in 0..self.config.senior.num_stages {
            y = self.senior.stage(ex, senior_p, s, &y)?;
            if let Some(layer) = self.fusion_layers.get(s) {
                let jf = if self.config.fusion_detach {
                    ex.detach(&features[s])
                } else {
                    features[s].clone()
                };
                y = match self.config.fusion {
                    FusionMode::Add => {
                        let projected = layer.apply(ex, fusion_p, &jf)?;
                        ex.add(&y, &projected)?
                    }
                    _ => {
                        let joined = ex.concat(&[y, jf])?;
                        layer.apply(ex, fusion_p, &joined)?
                    }
                };
            }
        }
        let senior_logits = self.senior.classify(ex, senior_p, &y, h, w)?;
        Ok((Some(senior_logits), junior_logits, features))
    }

    fn check_images(&self, images: &Tensor) -> Result<(usize, usize)> {
        self.junior.check_images(images)?;
        self.senior.check_images(images)
    }

    /// Differentiable forward pass of both branches.
    ///
    /// The junior runs first; its per-stage features are projected into the
    /// senior after the matching senior stage.
    pub fn forward_dual(&self, tape: &mut Tape, params: &BoundParams, images: Var) -> Result<ForwardOutput> {
        let (h, w) = self.check_images(tape.value(images))?;
        let (senior, junior, features) =
            self.run(tape, &params.senior, &params.junior, &params.fusion, &images, h, w, true)?;
        Ok(ForwardOutput {
            senior_logits: senior.expect("senior requested"),
            junior_logits: junior,
            junior_features: features,
        })
    }

    /// Junior-only inference; builds no tape.
    pub fn forward_junior(&self, images: &Tensor) -> Result<Tensor> {
        self.junior.predict(images)
    }

    /// Senior inference, including the fused junior features.
    pub fn forward_senior(&self, images: &Tensor) -> Result<Tensor> {
        let (h, w) = self.check_images(images)?;
        let (senior, _, _) = self.run(
            &mut Eager,
            self.senior.params().values(),
            self.junior.params().values(),
            self.fusion.values(),
            images,
            h,
            w,
            true,
        )?;
        Ok(senior.expect("senior requested"))
    }

    /// Senior inference with the connector switched off.
    pub fn forward_senior_unfused(&self, images: &Tensor) -> Result<Tensor> {
        self.senior.predict(images)
    }

    pub fn to_records(&self) -> Vec<Record> {
        let enc = |e: &EncoderConfig| {
            vec![e.base_width as f64, e.num_stages as f64, e.kernel_size as f64, e.blocks_per_stage as f64]
        };
        let mut records = vec![
            Record::new("meta.num_classes", vec![1], vec![self.config.num_classes as f64]),
            Record::new("meta.in_channels", vec![1], vec![self.config.in_channels as f64]),
            Record::new("meta.senior", vec![4], enc(&self.config.senior)),
            Record::new("meta.junior", vec![4], enc(&self.config.junior)),
            Record::new(
                "meta.fusion",
                vec![2],
                vec![self.config.fusion.code(), if self.config.fusion_detach { 1.0 } else { 0.0 }],
            ),
        ];
        for list in [self.junior.params(), self.senior.params(), &self.fusion] {
            records.extend(list.names().iter().zip(list.values()).map(|(n, t)| Record::from_tensor(n, t)));
        }
        records
    }

    /// Rebuilds a model from checkpoint records.
    pub fn from_records(records: &[Record]) -> Result<Self> {
        let config = config_from_records(records)?;
        let mut model = DualModel::new(config, 0)?;
        for part in [Part::Junior, Part::Senior, Part::Fusion] {
            load_list(model.part_mut(part), records)?;
        }
        Ok(model)
    }
}

/// Rebuilds only the junior branch; senior and fusion records are ignored
/// and may be absent.
pub fn junior_from_records(records: &[Record]) -> Result<BranchNet> {
    let config = config_from_records(records)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut junior = BranchNet::new("junior", config.junior, config.in_channels, config.num_classes, &mut rng)?;
    load_list(junior.params_mut(), records)?;
    Ok(junior)
}

fn meta<'a>(records: &'a [Record], name: &str, len: usize) -> Result<&'a [f64]> {
    let r = records.iter().find(|r| r.name == name).ok_or_else(|| Error::Checkpoint {
        version: checkpoint::VERSION,
        detail: format!("missing record {name}"),
    })?;
    if r.values.len() != len {
        return Err(Error::Checkpoint {
            version: checkpoint::VERSION,
            detail: format!("record {name} has {} values, expected {len}", r.values.len()),
        });
    }
    Ok(&r.values)
}

fn config_from_records(records: &[Record]) -> Result<DualConfig> {
    let enc = |v: &[f64]| EncoderConfig {
        base_width: v[0] as usize,
        num_stages: v[1] as usize,
        kernel_size: v[2] as usize,
        blocks_per_stage: v[3] as usize,
    };
    let fusion = meta(records, "meta.fusion", 2)?;
    let config = DualConfig {
        num_classes: meta(records, "meta.num_classes", 1)?[0] as usize,
        in_channels: meta(records, "meta.in_channels", 1)?[0] as usize,
        senior: enc(meta(records, "meta.senior", 4)?),
        junior: enc(meta(records, "meta.junior", 4)?),
        fusion: FusionMode::from_code(fusion[0]).ok_or_else(|| Error::Checkpoint {
            version: checkpoint::VERSION,
            detail: format!("unknown fusion code {}", fusion[0]),
        })?,
        fusion_detach: fusion[1] != 0.0,
    };
    config.validate().map_err(|e| Error::Checkpoint {
        version: checkpoint::VERSION,
        detail: format!("invalid architecture: {e}"),
    })?;
    Ok(config)
}

fn load_list(list: &mut ParamList, records: &[Record]) -> Result<()> {
    for i in 0..list.len() {
        let name = &list.names[i];
        let r = records.iter().find(|r| &r.name == name).ok_or_else(|| Error::Checkpoint {
            version: checkpoint::VERSION,
            detail: format!("missing parameter {name}"),
        })?;
        if r.shape != list.values[i].shape() {
            return Err(Error::Checkpoint {
                version: checkpoint::VERSION,
                detail: format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    r.shape,
                    list.values[i].shape()
                ),
            });
        }
        list.values[i] = r.to_tensor()?;
    }
    Ok(())
}
