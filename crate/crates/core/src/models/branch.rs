use rand::Rng;
use serde::{Deserialize, Serialize};

use super::exec::{Eager, Exec};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Shape of one convolutional encoder.
///
/// Stage `s` halves the spatial resolution with a strided convolution and
/// widens to `base_width * 2^s` channels, then applies `blocks_per_stage`
/// same-resolution convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub base_width: usize,
    pub num_stages: usize,
    pub kernel_size: usize,
    pub blocks_per_stage: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { base_width: 8, num_stages: 2, kernel_size: 3, blocks_per_stage: 1 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 {
            return Err(Error::Config("encoder base_width must be >= 1".into()));
        }
        if self.num_stages == 0 {
            return Err(Error::Config("encoder num_stages must be >= 1".into()));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "encoder kernel_size must be odd and positive, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    pub fn output_stride(&self) -> usize {
        1 << self.num_stages
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let stride = self.output_stride();
        if h == 0 || w == 0 || !h.is_multiple_of(stride) || !w.is_multiple_of(stride) {
            return Err(Error::Config(format!(
                "input {}x{} not divisible by encoder output stride {}",
                h, w, stride
            )));
        }
        Ok(())
    }
}

/// Whether a parameter belongs to the encoder or to the decoder side
/// (classifier heads and fusion projections).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Decoder,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvLayer {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    pub fn apply<E: Exec>(&self, ex: &mut E, p: &[E::V], x: &E::V) -> Result<E::V> {
        ex.conv(x, &p[self.weight], &p[self.bias], self.stride, self.padding)
    }
}

/// Named parameter tensors with their optimizer group.
#[derive(Clone, Debug, Default)]
pub struct ParamList {
    pub(crate) names: Vec<String>,
    pub(crate) groups: Vec<ParamGroup>,
    pub(crate) values: Vec<Tensor>,
}

impl ParamList {
    pub(crate) fn push(&mut self, name: String, group: ParamGroup, value: Tensor) -> usize {
        self.names.push(name);
        self.groups.push(group);
        self.values.push(value);
        self.values.len() - 1
    }

    /// He-uniform kernel plus zero bias.
    pub(crate) fn conv<R: Rng>(
        &mut self,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        shape: [usize; 4],
        stride: usize,
    ) -> ConvLayer {
        let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        let weight = self.push(format!("{name}.weight"), group, Tensor::from_parts(shape.to_vec(), data));
        let bias = self.push(format!("{name}.bias"), group, Tensor::zeros(vec![shape[0]]));
        ConvLayer { weight, bias, stride, padding: shape[2] / 2 }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }
}

/// One segmentation network: a convolutional encoder and a 1x1 classifier
/// whose logits are bilinearly upsampled to the input resolution.
#[derive(Clone, Debug)]
pub struct BranchNet {
    name: String,
    config: EncoderConfig,
    in_channels: usize,
    num_classes: usize,
    stages: Vec<Vec<ConvLayer>>,
    head: ConvLayer,
    pub(crate) params: ParamList,
}

impl BranchNet {
    pub fn new<R: Rng>(
        name: &str,
        config: EncoderConfig,
        in_channels: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        let k = config.kernel_size;
        let mut params = ParamList::default();
        let mut stages = Vec::with_capacity(config.num_stages);
        let mut channels = in_channels;
        for s in 0..config.num_stages {
            let width = config.stage_width(s);
            let mut layers = vec![params.conv(
                rng,
                &format!("{name}.stage{s}.down"),
                ParamGroup::Encoder,
                [width, channels, k, k],
                2,
            )];
            for b in 0..config.blocks_per_stage {
                layers.push(params.conv(
                    rng,
                    &format!("{name}.stage{s}.block{b}"),
                    ParamGroup::Encoder,
                    [width, width, k, k],
                    1,
                ));
            }
            stages.push(layers);
            channels = width;
        }
        let head = params.conv(
            rng,
            &format!("{name}.head"),
            ParamGroup::Decoder,
            [num_classes, channels, 1, 1],
            1,
        );
        Ok(BranchNet {
            name: name.to_string(),
            config,
            in_channels,
            num_classes,
            stages,
            head,
            params,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &ParamList {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamList {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub(crate) fn stage<E: Exec>(&self, ex: &mut E, p: &[E::V], s: usize, x: &E::V) -> Result<E::V> {
        let mut h = x.clone();
        for layer in &self.stages[s] {
            let y = layer.apply(ex, p, &h)?;
            h = ex.relu(&y)?;
        }
        Ok(h)
    }

    pub(crate) fn classify<E: Exec>(
        &self,
        ex: &mut E,
        p: &[E::V],
        features: &E::V,
        h: usize,
        w: usize,
    ) -> Result<E::V> {
        let logits = self.head.apply(ex, p, features)?;
        ex.resize(&logits, h, w)
    }

    pub(crate) fn check_images(&self, images: &Tensor) -> Result<(usize, usize)> {
        let [_, c, h, w] = images.dims4()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "{}: expected {} input channels, got {}",
                self.name, self.in_channels, c
            )));
        }
        self.config.check_input(h, w)?;
        Ok((h, w))
    }

    /// Tape-free forward pass returning `[N,K,H,W]` logits.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        let (h, w) = self.check_images(images)?;
        let p = self.params.values();
        let mut x = images.clone();
        for s in 0..self.config.num_stages {
            x = self.stage(&mut Eager, p, s, &x)?;
        }
        self.classify(&mut Eager, p, &x, h, w)
    }
}
