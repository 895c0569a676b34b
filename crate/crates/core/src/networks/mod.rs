//! Generator, discriminators and the bundle that ties them to the
//! feature extractor and style projector.

mod discriminator;
mod generator;

pub use discriminator::{DiscriminatorOutput, PatchDiscriminator};
pub use generator::{Generator, Modulation, SITE_CODE_LAYER};

use candle_core::{DType, Device};

use crate::config::ModelConfig;
use crate::error::Result;
use crate::features::{ExtractorWeights, FeatureExtractor};
use crate::imaging::{Domain, ImageTensor};
use crate::nn::ParamMode;
use crate::projector::{ProjectorConfig, StyleCode, StyleProjector};

/// All networks of the model.
///
/// With `mixed_discriminator` a single discriminator judges both domains and
/// `d_art` is an alias of `d_real`.
#[derive(Clone, Debug)]
pub struct CastModel {
    pub config: ModelConfig,
    pub backbone: ExtractorWeights,
    pub extractor: FeatureExtractor,
    pub projector: StyleProjector,
    pub generator: Generator,
    pub d_real: PatchDiscriminator,
    pub d_art: PatchDiscriminator,
    pub mixed_discriminator: bool,
}

impl CastModel {
    pub fn new(config: &ModelConfig, device: &Device) -> Result<Self> {
        let backbone = ExtractorWeights::for_model(config, device)?;
        Self::with_backbone(config, backbone, false)
    }

    pub fn with_backbone(config: &ModelConfig, backbone: ExtractorWeights, mixed_discriminator: bool) -> Result<Self> {
        config.validate()?;
        let device = backbone
            .tensors()
            .values()
            .next()
            .map(|t| t.device().clone())
            .unwrap_or(Device::Cpu);
        let dtype = backbone.tensors().values().next().map(|t| t.dtype()).unwrap_or(DType::F32);
        let extractor = FeatureExtractor::new(&backbone);
        let projector = StyleProjector::new(ProjectorConfig::from_model(config), config.seed ^ 0x11, dtype, &device)?;
        let generator = Generator::new(config, &backbone, config.seed ^ 0x22)?;
        let d_real = PatchDiscriminator::new(config.discriminator_width, config.seed ^ 0x33, dtype, &device)?;
        let d_art = if mixed_discriminator {
            d_real.clone()
        } else {
            PatchDiscriminator::new(config.discriminator_width, config.seed ^ 0x44, dtype, &device)?
        };
        Ok(Self {
            config: config.clone(),
            backbone,
            extractor,
            projector,
            generator,
            d_real,
            d_art,
            mixed_discriminator,
        })
    }

    pub fn dtype(&self) -> DType {
        self.projector.params().dtype()
    }

    pub fn device(&self) -> &Device {
        self.projector.params().device()
    }

    /// Style code of each image in the batch.
    pub fn style_code(&self, img: &ImageTensor, mode: ParamMode) -> Result<StyleCode> {
        self.projector.project(&self.extractor.extract(img)?, mode)
    }

    pub fn stylize(&self, content: &ImageTensor, code: &StyleCode) -> Result<ImageTensor> {
        self.generator.stylize(content, code)
    }

    /// Stylizes `content` with the code of `style`.
    pub fn stylize_from_image(&self, content: &ImageTensor, style: &ImageTensor) -> Result<ImageTensor> {
        let code = self.style_code(style, ParamMode::Detach)?;
        self.generator.stylize(content, &code)
    }

    pub fn discriminator(&self, domain: Domain) -> &PatchDiscriminator {
        match domain {
            Domain::Realistic => &self.d_real,
            Domain::Artistic => &self.d_art,
        }
    }

    pub fn discriminate(&self, img: &ImageTensor, domain: Domain) -> Result<DiscriminatorOutput> {
        self.discriminator(domain).forward(img)
    }
}
