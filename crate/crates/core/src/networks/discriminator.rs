use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imaging::ImageTensor;
use crate::nn::{instance_norm, leaky_relu, sigmoid, Conv2d, ParamMode, ParamStore};

/// Patch discriminator output: one logit per receptive field.
#[derive(Clone, Debug)]
pub struct DiscriminatorOutput {
    pub logits: Tensor,
}

impl DiscriminatorOutput {
    /// Probabilities, clamped away from exactly 0 and 1.
    pub fn probabilities(&self) -> Result<Tensor> {
        let eps = if self.logits.dtype() == DType::F64 { 1e-12 } else { 1e-6 };
        Ok(sigmoid(&self.logits)?.clamp(eps, 1.0 - eps)?)
    }
}

/// 70×70 PatchGAN: three stride-2 and two stride-1 4×4 convolutions, so a
/// `H × W` input yields an `(H/8 − 2) × (W/8 − 2)` map.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    store: ParamStore,
    layers: Vec<(Conv2d, bool)>,
}

impl PatchDiscriminator {
    pub fn new(width: usize, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(dtype, device);
        let w = width;
        let spec = [
            ("conv0", 3, w, 2, false),
            ("conv1", w, 2 * w, 2, true),
            ("conv2", 2 * w, 4 * w, 2, true),
            ("conv3", 4 * w, 8 * w, 1, true),
            ("conv4", 8 * w, 1, 1, false),
        ];
        let mut layers = Vec::new();
        for (name, ci, co, stride, norm) in spec {
            let conv = Conv2d::new_normal(&mut store, name, ci, co, 4, stride, 1, 0.02, &mut rng)?;
            layers.push((conv, norm));
        }
        Ok(Self { store, layers })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn output_size(input: usize) -> usize {
        input / 8 - 2
    }

    pub fn forward(&self, img: &ImageTensor) -> Result<DiscriminatorOutput> {
        let mut h = img.tensor().clone();
        let last = self.layers.len() - 1;
        for (i, (conv, norm)) in self.layers.iter().enumerate() {
            h = conv.forward(&h, ParamMode::Track)?;
            if i < last {
                if *norm {
                    h = instance_norm(&h)?;
                }
                h = leaky_relu(&h, 0.2)?;
            }
        }
        Ok(DiscriminatorOutput { logits: h })
    }
}
