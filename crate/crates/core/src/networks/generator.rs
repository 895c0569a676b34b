use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, NUM_LAYERS};
use crate::error::{Error, Result};
use crate::features::{conv_channels, normalize_input, ExtractorWeights, VggOp, VGG19};
use crate::imaging::ImageTensor;
use crate::nn::{instance_norm, reflect_pad1, Conv2d, Linear, ParamMode, ParamStore};
use crate::projector::StyleCode;

/// Per-channel `(scale, shift)` for one modulation site, each `[B, C]`.
#[derive(Clone, Debug)]
pub struct Modulation {
    pub scale: Tensor,
    pub shift: Tensor,
}

impl Modulation {
    /// Scale 1, shift 0: plain instance normalization.
    pub fn identity(batch: usize, channels: usize, like: &Tensor) -> Result<Self> {
        Ok(Self {
            scale: Tensor::ones((batch, channels), like.dtype(), like.device())?,
            shift: Tensor::zeros((batch, channels), like.dtype(), like.device())?,
        })
    }

    /// Instance-normalizes `x` and applies the per-channel affine.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, _, _) = x.dims4()?;
        let scale = self.scale.reshape((b, c, 1, 1))?;
        let shift = self.shift.reshape((b, c, 1, 1))?;
        Ok(instance_norm(x)?.broadcast_mul(&scale)?.broadcast_add(&shift)?)
    }
}

/// Maps one style-code layer to a site's `(scale, shift)`.
#[derive(Clone, Debug)]
struct ModulationHead {
    hidden: Linear,
    out: Linear,
    channels: usize,
}

impl ModulationHead {
    fn new(
        store: &mut ParamStore,
        name: &str,
        code_dim: usize,
        hidden: usize,
        channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let hidden_layer = Linear::new(store, &format!("{name}.hidden"), code_dim, hidden, rng)?;
        // start close to identity: scale ≈ 1, shift ≈ 0
        let mut bias = vec![1.0; channels];
        bias.extend(vec![0.0; channels]);
        let bound = 0.1 / (hidden as f64).sqrt();
        let out = Linear::with_bias(store, &format!("{name}.out"), hidden, 2 * channels, bound, bias, rng)?;
        Ok(Self {
            hidden: hidden_layer,
            out,
            channels,
        })
    }

    fn forward(&self, code: &Tensor) -> Result<Modulation> {
        let h = self.hidden.forward(code, ParamMode::Track)?.relu()?;
        let o = self.out.forward(&h, ParamMode::Track)?;
        Ok(Modulation {
            scale: o.narrow(1, 0, self.channels)?,
            shift: o.narrow(1, self.channels, self.channels)?,
        })
    }
}

#[derive(Clone, Debug)]
enum DecoderOp {
    Modulate(usize),
    Conv(Conv2d, bool),
    Upsample,
}

/// Encoder–modulation–decoder generator.
///
/// The encoder is VGG-19 up to `relu4_1`, initialised from the backbone and
/// trainable. Four modulation sites (the bottleneck and one after each
/// decoder upsampling) consume style-code layers 4, 3, 2 and 1.
#[derive(Clone, Debug)]
pub struct Generator {
    store: ParamStore,
    encoder: Vec<(VggOp, Option<Conv2d>)>,
    heads: Vec<ModulationHead>,
    decoder: Vec<DecoderOp>,
    code_dims: [usize; NUM_LAYERS],
}

/// Code layer consumed by each site, in decoding order.
pub const SITE_CODE_LAYER: [usize; NUM_LAYERS] = [3, 2, 1, 0];

impl Generator {
    pub fn new(config: &ModelConfig, backbone: &ExtractorWeights, seed: u64) -> Result<Self> {
        config.validate()?;
        if backbone.width() != config.backbone_width {
            return Err(Error::Config(format!(
                "backbone width {} differs from model width {}",
                backbone.width(),
                config.backbone_width
            )));
        }
        let device = backbone.tensors().values().next().map(|t| t.device().clone()).unwrap_or(candle_core::Device::Cpu);
        let dtype = backbone.tensors().values().next().map(|t| t.dtype()).unwrap_or(DType::F32);
        let mut store = ParamStore::new(dtype, &device);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = config.backbone_width;

        let mut encoder = Vec::new();
        for op in VGG19 {
            match *op {
                VggOp::Conv(name, cin, cout) => {
                    let (ci, co) = conv_channels(w, cin, cout);
                    let copy = |suffix: &str| -> Result<Vec<f64>> {
                        let t = backbone
                            .tensor(&format!("{name}.{suffix}"))
                            .ok_or_else(|| Error::Config(format!("backbone missing {name}.{suffix}")))?;
                        Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
                    };
                    let weight = store.register(&format!("enc.{name}.weight"), &[co, ci, 3, 3], copy("weight")?)?;
                    let bias = store.register(&format!("enc.{name}.bias"), &[co], copy("bias")?)?;
                    encoder.push((*op, Some(Conv2d::from_tensors(weight, Some(bias), 1, 1))));
                }
                VggOp::Relu(name) => {
                    encoder.push((*op, None));
                    if name == "relu4_1" {
                        break;
                    }
                }
                VggOp::Pool => encoder.push((*op, None)),
            }
        }

        let site_channels = [8 * w, 4 * w, 2 * w, w];
        let mut heads = Vec::with_capacity(NUM_LAYERS);
        for (site, &ch) in site_channels.iter().enumerate() {
            let k = config.code_dims[SITE_CODE_LAYER[site]];
            heads.push(ModulationHead::new(
                &mut store,
                &format!("mod{site}"),
                k,
                config.modulation_hidden,
                ch,
                &mut rng,
            )?);
        }

        let mut conv = |store: &mut ParamStore, name: &str, ci: usize, co: usize, relu: bool| -> Result<DecoderOp> {
            Ok(DecoderOp::Conv(Conv2d::new(store, &format!("dec.{name}"), ci, co, 3, 1, 0, &mut rng)?, relu))
        };
        let decoder = vec![
            DecoderOp::Modulate(0),
            conv(&mut store, "conv4_1", 8 * w, 4 * w, true)?,
            DecoderOp::Upsample,
            DecoderOp::Modulate(1),
            conv(&mut store, "conv3_4", 4 * w, 4 * w, true)?,
            conv(&mut store, "conv3_3", 4 * w, 4 * w, true)?,
            conv(&mut store, "conv3_2", 4 * w, 4 * w, true)?,
            conv(&mut store, "conv3_1", 4 * w, 2 * w, true)?,
            DecoderOp::Upsample,
            DecoderOp::Modulate(2),
            conv(&mut store, "conv2_2", 2 * w, 2 * w, true)?,
            conv(&mut store, "conv2_1", 2 * w, w, true)?,
            DecoderOp::Upsample,
            DecoderOp::Modulate(3),
            conv(&mut store, "conv1_2", w, w, true)?,
            conv(&mut store, "conv1_1", w, 3, false)?,
        ];

        Ok(Self {
            store,
            encoder,
            heads,
            decoder,
            code_dims: config.code_dims,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    fn check_input(x: &Tensor) -> Result<()> {
        let (_, _, h, w) = x.dims4()?;
        if h % 8 != 0 || w % 8 != 0 || h < 16 || w < 16 {
            return Err(Error::arg(format!(
                "generator input {h}x{w} must be at least 16 and divisible by 8"
            )));
        }
        Ok(())
    }

    /// `relu4_1` features of the content image.
    pub fn encode(&self, content: &ImageTensor) -> Result<Tensor> {
        let x = content.tensor();
        Self::check_input(x)?;
        let mut h = normalize_input(x)?;
        for (op, conv) in &self.encoder {
            h = match op {
                VggOp::Conv(..) => conv.as_ref().expect("conv op has weights").forward(&h, ParamMode::Track)?,
                VggOp::Relu(_) => h.relu()?,
                VggOp::Pool => h.max_pool2d(2)?,
            };
        }
        Ok(h)
    }

    /// Site modulations predicted from a style code. A code with batch 1 is
    /// broadcast over `batch`.
    pub fn modulations(&self, code: &StyleCode, batch: usize) -> Result<Vec<Modulation>> {
        if code.dims() != self.code_dims {
            return Err(Error::arg(format!(
                "style code dims {:?} do not match generator {:?}",
                code.dims(),
                self.code_dims
            )));
        }
        let code = match code.batch() {
            b if b == batch => code.clone(),
            1 => StyleCode::new(
                code.codes
                    .iter()
                    .map(|c| c.broadcast_as((batch, c.dims()[1]))?.contiguous())
                    .collect::<candle_core::Result<_>>()?,
            )?,
            b => return Err(Error::arg(format!("style code batch {b} does not match content batch {batch}"))),
        };
        self.heads
            .iter()
            .enumerate()
            .map(|(site, head)| head.forward(&code.codes[SITE_CODE_LAYER[site]]))
            .collect()
    }

    /// Runs the decoder from bottleneck features with explicit modulations.
    pub fn decode(&self, features: &Tensor, modulations: &[Modulation]) -> Result<Tensor> {
        if modulations.len() != NUM_LAYERS {
            return Err(Error::arg("decoder needs one modulation per site"));
        }
        let mut h = features.clone();
        for op in &self.decoder {
            h = match op {
                DecoderOp::Modulate(site) => modulations[*site].apply(&h)?,
                DecoderOp::Conv(conv, relu) => {
                    let y = conv.forward(&reflect_pad1(&h)?, ParamMode::Track)?;
                    if *relu {
                        y.relu()?
                    } else {
                        y
                    }
                }
                DecoderOp::Upsample => {
                    let (_, _, hh, ww) = h.dims4()?;
                    h.upsample_nearest2d(hh * 2, ww * 2)?
                }
            };
        }
        Ok(h.tanh()?)
    }

    /// Renders `content` in the style described by `code`.
    pub fn stylize(&self, content: &ImageTensor, code: &StyleCode) -> Result<ImageTensor> {
        let features = self.encode(content)?;
        let mods = self.modulations(code, content.batch())?;
        ImageTensor::from_tensor_unchecked(self.decode(&features, &mods)?)
    }

    /// Decoding with every site set to identity modulation.
    pub fn autoencode(&self, content: &ImageTensor) -> Result<ImageTensor> {
        let features = self.encode(content)?;
        let b = content.batch();
        let mods = self
            .heads
            .iter()
            .map(|h| Modulation::identity(b, h.channels, &features))
            .collect::<Result<Vec<_>>>()?;
        ImageTensor::from_tensor_unchecked(self.decode(&features, &mods)?)
    }
}
