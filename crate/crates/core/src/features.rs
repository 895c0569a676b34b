//! Frozen VGG-19 backbone with fixed multi-layer taps.
//!
//! Taps are the post-activation outputs `relu1_2`, `relu2_2`, `relu3_3` and
//! `relu4_3`, at strides 1, 2, 4 and 8 relative to the input. Inputs arrive in
//! `[-1, 1]` and are mapped to ImageNet statistics internally.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ModelConfig, NUM_LAYERS};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::nn::{kaiming_normal, Conv2d, ParamMode};

pub const TAP_LAYERS: [&str; NUM_LAYERS] = ["relu1_2", "relu2_2", "relu3_3", "relu4_3"];
pub const TAP_STRIDES: [usize; NUM_LAYERS] = [1, 2, 4, 8];
/// Layer used by the content metric and as the generator's bottleneck.
pub const CONTENT_LAYER: &str = "relu4_1";

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Copy, Debug)]
pub(crate) enum VggOp {
    /// `(name, in multiplier, out multiplier)`; a multiplier of 0 means RGB input.
    Conv(&'static str, usize, usize),
    Relu(&'static str),
    Pool,
}

/// VGG-19 `features` up to `relu4_3`.
pub(crate) const VGG19: &[VggOp] = &[
    VggOp::Conv("conv1_1", 0, 1),
    VggOp::Relu("relu1_1"),
    VggOp::Conv("conv1_2", 1, 1),
    VggOp::Relu("relu1_2"),
    VggOp::Pool,
    VggOp::Conv("conv2_1", 1, 2),
    VggOp::Relu("relu2_1"),
    VggOp::Conv("conv2_2", 2, 2),
    VggOp::Relu("relu2_2"),
    VggOp::Pool,
    VggOp::Conv("conv3_1", 2, 4),
    VggOp::Relu("relu3_1"),
    VggOp::Conv("conv3_2", 4, 4),
    VggOp::Relu("relu3_2"),
    VggOp::Conv("conv3_3", 4, 4),
    VggOp::Relu("relu3_3"),
    VggOp::Conv("conv3_4", 4, 4),
    VggOp::Relu("relu3_4"),
    VggOp::Pool,
    VggOp::Conv("conv4_1", 4, 8),
    VggOp::Relu("relu4_1"),
    VggOp::Conv("conv4_2", 8, 8),
    VggOp::Relu("relu4_2"),
    VggOp::Conv("conv4_3", 8, 8),
    VggOp::Relu("relu4_3"),
];

pub(crate) fn conv_channels(width: usize, cin: usize, cout: usize) -> (usize, usize) {
    (if cin == 0 { 3 } else { cin * width }, cout * width)
}

fn relu_names() -> impl Iterator<Item = &'static str> {
    VGG19.iter().filter_map(|op| match op {
        VggOp::Relu(n) => Some(*n),
        _ => None,
    })
}

/// Maps `[-1, 1]` images to the backbone's native input statistics.
pub(crate) fn normalize_input(x: &Tensor) -> Result<Tensor> {
    let dev = x.device();
    let mean: Vec<f64> = IMAGENET_MEAN.to_vec();
    let std: Vec<f64> = IMAGENET_STD.to_vec();
    let mean = Tensor::from_vec(mean, (1, 3, 1, 1), dev)?.to_dtype(x.dtype())?;
    let std = Tensor::from_vec(std, (1, 3, 1, 1), dev)?.to_dtype(x.dtype())?;
    let x01 = ((x + 1.0)? * 0.5)?;
    Ok(x01.broadcast_sub(&mean)?.broadcast_div(&std)?)
}

/// Four feature maps tapped from the backbone.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub maps: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn new(maps: Vec<Tensor>) -> Result<Self> {
        if maps.len() != NUM_LAYERS {
            return Err(Error::arg(format!("expected {NUM_LAYERS} feature maps, got {}", maps.len())));
        }
        for m in &maps {
            if m.rank() != 4 {
                return Err(Error::arg(format!("feature maps must be 4-D, got {:?}", m.dims())));
            }
        }
        Ok(Self { maps })
    }

    pub fn batch(&self) -> usize {
        self.maps[0].dims()[0]
    }

    pub fn channels(&self) -> [usize; NUM_LAYERS] {
        std::array::from_fn(|i| self.maps[i].dims()[1])
    }

    /// Checks channel widths and strides against the tap table for an input of
    /// side `h × w`.
    pub fn check_shapes(&self, width: usize, h: usize, w: usize) -> Result<()> {
        let b = self.batch();
        for (i, m) in self.maps.iter().enumerate() {
            let c = width << i;
            let expect = [b, c, h / TAP_STRIDES[i], w / TAP_STRIDES[i]];
            if m.dims() != expect {
                return Err(Error::arg(format!(
                    "tap {} has shape {:?}, expected {expect:?}",
                    TAP_LAYERS[i],
                    m.dims()
                )));
            }
        }
        Ok(())
    }

    pub fn detach(&self) -> Self {
        Self {
            maps: self.maps.iter().map(Tensor::detach).collect(),
        }
    }
}

/// Sidecar metadata stored next to a backbone weight archive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSidecar {
    pub taps: Vec<String>,
    pub sha256: String,
    pub backbone_width: usize,
}

/// Backbone parameters plus tap configuration.
#[derive(Clone, Debug)]
pub struct ExtractorWeights {
    tensors: HashMap<String, Tensor>,
    taps: Vec<String>,
    frozen: bool,
    width: usize,
}

impl ExtractorWeights {
    /// Seeded He-initialised weights, used when no pretrained archive is given.
    pub fn random(width: usize, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = HashMap::new();
        for op in VGG19 {
            if let VggOp::Conv(name, cin, cout) = *op {
                let (ci, co) = conv_channels(width, cin, cout);
                let fan_in = ci * 9;
                let w = Tensor::from_vec(kaiming_normal(&mut rng, co * fan_in, fan_in), (co, ci, 3, 3), device)?
                    .to_dtype(dtype)?;
                let b = Tensor::zeros(co, dtype, device)?;
                tensors.insert(format!("{name}.weight"), w);
                tensors.insert(format!("{name}.bias"), b);
            }
        }
        Self::from_tensors(tensors, TAP_LAYERS.iter().map(|s| s.to_string()).collect(), width)
    }

    pub fn for_model(config: &ModelConfig, device: &Device) -> Result<Self> {
        Self::random(config.backbone_width, config.seed ^ 0x5647_4731, DType::F32, device)
    }

    /// Validates that the tap names exist and every conv layer is present with
    /// the shapes implied by `width`. Extra tensors (e.g. deeper VGG layers)
    /// are dropped.
    pub fn from_tensors(mut tensors: HashMap<String, Tensor>, taps: Vec<String>, width: usize) -> Result<Self> {
        for t in &taps {
            if !relu_names().any(|n| n == t) {
                return Err(Error::Config(format!("unknown tap layer {t}")));
            }
        }
        let mut kept = HashMap::new();
        for op in VGG19 {
            if let VggOp::Conv(name, cin, cout) = *op {
                let (ci, co) = conv_channels(width, cin, cout);
                for (suffix, shape) in [("weight", vec![co, ci, 3, 3]), ("bias", vec![co])] {
                    let key = format!("{name}.{suffix}");
                    let t = tensors
                        .remove(&key)
                        .ok_or_else(|| Error::Config(format!("backbone weights missing {key}")))?;
                    if t.dims() != shape.as_slice() {
                        return Err(Error::Config(format!(
                            "backbone tensor {key} has shape {:?}, expected {shape:?}",
                            t.dims()
                        )));
                    }
                    kept.insert(key, t);
                }
            }
        }
        Ok(Self {
            tensors: kept,
            taps,
            frozen: true,
            width,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn taps(&self) -> &[String] {
        &self.taps
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn tensor(&self, key: &str) -> Option<&Tensor> {
        self.tensors.get(key)
    }

    pub fn tensors(&self) -> &HashMap<String, Tensor> {
        &self.tensors
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, t)| Ok((k.clone(), t.to_dtype(dtype)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            tensors,
            taps: self.taps.clone(),
            frozen: self.frozen,
            width: self.width,
        })
    }

    fn sidecar_path(archive: &Path) -> PathBuf {
        archive.with_extension("json")
    }

    /// Writes `archive` (safetensors) and a JSON sidecar with the tap names
    /// and the archive's SHA-256.
    pub fn save(&self, archive: impl AsRef<Path>) -> Result<()> {
        let archive = archive.as_ref();
        candle_core::safetensors::save(&self.tensors, archive)?;
        let bytes = std::fs::read(archive).map_err(|e| Error::io(archive, e))?;
        let sidecar = WeightSidecar {
            taps: self.taps.clone(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            backbone_width: self.width,
        };
        let side = Self::sidecar_path(archive);
        std::fs::write(&side, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))
    }

    /// Loads an archive written by [`ExtractorWeights::save`] (or converted
    /// from a pretrained model with the same tensor names), verifying the
    /// content hash.
    pub fn load(archive: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let archive = archive.as_ref();
        let side = Self::sidecar_path(archive);
        let sidecar: WeightSidecar =
            serde_json::from_str(&std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?)?;
        let bytes = std::fs::read(archive).map_err(|e| Error::io(archive, e))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != sidecar.sha256 {
            return Err(Error::Config(format!(
                "content hash mismatch for {}: sidecar says {}, archive is {digest}",
                archive.display(),
                sidecar.sha256
            )));
        }
        let tensors = candle_core::safetensors::load_buffer(&bytes, device)?;
        Self::from_tensors(tensors, sidecar.taps, sidecar.backbone_width)
    }
}

/// Evaluation-mode backbone returning a [`FeaturePyramid`].
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    convs: HashMap<&'static str, Conv2d>,
    taps: Vec<String>,
    width: usize,
}

impl FeatureExtractor {
    pub fn new(weights: &ExtractorWeights) -> Self {
        let mut convs = HashMap::new();
        for op in VGG19 {
            if let VggOp::Conv(name, _, _) = *op {
                let w = weights.tensors[&format!("{name}.weight")].detach();
                let b = weights.tensors[&format!("{name}.bias")].detach();
                convs.insert(name, Conv2d::from_tensors(w, Some(b), 1, 1));
            }
        }
        Self {
            convs,
            taps: weights.taps.clone(),
            width: weights.width,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Runs the backbone on raw `[-1, 1]` input and returns the named relu
    /// outputs, in the order given. Stops after the last requested layer.
    pub fn forward_layers(&self, x: &Tensor, layers: &[&str]) -> Result<Vec<Tensor>> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 {
            return Err(Error::arg(format!("backbone expects 3 channels, got {c}")));
        }
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::arg(format!("input size {h}x{w} is not divisible by 8")));
        }
        let mut found: HashMap<&str, Tensor> = HashMap::new();
        let mut h = normalize_input(x)?;
        for op in VGG19 {
            if found.len() == layers.len() {
                break;
            }
            match *op {
                VggOp::Conv(name, _, _) => h = self.convs[name].forward(&h, ParamMode::Detach)?,
                VggOp::Relu(name) => {
                    h = h.relu()?;
                    if layers.contains(&name) {
                        found.insert(name, h.clone());
                    }
                }
                VggOp::Pool => h = h.max_pool2d(2)?,
            }
        }
        layers
            .iter()
            .map(|l| {
                found
                    .remove(l)
                    .ok_or_else(|| Error::arg(format!("unknown backbone layer {l}")))
            })
            .collect()
    }

    pub fn extract_tensor(&self, x: &Tensor) -> Result<FeaturePyramid> {
        let taps: Vec<&str> = self.taps.iter().map(String::as_str).collect();
        FeaturePyramid::new(self.forward_layers(x, &taps)?)
    }

    pub fn extract(&self, img: &ImageTensor) -> Result<FeaturePyramid> {
        self.extract_tensor(img.tensor())
    }

    /// `relu4_1` features used by the content metric.
    pub fn content_features(&self, img: &ImageTensor) -> Result<Tensor> {
        Ok(self.forward_layers(img.tensor(), &[CONTENT_LAYER])?.remove(0))
    }
}
