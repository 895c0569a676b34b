//! Multi-layer style projector: one head per feature tap mapping globally
//! pooled activations to a unit-norm style code.

use candle_core::{DType, Device, Tensor, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, NUM_LAYERS};
use crate::error::{Error, Result};
use crate::features::FeaturePyramid;
use crate::nn::{l2_normalize_rows, Linear, ParamMode, ParamStore};

/// Added to the code norm before division.
pub const NORM_EPS: f64 = 1e-8;

/// Per-layer unit vectors, each of shape `[batch, K_i]`.
#[derive(Clone, Debug)]
pub struct StyleCode {
    pub codes: Vec<Tensor>,
}

impl StyleCode {
    pub fn new(codes: Vec<Tensor>) -> Result<Self> {
        if codes.is_empty() {
            return Err(Error::arg("style code needs at least one layer"));
        }
        let b = codes[0].dims2()?.0;
        for c in &codes {
            if c.dims2()?.0 != b {
                return Err(Error::arg("style code layers disagree on batch size"));
            }
        }
        Ok(Self { codes })
    }

    pub fn layers(&self) -> usize {
        self.codes.len()
    }

    pub fn batch(&self) -> usize {
        self.codes[0].dims()[0]
    }

    pub fn dims(&self) -> Vec<usize> {
        self.codes.iter().map(|c| c.dims()[1]).collect()
    }

    pub fn detach(&self) -> Self {
        Self {
            codes: self.codes.iter().map(Tensor::detach).collect(),
        }
    }

    /// Row `i` of every layer, as a batch of one.
    pub fn get(&self, i: usize) -> Result<Self> {
        Ok(Self {
            codes: self.codes.iter().map(|c| c.narrow(0, i, 1)).collect::<candle_core::Result<_>>()?,
        })
    }

    pub fn cat(parts: &[StyleCode]) -> Result<Self> {
        let layers = parts.first().map(|p| p.layers()).unwrap_or(0);
        let codes = (0..layers)
            .map(|l| {
                let ts: Vec<&Tensor> = parts.iter().map(|p| &p.codes[l]).collect();
                Tensor::cat(&ts, 0)
            })
            .collect::<candle_core::Result<_>>()?;
        Self::new(codes)
    }

    /// L2 norm of every row, per layer.
    pub fn norms(&self) -> Result<Vec<Vec<f64>>> {
        self.codes
            .iter()
            .map(|c| Ok(c.to_dtype(DType::F64)?.sqr()?.sum(D::Minus1)?.sqrt()?.to_vec1::<f64>()?))
            .collect()
    }

    pub fn check_unit_norm(&self, tol: f64) -> Result<()> {
        for (l, layer) in self.norms()?.iter().enumerate() {
            for n in layer {
                if !n.is_finite() || (n - 1.0).abs() > tol {
                    return Err(Error::Numeric(format!("style code layer {l} has norm {n}")));
                }
            }
        }
        Ok(())
    }

    /// Layer `l` as nested `f64` rows.
    pub fn rows(&self, l: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self.codes[l].to_dtype(DType::F64)?.to_vec2::<f64>()?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    /// `[global max ; global mean]`, a vector of `2·C`.
    MaxAvgConcat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectorConfig {
    pub in_channels: [usize; NUM_LAYERS],
    pub code_dims: [usize; NUM_LAYERS],
    pub hidden: [usize; NUM_LAYERS],
    pub pooling: PoolingMode,
}

impl ProjectorConfig {
    pub fn from_model(m: &ModelConfig) -> Self {
        Self {
            in_channels: m.tap_channels(),
            code_dims: m.code_dims,
            hidden: m.code_dims,
            pooling: PoolingMode::MaxAvgConcat,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) || self.code_dims.contains(&0) || self.in_channels.contains(&0) {
            return Err(Error::Config("projector widths must be positive".into()));
        }
        Ok(())
    }
}

/// One tap's head: a 1×1 convolution on the pooled vector followed by a
/// perceptron with two ReLU hidden layers.
#[derive(Clone, Debug)]
struct Head {
    pointwise: Linear,
    hidden1: Linear,
    hidden2: Linear,
    out: Linear,
}

impl Head {
    fn forward(&self, pooled: &Tensor, mode: ParamMode) -> Result<Tensor> {
        let h = self.pointwise.forward(pooled, mode)?.relu()?;
        let h = self.hidden1.forward(&h, mode)?.relu()?;
        let h = self.hidden2.forward(&h, mode)?.relu()?;
        self.out.forward(&h, mode)
    }
}

/// Global max and average pooling of an NCHW map, concatenated to `[B, 2C]`.
pub fn global_pool(map: &Tensor) -> Result<Tensor> {
    let flat = map.flatten_from(2)?;
    let max = flat.max(2)?;
    let mean = flat.mean(2)?;
    Ok(Tensor::cat(&[&max, &mean], 1)?)
}

#[derive(Clone, Debug)]
pub struct StyleProjector {
    config: ProjectorConfig,
    heads: Vec<Head>,
    store: ParamStore,
}

impl StyleProjector {
    pub fn new(config: ProjectorConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(dtype, device);
        let mut heads = Vec::with_capacity(NUM_LAYERS);
        for i in 0..NUM_LAYERS {
            let (c, k, h) = (config.in_channels[i], config.code_dims[i], config.hidden[i]);
            heads.push(Head {
                pointwise: Linear::kaiming(&mut store, &format!("head{i}.pointwise"), 2 * c, k, &mut rng)?,
                hidden1: Linear::kaiming(&mut store, &format!("head{i}.mlp1"), k, h, &mut rng)?,
                hidden2: Linear::kaiming(&mut store, &format!("head{i}.mlp2"), h, h, &mut rng)?,
                out: Linear::new(&mut store, &format!("head{i}.out"), h, k, &mut rng)?,
            });
        }
        Ok(Self { config, heads, store })
    }

    pub fn for_model(m: &ModelConfig, device: &Device) -> Result<Self> {
        Self::new(ProjectorConfig::from_model(m), m.seed ^ 0x4d53_5030, DType::F32, device)
    }

    /// Data-dependent initialisation: folds a per-channel standardization of
    /// the pooled features of `sample` into each head's first layer, so that
    /// codes start out spread apart rather than dominated by the offset every
    /// pooled ReLU vector shares. Needs at least two images.
    pub fn calibrate(&self, sample: &FeaturePyramid) -> Result<()> {
        for (i, map) in sample.maps.iter().enumerate() {
            let pooled = global_pool(map)?.to_dtype(DType::F64)?;
            let n = pooled.dims()[0];
            if n < 2 {
                return Err(Error::arg("projector calibration needs at least two images"));
            }
            let mean = pooled.mean(0)?;
            let var = pooled.broadcast_sub(&mean)?.sqr()?.sum(0)? / (n - 1) as f64;
            let std: Vec<f64> = var?.to_vec1::<f64>()?.into_iter().map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
            let std = Tensor::new(std, pooled.device())?;
            let (w, b) = self.first_layer(i)?;
            let w_new = w.as_tensor().to_dtype(DType::F64)?.broadcast_div(&std.unsqueeze(0)?)?;
            let shift = w_new.matmul(&mean.unsqueeze(1)?)?.squeeze(1)?;
            let b_new = (b.as_tensor().to_dtype(DType::F64)? - shift)?;
            w.set(&w_new.to_dtype(self.store.dtype())?)?;
            b.set(&b_new.to_dtype(self.store.dtype())?)?;
        }
        Ok(())
    }

    fn first_layer(&self, i: usize) -> Result<(&candle_core::Var, &candle_core::Var)> {
        let get = |n: &str| {
            self.store
                .get(&format!("head{i}.pointwise.{n}"))
                .ok_or_else(|| Error::arg(format!("projector has no head {i}")))
        };
        Ok((get("weight")?, get("bias")?))
    }

    pub fn config(&self) -> &ProjectorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Pools each tap, runs its head and L2-normalises the result.
    pub fn project(&self, features: &FeaturePyramid, mode: ParamMode) -> Result<StyleCode> {
        let channels = features.channels();
        if channels != self.config.in_channels {
            return Err(Error::arg(format!(
                "pyramid channels {channels:?} do not match projector {:?}",
                self.config.in_channels
            )));
        }
        let mut codes = Vec::with_capacity(NUM_LAYERS);
        for (map, head) in features.maps.iter().zip(&self.heads) {
            let pooled = global_pool(map)?;
            let check = pooled.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
            if !check.is_finite() {
                return Err(Error::Numeric("non-finite values in input features".into()));
            }
            let z = head.forward(&pooled, mode)?;
            codes.push(l2_normalize_rows(&z, NORM_EPS)?);
        }
        StyleCode::new(codes)
    }
}
