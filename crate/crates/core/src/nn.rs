//! Small building blocks shared by every network in the crate: a named
//! parameter store, seeded initializers, convolution / linear layers, instance
//! normalization and an Adam optimizer whose state can be checkpointed.

use std::collections::{BTreeMap, HashMap};

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// Whether a forward pass should record gradients for the layer parameters.
///
/// `Detach` still lets gradients flow through the layer to its *input*; only
/// the parameters are treated as constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamMode {
    Track,
    Detach,
}

impl ParamMode {
    fn apply(self, t: &Tensor) -> Tensor {
        match self {
            ParamMode::Track => t.clone(),
            ParamMode::Detach => t.detach(),
        }
    }
}

/// Named collection of trainable variables belonging to one network.
#[derive(Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("params", &self.vars.len())
            .field("dtype", &self.dtype)
            .finish()
    }
}

impl ParamStore {
    pub fn new(dtype: DType, device: &Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Registers a variable initialised from `values` and returns its tensor
    /// handle (which shares identity with the variable for backprop).
    pub fn register(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::arg(format!("duplicate parameter name {name}")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(handle)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Snapshot of every parameter, keys prefixed with `prefix`.
    pub fn export(&self, prefix: &str) -> HashMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (format!("{prefix}{k}"), v.as_tensor().detach()))
            .collect()
    }

    /// Overwrites every parameter from `tensors[prefix + name]`, in place.
    pub fn import(&self, tensors: &HashMap<String, Tensor>, prefix: &str) -> Result<()> {
        for (name, var) in &self.vars {
            let key = format!("{prefix}{name}");
            let t = tensors
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor {key} has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        }
        Ok(())
    }

    /// Extracts this store's gradients from a backward pass, keyed by name.
    pub fn grads(&self, grads: &GradStore) -> GradMap {
        self.vars
            .iter()
            .filter_map(|(k, v)| grads.get(v.as_tensor()).map(|g| (k.clone(), g.clone())))
            .collect()
    }

    /// Flat copy of all parameter values, in name order. Used for equality checks.
    pub fn flatten_values(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.num_elements());
        for v in self.vars.values() {
            out.extend(v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?);
        }
        Ok(out)
    }
}

/// Gradients keyed by parameter name.
pub type GradMap = BTreeMap<String, Tensor>;

/// Adds `other` into `acc` key-wise.
pub fn accumulate_grads(acc: &mut GradMap, other: GradMap) -> Result<()> {
    for (k, g) in other {
        match acc.remove(&k) {
            Some(prev) => {
                acc.insert(k, (prev + g)?);
            }
            None => {
                acc.insert(k, g);
            }
        }
    }
    Ok(())
}

pub fn grad_norm(grads: &GradMap) -> Result<f64> {
    let mut sq = 0.0;
    for g in grads.values() {
        sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    }
    Ok(sq.sqrt())
}

pub fn kaiming_normal(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    if bound == 0.0 {
        return vec![0.0; n];
    }
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// 2-D convolution with square kernels.
#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// Registers a trainable convolution with He-normal weights and zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan_in = c_in * kernel * kernel;
        let weight = store.register(
            &format!("{name}.weight"),
            &[c_out, c_in, kernel, kernel],
            kaiming_normal(rng, c_out * fan_in, fan_in),
        )?;
        let bias = store.register(&format!("{name}.bias"), &[c_out], vec![0.0; c_out])?;
        Ok(Self {
            weight,
            bias: Some(bias),
            stride,
            padding,
        })
    }

    /// Registers a trainable convolution with N(0, std²) weights and zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new_normal(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let n = c_out * c_in * kernel * kernel;
        let normal = Normal::new(0.0, std).map_err(|e| Error::arg(e.to_string()))?;
        let weight = store.register(
            &format!("{name}.weight"),
            &[c_out, c_in, kernel, kernel],
            (0..n).map(|_| normal.sample(rng)).collect(),
        )?;
        let bias = store.register(&format!("{name}.bias"), &[c_out], vec![0.0; c_out])?;
        Ok(Self {
            weight,
            bias: Some(bias),
            stride,
            padding,
        })
    }

    /// Wraps existing tensors (frozen or already registered).
    pub fn from_tensors(weight: Tensor, bias: Option<Tensor>, stride: usize, padding: usize) -> Self {
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor, mode: ParamMode) -> Result<Tensor> {
        let w = mode.apply(&self.weight);
        let y = x.conv2d(&w, self.padding, self.stride, 1, 1)?;
        match &self.bias {
            Some(b) => {
                let b = mode.apply(b).reshape((1, (), 1, 1))?;
                Ok(y.broadcast_add(&b)?)
            }
            None => Ok(y),
        }
    }
}

/// Fully connected layer, `y = x Wᵀ + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    /// Uniform(±1/√fan_in) initialisation for weights and bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = store.register(
            &format!("{name}.weight"),
            &[d_out, d_in],
            uniform(rng, d_out * d_in, bound),
        )?;
        let bias = store.register(&format!("{name}.bias"), &[d_out], uniform(rng, d_out, bound))?;
        Ok(Self { weight, bias })
    }

    /// He-normal weights and zero bias, for layers followed by a ReLU.
    pub fn kaiming(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let weight = store.register(&format!("{name}.weight"), &[d_out, d_in], kaiming_normal(rng, d_out * d_in, d_in))?;
        let bias = store.register(&format!("{name}.bias"), &[d_out], vec![0.0; d_out])?;
        Ok(Self { weight, bias })
    }

    /// Like [`Linear::new`] but with explicit bias values.
    pub fn with_bias(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        weight_bound: f64,
        bias: Vec<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = store.register(
            &format!("{name}.weight"),
            &[d_out, d_in],
            uniform(rng, d_out * d_in, weight_bound),
        )?;
        let bias = store.register(&format!("{name}.bias"), &[d_out], bias)?;
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor, mode: ParamMode) -> Result<Tensor> {
        let w = mode.apply(&self.weight);
        let b = mode.apply(&self.bias);
        Ok(x.matmul(&w.t()?)?.broadcast_add(&b)?)
    }
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-sample, per-channel normalization over the spatial dims of an NCHW map.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim((2, 3))?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim((2, 3))?;
    Ok(centered.broadcast_div(&(var + INSTANCE_NORM_EPS)?.sqrt()?)?)
}

/// Reflection padding of one pixel on every side of an NCHW map.
pub fn reflect_pad1(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h < 2 || w < 2 {
        return Err(Error::arg("reflection padding needs at least 2x2 maps"));
    }
    let x = Tensor::cat(&[&x.narrow(3, 1, 1)?, x, &x.narrow(3, w - 2, 1)?], 3)?;
    Ok(Tensor::cat(&[&x.narrow(2, 1, 1)?, &x, &x.narrow(2, h - 2, 1)?], 2)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    // max(x, slope * x) for 0 < slope < 1
    Ok(x.maximum(&(x * slope)?)?)
}

/// `log σ(x)`, computed without overflow.
pub fn log_sigmoid(x: &Tensor) -> Result<Tensor> {
    // log σ(x) = min(x, 0) - log(1 + exp(-|x|))
    let min0 = x.minimum(0.0)?;
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((min0 - tail)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Reads a scalar tensor as `f64`.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?[0])
}

/// Errors if any element is NaN or infinite.
pub fn ensure_finite(t: &Tensor, what: &str) -> Result<()> {
    let v = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} contains non-finite values")))
    }
}

/// Row-wise L2 normalisation with an additive epsilon on the norm.
pub fn l2_normalize_rows(x: &Tensor, eps: f64) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    Ok(x.broadcast_div(&(norm + eps)?)?)
}

/// Optimizer hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. The learning rate is supplied per step so an
/// external schedule can drive it.
pub struct Adam {
    config: AdamConfig,
    params: Vec<(String, Var)>,
    first: HashMap<String, Tensor>,
    second: HashMap<String, Tensor>,
    steps: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let params = store.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        Self {
            config,
            params,
            first: HashMap::new(),
            second: HashMap::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, grads: &GradMap, lr: f64) -> Result<()> {
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.steps as i32);
        let bc2 = 1.0 - beta2.powi(self.steps as i32);
        for (name, var) in &self.params {
            let Some(g) = grads.get(name) else { continue };
            let g = g.detach();
            let m = match self.first.get(name) {
                Some(m) => ((m * beta1)? + (&g * (1.0 - beta1))?)?,
                None => (&g * (1.0 - beta1))?,
            };
            let v = match self.second.get(name) {
                Some(v) => ((v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?,
                None => (g.sqr()? * (1.0 - beta2))?,
            };
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + eps)?)?;
            let next = (var.as_tensor().detach() - (update * lr)?)?;
            var.set(&next)?;
            self.first.insert(name.clone(), m);
            self.second.insert(name.clone(), v);
        }
        Ok(())
    }

    /// Moment buffers keyed as `{prefix}m.{name}` / `{prefix}v.{name}`.
    pub fn export(&self, prefix: &str) -> HashMap<String, Tensor> {
        let mut out = HashMap::new();
        for (k, t) in &self.first {
            out.insert(format!("{prefix}m.{k}"), t.clone());
        }
        for (k, t) in &self.second {
            out.insert(format!("{prefix}v.{k}"), t.clone());
        }
        out
    }

    pub fn import(&mut self, tensors: &HashMap<String, Tensor>, prefix: &str, steps: u64) -> Result<()> {
        self.first.clear();
        self.second.clear();
        for (name, var) in &self.params {
            let device = var.device();
            if let Some(m) = tensors.get(&format!("{prefix}m.{name}")) {
                self.first.insert(name.clone(), m.to_dtype(var.dtype())?.to_device(device)?);
            }
            if let Some(v) = tensors.get(&format!("{prefix}v.{name}")) {
                self.second.insert(name.clone(), v.to_dtype(var.dtype())?.to_device(device)?);
            }
        }
        self.steps = steps;
        Ok(())
    }
}

/// Draws a fresh seed for a sub-component from a parent generator.
pub fn child_rng(rng: &mut ChaCha8Rng) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(rng.random())
}
