//! Desk-scale metrics: backbone content distance and classifier deception.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::imaging::{load_image_on, Corpus, ImageTensor};
use crate::networks::CastModel;
use crate::nn::{scalar, Adam, AdamConfig, Linear, ParamMode, ParamStore};

/// Mean squared difference of the `relu4_1` maps, i.e. the squared L2
/// distance divided by the number of feature elements.
pub fn content_loss(extractor: &FeatureExtractor, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if a.tensor().dims() != b.tensor().dims() {
        return Err(Error::arg(format!(
            "content_loss shape mismatch {:?} vs {:?}",
            a.tensor().dims(),
            b.tensor().dims()
        )));
    }
    let fa = extractor.content_features(a)?;
    let fb = extractor.content_features(b)?;
    scalar(&(fa - fb)?.sqr()?.mean_all()?)
}

/// Same metric as [`content_loss`], applied to an arbitrary image pair.
pub fn perceptual_distance(extractor: &FeatureExtractor, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    content_loss(extractor, a, b)
}

/// Anything that assigns one of a fixed set of style labels to images.
pub trait StylePredictor {
    fn labels(&self) -> &[String];
    /// Predicted class index for each image of the batch.
    fn predict(&self, img: &ImageTensor) -> Result<Vec<usize>>;
}

/// Fraction of images whose predicted label equals their target label.
pub fn deception_rate<P: StylePredictor + ?Sized>(items: &[(ImageTensor, String)], clf: &P) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::arg("deception rate of an empty set is undefined"));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (img, label) in items {
        let target = clf
            .labels()
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::arg(format!("label {label:?} is not known to the classifier")))?;
        for p in clf.predict(img)? {
            hits += usize::from(p == target);
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleClassifierConfig {
    pub labels: Vec<String>,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl StyleClassifierConfig {
    pub fn new(labels: Vec<String>) -> Self {
        Self {
            labels,
            epochs: 300,
            lr: 1e-2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() < 2 {
            return Err(Error::Config("a style classifier needs at least 2 classes".into()));
        }
        if self.epochs == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("classifier epochs and lr must be positive".into()));
        }
        Ok(())
    }
}

/// Linear head over globally pooled backbone features (mean and max of every
/// tap), trained with cross-entropy on standardized features.
pub struct StyleClassifier {
    extractor: FeatureExtractor,
    labels: Vec<String>,
    mean: Tensor,
    std: Tensor,
    head: Linear,
}

fn pooled_features(extractor: &FeatureExtractor, img: &ImageTensor) -> Result<Tensor> {
    let pyramid = extractor.extract(img)?;
    let mut parts = Vec::new();
    for m in &pyramid.maps {
        let flat = m.flatten_from(2)?;
        parts.push(flat.mean(D::Minus1)?);
        parts.push(flat.max(D::Minus1)?);
    }
    Ok(Tensor::cat(&parts, 1)?.to_dtype(DType::F32)?)
}

fn log_softmax(logits: &Tensor) -> Result<Tensor> {
    let lse = logits.log_sum_exp(D::Minus1)?.unsqueeze(1)?;
    Ok(logits.broadcast_sub(&lse)?)
}

impl StyleClassifier {
    /// Trains on labeled images; every label must be in `config.labels`.
    pub fn train(extractor: &FeatureExtractor, data: &[(ImageTensor, String)], config: &StyleClassifierConfig) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::arg("no training images for the style classifier"));
        }
        let mut feats = Vec::new();
        let mut targets = Vec::new();
        for (img, label) in data {
            let idx = config
                .labels
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::Config(format!("label {label:?} missing from the classifier label set")))?;
            let f = pooled_features(extractor, img)?;
            targets.extend(std::iter::repeat_n(idx, f.dims()[0]));
            feats.push(f);
        }
        let x = Tensor::cat(&feats, 0)?;
        let device = x.device().clone();
        let (n, d) = x.dims2()?;
        let mean = x.mean_keepdim(0)?;
        let std = (x.broadcast_sub(&mean)?.sqr()?.mean_keepdim(0)?.sqrt()? + 1e-6)?;
        let xs = x.broadcast_sub(&mean)?.broadcast_div(&std)?;

        let k = config.labels.len();
        let mut onehot = vec![0f32; n * k];
        for (i, &t) in targets.iter().enumerate() {
            onehot[i * k + t] = 1.0;
        }
        let onehot = Tensor::from_vec(onehot, (n, k), &device)?;

        let mut store = ParamStore::new(DType::F32, &device);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let head = Linear::new(&mut store, "head", d, k, &mut rng)?;
        let mut opt = Adam::new(
            &store,
            AdamConfig {
                beta1: 0.9,
                ..AdamConfig::default()
            },
        );
        for _ in 0..config.epochs {
            let logp = log_softmax(&head.forward(&xs, ParamMode::Track)?)?;
            let loss = ((logp * &onehot)?.sum_all()? / -(n as f64))?;
            let grads = loss.backward()?;
            opt.step(&store.grads(&grads), config.lr)?;
        }
        Ok(Self {
            extractor: extractor.clone(),
            labels: config.labels.clone(),
            mean,
            std,
            head,
        })
    }

    /// Fraction of correctly classified images.
    pub fn accuracy(&self, data: &[(ImageTensor, String)]) -> Result<f64> {
        deception_rate(data, self)
    }
}

impl StylePredictor for StyleClassifier {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn predict(&self, img: &ImageTensor) -> Result<Vec<usize>> {
        let f = pooled_features(&self.extractor, img)?;
        let xs = f.broadcast_sub(&self.mean)?.broadcast_div(&self.std)?;
        let logits = self.head.forward(&xs, ParamMode::Detach)?;
        Ok(logits.argmax(D::Minus1)?.to_vec1::<u32>()?.into_iter().map(|i| i as usize).collect())
    }
}

/// Loads every labeled image of a corpus as classifier training data.
pub fn labeled_images(corpus: &mut Corpus) -> Result<Vec<(ImageTensor, String)>> {
    (0..corpus.len())
        .map(|i| {
            let label = corpus
                .label(i)
                .ok_or_else(|| Error::Config(format!("entry {i} of the corpus has no label")))?
                .to_string();
            Ok((corpus.image(i)?, label))
        })
        .collect()
}

/// One `(content, style)` pair to evaluate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub content: PathBuf,
    pub style: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_label: Option<String>,
}

/// JSON list of pairs; relative paths resolve against the file's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct PairManifest {
    pub root: PathBuf,
    pub pairs: Vec<EvalPair>,
}

impl PairManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let pairs: Vec<EvalPair> = serde_json::from_str(&text)?;
        if pairs.is_empty() {
            return Err(Error::Config(format!("{} lists no pairs", path.display())));
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, pairs })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(&self.pairs)?).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub content_loss: f64,
    pub perceptual_pair_distance: f64,
    /// `None` when no classifier was supplied or no pair has a target label.
    pub deception_rate: Option<f64>,
    pub n: usize,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Numeric("evaluation over zero samples".into()));
        }
        if !self.content_loss.is_finite() || !self.perceptual_pair_distance.is_finite() {
            return Err(Error::Numeric("evaluation produced a non-finite distance".into()));
        }
        if let Some(d) = self.deception_rate {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::Numeric(format!("deception rate {d} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Stylizes every pair at `size`×`size` and averages the metrics.
pub fn evaluate(
    model: &CastModel,
    pairs: &PairManifest,
    size: usize,
    classifier: Option<&dyn StylePredictor>,
) -> Result<EvalReport> {
    let device: Device = model.device().clone();
    let mut content_sum = 0.0;
    let mut pair_sum = 0.0;
    let mut labeled = Vec::new();
    let mut cache: HashMap<PathBuf, ImageTensor> = HashMap::new();
    let mut load = |p: PathBuf| -> Result<ImageTensor> {
        if let Some(img) = cache.get(&p) {
            return Ok(img.clone());
        }
        let img = load_image_on(&p, size, &device)?;
        cache.insert(p, img.clone());
        Ok(img)
    };
    for pair in &pairs.pairs {
        let content = load(pairs.resolve(&pair.content))?;
        let style = load(pairs.resolve(&pair.style))?;
        let out = model.stylize_from_image(&content, &style)?;
        content_sum += content_loss(&model.extractor, &content, &out)?;
        pair_sum += perceptual_distance(&model.extractor, &out, &style)?;
        if let Some(label) = &pair.target_label {
            labeled.push((out, label.clone()));
        }
    }
    let n = pairs.pairs.len();
    let deception = match classifier {
        Some(clf) if !labeled.is_empty() => Some(deception_rate(&labeled, clf)?),
        _ => None,
    };
    let report = EvalReport {
        content_loss: content_sum / n as f64,
        perceptual_pair_distance: pair_sum / n as f64,
        deception_rate: deception,
        n,
    };
    report.validate()?;
    Ok(report)
}
