use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use candle_core::Device;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_image_on, ImageTensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Artistic,
    Realistic,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Artistic => "artistic",
            Domain::Realistic => "realistic",
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "artistic" => Ok(Domain::Artistic),
            "realistic" => Ok(Domain::Realistic),
            other => Err(Error::arg(format!("unknown domain tag {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// An ordered list of images from one domain.
///
/// Serialized as `{domain, size, entries: [{path, label?}]}`. Relative entry
/// paths are resolved against `root`, which is the manifest file's directory
/// when loaded from disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub domain: Domain,
    pub size: usize,
    pub entries: Vec<ManifestEntry>,
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn collect_images(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_images(&path, out)?;
        } else if is_image(&path) {
            out.push(path);
        }
    }
    Ok(())
}

impl CorpusManifest {
    /// Builds a manifest from every PNG/JPEG under `dir`. Images inside a
    /// subdirectory get that subdirectory's name as their label.
    pub fn scan(dir: impl AsRef<Path>, domain: Domain, size: usize) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let mut files = Vec::new();
        collect_images(&root, &mut files)?;
        files.sort();
        let entries = files
            .into_iter()
            .map(|p| {
                let rel = p.strip_prefix(&root).unwrap_or(&p).to_path_buf();
                let label = rel
                    .parent()
                    .and_then(|parent| parent.components().next())
                    .map(|c| c.as_os_str().to_string_lossy().into_owned());
                ManifestEntry { path: rel, label }
            })
            .collect();
        Ok(Self {
            root,
            domain,
            size,
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: CorpusManifest = serde_json::from_str(&text)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, i: usize) -> PathBuf {
        let p = &self.entries[i].path;
        if p.is_absolute() {
            p.clone()
        } else {
            self.root.join(p)
        }
    }

    /// Sorted set of distinct labels.
    pub fn labels(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter_map(|e| e.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Checks that every entry exists and decodes.
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::Config("manifest size must be positive".into()));
        }
        for i in 0..self.len() {
            load_image_on(self.resolve(i), self.size, &Device::Cpu)?;
        }
        Ok(())
    }
}

/// Images of one manifest, decoded lazily and kept in memory.
#[derive(Debug)]
pub struct Corpus {
    manifest: CorpusManifest,
    device: Device,
    cache: Vec<Option<ImageTensor>>,
}

impl Corpus {
    pub fn new(manifest: CorpusManifest, device: &Device) -> Result<Self> {
        if manifest.is_empty() {
            return Err(Error::Config(format!("{:?} corpus is empty", manifest.domain)));
        }
        let n = manifest.len();
        Ok(Self {
            manifest,
            device: device.clone(),
            cache: vec![None; n],
        })
    }

    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    pub fn image(&mut self, i: usize) -> Result<ImageTensor> {
        if let Some(img) = &self.cache[i] {
            return Ok(img.clone());
        }
        let img = load_image_on(self.manifest.resolve(i), self.manifest.size, &self.device)?;
        self.cache[i] = Some(img.clone());
        Ok(img)
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        self.manifest.entries[i].label.as_deref()
    }

    /// Uniform sampling with replacement.
    pub fn sample_indices(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..count).map(|_| rng.random_range(0..self.len())).collect()
    }

    pub fn gather(&mut self, indices: &[usize]) -> Result<ImageTensor> {
        let imgs = indices
            .iter()
            .map(|&i| self.image(i))
            .collect::<Result<Vec<_>>>()?;
        ImageTensor::cat(&imgs)
    }
}

/// Draws `(contents, styles)`: `batch` realistic and `batch` artistic images,
/// each sampled independently and uniformly with replacement.
pub fn next_batch(
    artistic: &mut Corpus,
    realistic: &mut Corpus,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(ImageTensor, ImageTensor)> {
    if batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if artistic.is_empty() || realistic.is_empty() {
        return Err(Error::Config("both corpora must be non-empty".into()));
    }
    let content_idx = realistic.sample_indices(batch, rng);
    let style_idx = artistic.sample_indices(batch, rng);
    Ok((realistic.gather(&content_idx)?, artistic.gather(&style_idx)?))
}
