use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TrainConfig, Trainer};
use crate::bank::{BankState, StyleBank};
use crate::error::{Error, Result};
use crate::features::ExtractorWeights;
use crate::networks::CastModel;

pub const CHECKPOINT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const WEIGHTS: &str = "weights.safetensors";
const BANK: &str = "bank.safetensors";

/// `manifest.json` of a checkpoint directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub step: u64,
    pub config: TrainConfig,
    pub rng: ChaCha8Rng,
    pub optimizer_steps: BTreeMap<String, u64>,
    pub bank: BankState,
    pub backbone_taps: Vec<String>,
    pub backbone_width: usize,
    /// Whether the projector's data-dependent initialisation has run.
    #[serde(default)]
    pub projector_calibrated: bool,
}

impl CheckpointManifest {
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Self = serde_json::from_str(&text)?;
        if manifest.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {} (expected {CHECKPOINT_VERSION})",
                manifest.format_version
            )));
        }
        Ok(manifest)
    }
}

fn load_archive(path: &Path, device: &Device) -> Result<HashMap<String, Tensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    candle_core::safetensors::load_buffer(&bytes, device)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

fn strip_prefix(map: &HashMap<String, Tensor>, prefix: &str) -> HashMap<String, Tensor> {
    map.iter()
        .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
        .collect()
}

fn temp_sibling(dir: &Path, tag: &str) -> Result<PathBuf> {
    let name = dir
        .file_name()
        .ok_or_else(|| Error::arg(format!("checkpoint path {} has no file name", dir.display())))?
        .to_string_lossy()
        .into_owned();
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    Ok(parent.join(format!(".{name}.{tag}-{}", std::process::id())))
}

impl Trainer {
    fn checkpoint_tensors(&self) -> HashMap<String, Tensor> {
        let m = &self.model;
        let mut w = HashMap::new();
        for (k, t) in m.backbone.tensors() {
            w.insert(format!("backbone.{k}"), t.clone());
        }
        w.extend(m.projector.params().export("projector."));
        w.extend(m.generator.params().export("generator."));
        w.extend(m.d_real.params().export("d_real."));
        w.extend(self.opt_g.export("opt.generator."));
        w.extend(self.opt_msp.export("opt.projector."));
        w.extend(self.opt_d_real.export("opt.d_real."));
        if let Some(opt) = &self.opt_d_art {
            w.extend(m.d_art.params().export("d_art."));
            w.extend(opt.export("opt.d_art."));
        }
        w
    }

    fn manifest(&self) -> CheckpointManifest {
        let mut optimizer_steps = BTreeMap::new();
        optimizer_steps.insert("generator".to_string(), self.opt_g.steps());
        optimizer_steps.insert("projector".to_string(), self.opt_msp.steps());
        optimizer_steps.insert("d_real".to_string(), self.opt_d_real.steps());
        if let Some(opt) = &self.opt_d_art {
            optimizer_steps.insert("d_art".to_string(), opt.steps());
        }
        CheckpointManifest {
            format_version: CHECKPOINT_VERSION,
            step: self.step,
            config: self.config.clone(),
            rng: self.rng.clone(),
            optimizer_steps,
            bank: self.bank.state(),
            backbone_taps: self.model.backbone.taps().to_vec(),
            backbone_width: self.model.backbone.width(),
            projector_calibrated: self.calibrated,
        }
    }

    fn write_checkpoint_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        candle_core::safetensors::save(&self.checkpoint_tensors(), dir.join(WEIGHTS))?;
        candle_core::safetensors::save(&self.bank.export(&Device::Cpu)?, dir.join(BANK))?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        let path = dir.join(MANIFEST);
        std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    /// Writes a checkpoint directory atomically: files go to a temporary
    /// sibling that replaces `dir` only once complete.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = temp_sibling(dir, "tmp")?;
        let _ = std::fs::remove_dir_all(&tmp);
        if let Err(e) = self.write_checkpoint_files(&tmp) {
            let _ = std::fs::remove_dir_all(&tmp);
            return Err(e);
        }
        let old = temp_sibling(dir, "old")?;
        if dir.exists() {
            std::fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
        }
        if let Err(e) = std::fs::rename(&tmp, dir) {
            let _ = std::fs::rename(&old, dir);
            let _ = std::fs::remove_dir_all(&tmp);
            return Err(Error::io(dir, e));
        }
        let _ = std::fs::remove_dir_all(&old);
        Ok(())
    }

    /// Restores networks, optimizer moments, bank, RNG and step counter.
    pub fn load_checkpoint(dir: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = CheckpointManifest::read(dir)?;
        let weights = load_archive(&dir.join(WEIGHTS), device)?;
        let bank_tensors = load_archive(&dir.join(BANK), &Device::Cpu)?;

        let backbone = ExtractorWeights::from_tensors(
            strip_prefix(&weights, "backbone."),
            manifest.backbone_taps.clone(),
            manifest.backbone_width,
        )?;
        let mut trainer = Trainer::with_backbone(manifest.config.clone(), backbone)?;
        let m = &trainer.model;
        m.projector.params().import(&weights, "projector.")?;
        m.generator.params().import(&weights, "generator.")?;
        m.d_real.params().import(&weights, "d_real.")?;
        if !m.mixed_discriminator {
            m.d_art.params().import(&weights, "d_art.")?;
        }
        let steps = |k: &str| manifest.optimizer_steps.get(k).copied().unwrap_or(0);
        trainer.opt_g.import(&weights, "opt.generator.", steps("generator"))?;
        trainer.opt_msp.import(&weights, "opt.projector.", steps("projector"))?;
        trainer.opt_d_real.import(&weights, "opt.d_real.", steps("d_real"))?;
        if let Some(opt) = trainer.opt_d_art.as_mut() {
            opt.import(&weights, "opt.d_art.", steps("d_art"))?;
        }
        let bank = StyleBank::import(&manifest.bank, &bank_tensors)?;
        if bank.dims() != manifest.config.model.code_dims {
            return Err(Error::Checkpoint("bank dims differ from model code dims".into()));
        }
        trainer.bank = bank;
        trainer.rng = manifest.rng;
        trainer.step = manifest.step;
        trainer.calibrated = manifest.projector_calibrated;
        Ok(trainer)
    }
}

/// Loads only what inference needs from a checkpoint directory.
pub fn load_model(dir: impl AsRef<Path>, device: &Device) -> Result<CastModel> {
    Ok(Trainer::load_checkpoint(dir, device)?.model)
}
