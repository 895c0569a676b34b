//! Joint training loop: discriminator, generator and style-projector updates
//! with a shared memory bank, linear LR decay and checkpointing.

mod checkpoint;
mod config;

pub use checkpoint::{load_model, CheckpointManifest, CHECKPOINT_VERSION};
pub use config::{AblationFlags, TrainConfig};

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bank::StyleBank;
use crate::error::{Error, Result};
use crate::features::ExtractorWeights;
use crate::imaging::{augment_pair, augment_two_views, next_batch, save_image, Corpus, Domain, ImageTensor};
use crate::networks::CastModel;
use crate::nn::{accumulate_grads, scalar, Adam, GradMap, ParamMode};
use crate::objectives::{
    adversarial_loss_from_logits, fake_term, generator_term, gram_style_loss, info_nce, l1_mean, real_term,
    total_loss, LossReport,
};
use crate::projector::StyleCode;

/// Forward products of step (1), shared by the discriminator and generator
/// updates.
pub struct Generated {
    pub contents: ImageTensor,
    pub styles: ImageTensor,
    /// Code of each content image; conditions `I_sc` and the style cycle.
    pub content_code: StyleCode,
    /// Code of each style image (ẑ); conditions `I_cs` and is the positive of
    /// the generator contrastive loss.
    pub style_code: StyleCode,
    pub i_cs: ImageTensor,
    pub i_sc: Option<ImageTensor>,
}

/// Generator-side terms of one step, still attached to the graph.
pub struct GeneratorTerms {
    pub adv: Tensor,
    pub cyc: Tensor,
    pub contra_g: Tensor,
    pub total: Tensor,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: CastModel,
    pub bank: StyleBank,
    opt_g: Adam,
    opt_d_real: Adam,
    opt_d_art: Option<Adam>,
    opt_msp: Adam,
    rng: ChaCha8Rng,
    step: u64,
    calibrated: bool,
}

/// Paintings used for the projector's data-dependent initialisation.
pub const CALIBRATION_IMAGES: usize = 64;

fn zero(like: &Tensor) -> Result<Tensor> {
    Ok(Tensor::zeros((), like.dtype(), like.device())?)
}

fn shape_check(img: &ImageTensor, size: usize, batch: usize, what: &str) -> Result<()> {
    if img.height() != size || img.width() != size || img.batch() != batch {
        return Err(Error::arg(format!(
            "{what} batch has shape {}x{}x{}, expected {batch}x{size}x{size}",
            img.batch(),
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

impl Trainer {
    pub fn new(config: TrainConfig, device: &Device) -> Result<Self> {
        config.validate()?;
        let backbone = match &config.backbone_weights {
            Some(path) => ExtractorWeights::load(path, device)?,
            None => ExtractorWeights::for_model(&config.model, device)?,
        };
        Self::with_backbone(config, backbone)
    }

    /// Uses the given backbone instead of seeded random weights.
    pub fn with_backbone(config: TrainConfig, backbone: ExtractorWeights) -> Result<Self> {
        config.validate()?;
        let model = CastModel::with_backbone(&config.model, backbone, config.flags.mix_de)?;
        let bank = StyleBank::new(&config.model.code_dims, config.bank_capacity)?;
        let opt_g = Adam::new(model.generator.params(), config.adam);
        let opt_d_real = Adam::new(model.d_real.params(), config.adam);
        let opt_d_art = (!config.flags.mix_de).then(|| Adam::new(model.d_art.params(), config.adam));
        let opt_msp = Adam::new(model.projector.params(), config.adam);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            model,
            bank,
            opt_g,
            opt_d_real,
            opt_d_art,
            opt_msp,
            rng,
            step: 0,
            calibrated: false,
        })
    }

    /// Standardizes the projector's input statistics on `styles` (see
    /// [`StyleProjector::calibrate`](crate::projector::StyleProjector::calibrate)).
    /// [`Trainer::fit`] does this once before the first step.
    pub fn calibrate_projector(&mut self, styles: &ImageTensor) -> Result<()> {
        let features = self.model.extractor.extract(styles)?;
        self.model.projector.calibrate(&features)?;
        self.calibrated = true;
        Ok(())
    }

    /// Number of completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.config.lr_at(self.step)
    }

    fn msp_mode(&self) -> ParamMode {
        if self.config.flags.joint_msp_grad {
            ParamMode::Track
        } else {
            ParamMode::Detach
        }
    }

    /// Step (1): `I_cs = G(I_c, ẑ)` and, unless `one_de`, `I_sc = G(I_s, z_c)`.
    pub fn generate(&self, contents: &ImageTensor, styles: &ImageTensor) -> Result<Generated> {
        let mode = self.msp_mode();
        let style_code = self.model.style_code(styles, mode)?;
        let content_code = self.model.style_code(contents, mode)?;
        let i_cs = self.model.stylize(contents, &style_code)?;
        let i_sc = if self.config.flags.uses_reverse_branch() {
            Some(self.model.stylize(styles, &content_code)?)
        } else {
            None
        };
        Ok(Generated {
            contents: contents.clone(),
            styles: styles.clone(),
            content_code,
            style_code,
            i_cs,
            i_sc,
        })
    }

    fn logits(&self, img: &ImageTensor, domain: Domain) -> Result<Tensor> {
        Ok(self.model.discriminate(img, domain)?.logits)
    }

    /// Discriminator loss on detached fakes. `D_R` separates `I_c` from
    /// `I_sc`; `D_A` separates `I_s` from `I_cs`.
    pub fn discriminator_loss(&self, g: &Generated) -> Result<Tensor> {
        let i_cs = g.i_cs.detach();
        if self.config.flags.one_de {
            let real = self.logits(&g.styles, Domain::Artistic)?;
            let fake = self.logits(&i_cs, Domain::Artistic)?;
            return Ok((real_term(&real)? + fake_term(&fake)?)?);
        }
        let i_sc = g.i_sc.as_ref().expect("reverse branch present").detach();
        let loss = adversarial_loss_from_logits(
            &self.logits(&g.contents, Domain::Realistic)?,
            &self.logits(&i_sc, Domain::Realistic)?,
            &self.logits(&g.styles, Domain::Artistic)?,
            &self.logits(&i_cs, Domain::Artistic)?,
        )?;
        Ok(loss.d_loss)
    }

    /// Step (2). Returns the discriminator loss, or 0 under `no_de`.
    pub fn discriminator_update(&mut self, g: &Generated, lr: f64) -> Result<f64> {
        if self.config.flags.no_de {
            return Ok(0.0);
        }
        let loss = self.discriminator_loss(g)?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Err(Error::Numeric("discriminator loss is not finite".into()));
        }
        let grads = loss.backward()?;
        self.opt_d_real.step(&self.model.d_real.params().grads(&grads), lr)?;
        if let Some(opt) = self.opt_d_art.as_mut() {
            opt.step(&self.model.d_art.params().grads(&grads), lr)?;
        }
        Ok(value)
    }

    /// Generator objective `λ1·adv + λ2·cyc + λ3·contra_g`, with the terms
    /// retargeted by the ablation flags.
    pub fn generator_terms(&self, g: &Generated) -> Result<GeneratorTerms> {
        let flags = self.config.flags;
        let w = &self.config.weights;
        let anchor_like = g.i_cs.tensor();

        let adv = if flags.no_de {
            zero(anchor_like)?.mean_all()?
        } else {
            let sat = !flags.non_saturating_generator;
            let art = generator_term(&self.logits(&g.i_cs, Domain::Artistic)?, sat)?;
            match &g.i_sc {
                Some(i_sc) if !flags.one_de => (generator_term(&self.logits(i_sc, Domain::Realistic)?, sat)? + art)?,
                _ => art,
            }
        };

        let rec_c = self.model.stylize(&g.i_cs, &g.content_code)?;
        let mut cyc = l1_mean(g.contents.tensor(), rec_c.tensor())?;
        if flags.uses_full_cycle() {
            let i_sc = g.i_sc.as_ref().expect("reverse branch present");
            let rec_s = self.model.stylize(i_sc, &g.style_code)?;
            cyc = (cyc + l1_mean(g.styles.tensor(), rec_s.tensor())?)?;
        }

        let out_features = self.model.extractor.extract(&g.i_cs)?;
        let contra_g = if flags.gram_substitute {
            let style_features = self.model.extractor.extract(&g.styles)?.detach();
            gram_style_loss(&out_features, &style_features)?
        } else {
            let anchor = self.model.projector.project(&out_features, self.msp_mode())?;
            let negatives = self.bank.negatives(anchor_like.dtype(), anchor_like.device())?;
            let positive = if flags.joint_msp_grad {
                g.style_code.clone()
            } else {
                g.style_code.detach()
            };
            info_nce(&anchor, &positive, &negatives, w.tau)?
        };

        let total = total_loss(&adv, &cyc, &contra_g, w)?;
        Ok(GeneratorTerms {
            adv,
            cyc,
            contra_g,
            total,
        })
    }

    /// Step (3). Only generator parameters move; with `joint_msp_grad` the
    /// projector gradients are returned for the projector update.
    pub fn generator_update(&mut self, g: &Generated, lr: f64) -> Result<(GeneratorTerms, GradMap)> {
        let terms = self.generator_terms(g)?;
        let grads = terms.total.backward()?;
        self.opt_g.step(&self.model.generator.params().grads(&grads), lr)?;
        let msp_grads = if self.config.flags.joint_msp_grad {
            self.model.projector.params().grads(&grads)
        } else {
            GradMap::new()
        };
        Ok((terms, msp_grads))
    }

    /// Positive pairs `(I, I⁺)` for each style image.
    pub fn positive_pairs(&mut self, styles: &ImageTensor) -> Result<(ImageTensor, ImageTensor)> {
        let spec = self.config.augment_spec();
        let mut anchors = Vec::with_capacity(styles.batch());
        let mut positives = Vec::with_capacity(styles.batch());
        for i in 0..styles.batch() {
            let img = styles.get(i)?;
            let (a, p) = if self.config.flags.aug_aug_positive {
                augment_two_views(&img, &spec, &mut self.rng)?
            } else {
                augment_pair(&img, &spec, &mut self.rng)?
            };
            anchors.push(a);
            positives.push(p);
        }
        Ok((ImageTensor::cat(&anchors)?, ImageTensor::cat(&positives)?))
    }

    /// Projector contrastive loss of a positive pair against the bank.
    pub fn projector_loss(&self, anchors: &ImageTensor, positives: &ImageTensor) -> Result<Tensor> {
        let a = self.model.style_code(anchors, ParamMode::Track)?;
        let p = self.model.style_code(positives, ParamMode::Track)?;
        let first = &a.codes[0];
        let negatives = self.bank.negatives(first.dtype(), first.device())?;
        info_nce(&a, &p, &negatives, self.config.weights.tau)
    }

    /// Step (4). `extra` holds generator-side projector gradients, if any.
    pub fn projector_update(&mut self, styles: &ImageTensor, extra: GradMap, lr: f64) -> Result<f64> {
        let (anchors, positives) = self.positive_pairs(styles)?;
        let loss = self.projector_loss(&anchors, &positives)?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Err(Error::Numeric("contra_msp term is not finite".into()));
        }
        let mut grads = self.model.projector.params().grads(&loss.backward()?);
        accumulate_grads(&mut grads, extra)?;
        self.opt_msp.step(&grads, lr)?;
        Ok(value)
    }

    /// One full step on a `(contents, styles)` batch.
    pub fn train_step(&mut self, contents: &ImageTensor, styles: &ImageTensor) -> Result<LossReport> {
        let size = self.config.image_size;
        shape_check(contents, size, self.config.batch, "content")?;
        shape_check(styles, size, self.config.batch, "style")?;
        let lr = self.lr();
        let step = self.step + 1;

        if self.step < self.config.msp_pretrain_steps {
            let style_code = self.model.style_code(styles, ParamMode::Detach)?;
            let contra_msp = self.projector_update(styles, GradMap::new(), lr)?;
            self.bank.push(&style_code)?;
            self.step = step;
            return self.finish_report(LossReport {
                step,
                adv: 0.0,
                cyc: 0.0,
                contra_msp,
                contra_g: 0.0,
                total: 0.0,
                lr,
            });
        }

        let generated = self.generate(contents, styles)?;
        self.discriminator_update(&generated, lr * self.config.d_lr_scale)?;
        let (terms, msp_grads) = self.generator_update(&generated, lr)?;
        let contra_msp = self.projector_update(styles, msp_grads, lr)?;
        self.bank.push(&generated.style_code.detach())?;
        self.step = step;

        let adv = scalar(&terms.adv)?;
        let cyc = scalar(&terms.cyc)?;
        let contra_g = scalar(&terms.contra_g)?;
        self.finish_report(LossReport {
            step,
            adv,
            cyc,
            contra_msp,
            contra_g,
            total: self.config.weights.combine(adv, cyc, contra_g),
            lr,
        })
    }

    fn finish_report(&self, report: LossReport) -> Result<LossReport> {
        if let Some(term) = report.non_finite_term() {
            return Err(Error::Numeric(format!(
                "{term} term is not finite at step {}: {}",
                report.step,
                report.csv_row()
            )));
        }
        Ok(report)
    }

    /// Draws a batch from the corpora with the trainer's own RNG.
    pub fn next_batch(&mut self, artistic: &mut Corpus, realistic: &mut Corpus) -> Result<(ImageTensor, ImageTensor)> {
        next_batch(artistic, realistic, self.config.batch, &mut self.rng)
    }

    /// Trains until `opts.until` (default: `iterations`), appending to the
    /// CSV log and writing checkpoints and samples under `opts.out_dir`.
    pub fn fit(&mut self, artistic: &mut Corpus, realistic: &mut Corpus, opts: &FitOptions) -> Result<Vec<LossReport>> {
        let until = opts.until.unwrap_or(self.config.iterations).min(self.config.iterations);
        for (c, name) in [(&*artistic, "artistic"), (&*realistic, "realistic")] {
            c.manifest().validate()?;
            if c.manifest().size != self.config.image_size {
                return Err(Error::Config(format!(
                    "{name} corpus is {}px, config expects {}px",
                    c.manifest().size,
                    self.config.image_size
                )));
            }
        }
        let mut log = match &opts.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                Some(TrainLog::open(&dir.join(LOG_FILE), self.step)?)
            }
            None => None,
        };
        if self.step == 0 && !self.calibrated {
            let n = artistic.len().min(CALIBRATION_IMAGES);
            let sample = artistic.gather(&(0..n).collect::<Vec<_>>())?;
            self.calibrate_projector(&sample)?;
        }
        let mut reports = Vec::new();
        while self.step < until {
            let (contents, styles) = self.next_batch(artistic, realistic)?;
            let report = self.train_step(&contents, &styles)?;
            if let Some(log) = log.as_mut() {
                log.append(&report)?;
            }
            if opts.log_every > 0 && report.step % opts.log_every == 0 {
                log::info!(
                    "step {} total {:.4} adv {:.4} cyc {:.4} contra_g {:.4} contra_msp {:.4} lr {:.2e}",
                    report.step,
                    report.total,
                    report.adv,
                    report.cyc,
                    report.contra_g,
                    report.contra_msp,
                    report.lr
                );
            }
            reports.push(report);
            if let Some(dir) = &opts.out_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && self.step % every == 0 && self.step < until {
                    self.save_checkpoint(dir.join(format!("step-{:08}", self.step)))?;
                }
                let every = self.config.sample_every;
                if every > 0 && self.step % every == 0 {
                    self.write_sample(&contents, &styles, &dir.join("samples").join(format!("step-{:08}.png", self.step)))?;
                }
            }
        }
        if let Some(dir) = &opts.out_dir {
            self.save_checkpoint(dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(reports)
    }

    fn write_sample(&self, contents: &ImageTensor, styles: &ImageTensor, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let out = self.model.stylize_from_image(&contents.get(0)?, &styles.get(0)?)?;
        save_image(&out, 0, path)
    }
}

/// Name of the CSV log inside a run directory.
pub const LOG_FILE: &str = "train_log.csv";
/// Name of the last checkpoint inside a run directory.
pub const FINAL_CHECKPOINT: &str = "final";

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    pub out_dir: Option<PathBuf>,
    /// Stop after this step instead of `iterations`.
    pub until: Option<u64>,
    /// Progress logging cadence; 0 disables it.
    pub log_every: u64,
}

struct TrainLog {
    file: std::fs::File,
    path: PathBuf,
}

impl TrainLog {
    /// Opens for appending, dropping rows past `keep_until` left behind by a
    /// run that continued beyond the checkpoint being resumed.
    fn open(path: &Path, keep_until: u64) -> Result<Self> {
        let fresh = !path.exists();
        if !fresh {
            let kept: Vec<LossReport> = read_log(path)?.into_iter().filter(|r| r.step <= keep_until).collect();
            let mut text = format!("{}\n", LossReport::CSV_HEADER);
            for r in &kept {
                text.push_str(&r.csv_row());
                text.push('\n');
            }
            std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if fresh {
            writeln!(file, "{}", LossReport::CSV_HEADER).map_err(|e| Error::io(path, e))?;
        }
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    fn append(&mut self, r: &LossReport) -> Result<()> {
        writeln!(self.file, "{}", r.csv_row()).map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a CSV training log back into reports.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LossReport>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == LossReport::CSV_HEADER => {}
        _ => return Err(Error::arg(format!("{} is not a training log", path.display()))),
    }
    lines.filter(|l| !l.trim().is_empty()).map(LossReport::parse_csv_row).collect()
}
