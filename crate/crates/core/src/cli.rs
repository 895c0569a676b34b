//! The `cast` command line: train, stylize, evaluate and bank-inspect.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::Device;
use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::eval::{evaluate, labeled_images, PairManifest, StyleClassifier, StyleClassifierConfig, StylePredictor};
use crate::imaging::{load_image_for_stylize, load_image_on, save_png, Corpus, CorpusManifest, Domain};
use crate::trainer::{load_model, CheckpointManifest, FitOptions, TrainConfig, Trainer};

/// Exit status for a malformed command line.
pub const EXIT_USAGE: i32 = 1;
/// Exit status for a failure while running a well-formed command.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cast", version, about = "Contrastive arbitrary style transfer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a directory of paintings and a directory of photographs.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        art_dir: PathBuf,
        #[arg(long)]
        real_dir: PathBuf,
        /// Continue from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Run directory for the log, checkpoints and samples.
        #[arg(long, default_value = "runs/cast")]
        out: PathBuf,
    },
    /// Render a content image in the style of a style image.
    Stylize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute content loss, pair distance and deception rate over a pair list.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Labeled corpus manifest used to train the deception classifier.
        #[arg(long)]
        classifier_manifest: Option<PathBuf>,
    },
    /// Print bank occupancy and the most similar stored style pairs.
    BankInspect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 5)]
        top: usize,
        /// Code layer to compare, 0-based.
        #[arg(long, default_value_t = 3)]
        layer: usize,
    },
}

/// Compute device from `CAST_DEVICE` (only `cpu` is available).
pub fn device_from_env() -> Result<Device> {
    match std::env::var("CAST_DEVICE") {
        Err(_) => Ok(Device::Cpu),
        Ok(v) if v.eq_ignore_ascii_case("cpu") => Ok(Device::Cpu),
        Ok(v) => Err(Error::Config(format!("unsupported CAST_DEVICE {v:?}; this build supports only \"cpu\""))),
    }
}

/// Parses `argv` and runs the command, returning the process exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let informational = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let text = e.render().to_string();
            if informational {
                let _ = write!(out, "{text}");
                return 0;
            }
            let _ = write!(err, "{text}");
            return EXIT_USAGE;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    let device = device_from_env()?;
    match command {
        Command::Train {
            config,
            art_dir,
            real_dir,
            resume,
            out: run_dir,
        } => train(&config, &art_dir, &real_dir, resume.as_deref(), &run_dir, &device, out),
        Command::Stylize {
            ckpt,
            content,
            style,
            out: path,
        } => stylize(&ckpt, &content, &style, &path, &device, out),
        Command::Evaluate {
            ckpt,
            pairs,
            report,
            classifier_manifest,
        } => evaluate_cmd(&ckpt, &pairs, &report, classifier_manifest.as_deref(), &device, out),
        Command::BankInspect { ckpt, top, layer } => bank_inspect(&ckpt, top, layer, &device, out),
    }
}

fn say(out: &mut dyn Write, msg: impl std::fmt::Display) {
    let _ = writeln!(out, "{msg}");
}

fn train(
    config: &Path,
    art_dir: &Path,
    real_dir: &Path,
    resume: Option<&Path>,
    run_dir: &Path,
    device: &Device,
    out: &mut dyn Write,
) -> Result<()> {
    let config = TrainConfig::load(config)?;
    let mut trainer = match resume {
        Some(ckpt) => {
            let t = Trainer::load_checkpoint(ckpt, device)?;
            if t.config != config {
                log::warn!("resuming with the configuration stored in {}", ckpt.display());
            }
            t
        }
        None => Trainer::new(config, device)?,
    };
    let size = trainer.config.image_size;
    let mut art = Corpus::new(CorpusManifest::scan(art_dir, Domain::Artistic, size)?, device)?;
    let mut real = Corpus::new(CorpusManifest::scan(real_dir, Domain::Realistic, size)?, device)?;
    let opts = FitOptions {
        out_dir: Some(run_dir.to_path_buf()),
        until: None,
        log_every: 50,
    };
    let reports = trainer.fit(&mut art, &mut real, &opts)?;
    if let Some(last) = reports.last() {
        say(out, format!("step {} total {:.5}", last.step, last.total));
    }
    say(out, format!("checkpoint written to {}", run_dir.join(crate::trainer::FINAL_CHECKPOINT).display()));
    Ok(())
}

fn stylize(ckpt: &Path, content: &Path, style: &Path, path: &Path, device: &Device, out: &mut dyn Write) -> Result<()> {
    let size = CheckpointManifest::read(ckpt)?.config.image_size;
    let model = load_model(ckpt, device)?;
    let (content_img, (h, w)) = load_image_for_stylize(content, device)?;
    let style_img = load_image_on(style, size, device)?;
    let result = model.stylize_from_image(&content_img, &style_img)?;
    let mut rgb = result.to_rgb8(0)?;
    if (rgb.height() as usize, rgb.width() as usize) != (h, w) {
        rgb = image::imageops::resize(&rgb, w as u32, h as u32, image::imageops::FilterType::Triangle);
    }
    save_png(&rgb, path)?;
    say(out, format!("wrote {} ({w}x{h})", path.display()));
    Ok(())
}

fn evaluate_cmd(
    ckpt: &Path,
    pairs: &Path,
    report_path: &Path,
    classifier_manifest: Option<&Path>,
    device: &Device,
    out: &mut dyn Write,
) -> Result<()> {
    let size = CheckpointManifest::read(ckpt)?.config.image_size;
    let model = load_model(ckpt, device)?;
    let pairs = PairManifest::load(pairs)?;
    let classifier = match classifier_manifest {
        Some(path) => {
            let manifest = CorpusManifest::load(path)?;
            let labels = manifest.labels();
            let mut corpus = Corpus::new(manifest, device)?;
            let data = labeled_images(&mut corpus)?;
            Some(StyleClassifier::train(&model.extractor, &data, &StyleClassifierConfig::new(labels))?)
        }
        None => None,
    };
    let report = evaluate(&model, &pairs, size, classifier.as_ref().map(|c| c as &dyn StylePredictor))?;
    let json = serde_json::to_string_pretty(&report)?;
    let tmp = report_path.with_extension("json.partial");
    std::fs::write(&tmp, &json).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, report_path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(report_path, e)
    })?;
    say(out, json);
    Ok(())
}

fn bank_inspect(ckpt: &Path, top: usize, layer: usize, device: &Device, out: &mut dyn Write) -> Result<()> {
    let trainer = Trainer::load_checkpoint(ckpt, device)?;
    let bank = &trainer.bank;
    if layer >= bank.dims().len() {
        return Err(Error::arg(format!("layer {layer} out of range (bank has {} layers)", bank.dims().len())));
    }
    say(out, format!("step {}", trainer.step()));
    say(out, format!("occupancy {}/{}", bank.occupancy(), bank.capacity()));
    say(out, format!("dims {:?}", bank.dims()));
    say(out, format!("nearest pairs in layer {layer}:"));
    for (i, j, sim) in bank.nearest_pairs(layer, top) {
        say(out, format!("  {i:>5} {j:>5}  cos {sim:.4}"));
    }
    Ok(())
}
