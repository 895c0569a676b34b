//! Train on generated toy corpora: `cargo run --release --example train_toy -- [steps] [out_dir]`.

use candle_core::Device;
use cast_core::imaging::{Corpus, CorpusManifest, Domain};
use cast_core::toy::write_toy_corpora;
use cast_core::trainer::{read_log, FitOptions, LOG_FILE};
use cast_core::{TrainConfig, Trainer};

fn main() -> cast_core::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "runs/toy".into()));

    let data = write_toy_corpora(out.join("data"), 20, 60, 64, 0)?;
    let mut config = TrainConfig::desk(steps);
    // The toy corpora are tiny; a higher rate and a small bank suit them.
    config.lr = 1e-3;
    config.bank_capacity = 64;
    config.msp_pretrain_steps = steps / 8;
    config.sample_every = (steps / 4).max(1);
    let device = Device::Cpu;
    let mut art = Corpus::new(CorpusManifest::scan(&data.artistic, Domain::Artistic, 64)?, &device)?;
    let mut real = Corpus::new(CorpusManifest::scan(&data.realistic, Domain::Realistic, 64)?, &device)?;

    let mut trainer = Trainer::new(config, &device)?;
    let opts = FitOptions {
        out_dir: Some(out.clone()),
        log_every: 25,
        ..FitOptions::default()
    };
    trainer.fit(&mut art, &mut real, &opts)?;
    let log = read_log(out.join(LOG_FILE))?;
    println!("{} log rows, final total {:.4}", log.len(), log.last().map(|r| r.total).unwrap_or(f64::NAN));
    println!("bank occupancy {}", trainer.bank.occupancy());
    Ok(())
}
