//! Run a few steps under each ablation flag and show which loss terms move.

use candle_core::Device;
use cast_core::imaging::{Corpus, CorpusManifest, Domain};
use cast_core::toy::write_toy_corpora;
use cast_core::trainer::{AblationFlags, FitOptions};
use cast_core::{TrainConfig, Trainer};

fn main() -> cast_core::Result<()> {
    let dir = std::env::temp_dir().join("cast-ablations");
    let data = write_toy_corpora(&dir, 4, 8, 64, 1)?;
    let device = Device::Cpu;
    let variants: [(&str, fn(&mut AblationFlags)); 6] = [
        ("full", |_| {}),
        ("no_de", |f| f.no_de = true),
        ("mix_de", |f| f.mix_de = true),
        ("one_de", |f| f.one_de = true),
        ("half_cycle", |f| f.half_cycle = true),
        ("gram_substitute", |f| f.gram_substitute = true),
    ];
    println!("{:<16} {:>8} {:>8} {:>10} {:>10}", "variant", "adv", "cyc", "contra_g", "total");
    for (name, set) in variants {
        let mut config = TrainConfig::desk(3);
        set(&mut config.flags);
        let mut art = Corpus::new(CorpusManifest::scan(&data.artistic, Domain::Artistic, 64)?, &device)?;
        let mut real = Corpus::new(CorpusManifest::scan(&data.realistic, Domain::Realistic, 64)?, &device)?;
        let mut trainer = Trainer::new(config, &device)?;
        let reports = trainer.fit(&mut art, &mut real, &FitOptions::default())?;
        let r = reports.last().expect("at least one step");
        println!("{name:<16} {:>8.4} {:>8.4} {:>10.4} {:>10.4}", r.adv, r.cyc, r.contra_g, r.total);
    }
    Ok(())
}
