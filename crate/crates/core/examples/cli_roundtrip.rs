//! Drive the command-line entry point in-process: train briefly, stylize,
//! and inspect the bank.

use cast_core::cli::run;
use cast_core::toy::write_toy_corpora;

fn main() -> cast_core::Result<()> {
    let dir = std::env::temp_dir().join("cast-cli");
    let data = write_toy_corpora(&dir, 3, 6, 64, 4)?;
    let config = dir.join("train.toml");
    std::fs::write(&config, "iterations = 4\nimage_size = 64\ncheckpoint_every = 0\n[model]\nbackbone_width = 8\ncode_dims = [32, 64, 128, 128]\nmodulation_hidden = 32\ndiscriminator_width = 8\nseed = 0\n")
        .map_err(|e| cast_core::Error::io(&config, e))?;
    let run_dir = dir.join("run");
    let s = |p: &std::path::Path| p.display().to_string();
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    let code = run(
        ["cast", "train", "--config", &s(&config), "--art-dir", &s(&data.artistic), "--real-dir", &s(&data.realistic), "--out", &s(&run_dir)],
        &mut out,
        &mut err,
    );
    println!("train exit {code}");
    let ckpt = run_dir.join("final");
    let code = run(
        [
            "cast", "stylize", "--ckpt", &s(&ckpt),
            "--content", &s(&data.realistic.join("000.png")),
            "--style", &s(&data.artistic.join("dots").join("000.png")),
            "--out", &s(&dir.join("stylized.png")),
        ],
        &mut out,
        &mut err,
    );
    println!("stylize exit {code}");
    let code = run(["cast", "bank-inspect", "--ckpt", &s(&ckpt)], &mut out, &mut err);
    println!("bank-inspect exit {code}");
    Ok(())
}
