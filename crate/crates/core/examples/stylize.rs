//! Stylize a toy photograph with two toy paintings using an untrained model.
//! Writes PNGs to the directory given as the first argument (default `out`).

use candle_core::Device;
use cast_core::imaging::{load_image, save_image};
use cast_core::toy::write_toy_corpora;
use cast_core::{CastModel, ModelConfig};

fn main() -> cast_core::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out".into()));
    std::fs::create_dir_all(&out).map_err(|e| cast_core::Error::io(&out, e))?;
    let data = write_toy_corpora(out.join("toy"), 1, 1, 64, 3)?;
    let model = CastModel::new(&ModelConfig::desk(), &Device::Cpu)?;
    let content = load_image(data.realistic.join("000.png"), 64)?;
    for style in ["stripes", "dots"] {
        let style_img = load_image(data.artistic.join(style).join("000.png"), 64)?;
        let result = model.stylize_from_image(&content, &style_img)?;
        let path = out.join(format!("stylized_{style}.png"));
        save_image(&result, 0, &path)?;
        println!("wrote {}", path.display());
    }
    let plain = model.generator.autoencode(&content)?;
    save_image(&plain, 0, out.join("autoencoded.png"))?;
    Ok(())
}
