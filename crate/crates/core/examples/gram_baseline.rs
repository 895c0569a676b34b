//! Compare the Gram-matrix style distance between toy paintings of the same
//! and of different styles.

use candle_core::Device;
use cast_core::objectives::gram_style_loss;
use cast_core::imaging::load_image;
use cast_core::toy::write_toy_corpora;
use cast_core::{ExtractorWeights, FeatureExtractor, ModelConfig};

fn main() -> cast_core::Result<()> {
    let dir = std::env::temp_dir().join("cast-gram");
    let data = write_toy_corpora(&dir, 2, 1, 64, 5)?;
    let extractor = FeatureExtractor::new(&ExtractorWeights::for_model(&ModelConfig::desk(), &Device::Cpu)?);
    let pyramid = |style: &str, i: usize| -> cast_core::Result<_> {
        extractor.extract(&load_image(data.artistic.join(style).join(format!("{i:03}.png")), 64)?)
    };
    let stripes = [pyramid("stripes", 0)?, pyramid("stripes", 1)?];
    let dots = pyramid("dots", 0)?;
    let same = gram_style_loss(&stripes[0], &stripes[1])?.to_scalar::<f32>()?;
    let diff = gram_style_loss(&stripes[0], &dots)?.to_scalar::<f32>()?;
    println!("gram distance stripes/stripes {same:.6}");
    println!("gram distance stripes/dots    {diff:.6}");
    Ok(())
}
