//! Print the feature tap shapes of the backbone at a few input sizes.

use candle_core::{DType, Device, Tensor};
use cast_core::features::TAP_LAYERS;
use cast_core::{ExtractorWeights, FeatureExtractor, ImageTensor, ModelConfig};

fn main() -> cast_core::Result<()> {
    let config = ModelConfig::desk();
    let weights = ExtractorWeights::for_model(&config, &Device::Cpu)?;
    let extractor = FeatureExtractor::new(&weights);
    for size in [64, 128, 256] {
        let img = ImageTensor::new(Tensor::zeros((1, 3, size, size), DType::F32, &Device::Cpu)?)?;
        let pyramid = extractor.extract(&img)?;
        let shapes: Vec<String> = TAP_LAYERS
            .iter()
            .zip(&pyramid.maps)
            .map(|(name, m)| format!("{name} {:?}", m.dims()))
            .collect();
        println!("{size}x{size}: {}", shapes.join(", "));
    }
    Ok(())
}
