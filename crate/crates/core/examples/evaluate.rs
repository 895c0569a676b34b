//! Train the toy style classifier and report accuracy and the deception rate
//! of an untrained model's outputs.

use candle_core::Device;
use cast_core::eval::{content_loss, deception_rate, StyleClassifier, StyleClassifierConfig};
use cast_core::imaging::load_image;
use cast_core::toy::{write_toy_corpora, ToyStyle};
use cast_core::{CastModel, ModelConfig};

fn main() -> cast_core::Result<()> {
    let dir = std::env::temp_dir().join("cast-evaluate");
    let data = write_toy_corpora(&dir, 12, 4, 64, 2)?;
    let model = CastModel::new(&ModelConfig::desk(), &Device::Cpu)?;
    let labels: Vec<String> = ToyStyle::ALL.iter().map(|s| s.label().to_string()).collect();

    let mut train = Vec::new();
    let mut held_out = Vec::new();
    for label in &labels {
        for i in 0..12 {
            let img = load_image(data.artistic.join(label).join(format!("{i:03}.png")), 64)?;
            if i < 8 { &mut train } else { &mut held_out }.push((img, label.clone()));
        }
    }
    let clf = StyleClassifier::train(&model.extractor, &train, &StyleClassifierConfig::new(labels.clone()))?;
    println!("held-out accuracy {:.3}", clf.accuracy(&held_out)?);

    let mut stylized = Vec::new();
    let mut closs = 0.0;
    for (i, (style, label)) in held_out.iter().enumerate() {
        let content = load_image(data.realistic.join(format!("{:03}.png", i % 4)), 64)?;
        let out = model.stylize_from_image(&content, style)?;
        closs += content_loss(&model.extractor, &content, &out)?;
        stylized.push((out, label.clone()));
    }
    println!("mean content loss {:.5}", closs / held_out.len() as f64);
    println!("deception rate (untrained generator) {:.3}", deception_rate(&stylized, &clf)?);
    Ok(())
}
