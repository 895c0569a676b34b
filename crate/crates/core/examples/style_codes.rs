//! Project toy paintings to style codes and compare them across styles.

use candle_core::Device;
use cast_core::imaging::ImageTensor;
use cast_core::nn::ParamMode;
use cast_core::toy::{styled_image, ToyStyle};
use cast_core::{CastModel, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_tensor(img: &image::RgbImage) -> cast_core::Result<ImageTensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut planes = vec![0f32; 3 * w * h];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            planes[c * w * h + y as usize * w + x as usize] = p[c] as f32 / 127.5 - 1.0;
        }
    }
    ImageTensor::from_planes(planes, h, w, &Device::Cpu)
}

fn main() -> cast_core::Result<()> {
    let model = CastModel::new(&ModelConfig::desk(), &Device::Cpu)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut codes = Vec::new();
    for style in ToyStyle::ALL {
        for _ in 0..2 {
            let img = to_tensor(&styled_image(style, 64, &mut rng))?;
            codes.push((style.label(), model.style_code(&img, ParamMode::Detach)?));
        }
    }
    println!("per-layer norms of the first code: {:?}", codes[0].1.norms()?[0]);
    println!("cosine similarity of the deepest code layer (untrained projector):");
    for (la, a) in &codes {
        let row: Vec<String> = codes
            .iter()
            .map(|(_, b)| {
                let (ra, rb) = (&a.rows(3).unwrap()[0], &b.rows(3).unwrap()[0]);
                format!("{:+.3}", ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>())
            })
            .collect();
        println!("{la:>8} {}", row.join(" "));
    }
    Ok(())
}
