//! Fill a style bank with random unit codes and watch the contrastive loss
//! react to a close and a distant positive.

use candle_core::{Device, Tensor};
use cast_core::bank::StyleBank;
use cast_core::nn::l2_normalize_rows;
use cast_core::objectives::info_nce;
use cast_core::StyleCode;

fn random_code(batch: usize, dims: &[usize]) -> cast_core::Result<StyleCode> {
    let codes = dims
        .iter()
        .map(|&d| l2_normalize_rows(&Tensor::randn(0f32, 1f32, (batch, d), &Device::Cpu)?, 1e-8))
        .collect::<cast_core::Result<Vec<_>>>()?;
    StyleCode::new(codes)
}

fn main() -> cast_core::Result<()> {
    let dims = [8, 16, 32, 32];
    let mut bank = StyleBank::new(&dims, 64)?;
    for _ in 0..20 {
        bank.push(&random_code(4, &dims)?)?;
    }
    println!("bank occupancy {}/{}", bank.occupancy(), bank.capacity());

    let anchor = random_code(1, &dims)?;
    let negatives = bank.negatives(candle_core::DType::F32, &Device::Cpu)?;
    let far = random_code(1, &dims)?;
    println!("loss with an unrelated positive: {:.4}", info_nce(&anchor, &far, &negatives, 0.07)?.to_scalar::<f32>()?);
    println!("loss with the anchor as positive: {:.4}", info_nce(&anchor, &anchor, &negatives, 0.07)?.to_scalar::<f32>()?);

    let empty = StyleBank::new(&dims, 64)?.negatives(candle_core::DType::F32, &Device::Cpu)?;
    println!("loss with an empty bank: {}", info_nce(&anchor, &far, &empty, 0.07)?.to_scalar::<f32>()?);
    Ok(())
}
