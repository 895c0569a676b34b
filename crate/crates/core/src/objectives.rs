//! Scalar training objectives: the memory-bank InfoNCE loss, the dual-domain
//! adversarial loss, L1 cycle consistency, their weighted total, and the
//! Gram-matrix style loss kept for ablations.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeaturePyramid;
use crate::nn::{log_sigmoid, scalar};
use crate::projector::StyleCode;

/// Weights of the generator objective and the contrastive temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub adv: f64,
    pub cyc: f64,
    pub contra: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adv: 1.0,
            cyc: 2.0,
            contra: 0.2,
            tau: 0.07,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("adv", self.adv), ("cyc", self.cyc), ("contra", self.contra), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn combine(&self, adv: f64, cyc: f64, contra: f64) -> f64 {
        self.adv * adv + self.cyc * cyc + self.contra * contra
    }
}

/// Per-term values of one training step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub adv: f64,
    pub cyc: f64,
    pub contra_msp: f64,
    pub contra_g: f64,
    pub total: f64,
    /// Learning rate used for this step (not part of the CSV log).
    pub lr: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,adv,cyc,contra_msp,contra_g,total";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.adv, self.cyc, self.contra_msp, self.contra_g, self.total
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(Error::arg(format!("malformed log row: {line}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::arg(format!("bad number {s}: {e}")));
        Ok(Self {
            step: f[0].parse().map_err(|e| Error::arg(format!("bad step {}: {e}", f[0])))?,
            adv: num(f[1])?,
            cyc: num(f[2])?,
            contra_msp: num(f[3])?,
            contra_g: num(f[4])?,
            total: num(f[5])?,
            lr: f64::NAN,
        })
    }

    /// Difference between `total` and the weighted sum of its components.
    pub fn composition_error(&self, w: &LossWeights) -> f64 {
        (self.total - w.combine(self.adv, self.cyc, self.contra_g)).abs()
    }

    /// First non-finite term, by name.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("adv", self.adv),
            ("cyc", self.cyc),
            ("contra_msp", self.contra_msp),
            ("contra_g", self.contra_g),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Memory-bank InfoNCE summed over layers and averaged over the batch:
///
/// `−Σ_l log[exp(z·z⁺/τ) / (exp(z·z⁺/τ) + Σ_j exp(z·z⁻_j/τ))]`
///
/// `negatives[l]` is an `N × K_l` matrix shared by the whole batch. With
/// `N = 0` the loss is exactly zero.
pub fn info_nce(anchor: &StyleCode, positive: &StyleCode, negatives: &[Tensor], tau: f64) -> Result<Tensor> {
    if !(tau > 0.0) {
        return Err(Error::arg(format!("temperature must be positive, got {tau}")));
    }
    if anchor.dims() != positive.dims() || anchor.batch() != positive.batch() {
        return Err(Error::arg("anchor and positive codes differ in shape"));
    }
    if negatives.len() != anchor.layers() {
        return Err(Error::arg(format!(
            "{} negative matrices for {} code layers",
            negatives.len(),
            anchor.layers()
        )));
    }
    let first = &anchor.codes[0];
    let mut total = Tensor::zeros((), first.dtype(), first.device())?;
    for ((a, p), neg) in anchor.codes.iter().zip(&positive.codes).zip(negatives) {
        let (n, k) = neg.dims2()?;
        if k != a.dims()[1] {
            return Err(Error::arg(format!("negatives have dim {k}, codes have {}", a.dims()[1])));
        }
        if n == 0 {
            continue;
        }
        let pos = (a * p)?.sum_keepdim(D::Minus1)?;
        let neg_sim = a.matmul(&neg.to_dtype(a.dtype())?.t()?)?;
        let logits = (Tensor::cat(&[&pos, &neg_sim], 1)? / tau)?;
        let per_sample = (logits.log_sum_exp(1)? - (pos.squeeze(1)? / tau)?)?;
        total = (total + per_sample.mean_all()?)?;
    }
    Ok(total)
}

/// Discriminator and generator sides of the dual-domain adversarial loss.
#[derive(Clone, Debug)]
pub struct AdversarialLoss {
    /// `−[E log D_R(real) + E log(1−D_R(fake)) + E log D_A(real) + E log(1−D_A(fake))]`.
    pub d_loss: Tensor,
    /// Non-saturating generator loss `−[E log D_R(fake) + E log D_A(fake)]`.
    pub g_loss: Tensor,
}

impl AdversarialLoss {
    /// The value function itself, which the discriminators maximise.
    pub fn value(&self) -> Result<Tensor> {
        Ok(self.d_loss.neg()?)
    }
}

fn check_probabilities(t: &Tensor, name: &str) -> Result<()> {
    let lo = scalar(&t.min_all()?)?;
    let hi = scalar(&t.max_all()?)?;
    if !(lo > 0.0 && hi < 1.0) {
        return Err(Error::arg(format!(
            "{name} must lie strictly inside (0, 1), got range [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// Adversarial loss from post-sigmoid probability maps. Expectations are
/// means over batch and spatial positions.
pub fn adversarial_loss(d_r_real: &Tensor, d_r_fake: &Tensor, d_a_real: &Tensor, d_a_fake: &Tensor) -> Result<AdversarialLoss> {
    for (t, n) in [(d_r_real, "D_R(real)"), (d_r_fake, "D_R(fake)"), (d_a_real, "D_A(real)"), (d_a_fake, "D_A(fake)")] {
        check_probabilities(t, n)?;
    }
    let log_mean = |t: &Tensor| -> Result<Tensor> { Ok(t.log()?.mean_all()?) };
    let log1m_mean = |t: &Tensor| -> Result<Tensor> { Ok((t.neg()? + 1.0)?.log()?.mean_all()?) };
    let value = (((log_mean(d_r_real)? + log1m_mean(d_r_fake)?)? + log_mean(d_a_real)?)? + log1m_mean(d_a_fake)?)?;
    let g = (log_mean(d_r_fake)? + log_mean(d_a_fake)?)?;
    Ok(AdversarialLoss {
        d_loss: value.neg()?,
        g_loss: g.neg()?,
    })
}

/// `−E log σ(x)`: loss for logits that should be classified real.
pub fn real_term(logits: &Tensor) -> Result<Tensor> {
    Ok(log_sigmoid(logits)?.mean_all()?.neg()?)
}

/// `−E log(1 − σ(x))`: loss for logits that should be classified fake.
pub fn fake_term(logits: &Tensor) -> Result<Tensor> {
    Ok(log_sigmoid(&logits.neg()?)?.mean_all()?.neg()?)
}

/// Generator loss for logits of generated samples. The literal form
/// minimises `E log(1 − σ(x))`; the non-saturating form is `−E log σ(x)`.
pub fn generator_term(logits: &Tensor, saturating: bool) -> Result<Tensor> {
    if saturating {
        Ok(log_sigmoid(&logits.neg()?)?.mean_all()?)
    } else {
        real_term(logits)
    }
}

/// Same as [`adversarial_loss`] but from pre-sigmoid logits, without the
/// precision loss of taking `log` of saturated probabilities.
pub fn adversarial_loss_from_logits(
    d_r_real: &Tensor,
    d_r_fake: &Tensor,
    d_a_real: &Tensor,
    d_a_fake: &Tensor,
) -> Result<AdversarialLoss> {
    let d_loss = (((real_term(d_r_real)? + fake_term(d_r_fake)?)? + real_term(d_a_real)?)? + fake_term(d_a_fake)?)?;
    let g_loss = (real_term(d_r_fake)? + real_term(d_a_fake)?)?;
    Ok(AdversarialLoss { d_loss, g_loss })
}

/// Mean absolute difference.
pub fn l1_mean(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::arg(format!("shape mismatch {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok((a - b)?.abs()?.mean_all()?)
}

/// `E|I_c − rec_c| + E|I_s − rec_s|` with element-wise means.
pub fn cycle_loss(i_c: &Tensor, rec_c: &Tensor, i_s: &Tensor, rec_s: &Tensor) -> Result<Tensor> {
    Ok((l1_mean(i_c, rec_c)? + l1_mean(i_s, rec_s)?)?)
}

/// `λ1·adv + λ2·cyc + λ3·contra`. Errors if any term is not finite.
pub fn total_loss(adv_g: &Tensor, cyc: &Tensor, contra_g: &Tensor, w: &LossWeights) -> Result<Tensor> {
    for (t, name) in [(adv_g, "adv"), (cyc, "cyc"), (contra_g, "contra_g")] {
        if !scalar(t)?.is_finite() {
            return Err(Error::Numeric(format!("{name} term is not finite")));
        }
    }
    Ok((((adv_g * w.adv)? + (cyc * w.cyc)?)? + (contra_g * w.contra)?)?)
}

/// Channel Gram matrices `F Fᵀ` of an NCHW map, shape `[B, C, C]`.
pub fn gram(map: &Tensor) -> Result<Tensor> {
    let f = map.flatten_from(2)?.contiguous()?;
    Ok(f.matmul(&f.transpose(1, 2)?.contiguous()?)?)
}

/// `Σ_l ‖Gram(out_l) − Gram(style_l)‖²_F / (C·H·W)²`, averaged over the batch.
pub fn gram_style_loss(f_out: &FeaturePyramid, f_style: &FeaturePyramid) -> Result<Tensor> {
    if f_out.maps.len() != f_style.maps.len() {
        return Err(Error::arg("pyramids have different depths"));
    }
    let first = &f_out.maps[0];
    let mut total = Tensor::zeros((), first.dtype(), first.device())?;
    for (a, b) in f_out.maps.iter().zip(&f_style.maps) {
        if a.dims() != b.dims() {
            return Err(Error::arg(format!("pyramid shape mismatch {:?} vs {:?}", a.dims(), b.dims())));
        }
        let (_, c, h, w) = a.dims4()?;
        let norm = ((c * h * w) as f64).powi(2);
        let diff = (gram(a)? - gram(b)?)?;
        let per_sample = (diff.sqr()?.sum((1, 2))? / norm)?;
        total = (total + per_sample.mean_all()?)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn t(v: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
    }

    fn unit_pair(dot: f64) -> (Tensor, Tensor) {
        // two unit vectors in R² with the requested dot product
        let s = (1.0 - dot * dot).sqrt();
        (t(&[1.0, 0.0], &[1, 2]), t(&[dot, s], &[1, 2]))
    }

    #[test]
    fn empty_bank_gives_zero() {
        let (a, p) = unit_pair(0.3);
        let code_a = StyleCode::new(vec![a]).unwrap();
        let code_p = StyleCode::new(vec![p]).unwrap();
        let neg = Tensor::zeros((0, 2), DType::F64, &Device::Cpu).unwrap();
        let l = info_nce(&code_a, &code_p, &[neg], 0.07).unwrap();
        assert_eq!(scalar(&l).unwrap(), 0.0);
    }

    #[test]
    fn worked_scalar_case() {
        let (a, p) = unit_pair(0.5);
        let (_, n) = unit_pair(0.1);
        let l = info_nce(
            &StyleCode::new(vec![a]).unwrap(),
            &StyleCode::new(vec![p]).unwrap(),
            &[n],
            0.07,
        )
        .unwrap();
        // log(1 + exp((0.1 - 0.5) / 0.07))
        let oracle = (1.0 + ((0.1f64 - 0.5) / 0.07).exp()).ln();
        assert!((scalar(&l).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - 3.293e-3).abs() < 5e-7);
    }

    #[test]
    fn info_nce_rejects_bad_inputs() {
        let (a, p) = unit_pair(0.5);
        let a = StyleCode::new(vec![a]).unwrap();
        let p = StyleCode::new(vec![p]).unwrap();
        assert!(info_nce(&a, &p, &[t(&[1.0, 0.0, 0.0], &[1, 3])], 0.07).is_err());
        assert!(info_nce(&a, &p, &[], 0.07).is_err());
        assert!(info_nce(&a, &p, &[t(&[1.0, 0.0], &[1, 2])], 0.0).is_err());
    }

    #[test]
    fn half_probabilities_give_four_ln_half() {
        let half = t(&[0.5; 8], &[2, 1, 2, 2]);
        let adv = adversarial_loss(&half, &half, &half, &half).unwrap();
        let value = scalar(&adv.value().unwrap()).unwrap();
        assert!((value - 4.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((scalar(&adv.d_loss).unwrap() - 2.772589).abs() < 1e-6);
    }

    #[test]
    fn perfect_discriminator_has_near_zero_loss() {
        let eps = 1e-9;
        let real = t(&[1.0 - eps; 4], &[1, 1, 2, 2]);
        let fake = t(&[eps; 4], &[1, 1, 2, 2]);
        let adv = adversarial_loss(&real, &fake, &real, &fake).unwrap();
        let d = scalar(&adv.d_loss).unwrap();
        assert!(d > 0.0 && d < 1e-7);
    }

    #[test]
    fn generator_loss_decreases_with_d_a_fake() {
        let half = t(&[0.5; 4], &[1, 1, 2, 2]);
        let mut prev = f64::INFINITY;
        for p in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let fake = t(&[p; 4], &[1, 1, 2, 2]);
            let g = scalar(&adversarial_loss(&half, &half, &half, &fake).unwrap().g_loss).unwrap();
            assert!(g < prev);
            prev = g;
        }
    }

    #[test]
    fn out_of_range_probabilities_are_rejected() {
        let ok = t(&[0.5; 4], &[1, 1, 2, 2]);
        let bad = t(&[0.5, 1.0, 0.5, 0.5], &[1, 1, 2, 2]);
        assert!(matches!(adversarial_loss(&ok, &bad, &ok, &ok), Err(Error::Argument(_))));
    }

    #[test]
    fn logit_form_matches_probability_form() {
        let logits = [t(&[0.3, -1.2], &[1, 1, 1, 2]), t(&[2.0, 0.1], &[1, 1, 1, 2]), t(&[-0.7, 0.9], &[1, 1, 1, 2]), t(&[1.5, -2.5], &[1, 1, 1, 2])];
        let probs: Vec<Tensor> = logits.iter().map(|l| crate::nn::sigmoid(l).unwrap()).collect();
        let a = adversarial_loss_from_logits(&logits[0], &logits[1], &logits[2], &logits[3]).unwrap();
        let b = adversarial_loss(&probs[0], &probs[1], &probs[2], &probs[3]).unwrap();
        assert!((scalar(&a.d_loss).unwrap() - scalar(&b.d_loss).unwrap()).abs() < 1e-12);
        assert!((scalar(&a.g_loss).unwrap() - scalar(&b.g_loss).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cycle_loss_cases() {
        let x = t(&[0.1, -0.2, 0.3, 0.4], &[1, 1, 2, 2]);
        assert_eq!(scalar(&cycle_loss(&x, &x, &x, &x).unwrap()).unwrap(), 0.0);
        let shifted = (&x + 0.5).unwrap();
        let l = scalar(&cycle_loss(&x, &shifted, &x, &x).unwrap()).unwrap();
        assert!((l - 0.5).abs() < 1e-12);
        let y = t(&[0.0; 8], &[2, 1, 2, 2]);
        assert!(cycle_loss(&x, &y, &x, &x).is_err());
    }

    #[test]
    fn total_loss_cases() {
        let w = LossWeights::default();
        let one = t(&[1.0], &[]);
        assert!((scalar(&total_loss(&one, &one, &one, &w).unwrap()).unwrap() - 3.2).abs() < 1e-12);
        let zero = t(&[0.0], &[]);
        assert_eq!(scalar(&total_loss(&zero, &zero, &zero, &w).unwrap()).unwrap(), 0.0);
        let v = total_loss(&t(&[-2.772589], &[]), &t(&[0.5], &[]), &t(&[0.003293], &[]), &w).unwrap();
        assert!((scalar(&v).unwrap() - -1.771931).abs() < 1e-6);
        let nan = t(&[f64::NAN], &[]);
        assert!(matches!(total_loss(&one, &nan, &one, &w), Err(Error::Numeric(_))));
    }

    #[test]
    fn gram_loss_hand_computed() {
        // one channel, 2x2: Gram is the sum of squares
        let a = t(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]);
        let b = t(&[0.0, 1.0, 0.0, 1.0], &[1, 1, 2, 2]);
        let pa = FeaturePyramid { maps: vec![a.clone()] };
        let pb = FeaturePyramid { maps: vec![b] };
        // (30 - 2)² / (1·2·2)² = 784 / 16
        let l = scalar(&gram_style_loss(&pa, &pb).unwrap()).unwrap();
        assert!((l - 49.0).abs() < 1e-12);
        assert_eq!(scalar(&gram_style_loss(&pa, &pa).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn gram_is_spatially_invariant() {
        let a = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], &[1, 2, 2, 2]);
        let perm = t(&[4.0, 3.0, 1.0, 2.0, 8.0, 7.0, 5.0, 6.0], &[1, 2, 2, 2]);
        let d = (gram(&a).unwrap() - gram(&perm).unwrap()).unwrap().abs().unwrap().max_all().unwrap();
        assert_eq!(scalar(&d).unwrap(), 0.0);
    }

    #[test]
    fn report_csv_roundtrip_and_composition() {
        let w = LossWeights::default();
        let r = LossReport {
            step: 3,
            adv: 0.7,
            cyc: 0.25,
            contra_msp: 1.5,
            contra_g: 2.0,
            total: w.combine(0.7, 0.25, 2.0),
            lr: 1e-4,
        };
        let back = LossReport::parse_csv_row(&r.csv_row()).unwrap();
        assert_eq!(back.total, r.total);
        assert!(r.composition_error(&w) < 1e-12);
        assert_eq!(r.non_finite_term(), None);
    }
}
