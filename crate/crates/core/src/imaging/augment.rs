use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ImageTensor;
use crate::error::{Error, Result};

/// Parameters of the random view used as a contrastive positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// Resize factor range `(min, max)` applied to the image side.
    pub scale: (f64, f64),
    /// Side of the square crop, in pixels.
    pub crop: usize,
    /// Rotation angle is drawn from `[-max_rotation_deg, max_rotation_deg]`.
    pub max_rotation_deg: f64,
}

impl AugmentSpec {
    /// Default augmentation for images of side `size`: scale in `[0.8, 1.2]`,
    /// ±15° rotation and a crop of three quarters of the side, rounded down to
    /// a multiple of 8.
    pub fn for_size(size: usize) -> Self {
        Self {
            scale: (0.8, 1.2),
            crop: ((size * 3 / 4) / 8 * 8).max(8),
            max_rotation_deg: 15.0,
        }
    }

    /// A spec that leaves a `size × size` image untouched.
    pub fn identity(size: usize) -> Self {
        Self {
            scale: (1.0, 1.0),
            crop: size,
            max_rotation_deg: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::arg(format!("invalid scale range ({lo}, {hi})")));
        }
        if self.crop == 0 {
            return Err(Error::arg("crop size must be positive"));
        }
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg.is_finite()) {
            return Err(Error::arg("rotation range must be finite and non-negative"));
        }
        Ok(())
    }
}

/// One image as three planes.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Planes {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Planes {
    fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[c * self.h * self.w + y * self.w + x]
    }

    /// Bilinear sample at continuous pixel-center coordinates, reflecting
    /// out-of-range coordinates back into the image.
    fn sample(&self, c: usize, y: f64, x: f64) -> f32 {
        let y = reflect_coord(y, self.h);
        let x = reflect_coord(x, self.w);
        let y0 = y.floor();
        let x0 = x.floor();
        let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
        let (y0, x0) = (y0 as usize, x0 as usize);
        let y1 = (y0 + 1).min(self.h - 1);
        let x1 = (x0 + 1).min(self.w - 1);
        let top = self.at(c, y0, x0) * (1.0 - fx) + self.at(c, y0, x1) * fx;
        let bottom = self.at(c, y1, x0) * (1.0 - fx) + self.at(c, y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn resize(&self, nh: usize, nw: usize) -> Planes {
        if nh == self.h && nw == self.w {
            return self.clone();
        }
        let sy = self.h as f64 / nh as f64;
        let sx = self.w as f64 / nw as f64;
        let mut data = vec![0f32; 3 * nh * nw];
        for c in 0..3 {
            for y in 0..nh {
                let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.h - 1) as f64);
                for x in 0..nw {
                    let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.w - 1) as f64);
                    data[c * nh * nw + y * nw + x] = self.sample(c, src_y, src_x);
                }
            }
        }
        Planes { h: nh, w: nw, data }
    }

    /// Rotation about the image center; uncovered corners are filled by
    /// reflection.
    pub fn rotate(&self, degrees: f64) -> Planes {
        if degrees == 0.0 {
            return self.clone();
        }
        let (sin, cos) = degrees.to_radians().sin_cos();
        let cy = (self.h as f64 - 1.0) / 2.0;
        let cx = (self.w as f64 - 1.0) / 2.0;
        let mut data = vec![0f32; self.data.len()];
        let plane = self.h * self.w;
        for y in 0..self.h {
            for x in 0..self.w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                // inverse mapping: destination -> source
                let sx = cos * dx + sin * dy + cx;
                let sy = -sin * dx + cos * dy + cy;
                for c in 0..3 {
                    data[c * plane + y * self.w + x] = self.sample(c, sy, sx);
                }
            }
        }
        Planes { h: self.h, w: self.w, data }
    }

    pub fn crop(&self, top: usize, left: usize, size: usize) -> Planes {
        let mut data = Vec::with_capacity(3 * size * size);
        for c in 0..3 {
            for y in top..top + size {
                let start = c * self.h * self.w + y * self.w + left;
                data.extend_from_slice(&self.data[start..start + size]);
            }
        }
        Planes { h: size, w: size, data }
    }

    fn clamp_range(mut self) -> Planes {
        for v in &mut self.data {
            *v = v.clamp(-1.0, 1.0);
        }
        self
    }
}

/// Mirror a coordinate into `[0, n-1]` without repeating the edge pixel.
fn reflect_coord(v: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let max = (n - 1) as f64;
    let period = 2.0 * max;
    let mut v = v.rem_euclid(period);
    if v > max {
        v = period - v;
    }
    v
}

fn to_planes(img: &ImageTensor) -> Result<Planes> {
    Ok(Planes {
        h: img.height(),
        w: img.width(),
        data: img.planes(0)?,
    })
}

fn to_image(p: Planes, like: &ImageTensor) -> Result<ImageTensor> {
    ImageTensor::from_planes(p.data, p.h, p.w, like.device())
}

/// Returns `(I, I⁺)`: the center crop of `img` and an independently resized,
/// rotated and randomly cropped view of it. Both are `crop × crop`.
pub fn augment_pair(
    img: &ImageTensor,
    spec: &AugmentSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(ImageTensor, ImageTensor)> {
    let original = center_crop(img, spec)?;
    let view = augment_view(img, spec, rng)?;
    Ok((original, view))
}

/// Two independent augmented views of `img`.
pub fn augment_two_views(
    img: &ImageTensor,
    spec: &AugmentSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(ImageTensor, ImageTensor)> {
    let a = augment_view(img, spec, rng)?;
    let b = augment_view(img, spec, rng)?;
    Ok((a, b))
}

fn check_input(img: &ImageTensor, spec: &AugmentSpec) -> Result<()> {
    spec.validate()?;
    if img.batch() != 1 {
        return Err(Error::arg(format!("augmentation expects a single image, got batch {}", img.batch())));
    }
    let shorter = img.height().min(img.width()) as f64;
    let min_side = (shorter * spec.scale.0).floor() as usize;
    if spec.crop > min_side {
        return Err(Error::arg(format!(
            "crop {} exceeds the smallest resized side {min_side}",
            spec.crop
        )));
    }
    Ok(())
}

pub fn center_crop(img: &ImageTensor, spec: &AugmentSpec) -> Result<ImageTensor> {
    check_input(img, spec)?;
    let p = to_planes(img)?;
    let top = (p.h - spec.crop) / 2;
    let left = (p.w - spec.crop) / 2;
    to_image(p.crop(top, left, spec.crop), img)
}

pub fn augment_view(img: &ImageTensor, spec: &AugmentSpec, rng: &mut ChaCha8Rng) -> Result<ImageTensor> {
    check_input(img, spec)?;
    let p = to_planes(img)?;
    let (lo, hi) = spec.scale;
    let s = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let angle = if spec.max_rotation_deg > 0.0 {
        rng.random_range(-spec.max_rotation_deg..=spec.max_rotation_deg)
    } else {
        0.0
    };
    let nh = ((p.h as f64 * s).floor() as usize).max(spec.crop);
    let nw = ((p.w as f64 * s).floor() as usize).max(spec.crop);
    let p = p.resize(nh, nw).rotate(angle);
    let top = rng.random_range(0..=nh - spec.crop);
    let left = rng.random_range(0..=nw - spec.crop);
    to_image(p.crop(top, left, spec.crop).clamp_range(), img)
}
