//! Procedural toy corpora: "photographs" of simple shapes and paintings of
//! the same kind of scene in three visually distinct styles.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Toy painting styles, also used as class labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyStyle {
    /// Warm palette with soft diagonal banding.
    Stripes,
    /// Blue palette in 8-pixel tiles with dark grout.
    Mosaic,
    /// Green palette with soft purple dots.
    Dots,
}

impl ToyStyle {
    pub const ALL: [ToyStyle; 3] = [ToyStyle::Stripes, ToyStyle::Mosaic, ToyStyle::Dots];

    pub fn label(self) -> &'static str {
        match self {
            ToyStyle::Stripes => "stripes",
            ToyStyle::Mosaic => "mosaic",
            ToyStyle::Dots => "dots",
        }
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: [f64; 3], amount: f64) -> [f64; 3] {
    base.map(|c| (c + rng.random_range(-amount..=amount)).clamp(0.0, 255.0))
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] * (1.0 - t) + b[i] * t)
}

fn luma(c: [f64; 3]) -> f64 {
    (0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]) / 255.0
}

/// Row-major float RGB canvas.
struct Canvas {
    size: usize,
    px: Vec<[f64; 3]>,
}

impl Canvas {
    fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut px = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                px.push(f(x, y));
            }
        }
        Self { size, px }
    }

    fn at(&self, x: usize, y: usize) -> [f64; 3] {
        self.px[y * self.size + x]
    }

    /// 3×3 box blur with clamped borders.
    fn finish(self) -> RgbImage {
        let n = self.size as i64;
        RgbImage::from_fn(n as u32, n as u32, |x, y| {
            let mut acc = [0.0; 3];
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let xx = (x as i64 + dx).clamp(0, n - 1) as usize;
                    let yy = (y as i64 + dy).clamp(0, n - 1) as usize;
                    let c = self.at(xx, yy);
                    for i in 0..3 {
                        acc[i] += c[i] / 9.0;
                    }
                }
            }
            Rgb(acc.map(|v| v.round().clamp(0.0, 255.0) as u8))
        })
    }
}

/// A two-colour gradient with a few flat shapes on top.
fn scene(size: usize, rng: &mut ChaCha8Rng) -> Canvas {
    let c0 = [0, 1, 2].map(|_| rng.random_range(40.0..220.0));
    let c1 = [0, 1, 2].map(|_| rng.random_range(40.0..220.0));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let s = size as f64;
    let shapes: Vec<_> = (0..rng.random_range(2..=4))
        .map(|_| {
            let color = [0, 1, 2].map(|_| rng.random_range(0.0..255.0));
            let (cx, cy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
            let r = rng.random_range(s * 0.08..s * 0.25);
            (color, cx, cy, r, rng.random_bool(0.5))
        })
        .collect();
    Canvas::from_fn(size, |x, y| {
        let mut c = mix(c0, c1, (((x as f64 / s - 0.5) * dx + (y as f64 / s - 0.5) * dy + 0.75) / 1.5).clamp(0.0, 1.0));
        for &(color, cx, cy, r, circle) in &shapes {
            let (fx, fy) = (x as f64 - cx, y as f64 - cy);
            let inside = if circle { fx * fx + fy * fy <= r * r } else { fx.abs() <= r && fy.abs() <= r * 0.7 };
            if inside {
                c = color;
            }
        }
        c
    })
}

/// A toy photograph: a lightly blurred scene.
pub fn realistic_image(size: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    scene(size, rng).finish()
}

/// A toy painting: a fresh scene whose brightness is remapped to the style's
/// two-tone palette, with a gentle style-specific texture on top.
pub fn styled_image(style: ToyStyle, size: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    let content = scene(size, rng);
    let light = |x: usize, y: usize| luma(content.at(x, y));
    let s = size as f64;
    let (dark, bright) = match style {
        ToyStyle::Stripes => ([110.0, 25.0, 10.0], [255.0, 205.0, 90.0]),
        ToyStyle::Mosaic => ([15.0, 30.0, 100.0], [150.0, 215.0, 255.0]),
        ToyStyle::Dots => ([30.0, 80.0, 30.0], [210.0, 235.0, 130.0]),
    };
    let (dark, bright) = (jitter(rng, dark, 15.0), jitter(rng, bright, 15.0));
    let tone = |x: usize, y: usize| mix(dark, bright, light(x, y));
    let canvas = match style {
        ToyStyle::Stripes => {
            let period = rng.random_range(s / 5.0..s / 3.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let tilt = rng.random_range(0.7..1.3);
            Canvas::from_fn(size, |x, y| {
                let t = ((x as f64 + tilt * y as f64) / period * std::f64::consts::TAU + phase).sin();
                tone(x, y).map(|c| c * (1.0 + 0.15 * t))
            })
        }
        ToyStyle::Mosaic => {
            let tile = 8;
            Canvas::from_fn(size, |x, y| {
                let (cx, cy) = ((x / tile) * tile + tile / 2, (y / tile) * tile + tile / 2);
                let c = tone(cx.min(size - 1), cy.min(size - 1));
                if x % tile == 0 || y % tile == 0 {
                    c.map(|v| v * 0.7)
                } else {
                    c
                }
            })
        }
        ToyStyle::Dots => {
            let tint = jitter(rng, [170.0, 60.0, 200.0], 15.0);
            let spacing = rng.random_range(s / 6.0..s / 4.0);
            let (ox, oy) = (rng.random_range(0.0..spacing), rng.random_range(0.0..spacing));
            Canvas::from_fn(size, |x, y| {
                let fx = ((x as f64 + ox) / spacing * std::f64::consts::TAU).cos();
                let fy = ((y as f64 + oy) / spacing * std::f64::consts::TAU).cos();
                let blob = ((fx * fy).max(0.0)).powi(2);
                mix(tone(x, y), tint, 0.45 * blob)
            })
        }
    };
    canvas.finish()
}

/// Paths of a generated toy dataset.
#[derive(Clone, Debug)]
pub struct ToyCorpora {
    /// One sub-directory per style, named by its label.
    pub artistic: PathBuf,
    pub realistic: PathBuf,
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Writes `per_style` paintings of each style and `realistic` photos under
/// `root/artistic/<label>/` and `root/realistic/`.
pub fn write_toy_corpora(root: impl AsRef<Path>, per_style: usize, realistic: usize, size: usize, seed: u64) -> Result<ToyCorpora> {
    let root = root.as_ref();
    let art = root.join("artistic");
    let real = root.join("realistic");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for style in ToyStyle::ALL {
        let dir = art.join(style.label());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..per_style {
            save(&styled_image(style, size, &mut rng), &dir.join(format!("{i:03}.png")))?;
        }
    }
    std::fs::create_dir_all(&real).map_err(|e| Error::io(&real, e))?;
    for i in 0..realistic {
        save(&realistic_image(size, &mut rng), &real.join(format!("{i:03}.png")))?;
    }
    Ok(ToyCorpora {
        artistic: art,
        realistic: real,
    })
}
