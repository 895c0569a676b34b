use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::imageops::FilterType;
use image::{ImageReader, Rgb32FImage, RgbImage};

use crate::error::{Error, Result};

/// A batch of RGB images, shape `[batch, 3, height, width]`, values in `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct ImageTensor(Tensor);

/// Slack allowed on the `[-1, 1]` range check (bilinear resampling can
/// overshoot by rounding error).
const RANGE_SLACK: f64 = 1e-5;

impl ImageTensor {
    /// Validates shape, finiteness and value range.
    pub fn new(t: Tensor) -> Result<Self> {
        let img = Self::from_tensor_unchecked(t)?;
        img.validate()?;
        Ok(img)
    }

    /// Only checks the shape. Used for network outputs whose range is
    /// guaranteed by construction (tanh).
    pub fn from_tensor_unchecked(t: Tensor) -> Result<Self> {
        let dims = t.dims();
        if dims.len() != 4 || dims[1] != 3 {
            return Err(Error::arg(format!("image tensor must be [B, 3, H, W], got {dims:?}")));
        }
        Ok(Self(t))
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.0.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        for x in v {
            if !x.is_finite() {
                return Err(Error::Numeric("image tensor contains non-finite values".into()));
            }
            if x.abs() > 1.0 + RANGE_SLACK {
                return Err(Error::arg(format!("image value {x} outside [-1, 1]")));
            }
        }
        Ok(())
    }

    /// Builds a single image from CHW planes in `[-1, 1]`.
    pub fn from_planes(planes: Vec<f32>, height: usize, width: usize, device: &Device) -> Result<Self> {
        Self::new(Tensor::from_vec(planes, (1, 3, height, width), device)?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.0.dims()[2]
    }

    pub fn width(&self) -> usize {
        self.0.dims()[3]
    }

    pub fn device(&self) -> &Device {
        self.0.device()
    }

    /// The `i`-th image as a batch of one.
    pub fn get(&self, i: usize) -> Result<Self> {
        Ok(Self(self.0.narrow(0, i, 1)?))
    }

    /// Concatenates along the batch dimension.
    pub fn cat(images: &[ImageTensor]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::arg("cannot concatenate an empty image list"));
        }
        let ts: Vec<&Tensor> = images.iter().map(|i| &i.0).collect();
        Ok(Self(Tensor::cat(&ts, 0)?))
    }

    pub fn detach(&self) -> Self {
        Self(self.0.detach())
    }

    /// CHW planes of image `i` as `f32`.
    pub fn planes(&self, i: usize) -> Result<Vec<f32>> {
        Ok(self.0.get(i)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?)
    }

    /// Converts image `i` to 8-bit RGB.
    pub fn to_rgb8(&self, i: usize) -> Result<RgbImage> {
        let (h, w) = (self.height(), self.width());
        let planes = self.planes(i)?;
        let plane = h * w;
        let mut out = RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = std::array::from_fn(|c| {
                    let v = planes[c * plane + y * w + x];
                    (((v + 1.0) * 0.5).clamp(0.0, 1.0) * 255.0).round() as u8
                });
                out.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        Ok(out)
    }
}

/// Decodes a PNG or JPEG, resizes the shorter side to `size`, center-crops to
/// `size × size` and maps to `[-1, 1]`. Grayscale inputs are replicated to
/// three channels.
pub fn load_image(path: impl AsRef<Path>, size: usize) -> Result<ImageTensor> {
    load_image_on(path, size, &Device::Cpu)
}

pub fn load_image_on(path: impl AsRef<Path>, size: usize, device: &Device) -> Result<ImageTensor> {
    if size == 0 {
        return Err(Error::arg("image size must be positive"));
    }
    let rgb = decode_rgb(path.as_ref())?;
    let planes = resize_and_center_crop(&rgb, size);
    ImageTensor::from_planes(planes, size, size, device)
}

fn decode_rgb(path: &Path) -> Result<Rgb32FImage> {
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let decoded = ImageReader::open(path)
        .map_err(|e| decode_err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;
    Ok(decoded.to_rgb32f())
}

/// Decodes an image and returns it with its original `(height, width)`,
/// resized (not cropped) to `height × width` rounded to multiples of 8.
pub fn load_image_for_stylize(path: impl AsRef<Path>, device: &Device) -> Result<(ImageTensor, (usize, usize))> {
    let rgb = decode_rgb(path.as_ref())?;
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let round8 = |v: usize| (((v as f64 / 8.0).round() as usize) * 8).max(16);
    let (nh, nw) = (round8(h), round8(w));
    let resized = if (nh, nw) == (h, w) {
        rgb
    } else {
        image::imageops::resize(&rgb, nw as u32, nh as u32, FilterType::Triangle)
    };
    let plane = nh * nw;
    let mut planes = vec![0f32; 3 * plane];
    for (x, y, px) in resized.enumerate_pixels() {
        for c in 0..3 {
            planes[c * plane + y as usize * nw + x as usize] = px.0[c].clamp(0.0, 1.0) * 2.0 - 1.0;
        }
    }
    Ok((ImageTensor::from_planes(planes, nh, nw, device)?, (h, w)))
}

fn resize_and_center_crop(rgb: &Rgb32FImage, size: usize) -> Vec<f32> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let shorter = w.min(h) as f64;
    let scale = size as f64 / shorter;
    let nw = ((w as f64 * scale).round() as usize).max(size);
    let nh = ((h as f64 * scale).round() as usize).max(size);
    let resized = if nw == w && nh == h {
        rgb.clone()
    } else {
        image::imageops::resize(rgb, nw as u32, nh as u32, FilterType::Triangle)
    };
    let (x0, y0) = ((nw - size) / 2, (nh - size) / 2);
    let plane = size * size;
    let mut out = vec![0f32; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let px = resized.get_pixel((x0 + x) as u32, (y0 + y) as u32);
            for c in 0..3 {
                out[c * plane + y * size + x] = (px.0[c].clamp(0.0, 1.0)) * 2.0 - 1.0;
            }
        }
    }
    out
}

/// Writes image `i` of the batch as a PNG. The file appears only once fully
/// written.
pub fn save_image(img: &ImageTensor, i: usize, path: impl AsRef<Path>) -> Result<()> {
    save_png(&img.to_rgb8(i)?, path)
}

/// Writes a PNG via a temporary sibling file.
pub fn save_png(rgb: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("png.partial");
    let write = || -> std::result::Result<(), image::ImageError> {
        rgb.save_with_format(&tmp, image::ImageFormat::Png)
    };
    if let Err(e) = write() {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::Argument(format!("failed to write {}: {e}", path.display())));
    }
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(dir: &Path, name: &str, img: image::DynamicImage) -> std::path::PathBuf {
        let p = dir.join(name);
        img.save(&p).unwrap();
        p
    }

    #[test]
    fn loads_square_rgb_at_target_size() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(512, 512, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, 7]));
        let p = write_png(dir.path(), "a.png", img.into());
        let t = load_image(&p, 256).unwrap();
        assert_eq!(t.tensor().dims(), &[1, 3, 256, 256]);
        t.validate().unwrap();
    }

    #[test]
    fn grayscale_is_replicated() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::GrayImage::from_fn(40, 30, |x, y| image::Luma([((x * 5 + y * 3) % 256) as u8]));
        let p = write_png(dir.path(), "g.png", img.into());
        let t = load_image(&p, 16).unwrap();
        let planes = t.planes(0).unwrap();
        let n = 16 * 16;
        assert_eq!(&planes[..n], &planes[n..2 * n]);
        assert_eq!(&planes[..n], &planes[2 * n..]);
    }

    #[test]
    fn truncated_jpeg_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(32, 32, |x, y| image::Rgb([x as u8 * 8, y as u8 * 8, 100]));
        let p = dir.path().join("t.jpg");
        img.save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 3]).unwrap();
        let err = load_image(&p, 16).unwrap_err();
        assert!(matches!(err, Error::Decode { .. }));
        assert!(err.to_string().contains("t.jpg"), "{err}");
    }

    #[test]
    fn zero_size_is_rejected() {
        let err = load_image("does-not-matter.png", 0).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn non_square_is_center_cropped() {
        let dir = tempfile::tempdir().unwrap();
        // left third black, middle white, right third black: the center crop is white
        let img = RgbImage::from_fn(96, 32, |x, _| {
            if (32..64).contains(&x) { image::Rgb([255; 3]) } else { image::Rgb([0; 3]) }
        });
        let p = write_png(dir.path(), "wide.png", img.into());
        let t = load_image(&p, 32).unwrap();
        let planes = t.planes(0).unwrap();
        assert!(planes.iter().all(|v| (*v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn save_roundtrips_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(8, 8, |x, y| image::Rgb([x as u8 * 30, y as u8 * 30, 128]));
        let p = write_png(dir.path(), "src.png", img.clone().into());
        let t = load_image(&p, 8).unwrap();
        let out = dir.path().join("out.png");
        save_image(&t, 0, &out).unwrap();
        let back = image::open(&out).unwrap().to_rgb8();
        assert_eq!(back, img);
    }
}
