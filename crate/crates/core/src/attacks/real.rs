//! Non-differentiable, real-world counterparts of the simulated attacks.
//!
//! Every function works on 8-bit rasters: the input is quantised first and
//! the output is an exact 8-bit image again.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::imageops::FilterType;
use image::{ImageFormat, RgbImage};
use rand::Rng;

use crate::error::{contract, Error, Result};
use crate::imaging::ImageTensor;
use crate::tensor::{Tensor, Var};

use super::simple::{crop_rect, gaussian_field, gaussian_kernel};

fn per_sample(img: &ImageTensor, mut f: impl FnMut(&RgbImage, usize) -> Result<RgbImage>) -> Result<ImageTensor> {
    let out = (0..img.batch())
        .map(|i| ImageTensor::from_rgb8(&f(&img.to_rgb8(i), i)?))
        .collect::<Result<Vec<_>>>()?;
    ImageTensor::stack(&out)
}

/// Baseline JPEG bytes at quality `qf`.
pub fn encode_jpeg(img: &RgbImage, qf: u8) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    JpegEncoder::new_with_quality(&mut bytes, qf)
        .encode_image(img)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(bytes)
}

/// Encodes to baseline JPEG at `qf` and decodes again.
pub fn jpeg_round_trip(img: &RgbImage, qf: u8) -> Result<RgbImage> {
    let bytes = encode_jpeg(img, qf)?;
    let decoded = image::load(Cursor::new(bytes), ImageFormat::Jpeg)
        .map_err(|e| Error::Decode { path: "<memory>".into(), message: e.to_string() })?;
    Ok(decoded.to_rgb8())
}

/// True codec round trip.
pub fn real_jpeg(x: &ImageTensor, qf: u8) -> Result<ImageTensor> {
    contract!((1..=100).contains(&qf), "quality factor {qf} outside [1, 100]");
    per_sample(x, |img, _| jpeg_round_trip(img, qf))
}

/// Resamples to `side·factor` and back with a triangle filter.
pub fn real_scale(x: &ImageTensor, factor: f64) -> Result<ImageTensor> {
    contract!(factor.is_finite() && factor > 0.0, "scale factor must be positive");
    let side = x.side() as u32;
    let mid = ((side as f64 * factor).round() as u32).max(1);
    per_sample(x, |img, _| {
        if mid == side {
            return Ok(img.clone());
        }
        let small = image::imageops::resize(img, mid, mid, FilterType::Triangle);
        Ok(image::imageops::resize(&small, side, side, FilterType::Triangle))
    })
}

/// Gaussian blur of the 8-bit image, rounded back to 8 bits.
pub fn real_blur(x: &ImageTensor, kernel: usize, sigma: f64) -> Result<ImageTensor> {
    let k: Tensor<f64> = gaussian_kernel(kernel, sigma)?;
    let q = x.quantized();
    let blurred = Var::constant(q.tensor().cast::<f64>()).filter2d_reflect(&k);
    Ok(ImageTensor::new(blurred.value().cast::<f32>())?.quantized())
}

/// Additive Gaussian noise; `sigma` as a fraction of full scale.
pub fn real_noise(x: &ImageTensor, sigma: f64, rng: &mut impl Rng) -> Result<ImageTensor> {
    contract!(sigma >= 0.0, "noise sigma must be >= 0");
    let q = x.quantized();
    let noise: Tensor<f32> = gaussian_field(q.shape(), 2.0 * sigma, rng);
    Ok(ImageTensor::new(q.tensor().zip_map(&noise, |a, b| (a + b).clamp(-1.0, 1.0)))?.quantized())
}

/// Cropout on 8-bit rasters: pixels outside a random rectangle come from `cover`.
pub fn real_crop(x: &ImageTensor, cover: &ImageTensor, keep_ratio: f64, rng: &mut impl Rng) -> Result<ImageTensor> {
    contract!(x.shape() == cover.shape(), "crop: marked and cover shapes differ");
    contract!((0.0..=1.0).contains(&keep_ratio), "keep ratio must lie in [0, 1]");
    per_sample(x, |img, i| {
        let fill = cover.to_rgb8(i);
        let rect = crop_rect(img.width() as usize, keep_ratio, rng);
        Ok(RgbImage::from_fn(img.width(), img.height(), |px, py| {
            if rect.contains(py as usize, px as usize) { *img.get_pixel(px, py) } else { *fill.get_pixel(px, py) }
        }))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use crate::synthetic::natural_image;

    #[test]
    fn jpeg_keeps_shape_and_is_lossy() {
        let x = ImageTensor::from_rgb8(&natural_image(1, 32)).unwrap();
        let y = real_jpeg(&x, 30).unwrap();
        assert_eq!(y.shape(), x.shape());
        let p = psnr(&x, &y).unwrap();
        assert!(p < 60.0 && p > 20.0, "{p}");
    }

    #[test]
    fn unit_scale_is_exact() {
        let x = ImageTensor::from_rgb8(&natural_image(2, 32)).unwrap();
        assert_eq!(real_scale(&x, 1.0).unwrap(), x.quantized());
    }
}
