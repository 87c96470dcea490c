//! Image tensors, value-range conventions and raster I/O.
//!
//! Pipeline images are `[batch, 3, side, side]` tensors in `[-1, 1]`,
//! obtained from 8-bit samples by `v / 127.5 - 1`. Conversion back to 8-bit
//! happens only when writing files or computing metrics.

use std::path::Path;

use image::imageops::FilterType;
use image::{ImageReader, RgbImage};

use crate::error::{contract, Error, Result};
use crate::tensor::{Tensor, Var};

/// Amplification applied to difference and residual panels for display.
pub const DIFF_AMPLIFICATION: f32 = 5.0;

/// Batched RGB image in the normalised `[-1, 1]` range.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor(Tensor<f32>);

impl ImageTensor {
    /// Wraps a tensor after checking rank, channel count, squareness and finiteness.
    pub fn new(t: Tensor<f32>) -> Result<Self> {
        if t.shape().len() != 4 {
            return Err(Error::Shape(format!("image tensor must be 4-d, got {:?}", t.shape())));
        }
        let (n, c, h, w) = t.dims4();
        if n == 0 || c != 3 || h != w || h == 0 {
            return Err(Error::Shape(format!("expected [N>0, 3, S, S], got {:?}", t.shape())));
        }
        if !t.all_finite() {
            return Err(Error::NonFinite("image tensor".into()));
        }
        Ok(Self(t))
    }

    pub fn filled(batch: usize, side: usize, value: f32) -> Self {
        Self(Tensor::full(&[batch, 3, side, side], value))
    }

    pub fn from_var(v: &Var<f32>) -> Result<Self> {
        Self::new(v.value().clone())
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.0
    }

    pub fn constant(&self) -> Var<f32> {
        Var::constant(self.0.clone())
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn side(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }

    pub fn in_range(&self) -> bool {
        self.0.data().iter().all(|v| (-1.0..=1.0).contains(v))
    }

    pub fn clamped(&self) -> Self {
        Self(self.0.map(|v| v.clamp(-1.0, 1.0)))
    }

    /// Single-image view of sample `i`.
    pub fn get(&self, i: usize) -> Result<Self> {
        Self::new(self.0.narrow(0, i, 1)?)
    }

    /// Concatenates images along the batch dimension.
    pub fn stack(images: &[ImageTensor]) -> Result<Self> {
        let parts: Vec<&Tensor<f32>> = images.iter().map(|i| &i.0).collect();
        Self::new(Tensor::cat(&parts, 0)?)
    }

    /// Converts sample `i` to an 8-bit raster (round to nearest, clamp).
    pub fn to_rgb8(&self, i: usize) -> RgbImage {
        let s = self.side();
        let plane = s * s;
        let d = &self.0.data()[i * 3 * plane..(i + 1) * 3 * plane];
        RgbImage::from_fn(s as u32, s as u32, |x, y| {
            let p = y as usize * s + x as usize;
            image::Rgb([to_u8(d[p]), to_u8(d[plane + p]), to_u8(d[2 * plane + p])])
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        if w != h {
            return Err(Error::Shape(format!("image must be square, got {w}x{h}")));
        }
        let s = w as usize;
        let plane = s * s;
        let mut data = vec![0.0f32; 3 * plane];
        for (x, y, px) in img.enumerate_pixels() {
            let p = y as usize * s + x as usize;
            for c in 0..3 {
                data[c * plane + p] = from_u8(px.0[c]);
            }
        }
        Self::new(Tensor::from_vec(&[1, 3, s, s], data)?)
    }

    /// Rounds every sample to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        Self(self.0.map(|v| from_u8(to_u8(v))))
    }
}

pub fn to_u8(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn from_u8(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Decodes a raster file and bilinearly resizes it to `side × side`.
pub fn load_image(path: impl AsRef<Path>, side: usize) -> Result<ImageTensor> {
    let path = path.as_ref();
    contract!(side > 0, "side must be positive");
    let rgb = decode_rgb8(path)?;
    ImageTensor::from_rgb8(&resize_rgb8(&rgb, side))
}

pub fn decode_rgb8(path: &Path) -> Result<RgbImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader
        .decode()
        .map_err(|e| Error::Decode { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(img.to_rgb8())
}

pub fn resize_rgb8(img: &RgbImage, side: usize) -> RgbImage {
    let s = side as u32;
    if img.dimensions() == (s, s) {
        img.clone()
    } else {
        image::imageops::resize(img, s, s, FilterType::Triangle)
    }
}

/// Writes sample `i` as a PNG.
pub fn save_image(img: &ImageTensor, i: usize, path: impl AsRef<Path>) -> Result<()> {
    save_rgb8(&img.to_rgb8(i), path.as_ref())
}

pub fn save_rgb8(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Encode(other.to_string()),
    })
}

/// Display panel for a signed difference: `gain · d` re-centred on mid-grey.
pub fn amplified_panel(diff: &Tensor<f32>, gain: f32) -> Result<ImageTensor> {
    ImageTensor::new(diff.map(|v| (v * gain).clamp(-1.0, 1.0)))
}
