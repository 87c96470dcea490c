//! PSNR and SSIM on the 8-bit `[0, 255]` scale.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::imaging::ImageTensor;

/// PSNR reported for identical inputs.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn between(a: &ImageTensor, b: &ImageTensor) -> Result<Self> {
        Ok(Self { psnr_db: psnr(a, b)?, ssim: ssim(a, b)? })
    }
}

fn to_255(v: f32) -> f64 {
    (v as f64 + 1.0) * 127.5
}

fn check_shapes(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Contract(format!("metric inputs differ in shape: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    psnr_with_cap(a, b, PSNR_CAP_DB)
}

pub fn psnr_with_cap(a: &ImageTensor, b: &ImageTensor, cap: f64) -> Result<f64> {
    check_shapes(a, b)?;
    let (da, db) = (a.tensor().data(), b.tensor().data());
    let sse: f64 = da
        .iter()
        .zip(db)
        .map(|(&x, &y)| {
            let d = to_255(x) - to_255(y);
            d * d
        })
        .sum();
    let mse = sse / da.len() as f64;
    if mse == 0.0 {
        return Ok(cap);
    }
    Ok((20.0 * (255.0 / mse.sqrt()).log10()).min(cap))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" filtering of an `s × s` plane.
fn filter_valid(plane: &[f64], s: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let out = s - k + 1;
    let mut rows = vec![0.0; s * out];
    for i in 0..s {
        for j in 0..out {
            rows[i * out + j] = (0..k).map(|t| win[t] * plane[i * s + j + t]).sum();
        }
    }
    let mut res = vec![0.0; out * out];
    for i in 0..out {
        for j in 0..out {
            res[i * out + j] = (0..k).map(|t| win[t] * rows[(i + t) * out + j]).sum();
        }
    }
    res
}

/// Mean structural similarity: 11×11 Gaussian window (σ = 1.5), valid
/// positions only, averaged over channels and batch samples.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_shapes(a, b)?;
    let s = a.side();
    contract!(s >= SSIM_WINDOW, "ssim needs side >= {SSIM_WINDOW}, got {s}");
    let win = gaussian_window();
    let plane = s * s;
    let (da, db) = (a.tensor().data(), b.tensor().data());
    let planes = da.len() / plane;
    let mut total = 0.0;
    for p in 0..planes {
        let x: Vec<f64> = da[p * plane..(p + 1) * plane].iter().map(|&v| to_255(v)).collect();
        let y: Vec<f64> = db[p * plane..(p + 1) * plane].iter().map(|&v| to_255(v)).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();
        let mx = filter_valid(&x, s, &win);
        let my = filter_valid(&y, s, &win);
        let sxx = filter_valid(&xx, s, &win);
        let syy = filter_valid(&yy, s, &win);
        let sxy = filter_valid(&xy, s, &win);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / planes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn img(side: usize, f: impl Fn(usize) -> f32) -> ImageTensor {
        ImageTensor::new(Tensor::from_fn(&[1, 3, side, side], f)).unwrap()
    }

    fn texture(side: usize) -> ImageTensor {
        img(side, |i| {
            let (y, x) = ((i / side) % side, i % side);
            ((x as f32 * 0.3).sin() * 0.5 + (y as f32 * 0.17).cos() * 0.3 + (i / (side * side)) as f32 * 0.1)
                .clamp(-1.0, 1.0)
        })
    }

    /// Direct windowed SSIM, one window at a time.
    fn ssim_oracle(a: &ImageTensor, b: &ImageTensor) -> f64 {
        let s = a.side();
        let k = 11;
        let w = gaussian_window();
        let plane = s * s;
        let mut total = 0.0;
        let planes = a.tensor().len() / plane;
        for p in 0..planes {
            let pa = &a.tensor().data()[p * plane..];
            let pb = &b.tensor().data()[p * plane..];
            let mut acc = 0.0;
            let mut count = 0.0;
            for i in 0..=s - k {
                for j in 0..=s - k {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for u in 0..k {
                        for v in 0..k {
                            let wt = w[u] * w[v];
                            let x = to_255(pa[(i + u) * s + j + v]);
                            let y = to_255(pb[(i + u) * s + j + v]);
                            mx += wt * x;
                            my += wt * y;
                            xx += wt * x * x;
                            yy += wt * y * y;
                            xy += wt * x * y;
                        }
                    }
                    let (vx, vy, c) = (xx - mx * mx, yy - my * my, xy - mx * my);
                    acc += ((2.0 * mx * my + SSIM_C1) * (2.0 * c + SSIM_C2))
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                    count += 1.0;
                }
            }
            total += acc / count;
        }
        total / planes as f64
    }

    #[test]
    fn psnr_closed_forms() {
        let a = texture(16).clamped();
        let a = img(16, |i| a.tensor().data()[i].clamp(-0.8, 0.8));
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let eight = img(16, |i| a.tensor().data()[i] + 16.0 / 255.0);
        assert!((psnr(&a, &eight).unwrap() - 20.0 * (255.0f64 / 8.0).log10()).abs() < 1e-3);
        let lsb = img(16, |i| a.tensor().data()[i] + 2.0 / 255.0);
        assert!((psnr(&a, &lsb).unwrap() - 20.0 * 255.0f64.log10()).abs() < 1e-3);
        assert_eq!(psnr(&a, &eight).unwrap(), psnr(&eight, &a).unwrap());
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let a = ImageTensor::filled(1, 16, 0.0);
        let b = ImageTensor::filled(1, 12, 0.0);
        assert!(matches!(psnr(&a, &b), Err(Error::Contract(_))));
        assert!(matches!(ssim(&a, &b), Err(Error::Contract(_))));
        let tiny = ImageTensor::filled(1, 8, 0.0);
        assert!(ssim(&tiny, &tiny).is_err());
    }

    #[test]
    fn ssim_identity_and_constants() {
        let t = texture(24);
        assert!((ssim(&t, &t).unwrap() - 1.0).abs() < 1e-12);
        let z = ImageTensor::filled(1, 16, 0.0);
        assert!((ssim(&z, &z).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_windowed_oracle() {
        let a = texture(20);
        let b = img(20, |i| (a.tensor().data()[i] + ((i * 31 % 17) as f32 - 8.0) * 0.02).clamp(-1.0, 1.0));
        let fast = ssim(&a, &b).unwrap();
        let slow = ssim_oracle(&a, &b);
        assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
        assert!(fast < 1.0);
    }
}
