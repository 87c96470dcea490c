//! Gaussian noise, Gaussian blur, rescaling and cropout.
//!
//! Parameters are in normalised tensor units (the `[-1, 1]` range) unless
//! stated otherwise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::tensor::{Element, Tensor, Var};

/// I.i.d. zero-mean Gaussian field of the given shape.
pub fn gaussian_field<T: Element>(shape: &[usize], sigma: f64, rng: &mut impl Rng) -> Tensor<T> {
    if sigma == 0.0 {
        return Tensor::zeros(shape);
    }
    let normal = Normal::new(0.0, sigma).expect("finite non-negative sigma");
    Tensor::from_fn(shape, |_| T::of(normal.sample(rng)))
}

/// Adds Gaussian noise with standard deviation `sigma`, then clamps.
pub fn gaussian_noise<T: Element>(x: &Var<T>, sigma: f64, rng: &mut impl Rng) -> Result<Var<T>> {
    contract!(sigma.is_finite() && sigma >= 0.0, "noise sigma must be finite and >= 0, got {sigma}");
    Ok(x.add_const(&gaussian_field(x.shape(), sigma, rng)).clamp(-1.0, 1.0))
}

/// Normalised `size × size` Gaussian kernel; `sigma <= 0` yields a delta.
pub fn gaussian_kernel<T: Element>(size: usize, sigma: f64) -> Result<Tensor<T>> {
    contract!(size % 2 == 1, "blur kernel size must be odd, got {size}");
    let r = (size / 2) as f64;
    let mut k = vec![0.0f64; size * size];
    if sigma <= 0.0 {
        k[size * size / 2] = 1.0;
    } else {
        for (i, v) in k.iter_mut().enumerate() {
            let (dy, dx) = ((i / size) as f64 - r, (i % size) as f64 - r);
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
        let total: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= total);
    }
    Tensor::from_vec(&[size, size], k.into_iter().map(T::of).collect())
}

/// Depthwise Gaussian blur with reflect padding.
pub fn gaussian_blur<T: Element>(x: &Var<T>, kernel_size: usize, sigma: f64) -> Result<Var<T>> {
    let s = x.shape();
    contract!(s.len() == 4, "blur needs a 4-d tensor");
    contract!(kernel_size / 2 < s[2].min(s[3]), "blur kernel {kernel_size} too large for {}x{}", s[2], s[3]);
    Ok(x.filter2d_reflect(&gaussian_kernel(kernel_size, sigma)?).clamp(-1.0, 1.0))
}

/// Bilinear resampling operator `[out, input]` with half-pixel centres.
pub fn bilinear_matrix<T: Element>(out: usize, input: usize) -> Tensor<T> {
    let mut m = vec![0.0f64; out * input];
    let ratio = input as f64 / out as f64;
    for i in 0..out {
        let src = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (input - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(input - 1);
        let frac = src - i0 as f64;
        m[i * input + i0] += 1.0 - frac;
        m[i * input + i1] += frac;
    }
    Tensor::from_vec(&[out, input], m.into_iter().map(T::of).collect()).expect("bilinear operator")
}

/// Intermediate side used by [`random_scale`].
pub fn scaled_side(side: usize, factor: f64) -> usize {
    ((side as f64 * factor).round() as usize).max(1)
}

/// Bilinear resize by `factor`, then bilinear resize back to the original side.
pub fn random_scale<T: Element>(x: &Var<T>, factor: f64) -> Result<Var<T>> {
    contract!(factor.is_finite() && factor > 0.0, "scale factor must be positive, got {factor}");
    let s = x.shape();
    contract!(s.len() == 4 && s[2] == s[3], "scale needs square [N, C, S, S] input, got {s:?}");
    let side = s[2];
    let mid = scaled_side(side, factor);
    if mid == side {
        return Ok(x.clone());
    }
    let down = bilinear_matrix::<f64>(mid, side);
    let up = bilinear_matrix::<f64>(side, mid);
    // compose both resamplings into one side×side operator
    let mut round_trip = vec![0.0f64; side * side];
    f64::gemm(side, mid, side, up.data(), false, down.data(), false, &mut round_trip, false);
    let op = Tensor::from_vec(&[side, side], round_trip.into_iter().map(T::of).collect())?;
    Ok(x.spatial_linear(&op, &op).clamp(-1.0, 1.0))
}

/// Kept rectangle of one sample, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropRect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

/// Random rectangle covering `keep_ratio` of a `side × side` image.
pub fn crop_rect(side: usize, keep_ratio: f64, rng: &mut impl Rng) -> CropRect {
    let edge = ((side as f64) * keep_ratio.clamp(0.0, 1.0).sqrt()).round() as usize;
    let edge = edge.min(side);
    let top = if edge < side { rng.random_range(0..=side - edge) } else { 0 };
    let left = if edge < side { rng.random_range(0..=side - edge) } else { 0 };
    CropRect { top, left, height: edge, width: edge }
}

/// Cropout: keeps a random rectangle of `marked` per sample and fills the
/// rest with the corresponding `cover` pixels.
pub fn random_crop<T: Element>(
    marked: &Var<T>,
    cover: &Var<T>,
    keep_ratio: f64,
    rng: &mut impl Rng,
) -> Result<(Var<T>, Vec<CropRect>)> {
    contract!((0.0..=1.0).contains(&keep_ratio), "keep ratio must lie in [0, 1], got {keep_ratio}");
    contract!(marked.shape() == cover.shape(), "crop: marked and cover shapes differ");
    let (n, c, h, w) = marked.value().dims4();
    contract!(h == w, "crop needs square input");
    let rects: Vec<CropRect> = (0..n).map(|_| crop_rect(h, keep_ratio, rng)).collect();
    let mask = Tensor::from_fn(marked.shape(), |i| {
        let b = i / (c * h * w);
        let (y, x) = ((i / w) % h, i % w);
        if rects[b].contains(y, x) { T::one() } else { T::zero() }
    });
    let inverse = mask.map(|m| T::one() - m);
    Ok((marked.mul_const(&mask).add(&cover.mul_const(&inverse)), rects))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(side: usize) -> Tensor<f64> {
        Tensor::from_fn(&[2, 3, side, side], |i| ((i as f64) * 0.173).sin() * 0.7)
    }

    #[test]
    fn zero_noise_is_identity() {
        let x = Var::constant(img(8));
        let y = gaussian_noise(&x, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn noise_has_requested_spread() {
        let field: Tensor<f64> = gaussian_field(&[1_000_000], 0.2, &mut ChaCha8Rng::seed_from_u64(3));
        let n = field.len() as f64;
        let mean = field.sum() / n;
        let sd = (field.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        assert!((sd / 0.2 - 1.0).abs() < 0.05, "sample sd {sd}");
    }

    #[test]
    fn noise_gradient_is_identity_inside_range() {
        let x = Var::param(Tensor::<f64>::full(&[1, 3, 4, 4], 0.1));
        gaussian_noise(&x, 0.01, &mut ChaCha8Rng::seed_from_u64(2)).unwrap().sum().backward();
        assert!(x.grad().unwrap().data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn blur_delta_and_constant() {
        let x = Var::constant(img(9));
        assert_eq!(gaussian_blur(&x, 5, 0.0).unwrap().value(), x.value());
        let c = Var::constant(Tensor::<f64>::full(&[1, 3, 9, 9], -0.4));
        assert!(gaussian_blur(&c, 7, 1.7).unwrap().value().max_abs_diff(c.value()) < 1e-12);
        assert!(gaussian_blur(&x, 4, 1.0).is_err());
    }

    #[test]
    fn blur_matches_dense_convolution() {
        let side = 10;
        let x = img(side);
        let k: Tensor<f64> = gaussian_kernel(5, 1.3).unwrap();
        let got = gaussian_blur(&Var::constant(x.clone()), 5, 1.3).unwrap();
        let refl = |i: isize| -> usize {
            let m = if i < 0 { -i } else if i >= side as isize { 2 * (side as isize - 1) - i } else { i };
            m as usize
        };
        for p in 0..6 {
            for i in 0..side {
                for j in 0..side {
                    let mut acc = 0.0;
                    for a in 0..5 {
                        for b in 0..5 {
                            let (ii, jj) = (refl(i as isize + a - 2), refl(j as isize + b - 2));
                            acc += k.data()[(a * 5 + b) as usize] * x.data()[p * side * side + ii * side + jj];
                        }
                    }
                    let out = got.value().data()[p * side * side + i * side + j];
                    assert!((out - acc.clamp(-1.0, 1.0)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scale_identity_and_constant() {
        let x = Var::constant(img(16));
        assert_eq!(random_scale(&x, 1.0).unwrap().value(), x.value());
        let c = Var::constant(Tensor::<f32>::full(&[1, 3, 16, 16], 0.3));
        for f in [0.5, 0.7, 1.3, 2.0] {
            assert!(random_scale(&c, f).unwrap().value().max_abs_diff(c.value()) < 1e-6);
        }
    }

    #[test]
    fn half_scale_flattens_checkerboard() {
        let side = 16;
        let x = Tensor::<f64>::from_fn(&[1, 3, side, side], |i| {
            if ((i / side) % side + i % side) % 2 == 0 { 0.5 } else { -0.3 }
        });
        let y = random_scale(&Var::constant(x), 0.5).unwrap();
        // every 2×2 cell averages to 0.1, so the downscaled image is flat
        assert!(y.value().data().iter().all(|v| (v - 0.1).abs() < 1e-12));
    }

    #[test]
    fn bilinear_rows_sum_to_one() {
        for (o, i) in [(8, 16), (16, 8), (7, 13)] {
            let m: Tensor<f64> = bilinear_matrix(o, i);
            for r in 0..o {
                let s: f64 = m.data()[r * i..(r + 1) * i].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn crop_extremes_and_membership() {
        let marked = Var::constant(img(12));
        let cover = Var::constant(Tensor::<f64>::full(&[2, 3, 12, 12], -0.9));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (all, _) = random_crop(&marked, &cover, 1.0, &mut rng).unwrap();
        assert_eq!(all.value(), marked.value());
        let (none, _) = random_crop(&marked, &cover, 0.0, &mut rng).unwrap();
        assert_eq!(none.value(), cover.value());
        let (mixed, rects) = random_crop(&marked, &cover, 0.4, &mut rng).unwrap();
        for b in 0..2 {
            assert_eq!(rects[b].height, 8);
            for c in 0..3 {
                for y in 0..12 {
                    for x in 0..12 {
                        let i = ((b * 3 + c) * 12 + y) * 12 + x;
                        let want = if rects[b].contains(y, x) { marked.value().data()[i] } else { -0.9 };
                        assert_eq!(mixed.value().data()[i], want);
                    }
                }
            }
        }
    }
}
