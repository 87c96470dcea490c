//! Procedural stand-ins for natural photographs.
//!
//! Each image is a smooth colour gradient overlaid with multi-octave value
//! noise, a handful of soft-edged ellipses and rectangles, and a little
//! fine-grain texture. Output is fully determined by the seed.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::imaging::ImageTensor;

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(rng: &mut ChaCha8Rng, cells: usize, side: usize) -> Vec<f64> {
    let grid: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            let fy = y as f64 / side as f64 * cells as f64;
            let fx = x as f64 / side as f64 * cells as f64;
            let (iy, ix) = (fy.floor() as usize, fx.floor() as usize);
            let (ty, tx) = (smoothstep(0.0, 1.0, fy - iy as f64), smoothstep(0.0, 1.0, fx - ix as f64));
            let g = |a: usize, b: usize| grid[a * (cells + 1) + b];
            let top = g(iy, ix) * (1.0 - tx) + g(iy, ix + 1) * tx;
            let bottom = g(iy + 1, ix) * (1.0 - tx) + g(iy + 1, ix + 1) * tx;
            out[y * side + x] = top * (1.0 - ty) + bottom * ty;
        }
    }
    out
}

/// Renders one deterministic image of the given side.
pub fn natural_image(seed: u64, side: usize) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a9e);
    let s = side as f64;
    let mut canvas = vec![[0.0f64; 3]; side * side];

    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(20.0..235.0));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(20.0..235.0));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    for y in 0..side {
        for x in 0..side {
            let t = (((x as f64 / s - 0.5) * dx + (y as f64 / s - 0.5) * dy) + 0.5).clamp(0.0, 1.0);
            canvas[y * side + x] = std::array::from_fn(|c| c0[c] * (1.0 - t) + c1[c] * t);
        }
    }

    for (cells, amp) in [(3usize, 35.0f64), (7, 16.0), (15, 7.0)] {
        let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..1.0));
        let field = value_noise(&mut rng, cells, side);
        for (px, v) in canvas.iter_mut().zip(&field) {
            for c in 0..3 {
                px[c] += amp * tint[c] * v;
            }
        }
    }

    let shapes = rng.random_range(3..8);
    for _ in 0..shapes {
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..255.0));
        let alpha = rng.random_range(0.55..0.95);
        let (cx, cy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let (rx, ry) = (rng.random_range(0.06..0.3) * s, rng.random_range(0.06..0.3) * s);
        let ellipse = rng.random_bool(0.6);
        let soft = rng.random_range(0.8..2.5);
        for y in 0..side {
            for x in 0..side {
                let (u, v) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
                // signed distance in pixels, approximately
                let dist = if ellipse {
                    ((u * u + v * v).sqrt() - 1.0) * rx.min(ry)
                } else {
                    ((u.abs() - 1.0) * rx).max((v.abs() - 1.0) * ry)
                };
                let cover = alpha * (1.0 - smoothstep(-soft, soft, dist));
                if cover > 0.0 {
                    let px = &mut canvas[y * side + x];
                    for c in 0..3 {
                        px[c] = px[c] * (1.0 - cover) + color[c] * cover;
                    }
                }
            }
        }
    }

    let grain = Normal::new(0.0, 2.0).expect("valid sigma");
    RgbImage::from_fn(side as u32, side as u32, |x, y| {
        let px = canvas[y as usize * side + x as usize];
        Rgb(std::array::from_fn(|c| (px[c] + grain.sample(&mut rng)).round().clamp(0.0, 255.0) as u8))
    })
}

/// `count` consecutive images starting at `first_seed`, as single-image tensors.
pub fn corpus(first_seed: u64, count: usize, side: usize) -> Result<Vec<ImageTensor>> {
    (0..count as u64).map(|i| ImageTensor::from_rgb8(&natural_image(first_seed + i, side))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_varied() {
        let a = natural_image(7, 48);
        assert_eq!(a, natural_image(7, 48));
        assert_ne!(a, natural_image(8, 48));
        let mut lo = [255u8; 3];
        let mut hi = [0u8; 3];
        for p in a.pixels() {
            for c in 0..3 {
                lo[c] = lo[c].min(p.0[c]);
                hi[c] = hi[c].max(p.0[c]);
            }
        }
        assert!((0..3).any(|c| hi[c] - lo[c] > 60), "image too flat: {lo:?}..{hi:?}");
    }
}
