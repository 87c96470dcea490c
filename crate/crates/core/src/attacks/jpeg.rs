//! Differentiable JPEG approximations and their mixture.
//!
//! All three simulators share one frame: RGB → YCbCr (centred so that a
//! zero image maps to zero coefficients), 8×8 block DCT, a per-simulator
//! coefficient map, inverse DCT, YCbCr → RGB, clamp to `[-1, 1]`.

use crate::error::{contract, Result};
use crate::tensor::{Element, Tensor, Var};

use super::config::{check_weights, merge_terms, AttackConfig, MixTerm};
use super::dct::{dct_8x8, idct_8x8};
use super::JpegSimulator;

#[rustfmt::skip]
const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Block position (`row * 8 + col`) of the i-th coefficient in zig-zag order.
#[rustfmt::skip]
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5,
    12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

const YCBCR: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.168_736, -0.331_264, 0.5],
    [0.5, -0.418_688, -0.081_312],
];

/// Half of the 8-bit span: one normalised unit in 8-bit levels.
const LEVELS_PER_UNIT: f64 = 127.5;

fn check_qf(qf: u8) -> Result<()> {
    contract!((10..=100).contains(&qf), "quality factor {qf} outside [10, 100]");
    Ok(())
}

/// Annex K table scaled with the usual libjpeg quality mapping.
pub fn quant_table(qf: u8, chroma: bool) -> [f64; 64] {
    let q = qf.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let base = if chroma { &CHROMA_BASE } else { &LUMA_BASE };
    std::array::from_fn(|i| ((base[i] as u32 * scale + 50) / 100).clamp(1, 255) as f64)
}

/// Number of zig-zag coefficients the mask simulator keeps.
pub fn mask_keep_count(qf: u8, chroma: bool) -> usize {
    let f = qf as f64 / 100.0;
    let k = if chroma { 64.0 * f * f } else { 64.0 * f };
    (k.round() as usize).clamp(1, 64)
}

fn mask_pattern(qf: u8, chroma: bool) -> [f64; 64] {
    let mut m = [0.0; 64];
    for &pos in &ZIGZAG[..mask_keep_count(qf, chroma)] {
        m[pos] = 1.0;
    }
    m
}

fn forward_color() -> Vec<Vec<f64>> {
    YCBCR.iter().map(|row| row.iter().map(|v| v * LEVELS_PER_UNIT).collect()).collect()
}

fn inverse_color() -> Vec<Vec<f64>> {
    let m = YCBCR;
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let cof = |r: usize, c: usize| {
        let rs: Vec<usize> = (0..3).filter(|&i| i != r).collect();
        let cs: Vec<usize> = (0..3).filter(|&i| i != c).collect();
        let minor = m[rs[0]][cs[0]] * m[rs[1]][cs[1]] - m[rs[0]][cs[1]] * m[rs[1]][cs[0]];
        if (r + c).is_multiple_of(2) { minor } else { -minor }
    };
    // inverse = adjugate / det; adjugate is the transposed cofactor matrix
    (0..3).map(|i| (0..3).map(|j| cof(j, i) / det / LEVELS_PER_UNIT).collect()).collect()
}

/// Tiles per-channel 8×8 patterns over a `[N, 3, H, W]` tensor.
fn tile<T: Element>(shape: &[usize], patterns: &[[f64; 64]; 3]) -> Tensor<T> {
    let (h, w) = (shape[2], shape[3]);
    Tensor::from_fn(shape, |i| {
        let c = (i / (h * w)) % 3;
        let (y, x) = ((i / w) % h, i % w);
        T::of(patterns[c][(y % 8) * 8 + x % 8])
    })
}

fn check_input<T: Element>(x: &Var<T>) -> Result<()> {
    let s = x.shape();
    contract!(s.len() == 4 && s[1] == 3, "JPEG simulators need [N, 3, H, W] input, got {s:?}");
    Ok(())
}

fn to_coefficients<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    check_input(x)?;
    dct_8x8(&x.channel_affine(&forward_color(), &[0.0; 3]))
}

fn from_coefficients<T: Element>(c: &Var<T>) -> Result<Var<T>> {
    Ok(idct_8x8(c)?.channel_affine(&inverse_color(), &[0.0; 3]).clamp(-1.0, 1.0))
}

/// How the quantiser rounds in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Rounding {
    /// As declared by the simulator.
    Native,
    /// Straight-through rounding replaced by the identity, i.e. the function
    /// whose derivative the straight-through estimator reports.
    Surrogate,
}

fn quantize<T: Element>(c: &Var<T>, qf: u8, round: impl Fn(&Var<T>) -> Var<T>) -> Var<T> {
    let q = [quant_table(qf, false), quant_table(qf, true), quant_table(qf, true)];
    let inv = q.map(|t| t.map(|v| 1.0 / v));
    let steps = c.mul_const(&tile(c.shape(), &inv));
    round(&steps).mul_const(&tile(c.shape(), &q))
}

pub(crate) fn simulate_with<T: Element>(x: &Var<T>, sim: JpegSimulator, qf: u8, rounding: Rounding) -> Result<Var<T>> {
    check_qf(qf)?;
    let c = to_coefficients(x)?;
    let kept = match sim {
        JpegSimulator::Mask => {
            let m = [mask_pattern(qf, false), mask_pattern(qf, true), mask_pattern(qf, true)];
            c.mul_const(&tile(c.shape(), &m))
        }
        JpegSimulator::Soft => quantize(&c, qf, |v| v.soft_round()),
        JpegSimulator::Round => match rounding {
            Rounding::Native => quantize(&c, qf, |v| v.round_ste()),
            Rounding::Surrogate => quantize(&c, qf, |v| v.clone()),
        },
    };
    from_coefficients(&kept)
}

/// Runs one simulator at one quality factor.
pub fn simulate<T: Element>(x: &Var<T>, sim: JpegSimulator, qf: u8) -> Result<Var<T>> {
    simulate_with(x, sim, qf, Rounding::Native)
}

/// Zeroes every DCT coefficient outside a qf-dependent zig-zag prefix.
pub fn jpeg_mask<T: Element>(x: &Var<T>, qf: u8) -> Result<Var<T>> {
    simulate(x, JpegSimulator::Mask, qf)
}

/// Quantisation with the cubic soft staircase in place of rounding.
pub fn jpeg_soft<T: Element>(x: &Var<T>, qf: u8) -> Result<Var<T>> {
    simulate(x, JpegSimulator::Soft, qf)
}

/// Quantisation with true rounding forward and identity gradient backward.
pub fn jpeg_round_approx<T: Element>(x: &Var<T>, qf: u8) -> Result<Var<T>> {
    simulate(x, JpegSimulator::Round, qf)
}

/// Quantiser inputs `coefficient / step` for every coefficient, before rounding.
pub fn quantizer_inputs<T: Element>(x: &Tensor<T>, qf: u8) -> Result<Vec<f64>> {
    check_qf(qf)?;
    let c = to_coefficients(&Var::constant(x.clone()))?;
    let q = [quant_table(qf, false), quant_table(qf, true), quant_table(qf, true)];
    let steps = tile::<f64>(c.shape(), &q);
    Ok(c.value().data().iter().zip(steps.data()).map(|(v, s)| v.f64() / s).collect())
}

pub(crate) fn mixup_with<T: Element>(x: &Var<T>, terms: &[MixTerm], rounding: Rounding) -> Result<Var<T>> {
    contract!(!terms.is_empty(), "JPEG mixture needs at least one term");
    let weights: Vec<f64> = terms.iter().map(|t| t.weight).collect();
    check_weights(&weights)?;
    let parts = merge_terms(terms)
        .iter()
        .map(|t| Ok(simulate_with(x, t.simulator, t.qf, rounding)?.scale(t.weight)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Var::sum_all(&parts))
}

/// Convex combination of simulator outputs over explicit terms.
pub fn jpeg_mixup_terms<T: Element>(x: &Var<T>, terms: &[MixTerm]) -> Result<Var<T>> {
    mixup_with(x, terms, Rounding::Native)
}

/// Convex combination over every configured `(simulator, qf)` pair.
pub fn jpeg_mixup<T: Element>(x: &Var<T>, config: &AttackConfig) -> Result<Var<T>> {
    jpeg_mixup_terms(x, &config.mix_terms()?)
}
