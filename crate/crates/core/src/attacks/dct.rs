//! Orthonormal 8×8 block DCT-II and its inverse.

use crate::error::{contract, Result};
use crate::tensor::{Element, Var};

/// Row `u` holds basis function `u` sampled at `x = 0..8`.
pub fn dct_matrix() -> [f64; 64] {
    std::array::from_fn(|i| {
        let (u, x) = (i / 8, i % 8);
        let c = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        c * (((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI) / 16.0).cos()
    })
}

fn transpose(m: &[f64; 64]) -> [f64; 64] {
    std::array::from_fn(|i| m[(i % 8) * 8 + i / 8])
}

fn check_blocks(shape: &[usize]) -> Result<()> {
    contract!(shape.len() == 4, "block DCT needs a 4-d tensor, got {shape:?}");
    contract!(
        shape[2].is_multiple_of(8) && shape[3].is_multiple_of(8),
        "block DCT needs height and width divisible by 8, got {}x{}",
        shape[2],
        shape[3]
    );
    Ok(())
}

/// Forward transform of every 8×8 block of every plane.
pub fn dct_8x8<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    check_blocks(x.shape())?;
    Ok(x.block8x8(&dct_matrix()))
}

pub fn idct_8x8<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    check_blocks(x.shape())?;
    Ok(x.block8x8(&transpose(&dct_matrix())))
}
