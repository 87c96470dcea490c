use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::tensor::{Element, Tensor, Var};

/// Weights of the generator objective and the residual amplification gain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub residual_gain: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.05, beta: 0.05, gamma: 1.5, residual_gain: 5.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("residual_gain", self.residual_gain)]
        {
            contract!(v.is_finite() && v >= 0.0, "loss weight {name} must be finite and >= 0, got {v}");
        }
        Ok(())
    }
}

/// `MSE(I, I_M) + mean_i MSE(S_i, Ŝ_i) + MSE(I, Î)`. The last term is
/// omitted when no cover estimate exists.
pub fn reconstruction_loss<T: Element>(
    cover: &Var<T>,
    marked: &Var<T>,
    secrets: &[Var<T>],
    revealed: &[Var<T>],
    cover_estimate: Option<&Var<T>>,
) -> Result<Var<T>> {
    contract!(
        secrets.len() == revealed.len() && !secrets.is_empty(),
        "{} secrets but {} revealed images",
        secrets.len(),
        revealed.len()
    );
    contract!(cover.shape() == marked.shape(), "cover and marked shapes differ");
    let n = secrets.len() as f64;
    let secret_terms: Vec<Var<T>> = secrets
        .iter()
        .zip(revealed)
        .map(|(s, r)| {
            contract!(s.shape() == r.shape(), "secret and revealed shapes differ");
            Ok(r.mse(s))
        })
        .collect::<Result<_>>()?;
    let mut terms = vec![marked.mse(cover), Var::sum_all(&secret_terms).scale(1.0 / n)];
    if let Some(c) = cover_estimate {
        contract!(c.shape() == cover.shape(), "cover estimate shape differs");
        terms.push(c.mse(cover));
    }
    Ok(Var::sum_all(&terms))
}

/// `mean((gain·R − R̂)²)`.
pub fn residual_loss<T: Element>(residual: &Var<T>, estimate: &Var<T>, gain: f64) -> Result<Var<T>> {
    contract!(residual.shape() == estimate.shape(), "residual and estimate shapes differ");
    Ok(estimate.mse(&residual.scale(gain)))
}

/// `mean((D(fake) − 1)²)`.
pub fn lsgan_generator_loss<T: Element>(fake_scores: &Var<T>) -> Var<T> {
    fake_scores.add_scalar(-1.0).square().mean()
}

/// `½·(mean((D(real) − 1)²) + mean(D(fake)²))`.
pub fn lsgan_discriminator_loss<T: Element>(real_scores: &Var<T>, fake_scores: &Var<T>) -> Var<T> {
    Var::sum_all(&[real_scores.add_scalar(-1.0).square().mean(), fake_scores.square().mean()]).scale(0.5)
}

/// The four parts combined by [`total_generator_loss`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts<V> {
    pub rec: V,
    pub dis_cover: V,
    pub dis_secret: V,
    pub residual: V,
}

/// Anything a weighted sum of loss terms can be formed over.
pub trait LossValue: Clone {
    fn weighted_sum(terms: &[(f64, &Self)]) -> Self;
}

impl LossValue for f64 {
    fn weighted_sum(terms: &[(f64, &Self)]) -> Self {
        terms.iter().map(|(w, v)| w * **v).sum()
    }
}

impl<T: Element> LossValue for Var<T> {
    fn weighted_sum(terms: &[(f64, &Self)]) -> Self {
        let scaled: Vec<Var<T>> = terms.iter().map(|(w, v)| if *w == 1.0 { (*v).clone() } else { v.scale(*w) }).collect();
        Var::sum_all(&scaled)
    }
}

/// `L_rec + α·L_dis,C + β·L_dis,R + γ·L_S`.
pub fn total_generator_loss<V: LossValue>(parts: &LossParts<V>, w: &LossWeights) -> V {
    V::weighted_sum(&[(1.0, &parts.rec), (w.alpha, &parts.dis_cover), (w.beta, &parts.dis_secret), (w.gamma, &parts.residual)])
}

/// Scalar value of a loss node.
pub fn scalar<T: Element>(v: &Var<T>) -> f64 {
    v.value().item().f64()
}

pub(crate) fn zero<T: Element>() -> Var<T> {
    Var::constant(Tensor::scalar(T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(shape: &[usize], v: f64) -> Var<f64> {
        Var::constant(Tensor::full(shape, v))
    }

    fn img(seed: f64) -> Var<f64> {
        Var::constant(Tensor::from_fn(&[2, 3, 4, 4], |i| ((i as f64) * seed).sin() * 0.5))
    }

    #[test]
    fn reconstruction_closed_forms() {
        let (i, s) = (img(0.3), img(0.7));
        let exact = reconstruction_loss(&i, &i, std::slice::from_ref(&s), std::slice::from_ref(&s), Some(&i)).unwrap();
        assert_eq!(scalar(&exact), 0.0);
        let shifted = i.add_scalar(0.1);
        let l = reconstruction_loss(&i, &shifted, std::slice::from_ref(&s), std::slice::from_ref(&s), Some(&i)).unwrap();
        assert!((scalar(&l) - 0.01).abs() < 1e-12);
        assert!(reconstruction_loss(&i, &i, std::slice::from_ref(&s), &[], None).is_err());
    }

    #[test]
    fn residual_and_lsgan_closed_forms() {
        let r = img(0.2);
        assert_eq!(scalar(&residual_loss(&r, &r.scale(5.0), 5.0).unwrap()), 0.0);
        let zero = c(&[1, 3, 4, 4], 0.0);
        let est = c(&[1, 3, 4, 4], 0.3);
        assert!((scalar(&residual_loss(&zero, &est, 5.0).unwrap()) - 0.09).abs() < 1e-12);
        assert_eq!(scalar(&lsgan_generator_loss(&c(&[2, 1, 3, 3], 1.0))), 0.0);
        assert!((scalar(&lsgan_generator_loss(&c(&[2, 1, 3, 3], 0.5))) - 0.25).abs() < 1e-12);
        assert_eq!(scalar(&lsgan_discriminator_loss(&c(&[1, 1, 2, 2], 1.0), &c(&[1, 1, 2, 2], 0.0))), 0.0);
    }

    #[test]
    fn total_matches_plain_arithmetic() {
        let parts = LossParts { rec: 1.0, dis_cover: 1.0, dis_secret: 1.0, residual: 1.0 };
        assert!((total_generator_loss(&parts, &LossWeights::default()) - 2.6).abs() < 1e-12);
        let vars = LossParts { rec: c(&[], 0.7), dis_cover: c(&[], 0.2), dis_secret: c(&[], 0.1), residual: c(&[], 0.4) };
        let f = LossParts { rec: 0.7, dis_cover: 0.2, dis_secret: 0.1, residual: 0.4 };
        let w = LossWeights::default();
        assert!((scalar(&total_generator_loss(&vars, &w)) - total_generator_loss(&f, &w)).abs() < 1e-12);
    }
}
