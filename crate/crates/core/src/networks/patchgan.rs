//! PatchGAN discriminator producing raw (sigmoid-free) patch scores.

use rand::Rng;

use crate::error::{contract, Result};
use crate::tensor::Var;

use super::params::{ConvRef, Params};
use super::PatchSpec;

#[derive(Clone, Debug)]
pub struct PatchGan {
    spec: PatchSpec,
    params: Params,
    layers: Vec<ConvRef>,
}

impl PatchGan {
    pub fn new(name: &str, spec: PatchSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut params = Params::default();
        let c = spec.base_channels;
        let width = |i: usize| c << i.min(3);
        let mut layers = Vec::new();
        let mut prev = 3;
        for i in 0..spec.downsamplings {
            layers.push(params.conv(&format!("{name}.down{i}"), width(i), prev, 4, 2, 1, rng));
            prev = width(i);
        }
        let mid = width(spec.downsamplings);
        layers.push(params.conv(&format!("{name}.mid"), mid, prev, 4, 1, 1, rng));
        layers.push(params.conv(&format!("{name}.score"), 1, mid, 4, 1, 1, rng));
        Ok(Self { spec, params, layers })
    }

    pub fn spec(&self) -> &PatchSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Side of the score map for a `side × side` input.
    pub fn score_side(&self, side: usize) -> usize {
        self.spec.score_side(side)
    }

    /// `[N, 1, s, s]` score map.
    pub fn forward(&self, p: &[Var<f32>], x: &Var<f32>) -> Result<Var<f32>> {
        contract!(p.len() == self.params.len(), "parameter binding does not match discriminator");
        let s = x.shape();
        contract!(s.len() == 4 && s[1] == 3, "discriminator expects [N, 3, S, S], got {s:?}");
        contract!(self.score_side(s[2]) >= 1, "input side {} too small for discriminator", s[2]);
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(p, &h);
            if i == last {
                break;
            }
            // the first layer is left unnormalised
            if i > 0 {
                h = h.instance_norm(1e-5);
            }
            h = h.leaky_relu(0.2);
        }
        Ok(h)
    }
}
