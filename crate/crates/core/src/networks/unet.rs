//! Multi-branch U-Net: `enc_branches` independent encoders and
//! `dec_branches` independent decoders. Every decoder skip concatenates the
//! features of all encoder branches at that resolution.

use rand::Rng;

use crate::error::{contract, Result};
use crate::tensor::Var;

use super::params::{ConvRef, Params};
use super::{Activation, NetworkSpec, Norm};

#[derive(Clone, Debug)]
struct Encoder {
    stem: ConvRef,
    downs: Vec<ConvRef>,
}

#[derive(Clone, Debug)]
struct Decoder {
    /// `(after-upsample conv, skip-fusion conv)` per level, coarsest first.
    ups: Vec<(ConvRef, ConvRef)>,
    out: ConvRef,
}

#[derive(Clone, Debug)]
pub struct UNet {
    spec: NetworkSpec,
    params: Params,
    encoders: Vec<Encoder>,
    decoders: Vec<Decoder>,
}

impl UNet {
    pub fn new(name: &str, spec: NetworkSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut params = Params::default();
        let ch = |l| spec.channels(l);
        let encoders = (0..spec.enc_branches)
            .map(|b| {
                let p = format!("{name}.enc{b}");
                let stem = params.conv(&format!("{p}.stem"), ch(0), spec.in_channels, 3, 1, 1, rng);
                let downs = (1..=spec.depth)
                    .map(|l| params.conv(&format!("{p}.down{l}"), ch(l), ch(l - 1), 4, 2, 1, rng))
                    .collect();
                Encoder { stem, downs }
            })
            .collect();
        let branches = spec.enc_branches;
        let decoders = (0..spec.dec_branches)
            .map(|h| {
                let p = format!("{name}.dec{h}");
                let mut prev = branches * ch(spec.depth);
                let ups = (0..spec.depth)
                    .rev()
                    .map(|l| {
                        let up = params.conv(&format!("{p}.up{l}"), ch(l), prev, 3, 1, 1, rng);
                        let fuse =
                            params.conv(&format!("{p}.fuse{l}"), ch(l), ch(l) + branches * ch(l), 3, 1, 1, rng);
                        prev = ch(l);
                        (up, fuse)
                    })
                    .collect();
                let out = params.conv(&format!("{p}.out"), 3, ch(0), 1, 1, 0, rng);
                Decoder { ups, out }
            })
            .collect();
        Ok(Self { spec, params, encoders, decoders })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Indices of the output layer of decoder `head` as `(weight, bias)`.
    pub fn output_layer(&self, head: usize) -> (usize, usize) {
        let out = &self.decoders[head].out;
        (out.weight_index(), out.bias_index())
    }

    fn block(&self, conv: &ConvRef, p: &[Var<f32>], x: &Var<f32>, normalise: bool) -> Var<f32> {
        let y = conv.apply(p, x);
        let y = match self.spec.norm {
            Norm::Instance if normalise => y.instance_norm(1e-5),
            _ => y,
        };
        match self.spec.activation {
            Activation::LeakyRelu => y.leaky_relu(0.2),
            Activation::Relu => y.relu(),
        }
    }

    /// Raw decoder outputs (before any output nonlinearity), one per head.
    /// `p` must come from [`Params::bind`] on this network.
    pub fn forward(&self, p: &[Var<f32>], inputs: &[Var<f32>]) -> Result<Vec<Var<f32>>> {
        contract!(p.len() == self.params.len(), "parameter binding does not match network");
        contract!(
            inputs.len() == self.spec.enc_branches,
            "network expects {} inputs, got {}",
            self.spec.enc_branches,
            inputs.len()
        );
        let shape = inputs[0].shape().to_vec();
        contract!(inputs.iter().all(|x| x.shape() == shape.as_slice()), "branch inputs differ in shape");
        self.spec.check_input(&shape)?;

        let feats: Vec<Vec<Var<f32>>> = self
            .encoders
            .iter()
            .zip(inputs)
            .map(|(enc, x)| {
                let mut levels = vec![self.block(&enc.stem, p, x, false)];
                for down in &enc.downs {
                    let next = self.block(down, p, levels.last().expect("stem"), true);
                    levels.push(next);
                }
                levels
            })
            .collect();

        let depth = self.spec.depth;
        let at = |l: usize| feats.iter().map(|f| f[l].clone()).collect::<Vec<_>>();
        Ok(self
            .decoders
            .iter()
            .map(|dec| {
                let mut h = Var::cat(&at(depth), 1);
                for ((up, fuse), l) in dec.ups.iter().zip((0..depth).rev()) {
                    h = self.block(up, p, &h.upsample2x(), true);
                    let mut parts = vec![h];
                    parts.extend(at(l));
                    h = self.block(fuse, p, &Var::cat(&parts, 1), l > 0);
                }
                dec.out.apply(p, &h)
            })
            .collect())
    }
}
