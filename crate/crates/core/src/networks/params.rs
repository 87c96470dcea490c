use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Tensor, Var};

/// Weight standard deviation at initialisation.
pub const INIT_STD: f64 = 0.02;

/// Named, ordered parameter arrays of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Tensor<f32>>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvRef {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

impl ConvRef {
    pub(crate) fn apply(&self, p: &[Var<f32>], x: &Var<f32>) -> Var<f32> {
        x.conv2d(&p[self.w], Some(&p[self.b]), self.stride, self.pad)
    }

    pub(crate) fn weight_index(&self) -> usize {
        self.w
    }

    pub(crate) fn bias_index(&self) -> usize {
        self.b
    }
}

impl Params {
    fn push(&mut self, name: String, value: Tensor<f32>) -> usize {
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    /// Conv layer with N(0, 0.02) weights and zero bias.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn conv(
        &mut self,
        name: &str,
        c_out: usize,
        c_in: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> ConvRef {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let w = Tensor::from_fn(&[c_out, c_in, k, k], |_| normal.sample(rng) as f32);
        let w = self.push(format!("{name}.weight"), w);
        let b = self.push(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        ConvRef { w, b, stride, pad }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<f32>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.values
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Wraps every array in a graph leaf; `trainable` decides whether
    /// gradients are recorded.
    pub fn bind(&self, trainable: bool) -> Vec<Var<f32>> {
        self.values.iter().map(|v| Var::leaf(v.clone(), trainable)).collect()
    }
}
