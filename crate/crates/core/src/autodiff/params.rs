use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerId(pub usize);

/// One fully connected layer, `y = x W + b` with `W` of shape in × out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterSet {
    pub layers: Vec<Layer>,
}

impl ParameterSet {
    /// Append a layer with uniform He fan-in initialization and zero bias.
    pub fn push_layer<R: Rng>(&mut self, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> LayerId {
        let bound = (6.0 / d_in as f64).sqrt();
        let weight = Array2::from_shape_fn((d_in, d_out), |_| rng.random_range(-bound..bound));
        self.layers.push(Layer {
            name: name.to_string(),
            weight,
            bias: Array1::zeros(d_out),
        });
        LayerId(self.layers.len() - 1)
    }

    pub fn layer(&self, id: LayerId) -> &Layer {
        &self.layers[id.0]
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn find(&self, name: &str) -> Option<LayerId> {
        self.layers.iter().position(|l| l.name == name).map(LayerId)
    }

    /// Flat view of scalar parameter `k`, weights before biases per layer.
    pub fn scalar_mut(&mut self, mut k: usize) -> &mut f64 {
        for l in &mut self.layers {
            if k < l.weight.len() {
                return l.weight.as_slice_mut().expect("standard layout").get_mut(k).unwrap();
            }
            k -= l.weight.len();
            if k < l.bias.len() {
                return &mut l.bias[k];
            }
            k -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradient buffers shaped like a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrad>,
}

impl ParamGrads {
    pub fn zeros_like(p: &ParameterSet) -> Self {
        Self {
            layers: p
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight *= s;
            l.bias *= s;
        }
    }

    pub fn scalar(&self, mut k: usize) -> f64 {
        for l in &self.layers {
            if k < l.weight.len() {
                return l.weight.as_slice().expect("standard layout")[k];
            }
            k -= l.weight.len();
            if k < l.bias.len() {
                return l.bias[k];
            }
            k -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Error naming the first layer holding a non-finite gradient.
    pub fn check_finite(&self, params: &ParameterSet) -> Result<()> {
        for (g, l) in self.layers.iter().zip(&params.layers) {
            if g.weight.iter().chain(g.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", l.name)));
            }
        }
        Ok(())
    }
}
