use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorcore::{impl_param_tensors, Activation, Dropout, Linear, Mode};

/// Static-feature branch hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FfnnSpec {
    pub ffnn_layers: usize,
    pub ffnn_units: usize,
    pub ffnn_activation: Activation,
    #[serde(default)]
    pub ffnn_dropout: f64,
}

impl Default for FfnnSpec {
    fn default() -> Self {
        Self {
            ffnn_layers: 1,
            ffnn_units: 16,
            ffnn_activation: Activation::Relu,
            ffnn_dropout: 0.0,
        }
    }
}

impl FfnnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ffnn_units == 0 {
            return Err(Error::InvalidConfig("ffnn_units must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ffnn_dropout) {
            return Err(Error::InvalidConfig("ffnn_dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// `ffnn_layers × (linear → activation → dropout)` then a projection to the
/// temporal hidden width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ffnn {
    pub layers: Vec<Linear>,
    pub projection: Linear,
    pub activation: Activation,
    pub dropout: f64,
}

impl_param_tensors!(Ffnn { layers, projection });

#[derive(Debug, Clone)]
pub struct FfnnCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    last: Array2<f64>,
}

impl Ffnn {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, spec: &FfnnSpec, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(spec.ffnn_layers);
        let mut width = input;
        for _ in 0..spec.ffnn_layers {
            layers.push(Linear::new(width, spec.ffnn_units, rng));
            width = spec.ffnn_units;
        }
        Self {
            layers,
            projection: Linear::new(width, hidden, rng),
            activation: spec.ffnn_activation,
            dropout: spec.ffnn_dropout,
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &ArrayView2<f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array2<f64>, FfnnCache)> {
        let drop = Dropout::new(self.dropout);
        let mut cache = FfnnCache {
            inputs: Vec::new(),
            pre: Vec::new(),
            post: Vec::new(),
            masks: Vec::new(),
            last: x.to_owned(),
        };
        let mut h = x.to_owned();
        for layer in &self.layers {
            let z = layer.forward(&h.view())?;
            let a = self.activation.forward(&z.view());
            let mask = drop.mask(a.raw_dim(), mode, rng);
            let out = match &mask {
                Some(m) => &a * m,
                None => a.clone(),
            };
            cache.inputs.push(std::mem::replace(&mut h, out));
            cache.pre.push(z);
            cache.post.push(a);
            cache.masks.push(mask);
        }
        let y = self.projection.forward(&h.view())?;
        cache.last = h;
        Ok((y, cache))
    }

    /// Accumulates into `grad`; returns `∂L/∂x`.
    pub fn backward(&self, cache: &FfnnCache, dy: &ArrayView2<f64>, grad: &mut Ffnn) -> Array2<f64> {
        let mut d = self.projection.backward(&cache.last.view(), dy, &mut grad.projection);
        for l in (0..self.layers.len()).rev() {
            if let Some(m) = &cache.masks[l] {
                d *= m;
            }
            let dz = self
                .activation
                .backward(&cache.pre[l].view(), &cache.post[l].view(), &d.view());
            d = self.layers[l].backward(&cache.inputs[l].view(), &dz.view(), &mut grad.layers[l]);
        }
        d
    }
}
