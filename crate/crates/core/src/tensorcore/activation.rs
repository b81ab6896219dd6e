use ndarray::{Array, ArrayView, Dimension, Zip};
use serde::{Deserialize, Serialize};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    LeakyRelu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn forward<D: Dimension>(self, x: &ArrayView<f64, D>) -> Array<f64, D> {
        x.mapv(|v| self.apply(v))
    }

    /// Gradient with respect to the pre-activation.
    pub fn backward<D: Dimension>(
        self,
        x: &ArrayView<f64, D>,
        y: &ArrayView<f64, D>,
        dy: &ArrayView<f64, D>,
    ) -> Array<f64, D> {
        let mut dx = dy.to_owned();
        Zip::from(&mut dx).and(x).and(y).for_each(|d, &a, &b| *d *= self.derivative(a, b));
        dx
    }
}
