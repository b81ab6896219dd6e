use ndarray::{Array, Dimension, ShapeBuilder};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Mode;

/// Inverted dropout: survivors are scaled by `1 / (1 − rate)` during training so
/// inference is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
        Self { rate }
    }

    /// Multiplicative mask for one forward pass, or `None` when dropout is a no-op.
    pub fn mask<Sh, D, R>(&self, shape: Sh, mode: Mode, rng: &mut R) -> Option<Array<f64, D>>
    where
        Sh: ShapeBuilder<Dim = D>,
        D: Dimension,
        R: Rng + ?Sized,
    {
        (mode == Mode::Train && self.rate > 0.0).then(|| dropout_mask(shape, self.rate, rng))
    }
}

pub fn dropout_mask<Sh, D, R>(shape: Sh, rate: f64, rng: &mut R) -> Array<f64, D>
where
    Sh: ShapeBuilder<Dim = D>,
    D: Dimension,
    R: Rng + ?Sized,
{
    let keep = 1.0 / (1.0 - rate);
    Array::from_shape_simple_fn(shape, || if rng.random_bool(rate) { 0.0 } else { keep })
}
