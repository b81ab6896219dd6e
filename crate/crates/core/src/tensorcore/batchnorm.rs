use ndarray::{Array1, Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use super::params::ParamTensors;
use super::Mode;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalisation over `batch × channels × time`, with
/// statistics pooled over batch and time.
///
/// Only `gamma` and `beta` are trainable; the running statistics are updated
/// explicitly by the training loop through [`BatchNorm::update_running`], which
/// keeps `forward` free of side effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl ParamTensors for BatchNorm {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.gamma.tensors();
        v.extend(self.beta.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.gamma.tensors_mut();
        v.extend(self.beta.tensors_mut());
        v
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Array3<f64>,
    inv_std: Array1<f64>,
    /// Batch mean and biased variance (train mode only).
    pub batch_mean: Option<Array1<f64>>,
    pub batch_var: Option<Array1<f64>>,
    count: usize,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &ArrayView3<f64>, mode: Mode) -> Result<(Array3<f64>, BatchNormCache)> {
        let (n, c, t) = x.dim();
        if c != self.channels() {
            return Err(Error::shape("batchnorm input", &[n, self.channels(), t], &[n, c, t]));
        }
        let count = n * t;
        let (mean, var, batch) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::InvalidInput(
                        "batch normalisation needs at least 2 samples in training mode".into(),
                    ));
                }
                let mean = x.sum_axis(Axis(2)).sum_axis(Axis(0)) / count as f64;
                let mut var = Array1::zeros(c);
                for ((_, ch, _), v) in x.indexed_iter() {
                    var[ch] += (v - mean[ch]).powi(2);
                }
                var /= count as f64;
                (mean.clone(), var.clone(), Some((mean, var)))
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone(), None),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let mut xhat = x.to_owned();
        for ((_, ch, _), v) in xhat.indexed_iter_mut() {
            *v = (*v - mean[ch]) * inv_std[ch];
        }
        let mut y = xhat.clone();
        for ((_, ch, _), v) in y.indexed_iter_mut() {
            *v = self.gamma[ch] * *v + self.beta[ch];
        }
        let (batch_mean, batch_var) = batch.unzip();
        Ok((
            y,
            BatchNormCache {
                xhat,
                inv_std,
                batch_mean,
                batch_var,
                count,
            },
        ))
    }

    /// Exponential moving update of the running statistics from a training
    /// pass; the running variance uses the unbiased batch variance.
    pub fn update_running(&mut self, cache: &BatchNormCache) {
        if let (Some(m), Some(v)) = (&cache.batch_mean, &cache.batch_var) {
            let unbias = if cache.count > 1 {
                cache.count as f64 / (cache.count - 1) as f64
            } else {
                1.0
            };
            self.running_mean = &self.running_mean * (1.0 - BN_MOMENTUM) + m * BN_MOMENTUM;
            self.running_var = &self.running_var * (1.0 - BN_MOMENTUM) + &(v * (unbias * BN_MOMENTUM));
        }
    }

    /// Accumulates `∂gamma`, `∂beta` into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, cache: &BatchNormCache, dy: &ArrayView3<f64>, grad: &mut BatchNorm) -> Array3<f64> {
        let c = self.channels();
        let mut sum_dy = Array1::<f64>::zeros(c);
        let mut sum_dy_xhat = Array1::<f64>::zeros(c);
        for (((_, ch, _), g), xh) in dy.indexed_iter().zip(cache.xhat.iter()) {
            sum_dy[ch] += g;
            sum_dy_xhat[ch] += g * xh;
        }
        grad.gamma += &sum_dy_xhat;
        grad.beta += &sum_dy;
        let mut dx = dy.to_owned();
        if cache.batch_mean.is_none() {
            // Eval mode: a fixed affine map.
            for ((_, ch, _), v) in dx.indexed_iter_mut() {
                *v *= self.gamma[ch] * cache.inv_std[ch];
            }
            return dx;
        }
        let m = cache.count as f64;
        for (((_, ch, _), v), xh) in dx.indexed_iter_mut().zip(cache.xhat.iter()) {
            let g = self.gamma[ch];
            *v = g * cache.inv_std[ch] / m * (m * *v - sum_dy[ch] - xh * sum_dy_xhat[ch]);
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::{grad_check, uniform, zeros_like};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalises_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Array3<f64> = uniform((4, 3, 5), 3.0, &mut rng) + 7.0;
        let bn = BatchNorm::new(3);
        let (y, _) = bn.forward(&x.view(), Mode::Train).unwrap();
        for ch in 0..3 {
            let col = y.index_axis(Axis(1), ch);
            let mean = col.mean().unwrap();
            let var = col.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-8);
            assert!((var - 1.0).abs() < 1e-3, "{var}");
        }
    }

    #[test]
    fn constant_channel_gives_shift() {
        let mut bn = BatchNorm::new(1);
        bn.gamma[0] = 2.0;
        bn.beta[0] = 0.25;
        let x = Array3::from_elem((3, 1, 4), 5.0);
        let (y, cache) = bn.forward(&x.view(), Mode::Train).unwrap();
        assert!(y.iter().all(|&v| v == 0.25));
        bn.update_running(&cache);
        assert!((bn.running_mean[0] - 0.5).abs() < 1e-12);
        assert!((bn.running_var[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn single_sample_training_is_rejected() {
        let bn = BatchNorm::new(1);
        assert!(bn.forward(&Array3::zeros((1, 1, 4)).view(), Mode::Train).is_err());
        assert!(bn.forward(&Array3::zeros((1, 1, 4)).view(), Mode::Eval).is_ok());
    }

    #[test]
    fn gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bn = BatchNorm::new(2);
        bn.gamma = uniform(2, 1.0, &mut rng) + 1.0;
        bn.beta = uniform(2, 1.0, &mut rng);
        let x: Array3<f64> = uniform((3, 2, 4), 2.0, &mut rng);
        let r: Array3<f64> = uniform((3, 2, 4), 1.0, &mut rng);
        for mode in [Mode::Train, Mode::Eval] {
            let (_, cache) = bn.forward(&x.view(), mode).unwrap();
            let mut g = zeros_like(&bn);
            let dx = bn.backward(&cache, &r.view(), &mut g);
            let f = |p: &BatchNorm| (p.forward(&x.view(), mode).unwrap().0 * &r).sum();
            let rep = grad_check(&bn, &g, f, 1e-5);
            assert!(rep.max_rel_error < 1e-6, "{rep:?}");
            let fx = |xx: &Array3<f64>| (bn.forward(&xx.view(), mode).unwrap().0 * &r).sum();
            let rep = grad_check(&x, &dx, fx, 1e-5);
            assert!(rep.max_rel_error < 1e-5, "{mode:?} {rep:?}");
        }
    }
}
