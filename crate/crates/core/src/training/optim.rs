use serde::{Deserialize, Serialize};

use crate::tensorcore::{global_norm, scale, ParamTensors};

/// Adam with bias correction and coupled L2 (weight decay is added to the
/// gradient before the moment updates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<P: ParamTensors>(&mut self, params: &mut P, grads: &P) {
        let grads = grads.tensors();
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for k in 0..p.len() {
                let gk = g[k] + self.weight_decay * p[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<P: ParamTensors>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        scale(grads, max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p: Array1<f64> = array![1.0, -2.0];
        let g: Array1<f64> = array![0.0, 0.0];
        let mut opt = Adam::new(0.1, 0.0);
        opt.step(&mut p, &g);
        assert_eq!(p, array![1.0, -2.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p: Array1<f64> = array![0.5];
        let g: Array1<f64> = array![0.2];
        let mut opt = Adam::new(0.01, 0.0);
        opt.step(&mut p, &g);
        // m̂ = g, v̂ = g² after bias correction, so Δ = −lr·g/(|g| + ε).
        let want = 0.5 - 0.01 * 0.2 / (0.2 + 1e-8);
        assert!((p[0] - want).abs() < 1e-15);
    }

    #[test]
    fn decay_only_shrinks() {
        let mut p: Array1<f64> = array![0.8, -0.6];
        let g: Array1<f64> = array![0.0, 0.0];
        let mut opt = Adam::new(0.01, 0.1);
        for _ in 0..5 {
            opt.step(&mut p, &g);
        }
        assert!(p[0].abs() < 0.8 && p[1].abs() < 0.6);
    }

    #[test]
    fn clipping() {
        let mut g: Array1<f64> = array![1.2, 1.6]; // norm 2
        assert_eq!(clip_grad_norm(&mut g, 1.0), 2.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut g: Array1<f64> = array![0.3, 0.4];
        clip_grad_norm(&mut g, 1.0);
        assert_eq!(g, array![0.3, 0.4]);
    }
}
