use ndarray::{Array1, Array3, ArrayView3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::kaiming_normal;
use super::params::impl_param_tensors;
use crate::error::{Error, Result};

/// Dilated causal 1-D convolution on `batch × channels × time`.
///
/// Equivalent to left-padding by `(k − 1)·dilation`, convolving with stride 1
/// and chomping the right surplus, so
/// `y[n,o,t] = b[o] + Σ_c Σ_j W[o,c,j] · x[n,c, t − (k−1−j)·d]`
/// with out-of-range inputs read as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    /// `out × in × kernel`.
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
    pub dilation: usize,
}

impl_param_tensors!(Conv1d { weight, bias });

impl Conv1d {
    /// Kaiming-normal weights (fan-in = in·kernel), zero bias.
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel >= 1 && dilation >= 1, "kernel and dilation must be ≥ 1");
        Self {
            weight: kaiming_normal((out_ch, in_ch, kernel), in_ch * kernel, rng),
            bias: Array1::zeros(out_ch),
            dilation,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    fn check(&self, x: &ArrayView3<f64>) -> Result<()> {
        let (n, c, t) = x.dim();
        if c != self.in_channels() {
            return Err(Error::shape("conv1d input", &[n, self.in_channels(), t], &[n, c, t]));
        }
        Ok(())
    }

    pub fn forward(&self, x: &ArrayView3<f64>) -> Result<Array3<f64>> {
        self.check(x)?;
        let (n, c, t) = x.dim();
        let (o, k) = (self.out_channels(), self.kernel());
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let w = self.weight.as_slice().expect("standard layout");
        let mut y = Array3::zeros((n, o, t));
        let ys = y.as_slice_mut().expect("fresh array");
        for b in 0..n {
            for oc in 0..o {
                let out = &mut ys[(b * o + oc) * t..(b * o + oc + 1) * t];
                out.fill(self.bias[oc]);
                for ic in 0..c {
                    let inp = &xs[(b * c + ic) * t..(b * c + ic + 1) * t];
                    for j in 0..k {
                        let wv = w[(oc * c + ic) * k + j];
                        let shift = (k - 1 - j) * self.dilation;
                        if wv == 0.0 || shift >= t {
                            continue;
                        }
                        for (dst, src) in out[shift..].iter_mut().zip(inp) {
                            *dst += wv * src;
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    /// Accumulates into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: &ArrayView3<f64>, dy: &ArrayView3<f64>, grad: &mut Conv1d) -> Array3<f64> {
        let (n, c, t) = x.dim();
        let (o, k) = (self.out_channels(), self.kernel());
        let x = x.as_standard_layout();
        let dy = dy.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let dys = dy.as_slice().expect("standard layout");
        let w = self.weight.as_slice().expect("standard layout");
        let gw = grad.weight.as_slice_mut().expect("standard layout");
        let mut dx = Array3::zeros((n, c, t));
        let dxs = dx.as_slice_mut().expect("fresh array");
        for b in 0..n {
            for oc in 0..o {
                let g = &dys[(b * o + oc) * t..(b * o + oc + 1) * t];
                grad.bias[oc] += g.iter().sum::<f64>();
                for ic in 0..c {
                    let base = (b * c + ic) * t;
                    for j in 0..k {
                        let shift = (k - 1 - j) * self.dilation;
                        if shift >= t {
                            continue;
                        }
                        let wi = (oc * c + ic) * k + j;
                        let inp = &xs[base..base + t - shift];
                        gw[wi] += g[shift..].iter().zip(inp).map(|(a, b)| a * b).sum::<f64>();
                        let wv = w[wi];
                        for (d, gv) in dxs[base..base + t - shift].iter_mut().zip(&g[shift..]) {
                            *d += wv * gv;
                        }
                    }
                }
            }
        }
        dx
    }
}
