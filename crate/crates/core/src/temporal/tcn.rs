use ndarray::{Array3, ArrayView3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensorcore::{
    impl_param_tensors, Activation, BatchNorm, BatchNormCache, Conv1d, Dropout, Mode,
};

/// Residual block: (causal conv → ReLU → batch norm → dropout) twice, plus the
/// block input (1×1-convolved when the channel count changes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalBlock {
    pub conv1: Conv1d,
    pub bn1: BatchNorm,
    pub conv2: Conv1d,
    pub bn2: BatchNorm,
    pub downsample: Option<Conv1d>,
    pub dropout: f64,
}

impl_param_tensors!(TemporalBlock { conv1, bn1, conv2, bn2, downsample });

#[derive(Debug, Clone)]
pub struct TemporalBlockCache {
    x: Array3<f64>,
    h1: Array3<f64>,
    a1: Array3<f64>,
    bn1: BatchNormCache,
    m1: Option<Array3<f64>>,
    d1: Array3<f64>,
    h2: Array3<f64>,
    a2: Array3<f64>,
    bn2: BatchNormCache,
    m2: Option<Array3<f64>>,
}

fn apply_mask(x: Array3<f64>, m: &Option<Array3<f64>>) -> Array3<f64> {
    match m {
        Some(m) => x * m,
        None => x,
    }
}

impl TemporalBlock {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            conv1: Conv1d::new(in_ch, out_ch, kernel, dilation, rng),
            bn1: BatchNorm::new(out_ch),
            conv2: Conv1d::new(out_ch, out_ch, kernel, dilation, rng),
            bn2: BatchNorm::new(out_ch),
            downsample: (in_ch != out_ch).then(|| Conv1d::new(in_ch, out_ch, 1, 1, rng)),
            dropout,
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &ArrayView3<f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array3<f64>, TemporalBlockCache)> {
        let drop = Dropout::new(self.dropout);
        let relu = Activation::Relu;
        let h1 = self.conv1.forward(x)?;
        let a1 = relu.forward(&h1.view());
        let (b1, bn1) = self.bn1.forward(&a1.view(), mode)?;
        let m1 = drop.mask(b1.raw_dim(), mode, rng);
        let d1 = apply_mask(b1, &m1);
        let h2 = self.conv2.forward(&d1.view())?;
        let a2 = relu.forward(&h2.view());
        let (b2, bn2) = self.bn2.forward(&a2.view(), mode)?;
        let m2 = drop.mask(b2.raw_dim(), mode, rng);
        let d2 = apply_mask(b2, &m2);
        let residual = match &self.downsample {
            Some(ds) => ds.forward(x)?,
            None => x.to_owned(),
        };
        let y = d2 + residual;
        Ok((
            y,
            TemporalBlockCache {
                x: x.to_owned(),
                h1,
                a1,
                bn1,
                m1,
                d1,
                h2,
                a2,
                bn2,
                m2,
            },
        ))
    }

    pub fn backward(&self, c: &TemporalBlockCache, dy: &ArrayView3<f64>, grad: &mut TemporalBlock) -> Array3<f64> {
        let relu = Activation::Relu;
        let db2 = apply_mask(dy.to_owned(), &c.m2);
        let da2 = self.bn2.backward(&c.bn2, &db2.view(), &mut grad.bn2);
        let dh2 = relu.backward(&c.h2.view(), &c.a2.view(), &da2.view());
        let dd1 = self.conv2.backward(&c.d1.view(), &dh2.view(), &mut grad.conv2);
        let db1 = apply_mask(dd1, &c.m1);
        let da1 = self.bn1.backward(&c.bn1, &db1.view(), &mut grad.bn1);
        let dh1 = relu.backward(&c.h1.view(), &c.a1.view(), &da1.view());
        let mut dx = self.conv1.backward(&c.x.view(), &dh1.view(), &mut grad.conv1);
        match (&self.downsample, grad.downsample.as_mut()) {
            (Some(ds), Some(g)) => dx += &ds.backward(&c.x.view(), dy, g),
            _ => dx += dy,
        }
        dx
    }

    pub fn update_running(&mut self, c: &TemporalBlockCache) {
        self.bn1.update_running(&c.bn1);
        self.bn2.update_running(&c.bn2);
    }
}

/// Stack of temporal blocks with dilation 2^i followed by a 1×1 convolution
/// to the shared hidden width. Works on `batch × channels × time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcnBranch {
    pub blocks: Vec<TemporalBlock>,
    pub projection: Conv1d,
}

impl_param_tensors!(TcnBranch { blocks, projection });

#[derive(Debug, Clone)]
pub struct TcnCache {
    blocks: Vec<TemporalBlockCache>,
    last: Array3<f64>,
}

impl TcnBranch {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        channels: &[usize],
        kernel: usize,
        hidden: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let mut blocks = Vec::with_capacity(channels.len());
        let mut width = input;
        for (i, &c) in channels.iter().enumerate() {
            blocks.push(TemporalBlock::new(width, c, kernel, 1 << i, dropout, rng));
            width = c;
        }
        Self {
            blocks,
            projection: Conv1d::new(width, hidden, 1, 1, rng),
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &ArrayView3<f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array3<f64>, TcnCache)> {
        let mut h = x.to_owned();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(&h.view(), mode, rng)?;
            caches.push(c);
            h = y;
        }
        let y = self.projection.forward(&h.view())?;
        Ok((y, TcnCache { blocks: caches, last: h }))
    }

    pub fn backward(&self, c: &TcnCache, dy: &ArrayView3<f64>, grad: &mut TcnBranch) -> Array3<f64> {
        let mut d = self.projection.backward(&c.last.view(), dy, &mut grad.projection);
        for i in (0..self.blocks.len()).rev() {
            d = self.blocks[i].backward(&c.blocks[i], &d.view(), &mut grad.blocks[i]);
        }
        d
    }

    pub fn update_running(&mut self, c: &TcnCache) {
        for (b, bc) in self.blocks.iter_mut().zip(&c.blocks) {
            b.update_running(bc);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::{grad_check, uniform, zeros_like};
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_convs_toy_block() {
        // Identity 1-tap convs, eval-mode batch norm with unit stats: the
        // block computes relu(relu(x)·s)·s + x, s = 1/√(1+ε).
        let id = || Conv1d {
            weight: Array3::from_elem((1, 1, 1), 1.0),
            bias: Array1::zeros(1),
            dilation: 1,
        };
        let block = TemporalBlock {
            conv1: id(),
            bn1: BatchNorm::new(1),
            conv2: id(),
            bn2: BatchNorm::new(1),
            downsample: None,
            dropout: 0.0,
        };
        let x = array![[[1.0, -2.0, 3.0]]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, _) = block.forward(&x.view(), Mode::Eval, &mut rng).unwrap();
        let s = 1.0 / (1.0 + crate::tensorcore::BN_EPS).sqrt();
        let want = x.mapv(|v: f64| (v.max(0.0) * s).max(0.0) * s + v);
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn residual_is_projected_when_channels_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = TemporalBlock::new(2, 3, 2, 1, 0.0, &mut rng);
        let ds = b.downsample.as_ref().expect("downsample present");
        assert_eq!((ds.kernel(), ds.in_channels(), ds.out_channels()), (1, 2, 3));
        assert!(TemporalBlock::new(3, 3, 2, 1, 0.0, &mut rng).downsample.is_none());
    }

    #[test]
    fn gradients_through_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let net = TcnBranch::new(2, &[3, 4], 2, 3, 0.2, &mut rng);
        let x: Array3<f64> = uniform((4, 2, 6), 1.0, &mut rng);
        let r: Array3<f64> = uniform((4, 3, 6), 1.0, &mut rng);
        let run = |p: &TcnBranch| {
            let mut r0 = ChaCha8Rng::seed_from_u64(3);
            p.forward(&x.view(), Mode::Train, &mut r0).unwrap()
        };
        let (_, cache) = run(&net);
        let mut g = zeros_like(&net);
        net.backward(&cache, &r.view(), &mut g);
        let rep = grad_check(&net, &g, |p| (run(p).0 * &r).sum(), 1e-5);
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        assert!(rep.skipped * 20 <= rep.probes, "{rep:?}");
    }
}
