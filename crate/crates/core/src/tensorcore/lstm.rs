use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::sigmoid;
use super::dropout::Dropout;
use super::init::uniform;
use super::params::impl_param_tensors;
use super::Mode;
use crate::error::{Error, Result};

/// One LSTM layer. Gate blocks are stacked in the order input, forget,
/// candidate, output, each `hidden` rows tall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    /// `4H × F`
    pub w_ih: Array2<f64>,
    /// `4H × H`
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

impl_param_tensors!(LstmLayer { w_ih, w_hh, bias });

/// Values kept from the forward pass for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmLayerCache {
    input: Array3<f64>,
    /// Activated gates, `N × T × 4H`.
    gates: Array3<f64>,
    cells: Array3<f64>,
    /// Hidden states, `N × T × H` (the layer output).
    pub hidden: Array3<f64>,
}

impl LstmLayer {
    /// Weights uniform on ±1/√H, zero bias.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: uniform((4 * hidden, input), bound, rng),
            w_hh: uniform((4 * hidden, hidden), bound, rng),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    pub fn input(&self) -> usize {
        self.w_ih.ncols()
    }

    /// Runs the recurrence from zero hidden and cell state.
    pub fn forward(&self, x: &ArrayView3<f64>) -> Result<LstmLayerCache> {
        let (n, t, f) = x.dim();
        if f != self.input() {
            return Err(Error::shape("lstm input", &[n, t, self.input()], &[n, t, f]));
        }
        let h = self.hidden();
        let mut gates = Array3::zeros((n, t, 4 * h));
        let mut cells = Array3::zeros((n, t, h));
        let mut hidden = Array3::zeros((n, t, h));
        let mut h_prev = Array2::<f64>::zeros((n, h));
        let mut c_prev = Array2::<f64>::zeros((n, h));
        for step in 0..t {
            let mut z = x.slice(s![.., step, ..]).dot(&self.w_ih.t()) + h_prev.dot(&self.w_hh.t()) + &self.bias;
            for mut row in z.rows_mut() {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = if (2 * h..3 * h).contains(&k) { v.tanh() } else { sigmoid(*v) };
                }
            }
            let (i, fg, g, o) = (
                z.slice(s![.., 0..h]),
                z.slice(s![.., h..2 * h]),
                z.slice(s![.., 2 * h..3 * h]),
                z.slice(s![.., 3 * h..]),
            );
            let c = &fg * &c_prev + &i * &g;
            let hn = &o * &c.mapv(f64::tanh);
            gates.slice_mut(s![.., step, ..]).assign(&z);
            cells.slice_mut(s![.., step, ..]).assign(&c);
            hidden.slice_mut(s![.., step, ..]).assign(&hn);
            h_prev = hn;
            c_prev = c;
        }
        Ok(LstmLayerCache {
            input: x.to_owned(),
            gates,
            cells,
            hidden,
        })
    }

    /// Backpropagation through time. `dh` is `∂L/∂h_t` for every step's
    /// output; returns `∂L/∂x`.
    pub fn backward(&self, cache: &LstmLayerCache, dh: &ArrayView3<f64>, grad: &mut LstmLayer) -> Array3<f64> {
        let (n, t, f) = cache.input.dim();
        let h = self.hidden();
        let mut dx = Array3::zeros((n, t, f));
        let mut dh_next = Array2::<f64>::zeros((n, h));
        let mut dc_next = Array2::<f64>::zeros((n, h));
        let zeros = Array2::<f64>::zeros((n, h));
        for step in (0..t).rev() {
            let z = cache.gates.slice(s![.., step, ..]);
            let (i, fg, g, o) = (
                z.slice(s![.., 0..h]),
                z.slice(s![.., h..2 * h]),
                z.slice(s![.., 2 * h..3 * h]),
                z.slice(s![.., 3 * h..]),
            );
            let c = cache.cells.slice(s![.., step, ..]);
            let (h_prev, c_prev): (ArrayView2<f64>, ArrayView2<f64>) = if step == 0 {
                (zeros.view(), zeros.view())
            } else {
                (cache.hidden.slice(s![.., step - 1, ..]), cache.cells.slice(s![.., step - 1, ..]))
            };
            let dht = &dh.slice(s![.., step, ..]) + &dh_next;
            let tc = c.mapv(f64::tanh);
            let mut dc = dc_next.clone();
            Zip::from(&mut dc)
                .and(&dht)
                .and(&o)
                .and(&tc)
                .for_each(|d, &a, &ov, &tv| *d += a * ov * (1.0 - tv * tv));

            let mut dz = Array2::<f64>::zeros((n, 4 * h));
            Zip::from(dz.slice_mut(s![.., 0..h]))
                .and(&dc)
                .and(&g)
                .and(&i)
                .for_each(|d, &dcv, &gv, &iv| *d = dcv * gv * iv * (1.0 - iv));
            Zip::from(dz.slice_mut(s![.., h..2 * h]))
                .and(&dc)
                .and(&c_prev)
                .and(&fg)
                .for_each(|d, &dcv, &cp, &fv| *d = dcv * cp * fv * (1.0 - fv));
            Zip::from(dz.slice_mut(s![.., 2 * h..3 * h]))
                .and(&dc)
                .and(&i)
                .and(&g)
                .for_each(|d, &dcv, &iv, &gv| *d = dcv * iv * (1.0 - gv * gv));
            Zip::from(dz.slice_mut(s![.., 3 * h..]))
                .and(&dht)
                .and(&tc)
                .and(&o)
                .for_each(|d, &a, &tv, &ov| *d = a * tv * ov * (1.0 - ov));

            grad.w_ih += &dz.t().dot(&cache.input.slice(s![.., step, ..]));
            grad.w_hh += &dz.t().dot(&h_prev);
            grad.bias += &dz.sum_axis(Axis(0));
            dx.slice_mut(s![.., step, ..]).assign(&dz.dot(&self.w_ih));
            dh_next = dz.dot(&self.w_hh);
            dc_next = &dc * &fg;
        }
        dx
    }
}

/// Stacked LSTM with dropout between layers (never after the last one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
    pub dropout: f64,
}

impl_param_tensors!(Lstm { layers });

#[derive(Debug, Clone)]
pub struct LstmCache {
    pub layers: Vec<LstmLayerCache>,
    masks: Vec<Option<Array3<f64>>>,
}

impl LstmCache {
    /// Top-layer hidden states, `N × T × H`.
    pub fn output(&self) -> &Array3<f64> {
        &self.layers.last().expect("at least one layer").hidden
    }
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, layers: usize, dropout: f64, rng: &mut R) -> Self {
        assert!(layers >= 1, "an LSTM needs at least one layer");
        Self {
            layers: (0..layers)
                .map(|l| LstmLayer::new(if l == 0 { input } else { hidden }, hidden, rng))
                .collect(),
            dropout,
        }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden()
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &ArrayView3<f64>, mode: Mode, rng: &mut R) -> Result<LstmCache> {
        let drop = Dropout::new(self.dropout);
        let mut caches: Vec<LstmLayerCache> = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let cache = match caches.last() {
                None => layer.forward(x)?,
                Some(prev) => {
                    let mask = drop.mask(prev.hidden.raw_dim(), mode, rng);
                    let c = match &mask {
                        Some(m) => layer.forward(&(&prev.hidden * m).view())?,
                        None => layer.forward(&prev.hidden.view())?,
                    };
                    masks.push(mask);
                    c
                }
            };
            debug_assert_eq!(l + 1, caches.len() + 1);
            caches.push(cache);
        }
        Ok(LstmCache { layers: caches, masks })
    }

    /// `dout` is `∂L/∂(top hidden states)`; returns `∂L/∂x`.
    pub fn backward(&self, cache: &LstmCache, dout: &ArrayView3<f64>, grad: &mut Lstm) -> Array3<f64> {
        let mut d = dout.to_owned();
        for l in (0..self.layers.len()).rev() {
            d = self.layers[l].backward(&cache.layers[l], &d.view(), &mut grad.layers[l]);
            if l > 0 {
                if let Some(m) = &cache.masks[l - 1] {
                    d *= m;
                }
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::{grad_check, zeros_like};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_states() {
        let l = LstmLayer {
            w_ih: Array2::zeros((8, 3)),
            w_hh: Array2::zeros((8, 2)),
            bias: Array1::zeros(8),
        };
        let x = Array3::from_elem((2, 4, 3), 1.7);
        let c = l.forward(&x.view()).unwrap();
        assert!(c.hidden.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_cell_matches_hand_computation() {
        // i, f, g, o pre-activations: 0.5x+0.1, -0.3x, 0.8x, 0.2x+0.05
        let l = LstmLayer {
            w_ih: array![[0.5], [-0.3], [0.8], [0.2]],
            w_hh: array![[0.0], [0.0], [0.0], [0.0]],
            bias: array![0.1, 0.0, 0.0, 0.05],
        };
        let x = 1.5;
        let i = sigmoid(0.5 * x + 0.1);
        let g = (0.8 * x).tanh();
        let o = sigmoid(0.2 * x + 0.05);
        let h = o * (i * g).tanh();
        let c = l.forward(&array![[[x]]].view()).unwrap();
        assert!((c.hidden[[0, 0, 0]] - h).abs() < 1e-15);
    }

    #[test]
    fn stacked_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = Lstm::new(3, 4, 2, 0.0, &mut rng);
        let x: Array3<f64> = uniform((2, 5, 3), 1.0, &mut rng);
        let r: Array3<f64> = uniform((2, 5, 4), 1.0, &mut rng);
        let mut r0 = ChaCha8Rng::seed_from_u64(0);
        let cache = net.forward(&x.view(), Mode::Train, &mut r0).unwrap();
        let mut g = zeros_like(&net);
        let dx = net.backward(&cache, &r.view(), &mut g);
        let f = |p: &Lstm| {
            let mut r0 = ChaCha8Rng::seed_from_u64(0);
            (p.forward(&x.view(), Mode::Train, &mut r0).unwrap().output() * &r).sum()
        };
        let rep = grad_check(&net, &g, f, 1e-5);
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
        let fx = |xx: &Array3<f64>| {
            let mut r0 = ChaCha8Rng::seed_from_u64(0);
            (net.forward(&xx.view(), Mode::Train, &mut r0).unwrap().output() * &r).sum()
        };
        assert!(grad_check(&x, &dx, fx, 1e-5).max_rel_error < 1e-5);
    }

    #[test]
    fn dropout_between_layers_is_differentiated() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Lstm::new(2, 3, 3, 0.4, &mut rng);
        let x: Array3<f64> = uniform((3, 4, 2), 1.0, &mut rng);
        let r: Array3<f64> = uniform((3, 4, 3), 1.0, &mut rng);
        let run = |p: &Lstm| {
            let mut r0 = ChaCha8Rng::seed_from_u64(77);
            p.forward(&x.view(), Mode::Train, &mut r0).unwrap()
        };
        let cache = run(&net);
        let mut g = zeros_like(&net);
        net.backward(&cache, &r.view(), &mut g);
        let rep = grad_check(&net, &g, |p| (run(p).output() * &r).sum(), 1e-5);
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    }

    use crate::tensorcore::uniform;
}
