use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ffnn::{Ffnn, FfnnCache};
use super::tcn::{TcnBranch, TcnCache};
use super::{Family, FusedModelSpec};
use crate::error::{Error, Result};
use crate::preprocess::SubsetTensorBundle;
use crate::tensorcore::{impl_param_tensors, sigmoid, Linear, Lstm, LstmCache, Mode, ParamTensors};

/// Model-ready view of one subset: missing cells zeroed, plus the
/// per-timestep validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchInput {
    /// `N × T × F`
    pub x: Array3<f64>,
    /// `N × T`, true when any feature is observed at that step.
    pub step_mask: Array2<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedInput {
    pub branches: [BranchInput; 3],
    pub static_x: Option<Array2<f64>>,
}

impl FusedInput {
    /// Zero-substitutes every cell whose mask is false. A NaN under a true
    /// mask means the bundle is corrupt.
    pub fn from_bundle(bundle: &SubsetTensorBundle) -> Result<Self> {
        let mut branches = Vec::with_capacity(3);
        for s in &bundle.subsets {
            if s.mask.dim() != s.values.dim() {
                return Err(Error::CorruptBundle(format!("{} subset mask has the wrong shape", s.kind.name())));
            }
            let mut x = Array3::zeros(s.values.raw_dim());
            for ((dst, &v), &m) in x.iter_mut().zip(&s.values).zip(&s.mask) {
                if m {
                    if !v.is_finite() {
                        return Err(Error::CorruptBundle(format!(
                            "{} subset: non-finite value at an observed position",
                            s.kind.name()
                        )));
                    }
                    *dst = v;
                }
            }
            branches.push(BranchInput {
                x,
                step_mask: s.timestep_mask(),
            });
        }
        Ok(Self {
            branches: branches.try_into().expect("three subsets"),
            static_x: bundle.static_block.as_ref().map(|b| b.data.clone()),
        })
    }

    pub fn len(&self) -> usize {
        self.branches[0].x.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            branches: std::array::from_fn(|b| BranchInput {
                x: self.branches[b].x.select(Axis(0), rows),
                step_mask: self.branches[b].step_mask.select(Axis(0), rows),
            }),
            static_x: self.static_x.as_ref().map(|m| m.select(Axis(0), rows)),
        }
    }
}

/// Output at the latest valid timestep per patient (`N × H`); a patient with
/// no valid step gets a zero vector. Also returns the chosen indices.
pub fn last_valid_output(outputs: &ArrayView3<f64>, mask: &ArrayView2<bool>) -> (Array2<f64>, Vec<Option<usize>>) {
    let (n, _, h) = outputs.dim();
    let mut out = Array2::zeros((n, h));
    let mut idx = Vec::with_capacity(n);
    for i in 0..n {
        let last = mask.row(i).iter().rposition(|&m| m);
        if let Some(t) = last {
            out.row_mut(i).assign(&outputs.slice(s![i, t, ..]));
        }
        idx.push(last);
    }
    (out, idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Branch {
    Lstm(Lstm),
    Tcn(TcnBranch),
}

impl ParamTensors for Branch {
    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Branch::Lstm(l) => l.tensors(),
            Branch::Tcn(t) => t.tensors(),
        }
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Branch::Lstm(l) => l.tensors_mut(),
            Branch::Tcn(t) => t.tensors_mut(),
        }
    }
}

enum BranchCache {
    Lstm(LstmCache),
    Tcn(TcnCache),
}

struct BranchState {
    cache: BranchCache,
    last: Vec<Option<usize>>,
}

pub struct FusedCache {
    branches: Vec<BranchState>,
    static_branch: Option<FfnnCache>,
    fused: Array2<f64>,
    pub logits: Array1<f64>,
}

impl FusedCache {
    pub fn probabilities(&self) -> Array1<f64> {
        self.logits.mapv(sigmoid)
    }
}

/// Three temporal branches, optional static FFNN, linear fusion head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedModel {
    pub spec: FusedModelSpec,
    pub branches: Vec<Branch>,
    pub static_net: Option<Ffnn>,
    pub head: Linear,
}

impl_param_tensors!(FusedModel { branches, static_net, head });

impl FusedModel {
    pub fn new(spec: FusedModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = &spec.hyper;
        let branches = spec
            .branch_features
            .iter()
            .map(|&f| match spec.family {
                Family::Lstm => Branch::Lstm(Lstm::new(f, h.hidden_dim, h.layer_dim, h.dropout_prob, &mut rng)),
                Family::Tcn => Branch::Tcn(TcnBranch::new(
                    f,
                    &h.num_channels,
                    h.kernel_size,
                    h.hidden_dim,
                    h.dropout_prob,
                    &mut rng,
                )),
            })
            .collect();
        let static_net = match (&h.static_branch, spec.static_dim) {
            (Some(fs), Some(d)) => Some(Ffnn::new(d, h.hidden_dim, fs, &mut rng)),
            _ => None,
        };
        let head = Linear::new(spec.fusion_width(), 1, &mut rng);
        Ok(Self {
            spec,
            branches,
            static_net,
            head,
        })
    }

    fn check_input(&self, input: &FusedInput) -> Result<()> {
        let n = input.len();
        for (b, bi) in input.branches.iter().enumerate() {
            let (bn, t, f) = bi.x.dim();
            let want = [n, self.spec.branch_timesteps[b], self.spec.branch_features[b]];
            if [bn, t, f] != want {
                return Err(Error::shape("fused branch input", &want, &[bn, t, f]));
            }
        }
        if let Some(d) = self.spec.static_dim {
            match &input.static_x {
                Some(m) if m.dim() == (n, d) => {}
                Some(m) => return Err(Error::shape("static input", &[n, d], &[m.nrows(), m.ncols()])),
                None => return Err(Error::InvalidInput("model expects static features".into())),
            }
        }
        Ok(())
    }

    pub fn forward<R: Rng + ?Sized>(&self, input: &FusedInput, mode: Mode, rng: &mut R) -> Result<FusedCache> {
        self.check_input(input)?;
        let n = input.len();
        let hd = self.spec.hyper.hidden_dim;
        let mut fused = Array2::zeros((n, self.spec.fusion_width()));
        let mut states = Vec::with_capacity(3);
        for (b, (branch, bi)) in self.branches.iter().zip(&input.branches).enumerate() {
            let (mut out, cache) = match branch {
                Branch::Lstm(l) => {
                    let c = l.forward(&bi.x.view(), mode, rng)?;
                    (c.output().clone(), BranchCache::Lstm(c))
                }
                Branch::Tcn(t) => {
                    let x = bi.x.view().permuted_axes([0, 2, 1]);
                    let (y, c) = t.forward(&x, mode, rng)?;
                    (
                        y.permuted_axes([0, 2, 1]).as_standard_layout().into_owned(),
                        BranchCache::Tcn(c),
                    )
                }
            };
            for ((i, t, _), v) in out.indexed_iter_mut() {
                if !bi.step_mask[[i, t]] {
                    *v = 0.0;
                }
            }
            let (last, idx) = last_valid_output(&out.view(), &bi.step_mask.view());
            fused.slice_mut(s![.., b * hd..(b + 1) * hd]).assign(&last);
            states.push(BranchState { cache, last: idx });
        }
        let static_branch = match (&self.static_net, &input.static_x) {
            (Some(net), Some(x)) => {
                let (y, c) = net.forward(&x.view(), mode, rng)?;
                fused.slice_mut(s![.., 3 * hd..]).assign(&y);
                Some(c)
            }
            _ => None,
        };
        let logits = self.head.forward(&fused.view())?.column(0).to_owned();
        Ok(FusedCache {
            branches: states,
            static_branch,
            fused,
            logits,
        })
    }

    /// Accumulates parameter gradients given `∂L/∂logit` per patient.
    pub fn backward(&self, cache: &FusedCache, dlogits: &Array1<f64>, grad: &mut FusedModel) {
        let hd = self.spec.hyper.hidden_dim;
        let dy = dlogits.view().insert_axis(Axis(1));
        let dfused = self.head.backward(&cache.fused.view(), &dy, &mut grad.head);
        for (b, state) in cache.branches.iter().enumerate() {
            let dvec = dfused.slice(s![.., b * hd..(b + 1) * hd]);
            let t_len = self.spec.branch_timesteps[b];
            let mut dout = Array3::zeros((dvec.nrows(), t_len, hd));
            let mut any = false;
            for (i, t) in state.last.iter().enumerate() {
                if let Some(t) = t {
                    dout.slice_mut(s![i, *t, ..]).assign(&dvec.row(i));
                    any = true;
                }
            }
            if !any {
                continue;
            }
            match (&self.branches[b], &state.cache, &mut grad.branches[b]) {
                (Branch::Lstm(l), BranchCache::Lstm(c), Branch::Lstm(g)) => {
                    l.backward(c, &dout.view(), g);
                }
                (Branch::Tcn(t), BranchCache::Tcn(c), Branch::Tcn(g)) => {
                    let d = dout.permuted_axes([0, 2, 1]).as_standard_layout().into_owned();
                    t.backward(c, &d.view(), g);
                }
                _ => unreachable!("gradient and model share one architecture"),
            }
        }
        if let (Some(net), Some(c), Some(g)) = (&self.static_net, &cache.static_branch, grad.static_net.as_mut()) {
            let d = dfused.slice(s![.., 3 * hd..]);
            net.backward(c, &d, g);
        }
    }

    /// Folds the batch statistics of a training pass into the running
    /// batch-norm statistics (TCN only).
    pub fn update_running(&mut self, cache: &FusedCache) {
        for (branch, state) in self.branches.iter_mut().zip(&cache.branches) {
            if let (Branch::Tcn(t), BranchCache::Tcn(c)) = (branch, &state.cache) {
                t.update_running(c);
            }
        }
    }

    /// Every stored number: trainable parameters, then batch-norm running
    /// statistics. This is the checkpoint payload order.
    pub fn state_tensors(&self) -> Vec<&[f64]> {
        let mut out = self.tensors();
        for b in &self.branches {
            if let Branch::Tcn(t) = b {
                for blk in &t.blocks {
                    for bn in [&blk.bn1, &blk.bn2] {
                        out.push(bn.running_mean.as_slice().expect("contiguous"));
                        out.push(bn.running_var.as_slice().expect("contiguous"));
                    }
                }
            }
        }
        out
    }

    /// Restores everything [`state_tensors`](Self::state_tensors) emits.
    pub fn load_state(&mut self, state: &[f64]) -> Result<()> {
        let expected: usize = self.state_tensors().iter().map(|t| t.len()).sum();
        if state.len() != expected {
            return Err(Error::shape("model state", &[expected], &[state.len()]));
        }
        let mut rest = state;
        let mut copy_into = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for t in self.tensors_mut() {
            copy_into(t);
        }
        for b in self.branches.iter_mut() {
            if let Branch::Tcn(t) = b {
                for blk in t.blocks.iter_mut() {
                    for bn in [&mut blk.bn1, &mut blk.bn2] {
                        copy_into(bn.running_mean.as_slice_mut().expect("contiguous"));
                        copy_into(bn.running_var.as_slice_mut().expect("contiguous"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Inference-mode probabilities.
    pub fn predict_proba(&self, input: &FusedInput) -> Result<Array1<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(input, Mode::Eval, &mut rng)?.probabilities())
    }

    pub fn predict_bundle(&self, bundle: &SubsetTensorBundle) -> Result<Array1<f64>> {
        self.predict_proba(&FusedInput::from_bundle(bundle)?)
    }
}

/// Label 1 iff probability is strictly above the threshold.
pub fn predict(probabilities: &[f64], threshold: f64) -> Vec<u8> {
    probabilities.iter().map(|&p| u8::from(p > threshold)).collect()
}

#[cfg(test)]
mod tests {
    use super::super::{FfnnSpec, FusedHyper};
    use super::*;
    use crate::preprocess::{StaticBlock, SubsetKind, SubsetTensor};
    use crate::cohort::PatientId;
    use crate::tensorcore::{fill, grad_check, uniform, zeros_like, Activation};

    fn bundle(n: usize, seed: u64, with_static: bool) -> SubsetTensorBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let make = |kind, interval, f: usize, rng: &mut ChaCha8Rng| {
            let t = crate::preprocess::seq_len(interval);
            let mut v: Array3<f64> = uniform((n, t, f), 0.5, rng) + 0.5;
            for x in v.iter_mut() {
                if rng.random_bool(0.3) {
                    *x = f64::NAN;
                }
            }
            SubsetTensor::from_values(kind, interval, (0..f).map(|i| format!("f{i}")).collect(), v)
        };
        SubsetTensorBundle {
            patients: (0..n as u32).map(PatientId).collect(),
            labels: (0..n).map(|i| (i % 2) as u8).collect(),
            subsets: [
                make(SubsetKind::Low, 120, 2, &mut rng),
                make(SubsetKind::Medium, 60, 3, &mut rng),
                make(SubsetKind::High, 30, 1, &mut rng),
            ],
            static_block: with_static.then(|| StaticBlock {
                columns: vec!["a".into(), "b".into(), "c".into()],
                data: uniform((n, 3), 0.5, &mut rng) + 0.5,
            }),
        }
    }

    fn hyper(with_static: bool) -> FusedHyper {
        FusedHyper {
            hidden_dim: 3,
            layer_dim: 2,
            num_channels: vec![3, 2],
            kernel_size: 2,
            dropout_prob: 0.2,
            static_branch: with_static.then(|| FfnnSpec {
                ffnn_layers: 1,
                ffnn_units: 4,
                ffnn_activation: Activation::Tanh,
                ffnn_dropout: 0.1,
            }),
        }
    }

    #[test]
    fn all_masked_patient_gets_half() {
        let mut b = bundle(2, 1, false);
        for s in b.subsets.iter_mut() {
            s.values.fill(f64::NAN);
            s.mask.fill(false);
        }
        for family in [Family::Lstm, Family::Tcn] {
            let spec = FusedModelSpec::for_bundle(family, hyper(false), &b).unwrap();
            let mut m = FusedModel::new(spec, 3).unwrap();
            m.head.bias.fill(0.0);
            let p = m.predict_bundle(&b).unwrap();
            assert!(p.iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn nan_under_true_mask_is_rejected() {
        let mut b = bundle(2, 1, false);
        b.subsets[1].values[[0, 0, 0]] = f64::NAN;
        b.subsets[1].mask[[0, 0, 0]] = true;
        assert!(matches!(FusedInput::from_bundle(&b), Err(Error::CorruptBundle(_))));
    }

    #[test]
    fn strict_threshold() {
        assert_eq!(predict(&[0.5, 0.9, 0.1], 0.5), vec![0, 1, 0]);
        assert_eq!(predict(&[0.01, 0.2], 0.0), vec![1, 1]);
    }

    #[test]
    fn last_valid_rules() {
        let out = Array3::from_shape_fn((3, 3, 1), |(_, t, _)| t as f64 + 1.0);
        let mask = ndarray::array![[true, true, false], [true, true, true], [false, false, false]];
        let (v, idx) = last_valid_output(&out.view(), &mask.view());
        assert_eq!(v.column(0).to_vec(), vec![2.0, 3.0, 0.0]);
        assert_eq!(idx, vec![Some(1), Some(2), None]);
    }

    #[test]
    fn hand_computed_scalar_lstm() {
        // One hidden unit per branch, one feature, T = 1 after masking all but
        // the first step; only the input-to-candidate and output gates are set.
        let mut b = bundle(2, 4, false);
        for s in b.subsets.iter_mut() {
            s.values.fill(f64::NAN);
            s.mask.fill(false);
        }
        let xs = [[0.3, 0.8], [0.6, 0.1], [0.9, 0.4]];
        for (k, s) in b.subsets.iter_mut().enumerate() {
            for i in 0..2 {
                s.values[[i, 0, 0]] = xs[k][i];
                s.mask[[i, 0, 0]] = true;
            }
        }
        for s in b.subsets[..2].iter_mut() {
            let keep = [0usize];
            s.values = s.values.select(Axis(2), &keep);
            s.mask = s.mask.select(Axis(2), &keep);
            s.features.truncate(1);
        }
        let h = FusedHyper {
            hidden_dim: 1,
            layer_dim: 1,
            dropout_prob: 0.0,
            ..FusedHyper::default()
        };
        let spec = FusedModelSpec::for_bundle(Family::Lstm, h, &b).unwrap();
        let mut m = FusedModel::new(spec, 0).unwrap();
        fill(&mut m, 0.0);
        let ws = [(0.7, 1.1), (-0.4, 0.5), (1.3, -0.9)];
        for (k, br) in m.branches.iter_mut().enumerate() {
            if let Branch::Lstm(l) = br {
                l.layers[0].w_ih[[2, 0]] = ws[k].0; // candidate
                l.layers[0].bias[3] = ws[k].1; // output gate
            }
        }
        m.head.weight = ndarray::array![[0.5, -1.2, 2.0]];
        m.head.bias[0] = 0.1;
        let p = m.predict_bundle(&b).unwrap();
        for i in 0..2 {
            let mut z = 0.1;
            for k in 0..3 {
                let (wg, bo) = ws[k];
                // i = f = σ(0) = 0.5, c = 0.5·tanh(wg·x), h = σ(bo)·tanh(c)
                let c = 0.5 * (wg * xs[k][i]).tanh();
                let hv = sigmoid(bo) * c.tanh();
                z += [0.5, -1.2, 2.0][k] * hv;
            }
            assert!((p[i] - sigmoid(z)).abs() < 1e-14, "{} vs {}", p[i], sigmoid(z));
        }
    }

    #[test]
    fn masked_values_never_matter() {
        let b = bundle(5, 9, true);
        for family in [Family::Lstm, Family::Tcn] {
            let spec = FusedModelSpec::for_bundle(family, hyper(true), &b).unwrap();
            let m = FusedModel::new(spec, 2).unwrap();
            let base = m.predict_bundle(&b).unwrap();
            let mut b2 = b.clone();
            for s in b2.subsets.iter_mut() {
                for (v, &mk) in s.values.iter_mut().zip(&s.mask) {
                    if !mk {
                        *v = 123.0;
                    }
                }
            }
            let p2 = m.predict_proba(&FusedInput::from_bundle(&b2).unwrap()).unwrap();
            assert_eq!(base, p2);
        }
    }

    #[test]
    fn full_model_gradients() {
        for family in [Family::Lstm, Family::Tcn] {
            for with_static in [false, true] {
                let b = bundle(4, 12, with_static);
                let spec = FusedModelSpec::for_bundle(family, hyper(with_static), &b).unwrap();
                let m = FusedModel::new(spec, 5).unwrap();
                let input = FusedInput::from_bundle(&b).unwrap();
                let r = Array1::from(vec![0.7, -1.3, 0.4, 1.1]);
                let run = |p: &FusedModel| {
                    let mut rng = ChaCha8Rng::seed_from_u64(17);
                    p.forward(&input, Mode::Train, &mut rng).unwrap()
                };
                let cache = run(&m);
                let mut g = zeros_like(&m);
                m.backward(&cache, &r, &mut g);
                let rep = grad_check(&m, &g, |p| run(p).logits.dot(&r), 1e-5);
                assert!(rep.max_rel_error < 1e-4, "{family:?} static={with_static} {rep:?}");
            }
        }
    }
}
