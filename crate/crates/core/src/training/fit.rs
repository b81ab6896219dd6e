use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{bce_with_logits, class_weights};
use super::optim::{clip_grad_norm, Adam};
use super::sampling::{resample_indices, smote, SamplingMethod};
use crate::error::{Error, Result};
use crate::evaluation::auc_roc;
use crate::gbdt::{gbdt_fit_weighted, BoostedModel, GbdtParams};
use crate::preprocess::{SubsetTensorBundle, TabularData};
use crate::temporal::{Family, FusedHyper, FusedInput, FusedModel, FusedModelSpec};
use crate::tensorcore::{zeros_like, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Normal,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            patience: 5,
            min_delta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub num_epochs: usize,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "normal_sampling")]
    pub sampling_method: SamplingMethod,
    #[serde(default = "normal_loss")]
    pub loss: LossKind,
    /// Applied to temporal-convolution models only.
    #[serde(default = "one")]
    pub grad_clip_max_norm: f64,
    #[serde(default)]
    pub early_stop: EarlyStopConfig,
    /// Share of the training rows held out for early stopping when no
    /// validation set is supplied.
    #[serde(default = "tenth")]
    pub validation_fraction: f64,
    pub seed: u64,
}

fn normal_sampling() -> SamplingMethod {
    SamplingMethod::Normal
}
fn normal_loss() -> LossKind {
    LossKind::Normal
}
fn one() -> f64 {
    1.0
}
fn tenth() -> f64 {
    0.1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            batch_size: 64,
            num_epochs: 40,
            weight_decay: 0.0,
            sampling_method: SamplingMethod::Normal,
            loss: LossKind::Normal,
            grad_clip_max_norm: 1.0,
            early_stop: EarlyStopConfig::default(),
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.num_epochs == 0 {
            return Err(Error::InvalidConfig(
                "learning_rate, batch_size and num_epochs must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig("validation_fraction must lie in [0, 1)".into()));
        }
        if !(self.grad_clip_max_norm > 0.0) {
            return Err(Error::InvalidConfig("grad_clip_max_norm must be positive".into()));
        }
        if self.loss == LossKind::Weighted && self.sampling_method != SamplingMethod::Normal {
            warn!("weighted loss on resampled data is redundant");
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }
}

/// Which model to build, with its architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum ModelSpec {
    #[serde(rename = "fused-lstm")]
    FusedLstm(FusedHyper),
    #[serde(rename = "fused-tcn")]
    FusedTcn(FusedHyper),
    #[serde(rename = "gbdt")]
    Gbdt(GbdtParams),
}

impl ModelSpec {
    pub fn family_name(&self) -> &'static str {
        match self {
            ModelSpec::FusedLstm(_) => "fused-lstm",
            ModelSpec::FusedTcn(_) => "fused-tcn",
            ModelSpec::Gbdt(_) => "gbdt",
        }
    }

    pub fn uses_sequences(&self) -> bool {
        !matches!(self, ModelSpec::Gbdt(_))
    }
}

/// Training data for either model kind.
#[derive(Debug, Clone, Copy)]
pub enum Dataset<'a> {
    Sequences(&'a SubsetTensorBundle),
    Tabular(&'a TabularData),
}

impl<'a> Dataset<'a> {
    pub fn labels(&self) -> &'a [u8] {
        match self {
            Dataset::Sequences(b) => &b.labels,
            Dataset::Tabular(t) => &t.labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An owned row subset of a [`Dataset`].
#[derive(Debug, Clone)]
pub enum OwnedDataset {
    Sequences(SubsetTensorBundle),
    Tabular(TabularData),
}

impl OwnedDataset {
    pub fn select(data: Dataset<'_>, rows: &[usize]) -> Self {
        match data {
            Dataset::Sequences(b) => OwnedDataset::Sequences(b.select_rows(rows)),
            Dataset::Tabular(t) => OwnedDataset::Tabular(t.select_rows(rows)),
        }
    }

    pub fn view(&self) -> Dataset<'_> {
        match self {
            OwnedDataset::Sequences(b) => Dataset::Sequences(b),
            OwnedDataset::Tabular(t) => Dataset::Tabular(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    Fused(FusedModel),
    Gbdt(BoostedModel),
}

impl TrainedModel {
    pub fn predict_proba(&self, data: Dataset<'_>) -> Result<Vec<f64>> {
        match (self, data) {
            (TrainedModel::Fused(m), Dataset::Sequences(b)) => Ok(m.predict_bundle(b)?.to_vec()),
            (TrainedModel::Gbdt(m), Dataset::Tabular(t)) => m.predict_proba(&t.data.view()),
            _ => Err(Error::InvalidInput("model and dataset kinds differ".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Patience-based early stopping on a score that should increase.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    cfg: EarlyStopConfig,
    pub best: Option<f64>,
    pub best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(cfg: EarlyStopConfig) -> Self {
        Self {
            cfg,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records a score for `epoch`; returns (improved, should_stop).
    pub fn observe(&mut self, epoch: usize, score: f64) -> (bool, bool) {
        let improved = self.best.is_none_or(|b| score > b + self.cfg.min_delta);
        if improved {
            self.best = Some(score);
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        (improved, self.stale >= self.cfg.patience)
    }
}

/// Label-stratified hold-out of `fraction` of the rows; both parts sorted.
pub fn carve_validation(y: &[u8], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(rng);
        let k = (idx.len() as f64 * fraction).round() as usize;
        let k = if fraction > 0.0 && idx.len() >= 2 { k.max(1) } else { k };
        valid.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    (train, valid)
}

fn two_classes(y: &[u8]) -> bool {
    y.contains(&0) && y.contains(&1)
}

/// Trains a model on `data`. Early stopping watches `validation` when given,
/// otherwise a label-stratified carve-out of the training rows. Resampling
/// only ever touches the training rows.
pub fn fit(
    spec: &ModelSpec,
    data: Dataset<'_>,
    validation: Option<Dataset<'_>>,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, History)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let (train_rows, carved) = match validation {
        Some(_) => ((0..data.len()).collect(), None),
        None if cfg.validation_fraction > 0.0 => {
            let (t, v) = carve_validation(data.labels(), cfg.validation_fraction, &mut cfg.rng(1));
            (t, Some(OwnedDataset::select(data, &v)))
        }
        None => ((0..data.len()).collect(), None),
    };
    let valid = validation.or(carved.as_ref().map(OwnedDataset::view));
    let train = OwnedDataset::select(data, &train_rows);
    match (spec, train.view()) {
        (ModelSpec::FusedLstm(h), Dataset::Sequences(b)) => fit_fused(Family::Lstm, h, b, valid, cfg),
        (ModelSpec::FusedTcn(h), Dataset::Sequences(b)) => fit_fused(Family::Tcn, h, b, valid, cfg),
        (ModelSpec::Gbdt(p), Dataset::Tabular(t)) => fit_gbdt(p, t, valid, cfg),
        _ => Err(Error::InvalidInput(format!(
            "{} cannot be trained on this dataset kind",
            spec.family_name()
        ))),
    }
}

fn fit_fused(
    family: Family,
    hyper: &FusedHyper,
    train: &SubsetTensorBundle,
    validation: Option<Dataset<'_>>,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, History)> {
    let valid = match validation {
        Some(Dataset::Sequences(b)) => Some(b),
        Some(Dataset::Tabular(_)) => return Err(Error::InvalidInput("validation set must be sequences".into())),
        None => None,
    };
    let spec = FusedModelSpec::for_bundle(family, hyper.clone(), train)?;
    let mut model = FusedModel::new(spec, cfg.seed)?;
    let input = FusedInput::from_bundle(train)?;
    let valid_input = valid.map(FusedInput::from_bundle).transpose()?;
    let valid_ok = valid.is_some_and(|v| two_classes(&v.labels));
    if valid.is_some() && !valid_ok {
        warn!("validation set holds a single class; training runs all epochs without early stopping");
    }

    let rows = resample_indices(&train.labels, cfg.sampling_method, &mut cfg.rng(4))?;
    let labels: Vec<u8> = rows.iter().map(|&i| train.labels[i]).collect();
    let weights = match cfg.loss {
        LossKind::Weighted => class_weights(&labels),
        LossKind::Normal => [1.0, 1.0],
    };
    let mut opt = Adam::new(cfg.learning_rate, cfg.weight_decay);
    let mut shuffle_rng = cfg.rng(2);
    let mut dropout_rng = cfg.rng(3);
    let mut stopper = EarlyStopping::new(cfg.early_stop);
    let mut best = model.clone();
    let mut history = History {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut order: Vec<usize> = (0..rows.len()).collect();

    for epoch in 1..=cfg.num_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        // Batch statistics need two samples: fold a trailing singleton into
        // the previous batch.
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
            batches.pop();
            let k = batches.len() - 1;
            batches[k] = &order[k * cfg.batch_size..];
        }
        let mut loss_sum = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let picked: Vec<usize> = batch.iter().map(|&j| rows[j]).collect();
            let y: Vec<u8> = picked.iter().map(|&i| train.labels[i]).collect();
            let sub = input.select_rows(&picked);
            let cache = model.forward(&sub, Mode::Train, &mut dropout_rng)?;
            let (loss, dlogits) = bce_with_logits(cache.logits.as_slice().expect("contiguous"), &y, weights);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            loss_sum += loss * y.len() as f64;
            let mut grad = zeros_like(&model);
            model.backward(&cache, &ndarray::Array1::from(dlogits), &mut grad);
            if family == Family::Tcn {
                clip_grad_norm(&mut grad, cfg.grad_clip_max_norm);
            }
            opt.step(&mut model, &grad);
            model.update_running(&cache);
        }
        let val_auc = match (&valid_input, valid) {
            (Some(vi), Some(v)) if valid_ok => Some(auc_roc(model.predict_proba(vi)?.as_slice().expect("contiguous"), &v.labels)?),
            _ => None,
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / rows.len() as f64,
            validation_auc: val_auc,
        });
        match val_auc {
            Some(auc) => {
                let (improved, stop) = stopper.observe(epoch, auc);
                if improved {
                    best = model.clone();
                    history.best_epoch = epoch;
                }
                if stop {
                    history.stopped_early = epoch < cfg.num_epochs;
                    break;
                }
            }
            None => {
                best = model.clone();
                history.best_epoch = epoch;
            }
        }
    }
    Ok((TrainedModel::Fused(best), history))
}

fn fit_gbdt(
    params: &GbdtParams,
    train: &TabularData,
    validation: Option<Dataset<'_>>,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, History)> {
    let valid = match validation {
        Some(Dataset::Tabular(t)) => Some(t),
        Some(Dataset::Sequences(_)) => return Err(Error::InvalidInput("validation set must be tabular".into())),
        None => None,
    };
    let mut rng = cfg.rng(4);
    let (x, y) = match cfg.sampling_method {
        SamplingMethod::Oversample => smote(&train.data, &train.labels, 5, &mut rng)?,
        method => {
            let rows = resample_indices(&train.labels, method, &mut rng)?;
            (
                train.data.select(ndarray::Axis(0), &rows),
                rows.iter().map(|&i| train.labels[i]).collect(),
            )
        }
    };
    let weights = match cfg.loss {
        LossKind::Weighted => {
            let w = class_weights(&y);
            Some(y.iter().map(|&t| w[usize::from(t)]).collect::<Vec<f64>>())
        }
        LossKind::Normal => None,
    };
    let model = gbdt_fit_weighted(
        &x.view(),
        &y,
        weights.as_deref(),
        params,
        valid.map(|v| (v.data.view(), v.labels.as_slice())),
    )?;
    let history = History {
        epochs: model
            .train_loss
            .iter()
            .enumerate()
            .map(|(i, &l)| EpochRecord {
                epoch: i + 1,
                train_loss: l,
                validation_auc: model.validation_auc.get(i).copied(),
            })
            .collect(),
        best_epoch: model.trees.len(),
        stopped_early: model.trees.len() < params.n_rounds,
    };
    Ok((TrainedModel::Gbdt(model), history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_stops_after_five_stale_epochs() {
        let mut s = EarlyStopping::new(EarlyStopConfig::default());
        let mut stopped_at = None;
        for epoch in 1..=20 {
            let auc = 0.9 - 0.01 * epoch as f64;
            if s.observe(epoch, auc).1 {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(6));
        assert_eq!(s.best_epoch, 1);
    }

    #[test]
    fn carve_out_is_stratified() {
        let y: Vec<u8> = (0..100).map(|i| u8::from(i % 3 == 0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (t, v) = carve_validation(&y, 0.1, &mut rng);
        assert_eq!(t.len() + v.len(), 100);
        assert!(v.iter().any(|&i| y[i] == 1) && v.iter().any(|&i| y[i] == 0));
        assert_eq!(v.len(), 10);
    }
}
