use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fit::{fit, Dataset, ModelSpec, OwnedDataset, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluation::auc_roc;

/// Seeded fold index per row; fold sizes differ by at most one.
pub fn kfold_assign(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidConfig("k-fold needs k ≥ 2".into()));
    }
    if k >= n {
        return Err(Error::InvalidConfig(format!(
            "k = {k} leaves validation folds of at most one patient among {n}; AUC is undefined"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// `None` for folds whose validation part held a single class.
    pub fold_aucs: Vec<Option<f64>>,
    pub mean_auc: Option<f64>,
}

impl CvResult {
    pub fn from_folds(fold_aucs: Vec<Option<f64>>) -> Self {
        let valid: Vec<f64> = fold_aucs.iter().flatten().copied().collect();
        let mean_auc = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
        Self { fold_aucs, mean_auc }
    }
}

/// Generic k-fold driver: `fit_score(train_rows, valid_rows)` returns the
/// validation AUC. Folds with a single-class validation part are skipped.
pub fn kfold_with<F>(labels: &[u8], k: usize, seed: u64, mut fit_score: F) -> Result<CvResult>
where
    F: FnMut(&[usize], &[usize]) -> Result<f64>,
{
    let fold = kfold_assign(labels.len(), k, seed)?;
    let mut aucs = Vec::with_capacity(k);
    for f in 0..k {
        let train: Vec<usize> = (0..labels.len()).filter(|&i| fold[i] != f).collect();
        let valid: Vec<usize> = (0..labels.len()).filter(|&i| fold[i] == f).collect();
        let has_both = valid.iter().any(|&i| labels[i] == 1) && valid.iter().any(|&i| labels[i] == 0);
        if !has_both {
            warn!("fold {f} validation part holds a single class; skipped");
            aucs.push(None);
            continue;
        }
        aucs.push(Some(fit_score(&train, &valid)?));
    }
    Ok(CvResult::from_folds(aucs))
}

/// k-fold cross-validated AUC of `spec` trained with `cfg`. Each training
/// fold is resampled and early-stopped on its own carve-out; the validation
/// fold is only scored.
pub fn kfold_cv(spec: &ModelSpec, data: Dataset<'_>, cfg: &TrainConfig, k: usize) -> Result<CvResult> {
    kfold_with(data.labels(), k, cfg.seed, |train, valid| {
        let tr = OwnedDataset::select(data, train);
        let va = OwnedDataset::select(data, valid);
        let (model, _) = fit(spec, tr.view(), None, cfg)?;
        let p = model.predict_proba(va.view())?;
        auc_roc(&p, va.view().labels())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_sizes_and_errors() {
        let f = kfold_assign(23, 5, 1).unwrap();
        let mut sizes = [0usize; 5];
        for &x in &f {
            sizes[x] += 1;
        }
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(kfold_assign(5, 5, 1).is_err());
        assert!(kfold_assign(5, 1, 1).is_err());
    }

    #[test]
    fn identical_scores_per_fold() {
        let y: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let r = kfold_with(&y, 4, 3, |_, _| Ok(0.7)).unwrap();
        let aucs: Vec<f64> = r.fold_aucs.iter().flatten().copied().collect();
        assert!(aucs.iter().all(|&a| a == 0.7));
    }

    #[test]
    fn single_class_fold_skipped() {
        let mut y = vec![0u8; 20];
        y[0] = 1;
        y[1] = 1;
        let r = kfold_with(&y, 5, 0, |_, _| Ok(0.6)).unwrap();
        assert!(r.fold_aucs.iter().any(Option::is_none));
        assert_eq!(r.mean_auc, Some(0.6));
    }
}
