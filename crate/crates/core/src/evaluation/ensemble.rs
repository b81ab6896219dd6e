use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorcore::sigmoid;

/// Per-patient mean of the base models' probabilities.
pub fn ensemble_average(probabilities: &[Vec<f64>]) -> Result<Vec<f64>> {
    if probabilities.len() < 2 {
        return Err(Error::InvalidInput("an ensemble needs at least two models".into()));
    }
    let n = probabilities[0].len();
    if let Some(bad) = probabilities.iter().find(|p| p.len() != n) {
        return Err(Error::shape("ensemble member", &[n], &[bad.len()]));
    }
    let k = probabilities.len() as f64;
    Ok((0..n).map(|i| probabilities.iter().map(|p| p[i]).sum::<f64>() / k).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackingConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
}

impl Default for StackingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 1000,
            l2: 1e-4,
        }
    }
}

/// Logistic-regression meta-model over base-model probabilities, fitted by
/// full-batch gradient descent. Fit it on out-of-fold probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticStacker {
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn columns(probabilities: &[Vec<f64>]) -> Result<Array2<f64>> {
    let n = probabilities.first().map_or(0, Vec::len);
    if let Some(bad) = probabilities.iter().find(|p| p.len() != n) {
        return Err(Error::shape("stacking input", &[n], &[bad.len()]));
    }
    Ok(Array2::from_shape_fn((n, probabilities.len()), |(i, j)| probabilities[j][i]))
}

impl LogisticStacker {
    pub fn fit(probabilities: &[Vec<f64>], labels: &[u8], cfg: &StackingConfig) -> Result<Self> {
        if probabilities.len() < 2 {
            return Err(Error::InvalidInput("stacking needs at least two base models".into()));
        }
        let x = columns(probabilities)?;
        if x.nrows() != labels.len() {
            return Err(Error::shape("stacking labels", &[x.nrows()], &[labels.len()]));
        }
        let n = x.nrows() as f64;
        let y = Array1::from_iter(labels.iter().map(|&v| f64::from(v)));
        let mut w = Array1::<f64>::zeros(x.ncols());
        let mut b = 0.0;
        for _ in 0..cfg.iterations {
            let p = (x.dot(&w) + b).mapv(sigmoid);
            let r = &p - &y;
            let gw = x.t().dot(&r) / n + &w * cfg.l2;
            let gb = r.sum() / n;
            w -= &(gw * cfg.learning_rate);
            b -= cfg.learning_rate * gb;
        }
        Ok(Self {
            weights: w.to_vec(),
            bias: b,
        })
    }

    pub fn predict_proba(&self, probabilities: &[Vec<f64>]) -> Result<Vec<f64>> {
        if probabilities.len() != self.weights.len() {
            return Err(Error::shape("stacking members", &[self.weights.len()], &[probabilities.len()]));
        }
        let x = columns(probabilities)?;
        let w = Array1::from(self.weights.clone());
        Ok((x.dot(&w) + self.bias).mapv(sigmoid).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::auc_roc;

    #[test]
    fn average_and_errors() {
        let p = ensemble_average(&[vec![0.2], vec![0.4], vec![0.6]]).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-15);
        assert!(ensemble_average(&[vec![0.2, 0.1], vec![0.4]]).is_err());
        assert!(ensemble_average(&[vec![0.2]]).is_err());
    }

    #[test]
    fn identical_members_keep_auc() {
        let base = vec![0.1, 0.7, 0.3, 0.9, 0.45, 0.2];
        let y = [0, 1, 0, 1, 1, 0];
        let members = vec![base.clone(), base.clone()];
        let s = LogisticStacker::fit(&members, &y, &StackingConfig::default()).unwrap();
        let p = s.predict_proba(&members).unwrap();
        assert_eq!(auc_roc(&p, &y).unwrap(), auc_roc(&base, &y).unwrap());
    }
}
