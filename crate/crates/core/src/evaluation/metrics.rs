use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

pub fn confusion(labels: &[u8], preds: &[u8]) -> Result<ConfusionMatrix> {
    if labels.len() != preds.len() {
        return Err(Error::shape("confusion inputs", &[labels.len()], &[preds.len()]));
    }
    let mut cm = ConfusionMatrix::default();
    for (&y, &p) in labels.iter().zip(preds) {
        match (y, p) {
            (1, 1) => cm.tp += 1,
            (0, 1) => cm.fp += 1,
            (0, 0) => cm.tn += 1,
            (1, 0) => cm.fn_ += 1,
            _ => return Err(Error::InvalidInput(format!("labels and predictions must be 0/1, got ({y}, {p})"))),
        }
    }
    Ok(cm)
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Rates with the 0/0 → 0 convention.
    pub fn metrics(&self) -> Metrics {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            accuracy: ratio(self.tp + self.tn, self.total()),
            precision,
            recall,
            specificity: ratio(self.tn, self.tn + self.fp),
            f1,
        }
    }
}

fn check_scores(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auc inputs", &[labels.len()], &[scores.len()]));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// `(concordant + ½·tied) / (n⁺·n⁻)`, computed from mid-ranks in O(n log n).
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Accumulate in doubled ranks so tie mid-ranks stay integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share the mid-rank (i + j + 2) / 2.
        let mid2 = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank_sum2 += mid2 * pos_in_group;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores ≥ threshold are called positive; the first point uses +∞,
    /// which JSON carries as the string `"inf"`.
    #[serde(with = "extended_float")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            v if v.is_finite() => s.serialize_f64(v),
            v if v.is_nan() => s.serialize_str("nan"),
            v if v > 0.0 => s.serialize_str("inf"),
            _ => s.serialize_str("-inf"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One ROC point per distinct score, from (0, 0) to (1, 1).
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Everything reported for one model on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub auc_roc: Option<f64>,
    pub roc: Vec<RocPoint>,
    pub config_hash: String,
    pub seed: u64,
}

impl EvalReport {
    /// AUC and ROC are omitted (None / empty) when labels hold one class.
    pub fn from_scores(
        scores: &[f64],
        labels: &[u8],
        threshold: f64,
        config_hash: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        let preds: Vec<u8> = scores.iter().map(|&p| u8::from(p > threshold)).collect();
        let cm = confusion(labels, &preds)?;
        let m = cm.metrics();
        let (auc, roc) = match auc_roc(scores, labels) {
            Ok(a) => (Some(a), roc_curve(scores, labels)?),
            Err(Error::SingleClass) => (None, Vec::new()),
            Err(e) => return Err(e),
        };
        Ok(Self {
            n: labels.len(),
            threshold,
            confusion: cm,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            specificity: m.specificity,
            f1: m.f1,
            auc_roc: auc,
            roc,
            config_hash: config_hash.into(),
            seed,
        })
    }

    /// `threshold,fpr,tpr` rows.
    pub fn roc_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for p in &self.roc {
            s.push_str(&format!("{:?},{:?},{:?}\n", p.threshold, p.fpr, p.tpr));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_examples() {
        let m = confusion(&[1, 0], &[1, 0]).unwrap().metrics();
        assert_eq!((m.precision, m.recall), (1.0, 1.0));
        let labels = [1, 0, 0, 1, 0, 0];
        let m = confusion(&labels, &[1; 6]).unwrap().metrics();
        assert_eq!((m.recall, m.specificity), (1.0, 0.0));
        let m = confusion(&labels, &[0; 6]).unwrap().metrics();
        assert_eq!((m.precision, m.f1), (0.0, 0.0));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc(&[0.9, 0.8, 0.7, 0.1], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert_eq!(auc_roc(&[0.3; 5], &[1, 0, 1, 0, 0]).unwrap(), 0.5);
        assert_eq!(auc_roc(&[0.9, 0.8, 0.2], &[1, 1, 0]).unwrap(), 1.0);
        assert!(matches!(auc_roc(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClass)));
    }

    #[test]
    fn roc_area_matches() {
        let s = [0.1, 0.4, 0.4, 0.35, 0.8, 0.8, 0.2];
        let y = [0, 1, 0, 1, 1, 0, 0];
        let pts = roc_curve(&s, &y).unwrap();
        assert!((trapezoid_area(&pts) - auc_roc(&s, &y).unwrap()).abs() < 1e-12);
        assert_eq!(pts.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
    }

    #[test]
    fn report_handles_single_class() {
        let r = EvalReport::from_scores(&[0.2, 0.7], &[0, 0], 0.5, "h", 1).unwrap();
        assert!(r.auc_roc.is_none() && r.roc.is_empty());
        assert_eq!(r.confusion.fp, 1);
    }
}
