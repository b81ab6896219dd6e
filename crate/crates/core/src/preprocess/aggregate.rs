use std::collections::{BTreeMap, HashMap, HashSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cohort::{EventRecord, FeatureKind, PatientId};

/// Most frequent value; ties go to the smaller value.
pub fn mode(values: &[f64]) -> Option<f64> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v.round() as i64).or_default() += 1;
    }
    let mut best: Option<(i64, usize)> = None;
    for (v, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((v, c));
        }
    }
    best.map(|(v, _)| v as f64)
}

/// Per-column fill values fitted on the training patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationStats {
    pub features: Vec<String>,
    pub kinds: Vec<FeatureKind>,
    /// Train mean of patient means (numeric) or train mode of patient modes (scores).
    pub fill: Vec<f64>,
}

fn summarise(kind: FeatureKind, values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    if kind.is_categorical() {
        let mut clipped = values.to_vec();
        super::resample::clip_categorical(kind, &mut clipped);
        mode(&clipped)
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn per_patient(events: &[EventRecord]) -> HashMap<(PatientId, &str), Vec<f64>> {
    let mut m: HashMap<(PatientId, &str), Vec<f64>> = HashMap::new();
    for e in events {
        m.entry((e.patient_id, e.feature.as_str()))
            .or_default()
            .push(e.value);
    }
    m
}

impl AggregationStats {
    pub fn fit(
        events: &[EventRecord],
        train_ids: &[PatientId],
        features: &[String],
        kinds: &[FeatureKind],
    ) -> Self {
        let train: HashSet<PatientId> = train_ids.iter().copied().collect();
        let grouped = per_patient(events);
        let fill = features
            .iter()
            .zip(kinds)
            .map(|(f, &kind)| {
                let summaries: Vec<f64> = train_ids
                    .iter()
                    .filter(|p| train.contains(p))
                    .filter_map(|p| {
                        grouped
                            .get(&(*p, f.as_str()))
                            .and_then(|v| summarise(kind, v))
                    })
                    .collect();
                if summaries.is_empty() {
                    0.0
                } else if kind.is_categorical() {
                    mode(&summaries).unwrap_or(0.0)
                } else {
                    summaries.iter().sum::<f64>() / summaries.len() as f64
                }
            })
            .collect();
        Self {
            features: features.to_vec(),
            kinds: kinds.to_vec(),
            fill,
        }
    }

    /// One row per patient: window mean (numeric) or mode (scores), missing
    /// entries taken from the fitted fill values.
    pub fn transform(&self, events: &[EventRecord], order: &[PatientId]) -> Array2<f64> {
        let grouped = per_patient(events);
        let mut out = Array2::zeros((order.len(), self.features.len()));
        for (i, p) in order.iter().enumerate() {
            for (j, f) in self.features.iter().enumerate() {
                out[[i, j]] = grouped
                    .get(&(*p, f.as_str()))
                    .and_then(|v| summarise(self.kinds[j], v))
                    .unwrap_or(self.fill[j]);
            }
        }
        out
    }
}

/// Tabular matrix for the boosted-tree baseline, with optional static columns appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularData {
    pub columns: Vec<String>,
    pub patients: Vec<PatientId>,
    pub labels: Vec<u8>,
    pub data: Array2<f64>,
}

impl TabularData {
    pub fn without_column(&self, name: &str) -> Option<Self> {
        let j = self.columns.iter().position(|c| c == name)?;
        let keep: Vec<usize> = (0..self.columns.len()).filter(|&k| k != j).collect();
        Some(Self {
            columns: keep.iter().map(|&k| self.columns[k].clone()).collect(),
            patients: self.patients.clone(),
            labels: self.labels.clone(),
            data: self.data.select(ndarray::Axis(1), &keep),
        })
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            columns: self.columns.clone(),
            patients: rows.iter().map(|&i| self.patients[i]).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            data: self.data.select(ndarray::Axis(0), rows),
        }
    }
}

pub fn aggregate_for_baseline(
    events: &[EventRecord],
    order: &[PatientId],
    stats: &AggregationStats,
    static_block: Option<(&[String], &Array2<f64>)>,
) -> (Vec<String>, Array2<f64>) {
    let dynamic = stats.transform(events, order);
    let mut columns = stats.features.clone();
    let data = match static_block {
        Some((names, matrix)) => {
            columns.extend(names.iter().cloned());
            ndarray::concatenate(ndarray::Axis(1), &[dynamic.view(), matrix.view()])
                .expect("row counts agree")
        }
        None => dynamic,
    };
    (columns, data)
}
