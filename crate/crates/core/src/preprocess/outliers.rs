use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cohort::{EventRecord, FeatureSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundSource {
    Provided,
    Fitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lower: f64,
    pub upper: f64,
    pub source: BoundSource,
}

impl Bound {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Per-feature admissible ranges. Features without an entry pass unfiltered.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutlierBounds(pub BTreeMap<String, Bound>);

/// Fits `mean ± 3·sd` bounds from training events, clamping the lower bound to
/// zero for features that cannot be negative. Provided reference bounds win.
pub fn fit_outlier_bounds(train_events: &[EventRecord], catalog: &[FeatureSpec]) -> OutlierBounds {
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for e in train_events {
        values.entry(e.feature.as_str()).or_default().push(e.value);
    }
    let mut bounds = BTreeMap::new();
    for spec in catalog {
        if let Some((lower, upper)) = spec.reference_bounds {
            bounds.insert(
                spec.id.clone(),
                Bound {
                    lower,
                    upper,
                    source: BoundSource::Provided,
                },
            );
            continue;
        }
        let vals = values.get(spec.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        if vals.len() < 2 {
            if !vals.is_empty() {
                warn!(
                    "feature `{}` has {} training observation(s); outlier bounds not fitted",
                    spec.id,
                    vals.len()
                );
            }
            continue;
        }
        let (mean, sd) = mean_sd(vals);
        let mut lower = mean - 3.0 * sd;
        if spec.nonnegative {
            lower = lower.max(0.0);
        }
        bounds.insert(
            spec.id.clone(),
            Bound {
                lower,
                upper: mean + 3.0 * sd,
                source: BoundSource::Fitted,
            },
        );
    }
    OutlierBounds(bounds)
}

/// Sample mean and standard deviation (n − 1 denominator).
pub(crate) fn mean_sd(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Drops observations outside their feature's bounds.
pub fn apply_outlier_bounds(events: &[EventRecord], bounds: &OutlierBounds) -> Vec<EventRecord> {
    events
        .iter()
        .filter(|e| bounds.0.get(&e.feature).is_none_or(|b| b.contains(e.value)))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{FeatureKind, PatientId};

    fn spec(id: &str, nonneg: bool, provided: Option<(f64, f64)>) -> FeatureSpec {
        FeatureSpec {
            id: id.into(),
            frequency: 1.0,
            failure_frequency: None,
            range: (0.0, 1.0),
            signal: 0.0,
            kind: FeatureKind::Numeric,
            feature_set: 1,
            nonnegative: nonneg,
            reference_bounds: provided,
        }
    }

    fn events(f: &str, vals: &[f64]) -> Vec<EventRecord> {
        vals.iter()
            .enumerate()
            .map(|(i, &v)| EventRecord {
                patient_id: PatientId(i as u32),
                feature: f.into(),
                minute: 0,
                value: v,
            })
            .collect()
    }

    #[test]
    fn constant_values_give_point_bounds() {
        let ev = events("a", &[10.0, 10.0, 10.0]);
        let b = fit_outlier_bounds(&ev, &[spec("a", false, None)]);
        let bound = b.0["a"];
        assert_eq!((bound.lower, bound.upper), (10.0, 10.0));
        assert_eq!(apply_outlier_bounds(&ev, &b).len(), 3);
    }

    #[test]
    fn three_sigma_with_nonnegative_clamp() {
        // mean 50, sample sd 10
        let ev = events("a", &[40.0, 60.0, 40.0, 60.0, 50.0]);
        let b = fit_outlier_bounds(&ev, &[spec("a", true, None)]).0["a"];
        assert!((b.lower - 20.0).abs() < 1e-12);
        assert!((b.upper - 80.0).abs() < 1e-12);

        let wide = events("w", &[0.0, 100.0]);
        let b = fit_outlier_bounds(&wide, &[spec("w", true, None)]).0["w"];
        assert_eq!(b.lower, 0.0);
    }

    #[test]
    fn provided_bounds_override() {
        let ev = events("ph", &[7.0, 7.3, 7.4, 7.9]);
        let b = fit_outlier_bounds(&ev, &[spec("ph", true, Some((7.19, 7.58)))]);
        assert_eq!(b.0["ph"].source, BoundSource::Provided);
        let kept = apply_outlier_bounds(&ev, &b);
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn sparse_feature_passes_through() {
        let ev = events("s", &[1e9]);
        let b = fit_outlier_bounds(&ev, &[spec("s", true, None)]);
        assert!(b.0.is_empty());
        assert_eq!(apply_outlier_bounds(&ev, &b).len(), 1);
    }

    #[test]
    fn idempotent() {
        let ev = events("a", &[1.0, 2.0, 3.0, 2.0, 100.0, 2.5, 1.5, 2.2, 2.1, 1.9, 2.0, 2.0]);
        let b = fit_outlier_bounds(&ev, &[spec("a", false, None)]);
        let once = apply_outlier_bounds(&ev, &b);
        assert!(once.len() < ev.len());
        assert_eq!(apply_outlier_bounds(&once, &b), once);
    }
}
