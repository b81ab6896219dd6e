use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `low`, `medium`, `high` or `static`.
    pub subset: String,
    pub feature: String,
    pub baseline_auc: f64,
    pub ablated_auc: f64,
    pub delta: f64,
}

/// Rows sorted by delta ascending: the most influential feature first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub baseline_auc: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("subset,feature,baseline_auc,ablated_auc,delta\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:?},{:?},{:?}\n",
                r.subset, r.feature, r.baseline_auc, r.ablated_auc, r.delta
            ));
        }
        s
    }

    pub fn delta(&self, feature: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.feature == feature).map(|r| r.delta)
    }
}

/// Retrains once per feature with that feature removed.
///
/// `evaluate(None)` must train and score the full feature set;
/// `evaluate(Some(name))` the same with `name` dropped. Both use the same seed
/// and configuration, so any delta is attributable to the feature.
pub fn feature_ablation<F>(features: &[(String, String)], mut evaluate: F) -> Result<AblationReport>
where
    F: FnMut(Option<&str>) -> Result<f64>,
{
    let baseline_auc = evaluate(None)?;
    let mut rows = Vec::with_capacity(features.len());
    for (subset, feature) in features {
        let ablated_auc = evaluate(Some(feature))?;
        rows.push(AblationRow {
            subset: subset.clone(),
            feature: feature.clone(),
            baseline_auc,
            ablated_auc,
            delta: ablated_auc - baseline_auc,
        });
    }
    rows.sort_by(|a, b| a.delta.total_cmp(&b.delta).then_with(|| a.feature.cmp(&b.feature)));
    Ok(AblationReport { baseline_auc, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deltas_and_order() {
        let feats = vec![("low".to_string(), "a".to_string()), ("high".to_string(), "b".to_string())];
        let r = feature_ablation(&feats, |f| {
            Ok(match f {
                None => 0.65,
                Some("a") => 0.64,
                _ => 0.60,
            })
        })
        .unwrap();
        assert_eq!(r.rows[0].feature, "b");
        assert!((r.rows[0].delta + 0.05).abs() < 1e-12);
        assert!(r.to_csv().starts_with("subset,feature"));
    }
}
