use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::cohort::{EventRecord, PatientId, WINDOW_MINUTES};
use crate::error::{Error, Result};

/// Mean observations per training patient per window, keyed by feature id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrequencyProfile(pub BTreeMap<String, f64>);

impl FrequencyProfile {
    pub fn get(&self, feature: &str) -> Option<f64> {
        self.0.get(feature).copied()
    }
}

/// Counts observations of each listed feature over the training patients and
/// divides by the number of training patients.
pub fn observation_frequency(
    events: &[EventRecord],
    train_ids: &[PatientId],
    features: &[String],
) -> Result<FrequencyProfile> {
    if train_ids.is_empty() {
        return Err(Error::InvalidInput("no training patients".into()));
    }
    let train: HashSet<PatientId> = train_ids.iter().copied().collect();
    let mut counts: BTreeMap<String, f64> = features.iter().map(|f| (f.clone(), 0.0)).collect();
    for e in events.iter().filter(|e| train.contains(&e.patient_id)) {
        if let Some(c) = counts.get_mut(&e.feature) {
            *c += 1.0;
        }
    }
    let n = train.len() as f64;
    for c in counts.values_mut() {
        *c /= n;
    }
    Ok(FrequencyProfile(counts))
}

/// Features observed at least `threshold` times per window on average, ordered
/// by descending frequency then id.
pub fn filter_low_observed(profile: &FrequencyProfile, threshold: f64) -> Vec<String> {
    let mut kept: Vec<(&String, f64)> = profile
        .0
        .iter()
        .filter(|(_, &f)| f >= threshold)
        .map(|(k, &f)| (k, f))
        .collect();
    kept.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    kept.into_iter().map(|(k, _)| k.clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetKind {
    Low,
    Medium,
    High,
}

impl SubsetKind {
    pub const ALL: [SubsetKind; 3] = [SubsetKind::Low, SubsetKind::Medium, SubsetKind::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SubsetKind::Low => "low",
            SubsetKind::Medium => "medium",
            SubsetKind::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subset {
    pub kind: SubsetKind,
    pub features: Vec<String>,
    /// Resampling interval in minutes.
    pub interval: u32,
}

impl Subset {
    pub fn seq_len(&self) -> usize {
        seq_len(self.interval)
    }
}

pub fn seq_len(interval: u32) -> usize {
    (WINDOW_MINUTES / interval) as usize + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRules {
    /// Frequencies strictly below this go to the low subset.
    pub low_upper: f64,
    /// Frequencies strictly above this go to the high subset.
    pub high_lower: f64,
    /// Intervals (minutes) for low, medium and high.
    pub intervals: [u32; 3],
}

impl Default for SubsetRules {
    fn default() -> Self {
        Self {
            low_upper: 1.0,
            high_lower: 3.0,
            intervals: [120, 60, 30],
        }
    }
}

impl SubsetRules {
    pub fn validate(&self) -> Result<()> {
        if self.low_upper > self.high_lower {
            return Err(Error::InvalidConfig(
                "low subset bound exceeds high subset bound".into(),
            ));
        }
        for &iv in &self.intervals {
            if iv == 0 || WINDOW_MINUTES % iv != 0 {
                return Err(Error::InvalidConfig(format!(
                    "interval {iv} does not divide the {WINDOW_MINUTES}-minute window"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetAssignment {
    pub subsets: [Subset; 3],
}

impl SubsetAssignment {
    pub fn subset(&self, kind: SubsetKind) -> &Subset {
        &self.subsets[kind.index()]
    }

    pub fn all_features(&self) -> impl Iterator<Item = &String> {
        self.subsets.iter().flat_map(|s| s.features.iter())
    }

    /// Every feature in one subset resampled at a single interval (the
    /// pre-subset layout). Low and medium are left empty.
    pub fn single_rate(retained: &[String], interval: u32) -> Self {
        Self {
            subsets: [
                Subset {
                    kind: SubsetKind::Low,
                    features: vec![],
                    interval: 120,
                },
                Subset {
                    kind: SubsetKind::Medium,
                    features: vec![],
                    interval: 60,
                },
                Subset {
                    kind: SubsetKind::High,
                    features: retained.to_vec(),
                    interval,
                },
            ],
        }
    }
}

/// Low: f < low_upper; medium: low_upper ≤ f ≤ high_lower; high: f > high_lower.
pub fn assign_subsets(
    profile: &FrequencyProfile,
    retained: &[String],
    rules: &SubsetRules,
) -> Result<SubsetAssignment> {
    rules.validate()?;
    let mut groups: [Vec<String>; 3] = Default::default();
    for feature in retained {
        let f = profile.get(feature).ok_or_else(|| {
            Error::InvalidInput(format!("feature `{feature}` missing from frequency profile"))
        })?;
        let kind = if f < rules.low_upper {
            SubsetKind::Low
        } else if f > rules.high_lower {
            SubsetKind::High
        } else {
            SubsetKind::Medium
        };
        groups[kind.index()].push(feature.clone());
    }
    let [low, medium, high] = groups;
    Ok(SubsetAssignment {
        subsets: [
            Subset {
                kind: SubsetKind::Low,
                features: low,
                interval: rules.intervals[0],
            },
            Subset {
                kind: SubsetKind::Medium,
                features: medium,
                interval: rules.intervals[1],
            },
            Subset {
                kind: SubsetKind::High,
                features: high,
                interval: rules.intervals[2],
            },
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(p: u32, f: &str) -> EventRecord {
        EventRecord {
            patient_id: PatientId(p),
            feature: f.into(),
            minute: 0,
            value: 1.0,
        }
    }

    #[test]
    fn mean_counts_over_train_only() {
        let events = vec![ev(0, "A"), ev(0, "A"), ev(0, "A"), ev(1, "A"), ev(2, "A")];
        let feats = vec!["A".to_string(), "B".to_string()];
        let p = observation_frequency(&events, &[PatientId(0), PatientId(1)], &feats).unwrap();
        assert_eq!(p.get("A"), Some(2.0));
        assert_eq!(p.get("B"), Some(0.0));
        assert!(observation_frequency(&events, &[], &feats).is_err());
    }

    #[test]
    fn threshold_edges() {
        let p = FrequencyProfile(
            [("a".to_string(), 0.5), ("b".to_string(), 2.0), ("c".to_string(), 0.49)].into(),
        );
        assert_eq!(filter_low_observed(&p, 0.5), vec!["b", "a"]);
        assert_eq!(filter_low_observed(&p, 0.0).len(), 3);
        assert!(filter_low_observed(&p, 2.5).is_empty());
    }

    #[test]
    fn boundary_frequencies_go_to_medium() {
        let p = FrequencyProfile(
            [
                ("one".to_string(), 1.0),
                ("three".to_string(), 3.0),
                ("low".to_string(), 0.99),
                ("high".to_string(), 3.01),
            ]
            .into(),
        );
        let retained = filter_low_observed(&p, 0.0);
        let a = assign_subsets(&p, &retained, &SubsetRules::default()).unwrap();
        assert_eq!(a.subset(SubsetKind::Low).features, vec!["low"]);
        assert_eq!(a.subset(SubsetKind::Medium).features, vec!["three", "one"]);
        assert_eq!(a.subset(SubsetKind::High).features, vec!["high"]);
        let lens: Vec<usize> = a.subsets.iter().map(|s| s.seq_len()).collect();
        assert_eq!(lens, vec![4, 7, 13]);
    }

    #[test]
    fn bad_interval_rejected() {
        let rules = SubsetRules {
            intervals: [120, 70, 30],
            ..Default::default()
        };
        assert!(rules.validate().is_err());
    }
}
