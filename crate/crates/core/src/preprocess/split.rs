use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{EventRecord, PatientId, WINDOW_MINUTES};
use crate::error::{Error, Result};

/// Average, over `features`, of the number of grid points (every `interval`
/// minutes across the window) with no observation within half an interval.
pub fn synthetic_proportion(patient_events: &[EventRecord], features: &[String], interval: u32) -> f64 {
    if features.is_empty() {
        return 0.0;
    }
    let half = interval / 2;
    let grid: Vec<u32> = (0..=WINDOW_MINUTES).step_by(interval as usize).collect();
    let mut minutes: HashMap<&str, Vec<u32>> = HashMap::new();
    for e in patient_events {
        minutes.entry(e.feature.as_str()).or_default().push(e.minute);
    }
    let total: usize = features
        .iter()
        .map(|f| {
            let obs = minutes.get(f.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            grid.iter()
                .filter(|&&g| !obs.iter().any(|&m| m.abs_diff(g) <= half))
                .count()
        })
        .sum();
    total as f64 / features.len() as f64
}

/// Synthetic proportion for every patient in `patients`.
pub fn synthetic_proportions(
    events: &[EventRecord],
    patients: &[PatientId],
    features: &[String],
    interval: u32,
) -> Vec<f64> {
    let mut by_patient: HashMap<PatientId, Vec<EventRecord>> = HashMap::new();
    for e in events {
        by_patient.entry(e.patient_id).or_default().push(e.clone());
    }
    patients
        .iter()
        .map(|p| {
            let ev = by_patient.get(p).map(Vec::as_slice).unwrap_or(&[]);
            synthetic_proportion(ev, features, interval)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<PatientId>,
    pub test: Vec<PatientId>,
    pub seed: u64,
}

const STRATA: usize = 10;

/// Decile-stratified train/test split. The test set holds
/// `ceil((1 − ratio)·n)` patients, apportioned across strata by largest remainder.
pub fn stratified_split(
    patients: &[PatientId],
    strat_values: &[f64],
    ratio: f64,
    seed: u64,
) -> Result<Split> {
    if patients.len() != strat_values.len() {
        return Err(Error::InvalidInput(
            "patients and stratification values differ in length".into(),
        ));
    }
    if patients.len() < 2 {
        return Err(Error::InvalidInput(
            "at least two patients are needed to split".into(),
        ));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("split ratio {ratio} outside (0, 1)")));
    }
    let n = patients.len();
    let n_test = (((1.0 - ratio) * n as f64) - 1e-9).ceil().clamp(1.0, (n - 1) as f64) as usize;

    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| {
        strat_values[a]
            .total_cmp(&strat_values[b])
            .then(patients[a].cmp(&patients[b]))
    });
    // Equal strat values share a stratum.
    let mut strata: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut bucket = 0;
    for (rank, &i) in ranked.iter().enumerate() {
        let candidate = rank * STRATA / n;
        if rank > 0 && strat_values[i] != strat_values[ranked[rank - 1]] {
            bucket = bucket.max(candidate);
        }
        strata.entry(bucket).or_default().push(i);
    }

    let quotas: Vec<f64> = strata
        .values()
        .map(|members| members.len() as f64 * n_test as f64 / n as f64)
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut remaining = n_test - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &s in &order {
        if remaining == 0 {
            break;
        }
        counts[s] += 1;
        remaining -= 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(n - n_test);
    let mut test = Vec::with_capacity(n_test);
    for (members, &k) in strata.values().zip(&counts) {
        let mut members = members.clone();
        members.shuffle(&mut rng);
        for (j, &i) in members.iter().enumerate() {
            if j < k {
                test.push(patients[i]);
            } else {
                train.push(patients[i]);
            }
        }
    }
    train.sort();
    test.sort();
    Ok(Split { train, test, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(f: &str, minute: u32) -> EventRecord {
        EventRecord {
            patient_id: PatientId(0),
            feature: f.into(),
            minute,
            value: 1.0,
        }
    }

    #[test]
    fn synthetic_counts() {
        let feats = vec!["a".to_string(), "b".to_string()];
        let full: Vec<EventRecord> = (0..=12)
            .flat_map(|k| [ev("a", k * 30), ev("b", k * 30)])
            .collect();
        assert_eq!(synthetic_proportion(&full, &feats, 30), 0.0);
        assert_eq!(synthetic_proportion(&[], &feats, 30), 13.0);
        let half: Vec<EventRecord> = (0..=12).map(|k| ev("a", k * 30)).collect();
        assert_eq!(synthetic_proportion(&half, &feats, 30), 6.5);
        // An observation 15 minutes off still covers the grid point.
        assert_eq!(synthetic_proportion(&[ev("a", 15)], &feats[..1], 30), 11.0);
    }

    #[test]
    fn identical_values_split_eight_two() {
        let ids: Vec<PatientId> = (0..10).map(PatientId).collect();
        let s = stratified_split(&ids, &[1.0; 10], 0.8, 3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
    }

    #[test]
    fn reference_cohort_sizes() {
        let ids: Vec<PatientId> = (0..4701).map(PatientId).collect();
        let vals: Vec<f64> = (0..4701).map(|i| (i % 97) as f64 / 7.0).collect();
        let s = stratified_split(&ids, &vals, 0.8, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (3760, 941));
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(stratified_split(&[PatientId(0)], &[0.0], 0.8, 0).is_err());
        assert!(stratified_split(&[PatientId(0), PatientId(1)], &[0.0, 1.0], 1.0, 0).is_err());
    }

    #[test]
    fn partition_is_complete_and_seeded() {
        let ids: Vec<PatientId> = (0..57).map(PatientId).collect();
        let vals: Vec<f64> = (0..57).map(|i| ((i * 31) % 13) as f64).collect();
        let a = stratified_split(&ids, &vals, 0.8, 9).unwrap();
        let b = stratified_split(&ids, &vals, 0.8, 9).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<PatientId> = a.train.iter().chain(&a.test).copied().collect();
        all.sort();
        assert_eq!(all, ids);
    }
}
