use serde::{Deserialize, Serialize};

use crate::cohort::{FeatureKind, WINDOW_MINUTES};

/// Train-set means used when a patient has no observation near a window edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMeans {
    pub start: Option<f64>,
    pub end: Option<f64>,
}

/// Adds values at minute 0 and minute 360 to a patient's series.
///
/// `series` holds `(minute, value)` pairs in recording order. An observation at
/// the edge is kept; otherwise the earliest (latest) observation within half an
/// interval of the edge is copied there; otherwise the train mean is used, or the
/// patient's own mean when no train mean exists. An empty series stays empty.
pub fn impute_boundaries(
    series: &[(u32, f64)],
    interval: u32,
    means: BoundaryMeans,
) -> Vec<(u32, f64)> {
    if series.is_empty() {
        return Vec::new();
    }
    let half = interval / 2;
    let end_minute = WINDOW_MINUTES;
    let own_mean = series.iter().map(|p| p.1).sum::<f64>() / series.len() as f64;

    let has_start = series.iter().any(|p| p.0 == 0);
    let has_end = series.iter().any(|p| p.0 == end_minute);

    let mut out = Vec::with_capacity(series.len() + 2);
    if !has_start {
        let near = series
            .iter()
            .filter(|p| p.0 <= half)
            .min_by_key(|p| p.0)
            .map(|p| p.1);
        out.push((0, near.or(means.start).unwrap_or(own_mean)));
    }
    out.extend_from_slice(series);
    if !has_end {
        let near = series
            .iter()
            .filter(|p| p.0 >= end_minute - half)
            .max_by_key(|p| p.0)
            .map(|p| p.1);
        out.push((end_minute, near.or(means.end).unwrap_or(own_mean)));
    }
    out
}

/// Places observations on a one-minute grid (later entries overwrite earlier ones
/// at the same minute), fills interior gaps linearly, fills anything left with the
/// patient's mean and reads off every `interval` minutes. Empty input → all NaN.
pub fn resample_interpolate(series: &[(u32, f64)], interval: u32) -> Vec<f64> {
    let len = (WINDOW_MINUTES / interval) as usize + 1;
    if series.is_empty() {
        return vec![f64::NAN; len];
    }
    // Last write wins: keep the final entry recorded at each minute.
    let mut points: Vec<(u32, f64)> = Vec::with_capacity(series.len());
    let mut order: Vec<usize> = (0..series.len()).collect();
    order.sort_by_key(|&i| series[i].0);
    for i in order {
        let (m, v) = series[i];
        if m > WINDOW_MINUTES {
            continue;
        }
        match points.last_mut() {
            Some(last) if last.0 == m => last.1 = v,
            _ => points.push((m, v)),
        }
    }
    if points.is_empty() {
        return vec![f64::NAN; len];
    }
    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;

    (0..len)
        .map(|k| {
            let t = k as u32 * interval;
            match points.binary_search_by_key(&t, |p| p.0) {
                Ok(i) => points[i].1,
                Err(0) => mean,
                Err(i) if i == points.len() => mean,
                Err(i) => {
                    let (a, va) = points[i - 1];
                    let (b, vb) = points[i];
                    va + (vb - va) * f64::from(t - a) / f64::from(b - a)
                }
            }
        })
        .collect()
}

/// Rounds half away from zero and clamps score features to their scale.
pub fn clip_categorical(kind: FeatureKind, values: &mut [f64]) {
    if let Some((lo, hi)) = kind.score_range() {
        for v in values.iter_mut().filter(|v| !v.is_nan()) {
            *v = v.round().clamp(lo, hi);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NO_MEANS: BoundaryMeans = BoundaryMeans {
        start: None,
        end: None,
    };

    #[test]
    fn boundary_rules() {
        let means = BoundaryMeans {
            start: Some(1.0),
            end: Some(2.0),
        };
        let out = impute_boundaries(&[(10, 5.0)], 30, means);
        assert_eq!(out, vec![(0, 5.0), (10, 5.0), (360, 2.0)]);

        let out = impute_boundaries(&[(0, 7.0), (200, 3.0)], 30, means);
        assert_eq!(out, vec![(0, 7.0), (200, 3.0), (360, 2.0)]);

        // Earliest and latest within the half-window are chosen.
        let out = impute_boundaries(&[(12, 1.5), (3, 9.0), (350, 4.0), (355, 6.0)], 30, means);
        assert_eq!(out.first(), Some(&(0, 9.0)));
        assert_eq!(out.last(), Some(&(360, 6.0)));

        // Outside the half-window → train mean.
        let out = impute_boundaries(&[(16, 5.0)], 30, means);
        assert_eq!(out.first(), Some(&(0, 1.0)));
        // Wider window for the low subset.
        let out = impute_boundaries(&[(50, 5.0)], 120, means);
        assert_eq!(out.first(), Some(&(0, 5.0)));

        assert!(impute_boundaries(&[], 30, means).is_empty());
        let out = impute_boundaries(&[(100, 4.0)], 30, NO_MEANS);
        assert_eq!(out, vec![(0, 4.0), (100, 4.0), (360, 4.0)]);
    }

    #[test]
    fn resample_examples() {
        let v = resample_interpolate(&[(0, 10.0), (360, 20.0)], 120);
        let want = [10.0, 10.0 + 10.0 / 3.0, 10.0 + 20.0 / 3.0, 20.0];
        for (a, b) in v.iter().zip(want) {
            assert!((a - b).abs() < 1e-9);
        }
        let v = resample_interpolate(&[(0, 5.0), (180, 5.0), (360, 5.0)], 60);
        assert!(v.iter().all(|&x| x == 5.0));

        let v = resample_interpolate(&[(0, 0.0), (90, 9.0), (360, 9.0)], 30);
        assert!((v[1] - 3.0).abs() < 1e-12);
        assert!((v[2] - 6.0).abs() < 1e-12);
        assert_eq!(v.len(), 13);

        let v = resample_interpolate(&[], 60);
        assert_eq!(v.len(), 7);
        assert!(v.iter().all(|x| x.is_nan()));
    }

    #[test]
    fn same_minute_keeps_last_recorded() {
        let v = resample_interpolate(&[(0, 1.0), (0, 3.0), (360, 3.0)], 120);
        assert_eq!(v[0], 3.0);
    }

    #[test]
    fn unbounded_edges_use_patient_mean() {
        let v = resample_interpolate(&[(100, 2.0), (200, 4.0)], 120);
        assert_eq!(v[0], 3.0);
        assert_eq!(v[3], 3.0);
        assert!((v[1] - 2.4).abs() < 1e-12);
    }

    #[test]
    fn categorical_clipping() {
        let mut v = [4.7, -6.0, 0.5, -0.5, f64::NAN];
        clip_categorical(FeatureKind::Ras, &mut v);
        assert_eq!(&v[..4], &[4.0, -5.0, 1.0, -1.0]);
        assert!(v[4].is_nan());
        let mut v = [0.2];
        clip_categorical(FeatureKind::GcsEye, &mut v);
        assert_eq!(v, [1.0]);
        let mut v = [3.5, 7.0];
        clip_categorical(FeatureKind::GcsMotor, &mut v);
        assert_eq!(v, [4.0, 6.0]);
    }
}
