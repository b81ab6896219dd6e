use std::collections::{HashMap, HashSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::scaling::MinMax;
use crate::cohort::{Ethnicity, Gender, PatientId, StaticProfile};
use crate::error::{Error, Result};

/// Age bins used for the one-hot age encoding.
pub const AGE_BINS: [&str; 5] = ["age_<=44", "age_45-54", "age_55-64", "age_65-74", "age_>=75"];

pub fn age_bin(age: u32) -> usize {
    match age {
        0..=44 => 0,
        45..=54 => 1,
        55..=64 => 2,
        65..=74 => 3,
        _ => 4,
    }
}

/// Linear-interpolated quantile of sorted data.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fence {
    pub lower: f64,
    pub upper: f64,
    /// Mean of in-fence training values; substitutes missing and fenced-out values.
    pub fill: f64,
}

impl Fence {
    fn fit(train: &[f64], multiplier: f64) -> Option<Self> {
        if train.is_empty() {
            return None;
        }
        let mut sorted = train.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = quantile(&sorted, 0.25);
        let q3 = quantile(&sorted, 0.75);
        let iqr = q3 - q1;
        let (lower, upper) = (q1 - multiplier * iqr, q3 + multiplier * iqr);
        let inside: Vec<f64> = train
            .iter()
            .copied()
            .filter(|v| *v >= lower && *v <= upper)
            .collect();
        let fill = inside.iter().sum::<f64>() / inside.len() as f64;
        Some(Self { lower, upper, fill })
    }

    fn clean(&self, v: Option<f64>) -> f64 {
        match v {
            Some(v) if v >= self.lower && v <= self.upper => v,
            _ => self.fill,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticEncoder {
    pub weight: Fence,
    pub height: Fence,
    pub weight_scale: MinMax,
    pub height_scale: MinMax,
    pub bmi_scale: MinMax,
    pub charlson_scale: Option<MinMax>,
    pub columns: Vec<String>,
}

fn bmi(weight: f64, height_cm: f64) -> f64 {
    weight / (height_cm / 100.0).powi(2)
}

impl StaticEncoder {
    /// Fits fences, fill values and scalers on the training profiles.
    /// `iqr_multiplier` 0 fences at the raw quartiles.
    pub fn fit(
        profiles: &[StaticProfile],
        train_ids: &[PatientId],
        include_charlson: bool,
        iqr_multiplier: f64,
    ) -> Result<Self> {
        let train: HashSet<PatientId> = train_ids.iter().copied().collect();
        let train_profiles: Vec<&StaticProfile> = profiles
            .iter()
            .filter(|p| train.contains(&p.patient_id))
            .collect();
        if train_profiles.is_empty() {
            return Err(Error::InvalidInput("no training profiles".into()));
        }
        let weights: Vec<f64> = train_profiles.iter().filter_map(|p| p.weight_kg).collect();
        let heights: Vec<f64> = train_profiles.iter().filter_map(|p| p.height_cm).collect();
        let weight = Fence::fit(&weights, iqr_multiplier)
            .ok_or_else(|| Error::InvalidInput("no training weights recorded".into()))?;
        let height = Fence::fit(&heights, iqr_multiplier)
            .ok_or_else(|| Error::InvalidInput("no training heights recorded".into()))?;

        let cleaned: Vec<(f64, f64)> = train_profiles
            .iter()
            .map(|p| (weight.clean(p.weight_kg), height.clean(p.height_cm)))
            .collect();
        let ws: Vec<f64> = cleaned.iter().map(|c| c.0).collect();
        let hs: Vec<f64> = cleaned.iter().map(|c| c.1).collect();
        let bs: Vec<f64> = cleaned.iter().map(|c| bmi(c.0, c.1)).collect();
        let charlson_scale = include_charlson.then(|| {
            let cs: Vec<f64> = train_profiles.iter().map(|p| p.charlson() as f64).collect();
            MinMax::fit(&cs).expect("non-empty")
        });

        let mut columns: Vec<String> = AGE_BINS.iter().map(|s| s.to_string()).collect();
        columns.push("gender_male".into());
        columns.push("gender_female".into());
        columns.extend(Ethnicity::ALL.iter().map(|e| format!("ethnicity_{}", e.label())));
        columns.extend(["weight".into(), "height".into(), "bmi".into()]);
        if include_charlson {
            columns.push("charlson".into());
        }
        Ok(Self {
            weight,
            height,
            weight_scale: MinMax::fit(&ws).expect("non-empty"),
            height_scale: MinMax::fit(&hs).expect("non-empty"),
            bmi_scale: MinMax::fit(&bs).expect("non-empty"),
            charlson_scale,
            columns,
        })
    }

    pub fn encode_one(&self, p: &StaticProfile) -> Vec<f64> {
        let mut row = vec![0.0; self.columns.len()];
        row[age_bin(p.age)] = 1.0;
        row[5 + usize::from(p.gender == Gender::Female)] = 1.0;
        let eth = Ethnicity::ALL
            .iter()
            .position(|e| *e == p.ethnicity)
            .expect("known ethnicity");
        row[7 + eth] = 1.0;
        let w = self.weight.clean(p.weight_kg);
        let h = self.height.clean(p.height_cm);
        row[12] = self.weight_scale.apply(w);
        row[13] = self.height_scale.apply(h);
        row[14] = self.bmi_scale.apply(bmi(w, h));
        if let Some(cs) = &self.charlson_scale {
            row[15] = cs.apply(p.charlson() as f64);
        }
        row
    }

    /// Encodes the given patients in order.
    pub fn transform(&self, profiles: &[StaticProfile], order: &[PatientId]) -> Result<Array2<f64>> {
        let by_id: HashMap<PatientId, &StaticProfile> =
            profiles.iter().map(|p| (p.patient_id, p)).collect();
        let mut out = Array2::zeros((order.len(), self.columns.len()));
        for (i, id) in order.iter().enumerate() {
            let p = by_id.get(id).ok_or_else(|| {
                Error::InvalidInput(format!("no static profile for patient {id}"))
            })?;
            for (j, v) in self.encode_one(p).into_iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        Ok(out)
    }
}

/// Fits the encoder on `train_ids` and encodes `order`.
pub fn encode_static(
    profiles: &[StaticProfile],
    train_ids: &[PatientId],
    order: &[PatientId],
    include_charlson: bool,
    iqr_multiplier: f64,
) -> Result<(Array2<f64>, StaticEncoder)> {
    let enc = StaticEncoder::fit(profiles, train_ids, include_charlson, iqr_multiplier)?;
    let m = enc.transform(profiles, order)?;
    Ok((m, enc))
}
