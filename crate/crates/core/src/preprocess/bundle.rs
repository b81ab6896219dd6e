use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::frequency::SubsetKind;
use crate::cohort::PatientId;
use crate::error::{Error, Result};

/// Column name of the all-missing stand-in used when a subset has no features.
pub const PLACEHOLDER: &str = "<none>";

/// One frequency subset on its uniform grid: `patients × timesteps × features`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetTensor {
    pub kind: SubsetKind,
    pub interval: u32,
    pub features: Vec<String>,
    pub values: Array3<f64>,
    /// true = observed or interpolated, false = missing (value is NaN).
    pub mask: Array3<bool>,
}

impl SubsetTensor {
    pub fn placeholder(kind: SubsetKind, interval: u32, n: usize) -> Self {
        let t = super::frequency::seq_len(interval);
        Self {
            kind,
            interval,
            features: vec![PLACEHOLDER.to_string()],
            values: Array3::from_elem((n, t, 1), f64::NAN),
            mask: Array3::from_elem((n, t, 1), false),
        }
    }

    pub fn from_values(kind: SubsetKind, interval: u32, features: Vec<String>, values: Array3<f64>) -> Self {
        let mask = values.mapv(|v| !v.is_nan());
        Self {
            kind,
            interval,
            features,
            values,
            mask,
        }
    }

    pub fn timesteps(&self) -> usize {
        self.values.dim().1
    }

    pub fn n_features(&self) -> usize {
        self.values.dim().2
    }

    pub fn is_placeholder(&self) -> bool {
        self.features.len() == 1 && self.features[0] == PLACEHOLDER
    }

    /// Per-patient, per-timestep validity: any feature observed at that step.
    pub fn timestep_mask(&self) -> Array2<bool> {
        let (n, t, _) = self.mask.dim();
        Array2::from_shape_fn((n, t), |(i, s)| {
            self.mask.index_axis(Axis(0), i).index_axis(Axis(0), s).iter().any(|&m| m)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticBlock {
    pub columns: Vec<String>,
    pub data: Array2<f64>,
}

/// Low, medium and high subset tensors plus optional static matrix, all sharing
/// one patient order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetTensorBundle {
    pub patients: Vec<PatientId>,
    pub labels: Vec<u8>,
    pub subsets: [SubsetTensor; 3],
    pub static_block: Option<StaticBlock>,
}

impl SubsetTensorBundle {
    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn subset(&self, kind: SubsetKind) -> &SubsetTensor {
        &self.subsets[kind.index()]
    }

    /// Checks shapes, patient alignment and the mask/NaN correspondence.
    pub fn validate(&self) -> Result<()> {
        let n = self.patients.len();
        if self.labels.len() != n {
            return Err(Error::shape("bundle labels", &[n], &[self.labels.len()]));
        }
        for s in &self.subsets {
            let (sn, t, f) = s.values.dim();
            if sn != n || f != s.features.len() {
                return Err(Error::shape("subset tensor", &[n, t, s.features.len()], &[sn, t, f]));
            }
            if s.mask.dim() != s.values.dim() {
                let m = s.mask.dim();
                return Err(Error::shape("subset mask", &[sn, t, f], &[m.0, m.1, m.2]));
            }
            if t != super::frequency::seq_len(s.interval) {
                return Err(Error::CorruptBundle(format!(
                    "{} subset has {t} timesteps for a {}-minute interval",
                    s.kind.name(),
                    s.interval
                )));
            }
            if s.values.iter().zip(&s.mask).any(|(v, m)| v.is_nan() == *m) {
                return Err(Error::CorruptBundle(format!(
                    "{} subset: mask and NaN pattern disagree",
                    s.kind.name()
                )));
            }
        }
        if let Some(sb) = &self.static_block {
            if sb.data.nrows() != n || sb.data.ncols() != sb.columns.len() {
                return Err(Error::shape(
                    "static matrix",
                    &[n, sb.columns.len()],
                    &[sb.data.nrows(), sb.data.ncols()],
                ));
            }
        }
        Ok(())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let pick = |s: &SubsetTensor| SubsetTensor {
            kind: s.kind,
            interval: s.interval,
            features: s.features.clone(),
            values: s.values.select(Axis(0), rows),
            mask: s.mask.select(Axis(0), rows),
        };
        Self {
            patients: rows.iter().map(|&i| self.patients[i]).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            subsets: [pick(&self.subsets[0]), pick(&self.subsets[1]), pick(&self.subsets[2])],
            static_block: self.static_block.as_ref().map(|sb| StaticBlock {
                columns: sb.columns.clone(),
                data: sb.data.select(Axis(0), rows),
            }),
        }
    }

    /// Dynamic feature names in subset order (low, medium, high).
    pub fn feature_order(&self) -> Vec<(SubsetKind, String)> {
        self.subsets
            .iter()
            .flat_map(|s| s.features.iter().map(move |f| (s.kind, f.clone())))
            .collect()
    }

    /// Drops one dynamic feature or static column. A subset left with no
    /// features becomes an all-missing placeholder.
    pub fn without_feature(&self, name: &str) -> Result<Self> {
        let mut out = self.clone();
        for s in out.subsets.iter_mut() {
            if let Some(j) = s.features.iter().position(|f| f == name) {
                if s.features.len() == 1 {
                    *s = SubsetTensor::placeholder(s.kind, s.interval, self.len());
                } else {
                    let keep: Vec<usize> = (0..s.features.len()).filter(|&k| k != j).collect();
                    s.values = s.values.select(Axis(2), &keep);
                    s.mask = s.mask.select(Axis(2), &keep);
                    s.features.remove(j);
                }
                return Ok(out);
            }
        }
        if let Some(sb) = out.static_block.as_mut() {
            if let Some(j) = sb.columns.iter().position(|c| c == name) {
                let keep: Vec<usize> = (0..sb.columns.len()).filter(|&k| k != j).collect();
                sb.data = sb.data.select(Axis(1), &keep);
                sb.columns.remove(j);
                return Ok(out);
            }
        }
        Err(Error::InvalidInput(format!("feature `{name}` not in bundle")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> SubsetTensorBundle {
        let mut low = Array3::from_elem((2, 4, 2), 0.5);
        low[[1, 0, 1]] = f64::NAN;
        low[[1, 1, 1]] = f64::NAN;
        low[[1, 2, 1]] = f64::NAN;
        low[[1, 3, 1]] = f64::NAN;
        SubsetTensorBundle {
            patients: vec![PatientId(3), PatientId(4)],
            labels: vec![0, 1],
            subsets: [
                SubsetTensor::from_values(SubsetKind::Low, 120, vec!["a".into(), "b".into()], low),
                SubsetTensor::from_values(
                    SubsetKind::Medium,
                    60,
                    vec!["c".into()],
                    Array3::zeros((2, 7, 1)),
                ),
                SubsetTensor::placeholder(SubsetKind::High, 30, 2),
            ],
            static_block: Some(StaticBlock {
                columns: vec!["s1".into(), "s2".into()],
                data: Array2::ones((2, 2)),
            }),
        }
    }

    #[test]
    fn validation_and_timestep_mask() {
        let b = bundle();
        b.validate().unwrap();
        assert!(b.subsets[0].timestep_mask().iter().all(|&m| m));
        assert!(b.subsets[2].timestep_mask().iter().all(|&m| !m));

        let mut bad = b.clone();
        bad.subsets[0].mask[[1, 0, 1]] = true;
        assert!(matches!(bad.validate(), Err(Error::CorruptBundle(_))));
    }

    #[test]
    fn dropping_features() {
        let b = bundle();
        let d = b.without_feature("a").unwrap();
        assert_eq!(d.subsets[0].features, vec!["b"]);
        assert_eq!(d.subsets[0].values.dim(), (2, 4, 1));
        let d = b.without_feature("c").unwrap();
        assert!(d.subsets[1].is_placeholder());
        assert_eq!(d.subsets[1].timesteps(), 7);
        d.validate().unwrap();
        let d = b.without_feature("s2").unwrap();
        assert_eq!(d.static_block.unwrap().columns, vec!["s1"]);
        assert!(b.without_feature("zzz").is_err());
    }

    #[test]
    fn select_rows_keeps_alignment() {
        let b = bundle().select_rows(&[1]);
        assert_eq!(b.patients, vec![PatientId(4)]);
        assert_eq!(b.labels, vec![1]);
        assert!(b.subsets[0].values[[0, 0, 1]].is_nan());
        b.validate().unwrap();
    }
}
