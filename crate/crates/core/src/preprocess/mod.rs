//! Irregular event streams → masked multi-rate sequence tensors, encoded static
//! features and the aggregated baseline table. Every statistic is fitted on the
//! training split only.

mod aggregate;
mod bundle;
mod frequency;
mod outliers;
mod resample;
mod scaling;
mod split;
mod static_features;

use std::collections::{BTreeMap, HashMap, HashSet};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate_for_baseline, mode, AggregationStats, TabularData};
pub use bundle::{StaticBlock, SubsetTensor, SubsetTensorBundle, PLACEHOLDER};
pub use frequency::{
    assign_subsets, filter_low_observed, observation_frequency, seq_len, FrequencyProfile,
    Subset, SubsetAssignment, SubsetKind, SubsetRules,
};
pub use outliers::{apply_outlier_bounds, fit_outlier_bounds, Bound, BoundSource, OutlierBounds};
pub use resample::{clip_categorical, impute_boundaries, resample_interpolate, BoundaryMeans};
pub use scaling::MinMax;
pub use split::{stratified_split, synthetic_proportion, synthetic_proportions, Split};
pub use static_features::{age_bin, encode_static, StaticEncoder, AGE_BINS};

use crate::cohort::{EventRecord, FeatureKind, FeatureSpec, PatientId, StaticProfile, WINDOW_MINUTES};
use crate::error::{Error, Result};

/// How dynamic features are laid out on the time grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layout {
    /// Low/medium/high subsets at their own intervals; absent features are masked.
    ThreeSubset,
    /// Every feature in one subset at one interval with no masking: patients
    /// without data for a feature get a line between the train edge means.
    SingleRate { interval: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub feature_set: u8,
    pub threshold: f64,
    #[serde(default)]
    pub rules: SubsetRules,
    #[serde(default = "default_layout")]
    pub layout: Layout,
    #[serde(default = "default_ratio")]
    pub split_ratio: f64,
    /// Grid used to measure synthetic proportion for stratification.
    #[serde(default = "default_strat_interval")]
    pub strat_interval: u32,
    #[serde(default = "default_iqr")]
    pub iqr_multiplier: f64,
    pub seed: u64,
}

fn default_layout() -> Layout {
    Layout::ThreeSubset
}
fn default_ratio() -> f64 {
    0.8
}
fn default_strat_interval() -> u32 {
    30
}
fn default_iqr() -> f64 {
    1.5
}

impl PreprocessConfig {
    /// Defaults for a feature set: threshold 0.5 for sets 1–2 and 0.15 for set 3.
    pub fn for_feature_set(feature_set: u8, seed: u64) -> Self {
        Self {
            feature_set,
            threshold: if feature_set >= 3 { 0.15 } else { 0.5 },
            rules: SubsetRules::default(),
            layout: Layout::ThreeSubset,
            split_ratio: 0.8,
            strat_interval: 30,
            iqr_multiplier: 1.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.feature_set) {
            return Err(Error::InvalidConfig(format!(
                "feature set must be 1, 2 or 3, got {}",
                self.feature_set
            )));
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::InvalidConfig("threshold must be non-negative".into()));
        }
        self.rules.validate()?;
        if let Layout::SingleRate { interval } = self.layout {
            if interval == 0 || WINDOW_MINUTES % interval != 0 {
                return Err(Error::InvalidConfig(format!("bad single-rate interval {interval}")));
            }
        }
        Ok(())
    }

    fn masking(&self) -> bool {
        self.layout == Layout::ThreeSubset
    }

    /// Charlson score joins the static block from feature set 2 on.
    pub fn include_charlson(&self) -> bool {
        self.feature_set >= 2
    }
}

/// Catalog entries belonging to a feature set.
pub fn features_in_set(catalog: &[FeatureSpec], feature_set: u8) -> Vec<&FeatureSpec> {
    catalog.iter().filter(|f| f.feature_set <= feature_set).collect()
}

/// Frozen split stratified on each patient's synthetic proportion over the
/// feature-set-1 features.
pub fn prepare_split(
    events: &[EventRecord],
    patients: &[PatientId],
    catalog: &[FeatureSpec],
    config: &PreprocessConfig,
) -> Result<Split> {
    let fs1: Vec<String> = features_in_set(catalog, 1).iter().map(|f| f.id.clone()).collect();
    let strat = synthetic_proportions(events, patients, &fs1, config.strat_interval);
    stratified_split(patients, &strat, config.split_ratio, config.seed)
}

type SeriesMap<'a> = HashMap<(PatientId, &'a str), Vec<(u32, f64)>>;

fn group_series<'a>(events: &'a [EventRecord], features: &HashSet<&str>) -> SeriesMap<'a> {
    let mut map: SeriesMap<'a> = HashMap::new();
    for e in events {
        if features.contains(e.feature.as_str()) {
            map.entry((e.patient_id, e.feature.as_str()))
                .or_default()
                .push((e.minute, e.value));
        }
    }
    map
}

/// Everything fitted on the training split, reusable for any patient set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPreprocessor {
    pub config: PreprocessConfig,
    pub frequency: FrequencyProfile,
    pub retained: Vec<String>,
    pub assignment: SubsetAssignment,
    pub bounds: OutlierBounds,
    pub kinds: BTreeMap<String, FeatureKind>,
    /// Edge means keyed by feature, for that feature's subset interval.
    pub boundary_means: BTreeMap<String, BoundaryMeans>,
    pub scalers: BTreeMap<String, MinMax>,
    pub static_encoder: StaticEncoder,
    pub aggregation: AggregationStats,
}

impl FittedPreprocessor {
    pub fn fit(
        catalog: &[FeatureSpec],
        events: &[EventRecord],
        profiles: &[StaticProfile],
        train_ids: &[PatientId],
        config: &PreprocessConfig,
    ) -> Result<Self> {
        config.validate()?;
        let specs = features_in_set(catalog, config.feature_set);
        let candidates: Vec<String> = specs.iter().map(|f| f.id.clone()).collect();
        let kinds: BTreeMap<String, FeatureKind> =
            specs.iter().map(|f| (f.id.clone(), f.kind)).collect();

        let train: HashSet<PatientId> = train_ids.iter().copied().collect();
        let train_events: Vec<EventRecord> = events
            .iter()
            .filter(|e| train.contains(&e.patient_id))
            .cloned()
            .collect();

        let frequency = observation_frequency(&train_events, train_ids, &candidates)?;
        let retained = filter_low_observed(&frequency, config.threshold);
        let assignment = match config.layout {
            Layout::ThreeSubset => assign_subsets(&frequency, &retained, &config.rules)?,
            Layout::SingleRate { interval } => SubsetAssignment::single_rate(&retained, interval),
        };

        let owned_specs: Vec<FeatureSpec> = specs.iter().map(|s| (*s).clone()).collect();
        let bounds = fit_outlier_bounds(&train_events, &owned_specs);
        let clean_train = apply_outlier_bounds(&train_events, &bounds);

        let mut boundary_means = BTreeMap::new();
        for subset in &assignment.subsets {
            let half = subset.interval / 2;
            for f in &subset.features {
                let vals = |pred: &dyn Fn(u32) -> bool| -> Option<f64> {
                    let v: Vec<f64> = clean_train
                        .iter()
                        .filter(|e| &e.feature == f && pred(e.minute))
                        .map(|e| e.value)
                        .collect();
                    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                };
                let overall = vals(&|_| true);
                boundary_means.insert(
                    f.clone(),
                    BoundaryMeans {
                        start: vals(&|m| m <= half).or(overall),
                        end: vals(&|m| m >= WINDOW_MINUTES - half).or(overall),
                    },
                );
            }
        }

        let static_encoder = StaticEncoder::fit(
            profiles,
            train_ids,
            config.include_charlson(),
            config.iqr_multiplier,
        )?;
        let retained_kinds: Vec<FeatureKind> = retained.iter().map(|f| kinds[f]).collect();
        let aggregation =
            AggregationStats::fit(&clean_train, train_ids, &retained, &retained_kinds);

        let mut fitted = Self {
            config: config.clone(),
            frequency,
            retained,
            assignment,
            bounds,
            kinds,
            boundary_means,
            scalers: BTreeMap::new(),
            static_encoder,
            aggregation,
        };

        // Scalers see the resampled training grids, before scaling.
        let mut train_sorted: Vec<PatientId> = train.iter().copied().collect();
        train_sorted.sort();
        let raw = fitted.raw_grids(&clean_train, &train_sorted);
        for (subset, grid) in fitted.assignment.subsets.iter().zip(&raw) {
            for (j, f) in subset.features.iter().enumerate() {
                let col = grid.index_axis(ndarray::Axis(2), j);
                if let Some(s) = MinMax::fit(col.iter()) {
                    fitted.scalers.insert(f.clone(), s);
                }
            }
        }
        Ok(fitted)
    }

    /// Resampled, clipped but unscaled grids for each subset.
    fn raw_grids(&self, clean_events: &[EventRecord], order: &[PatientId]) -> Vec<Array3<f64>> {
        let wanted: HashSet<&str> = self.retained.iter().map(String::as_str).collect();
        let series = group_series(clean_events, &wanted);
        let masking = self.config.masking();
        self.assignment
            .subsets
            .iter()
            .map(|subset| {
                let t = subset.seq_len();
                let mut grid = Array3::from_elem((order.len(), t, subset.features.len()), f64::NAN);
                for (j, f) in subset.features.iter().enumerate() {
                    let means = self.boundary_means[f];
                    for (i, p) in order.iter().enumerate() {
                        let s = series.get(&(*p, f.as_str())).map(Vec::as_slice).unwrap_or(&[]);
                        let with_edges = if s.is_empty() && !masking {
                            match (means.start, means.end) {
                                (Some(a), Some(b)) => vec![(0, a), (WINDOW_MINUTES, b)],
                                _ => Vec::new(),
                            }
                        } else {
                            impute_boundaries(s, subset.interval, means)
                        };
                        let mut values = resample_interpolate(&with_edges, subset.interval);
                        clip_categorical(self.kinds[f], &mut values);
                        for (k, v) in values.into_iter().enumerate() {
                            grid[[i, k, j]] = v;
                        }
                    }
                }
                grid
            })
            .collect()
    }

    /// Builds the scaled, masked bundle for `order`. Labels are carried alongside.
    pub fn bundle(
        &self,
        events: &[EventRecord],
        profiles: &[StaticProfile],
        order: &[PatientId],
        labels: &[u8],
        with_static: bool,
    ) -> Result<SubsetTensorBundle> {
        if labels.len() != order.len() {
            return Err(Error::shape("labels", &[order.len()], &[labels.len()]));
        }
        let clean = apply_outlier_bounds(events, &self.bounds);
        let raw = self.raw_grids(&clean, order);
        let mut subsets = Vec::with_capacity(3);
        for (subset, mut grid) in self.assignment.subsets.iter().zip(raw) {
            if subset.features.is_empty() {
                subsets.push(SubsetTensor::placeholder(subset.kind, subset.interval, order.len()));
                continue;
            }
            for (j, f) in subset.features.iter().enumerate() {
                let mut col = grid.index_axis_mut(ndarray::Axis(2), j);
                match self.scalers.get(f) {
                    Some(s) => col.mapv_inplace(|v| s.apply(v)),
                    // No training data at all: the feature is missing everywhere.
                    None => col.fill(f64::NAN),
                }
            }
            subsets.push(SubsetTensor::from_values(
                subset.kind,
                subset.interval,
                subset.features.clone(),
                grid,
            ));
        }
        let static_block = if with_static {
            Some(StaticBlock {
                columns: self.static_encoder.columns.clone(),
                data: self.static_encoder.transform(profiles, order)?,
            })
        } else {
            None
        };
        let subsets: [SubsetTensor; 3] = subsets.try_into().expect("three subsets");
        let bundle = SubsetTensorBundle {
            patients: order.to_vec(),
            labels: labels.to_vec(),
            subsets,
            static_block,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Aggregated table for the boosted-tree baseline.
    pub fn tabular(
        &self,
        events: &[EventRecord],
        profiles: &[StaticProfile],
        order: &[PatientId],
        labels: &[u8],
        with_static: bool,
    ) -> Result<TabularData> {
        let clean = apply_outlier_bounds(events, &self.bounds);
        let static_matrix = if with_static {
            Some(self.static_encoder.transform(profiles, order)?)
        } else {
            None
        };
        let (columns, data) = aggregate_for_baseline(
            &clean,
            order,
            &self.aggregation,
            static_matrix
                .as_ref()
                .map(|m| (self.static_encoder.columns.as_slice(), m)),
        );
        Ok(TabularData {
            columns,
            patients: order.to_vec(),
            labels: labels.to_vec(),
            data,
        })
    }
}
