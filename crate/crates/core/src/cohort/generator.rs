use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{
    Condition, Ethnicity, EventRecord, Gender, PatientId, StaticProfile, SupportEvent, SupportKind,
    VentilationTimeline, REINTUBATION_WINDOW, SUPPORT_WINDOW, WINDOW_MINUTES,
};
use crate::error::{Error, Result};

/// How a dynamic feature is charted. Score features are integers on a fixed scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    #[default]
    Numeric,
    Ras,
    GcsEye,
    GcsMotor,
}

impl FeatureKind {
    pub fn is_categorical(self) -> bool {
        self != FeatureKind::Numeric
    }

    /// Inclusive integer range of a score feature.
    pub fn score_range(self) -> Option<(f64, f64)> {
        match self {
            FeatureKind::Numeric => None,
            FeatureKind::Ras => Some((-5.0, 4.0)),
            FeatureKind::GcsEye => Some((1.0, 4.0)),
            FeatureKind::GcsMotor => Some((1.0, 6.0)),
        }
    }
}

/// One dynamic feature of the synthetic catalog.
///
/// Values are drawn as `midpoint + spread * (signal * y + e)` with
/// `spread = (upper - lower) / 6`, `y` the outcome label and `e ~ N(0, noise_scale)`,
/// so `signal` is a class offset in spread units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub id: String,
    /// Mean observations per patient per 360-minute window.
    pub frequency: f64,
    /// Observation rate for failure patients; defaults to `frequency`.
    #[serde(default)]
    pub failure_frequency: Option<f64>,
    pub range: (f64, f64),
    #[serde(default)]
    pub signal: f64,
    #[serde(default)]
    pub kind: FeatureKind,
    /// Smallest feature set (1, 2 or 3) the feature belongs to.
    #[serde(default = "one")]
    pub feature_set: u8,
    /// Negative values are physiologically meaningless.
    #[serde(default)]
    pub nonnegative: bool,
    /// Externally supplied outlier bounds that override fitted ones.
    #[serde(default)]
    pub reference_bounds: Option<(f64, f64)>,
}

fn one() -> u8 {
    1
}

impl FeatureSpec {
    fn new(id: &str, frequency: f64, range: (f64, f64), feature_set: u8) -> Self {
        Self {
            id: id.to_string(),
            frequency,
            failure_frequency: None,
            range,
            signal: 0.0,
            kind: FeatureKind::Numeric,
            feature_set,
            nonnegative: range.0 >= 0.0,
            reference_bounds: None,
        }
    }

    fn kind(mut self, kind: FeatureKind) -> Self {
        self.kind = kind;
        self
    }
}

/// Catalog mirroring the charted features and observation rates of the reference cohort.
/// Ventilator Mode is not part of it.
pub fn default_feature_catalog() -> Vec<FeatureSpec> {
    let mut fs = vec![
        FeatureSpec::new("Respiratory Rate", 6.615, (0.0, 66.676), 1),
        FeatureSpec::new("O2 saturation pulseoxymetry", 6.611, (88.535, 100.0), 1),
        FeatureSpec::new("Inspired O2 Fraction", 2.104, (7.678, 79.189), 1),
        FeatureSpec::new("Tidal Volume (observed)", 1.600, (299.0, 750.0), 1),
        FeatureSpec::new("Minute Volume", 1.598, (0.0, 12.1), 1),
        FeatureSpec::new("Peak Insp. Pressure", 1.524, (0.0, 115.092), 1),
        FeatureSpec::new("Tidal Volume (spontaneous)", 1.368, (299.0, 750.0), 1),
        FeatureSpec::new("PH (Arterial)", 0.535, (7.19, 7.58), 1),
        FeatureSpec::new("Arterial CO2 Pressure", 0.525, (16.0, 66.916), 1),
        FeatureSpec::new("Arterial O2 pressure", 0.525, (16.0, 227.632), 1),
        FeatureSpec::new("Hemoglobin", 0.247, (5.1, 14.485), 1),
        FeatureSpec::new("EtCO2", 0.189, (17.0, 59.109), 1),
        FeatureSpec::new("Plateau Pressure", 0.160, (2.943, 31.0), 1),
        FeatureSpec::new("Negative Insp. Force", 0.008, (-60.0, -8.0), 1),
        FeatureSpec::new("Heart Rate", 6.648, (30.659, 139.152), 2),
        FeatureSpec::new("Arterial Blood Pressure mean", 3.761, (25.026, 137.893), 2),
        FeatureSpec::new("Arterial Blood Pressure diastolic", 3.754, (60.0, 90.0), 2),
        FeatureSpec::new("Arterial Blood Pressure systolic", 3.754, (90.0, 140.0), 2),
        FeatureSpec::new("GCS - Eye Opening", 1.633, (1.0, 4.0), 2).kind(FeatureKind::GcsEye),
        FeatureSpec::new("GCS - Motor Response", 1.628, (1.0, 6.0), 2)
            .kind(FeatureKind::GcsMotor),
        FeatureSpec::new("Mean Airway Pressure", 1.568, (0.0, 17.102), 2),
        FeatureSpec::new("Temperature Fahrenheit", 1.446, (92.586, 105.19), 2),
        FeatureSpec::new("Richmond-RAS Scale", 1.279, (-5.0, 4.0), 2).kind(FeatureKind::Ras),
        FeatureSpec::new("Sodium (serum)", 0.307, (123.147, 157.08), 2),
        FeatureSpec::new("Potassium (serum)", 0.306, (2.7, 5.797), 2),
        FeatureSpec::new("Glucose (serum)", 0.271, (23.0, 282.72), 2),
        FeatureSpec::new("Creatinine (serum)", 0.269, (0.2, 5.413), 2),
        FeatureSpec::new("Hematocrit (serum)", 0.265, (15.2, 42.701), 2),
        FeatureSpec::new("Ionized Calcium", 0.251, (0.884, 1.354), 2),
        FeatureSpec::new("Platelet Count", 0.231, (6.0, 539.929), 2),
        FeatureSpec::new("WBC", 0.221, (0.1, 33.118), 2),
        FeatureSpec::new("Lactic Acid", 0.193, (0.5, 8.909), 2),
        FeatureSpec::new("Total Bilirubin", 0.076, (0.1, 20.0), 2),
        FeatureSpec::new("Arterial Base Excess", 0.525, (-10.0, 10.0), 3),
        FeatureSpec::new("Cardiac Output (CCO)", 0.252, (4.0, 8.0), 3),
        FeatureSpec::new("Arterial O2 Saturation", 0.198, (90.388, 100.0), 3),
    ];
    for f in &mut fs {
        if f.id == "PH (Arterial)" {
            f.reference_bounds = Some((7.19, 7.58));
        }
    }
    fs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub failure_rate: f64,
    pub feature_catalog: Vec<FeatureSpec>,
    pub noise_scale: f64,
    pub seed: u64,
    /// Years added to the age of failure patients (0 disables the static signal).
    #[serde(default)]
    pub age_shift_failure: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let mut catalog = default_feature_catalog();
        for f in &mut catalog {
            if matches!(
                f.id.as_str(),
                "Respiratory Rate" | "Tidal Volume (observed)" | "Arterial CO2 Pressure"
            ) {
                f.signal = 1.0;
            }
        }
        Self {
            n_patients: 1000,
            failure_rate: 0.33,
            feature_catalog: catalog,
            noise_scale: 1.0,
            seed: 7,
            age_shift_failure: 0.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::InvalidConfig("n_patients must be positive".into()));
        }
        if !(self.failure_rate > 0.0 && self.failure_rate < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "failure_rate must lie in (0, 1), got {}",
                self.failure_rate
            )));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::InvalidConfig("noise_scale must be non-negative".into()));
        }
        for f in &self.feature_catalog {
            let rates = [Some(f.frequency), f.failure_frequency];
            if rates.iter().flatten().any(|r| !(*r >= 0.0 && r.is_finite())) {
                return Err(Error::InvalidConfig(format!(
                    "feature `{}`: sampling frequencies must be non-negative",
                    f.id
                )));
            }
            if !(f.range.0 < f.range.1) {
                return Err(Error::InvalidConfig(format!(
                    "feature `{}`: empty value range",
                    f.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub events: Vec<EventRecord>,
    pub profiles: Vec<StaticProfile>,
    pub timelines: Vec<VentilationTimeline>,
}

fn poisson_count(rng: &mut ChaCha8Rng, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(rate).expect("positive finite rate");
    dist.sample(rng) as usize
}

fn build_timeline(rng: &mut ChaCha8Rng, id: PatientId, failure: bool) -> VentilationTimeline {
    let ventilation_start = rng.random_range(0..20_000u64);
    let duration = rng.random_range(1440..=43_200u64);
    let end = ventilation_start + duration;
    let mut t = VentilationTimeline {
        patient_id: id,
        ventilation_start,
        extubation_end: end,
        reintubation_starts: vec![],
        death_time: None,
        support_events: vec![],
        admission_index: 1,
    };
    if failure {
        match rng.random_range(0..3u8) {
            0 => t
                .reintubation_starts
                .push(end + rng.random_range(1..=REINTUBATION_WINDOW)),
            1 => t.death_time = Some(end + rng.random_range(1..=REINTUBATION_WINDOW)),
            _ => t.support_events.push(SupportEvent {
                minute: end + rng.random_range(0..=SUPPORT_WINDOW),
                kind: SupportKind::ALL[rng.random_range(0..4)],
            }),
        }
    } else {
        // Post-window events that must not flip the label.
        if rng.random_bool(0.2) {
            t.reintubation_starts
                .push(end + rng.random_range(REINTUBATION_WINDOW + 1..20_000));
        }
        if rng.random_bool(0.2) {
            t.support_events.push(SupportEvent {
                minute: end + rng.random_range(SUPPORT_WINDOW + 1..3000),
                kind: SupportKind::ALL[rng.random_range(0..4)],
            });
        }
        if rng.random_bool(0.05) {
            t.death_time = Some(end + rng.random_range(REINTUBATION_WINDOW + 1..40_000));
        }
    }
    t
}

fn build_profile(
    rng: &mut ChaCha8Rng,
    id: PatientId,
    failure: bool,
    age_shift: f64,
) -> StaticProfile {
    let normal = |rng: &mut ChaCha8Rng, mean: f64, sd: f64| {
        Normal::new(mean, sd).expect("valid normal").sample(rng)
    };
    let mut age = normal(rng, 63.0, 14.0);
    if failure {
        age += age_shift;
    }
    let age = age.round().clamp(18.0, 89.0) as u32;
    let gender = if rng.random_bool(0.5) {
        Gender::Male
    } else {
        Gender::Female
    };
    let u: f64 = rng.random();
    let ethnicity = match u {
        u if u < 0.04 => Ethnicity::Asian,
        u if u < 0.16 => Ethnicity::Black,
        u if u < 0.22 => Ethnicity::Hispanic,
        u if u < 0.82 => Ethnicity::White,
        _ => Ethnicity::Other,
    };
    let weight = normal(rng, 82.0, 20.0).max(35.0);
    let height = normal(rng, 170.0, 10.0).max(130.0);
    let weight_kg = (!rng.random_bool(0.1)).then_some(weight);
    let height_cm = (!rng.random_bool(0.1)).then_some(height);
    let comorbidities: BTreeSet<Condition> = Condition::ALL
        .iter()
        .copied()
        .filter(|_| rng.random_bool(0.08))
        .collect();
    StaticProfile {
        patient_id: id,
        age,
        gender,
        ethnicity,
        weight_kg,
        height_cm,
        comorbidities,
        palliative: false,
        head_neck_surgery: false,
    }
}

/// Generates a reproducible synthetic cohort. Each patient draws from its own
/// ChaCha stream so output does not depend on iteration order elsewhere.
pub fn generate_cohort(config: &GeneratorConfig) -> Result<Cohort> {
    config.validate()?;
    let noise = Normal::new(0.0, config.noise_scale.max(0.0))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut events = Vec::new();
    let mut profiles = Vec::with_capacity(config.n_patients);
    let mut timelines = Vec::with_capacity(config.n_patients);
    for idx in 0..config.n_patients {
        let id = PatientId(idx as u32);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(idx as u64);
        let failure = rng.random_bool(config.failure_rate);
        timelines.push(build_timeline(&mut rng, id, failure));
        profiles.push(build_profile(&mut rng, id, failure, config.age_shift_failure));
        let y = if failure { 1.0 } else { 0.0 };
        for f in &config.feature_catalog {
            let rate = match (failure, f.failure_frequency) {
                (true, Some(r)) => r,
                _ => f.frequency,
            };
            let n = poisson_count(&mut rng, rate);
            let mid = 0.5 * (f.range.0 + f.range.1);
            let spread = (f.range.1 - f.range.0) / 6.0;
            let mut obs: Vec<(u32, f64)> = (0..n)
                .map(|_| {
                    let minute = rng.random_range(0..=WINDOW_MINUTES);
                    let mut v = mid + spread * (f.signal * y + noise.sample(&mut rng));
                    if let Some((lo, hi)) = f.kind.score_range() {
                        v = v.round().clamp(lo, hi);
                    }
                    (minute, v)
                })
                .collect();
            obs.sort_by_key(|&(m, _)| m);
            events.extend(obs.into_iter().map(|(minute, value)| EventRecord {
                patient_id: id,
                feature: f.id.clone(),
                minute,
                value,
            }));
        }
    }
    Ok(Cohort {
        events,
        profiles,
        timelines,
    })
}
