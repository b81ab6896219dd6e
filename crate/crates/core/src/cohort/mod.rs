//! Synthetic cohorts, outcome annotation, cohort filtering and comorbidity scoring.

mod annotate;
mod charlson;
mod generator;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use annotate::{
    annotate_outcome, apply_inclusion_exclusion, InclusionCriteria, Outcome, REINTUBATION_WINDOW,
    SUPPORT_WINDOW,
};
pub use charlson::{age_weight, charlson_score, charlson_score_by_id, Condition};
pub use generator::{
    default_feature_catalog, generate_cohort, Cohort, FeatureKind, FeatureSpec, GeneratorConfig,
};

/// Length of the pre-extubation observation window in minutes.
pub const WINDOW_MINUTES: u32 = 360;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(pub u32);

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One charted observation of a dynamic feature, timed relative to the start
/// of the 360-minute window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub patient_id: PatientId,
    pub feature: String,
    pub minute: u32,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SupportKind {
    #[serde(rename = "NIV")]
    Niv,
    #[serde(rename = "O2-flow")]
    O2Flow,
    #[serde(rename = "CPAP")]
    Cpap,
    #[serde(rename = "BiPAP")]
    Bipap,
}

impl SupportKind {
    pub const ALL: [SupportKind; 4] = [
        SupportKind::Niv,
        SupportKind::O2Flow,
        SupportKind::Cpap,
        SupportKind::Bipap,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportEvent {
    pub minute: u64,
    pub kind: SupportKind,
}

/// Ventilation episode with the post-extubation events used for labelling.
/// All times are absolute minutes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VentilationTimeline {
    pub patient_id: PatientId,
    pub ventilation_start: u64,
    pub extubation_end: u64,
    #[serde(default)]
    pub reintubation_starts: Vec<u64>,
    #[serde(default)]
    pub death_time: Option<u64>,
    #[serde(default)]
    pub support_events: Vec<SupportEvent>,
    /// 1 for the patient's first ICU admission.
    pub admission_index: u32,
}

impl VentilationTimeline {
    pub fn validate(&self) -> crate::Result<()> {
        if self.extubation_end < self.ventilation_start {
            return Err(crate::Error::InvalidInput(format!(
                "patient {}: extubation end precedes ventilation start",
                self.patient_id
            )));
        }
        if self.reintubation_starts.windows(2).any(|w| w[0] > w[1]) {
            return Err(crate::Error::InvalidInput(format!(
                "patient {}: reintubation starts not sorted",
                self.patient_id
            )));
        }
        Ok(())
    }

    pub fn ventilation_minutes(&self) -> u64 {
        self.extubation_end - self.ventilation_start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Ethnicity {
    Asian,
    Black,
    Hispanic,
    White,
    Other,
}

impl Ethnicity {
    pub const ALL: [Ethnicity; 5] = [
        Ethnicity::Asian,
        Ethnicity::Black,
        Ethnicity::Hispanic,
        Ethnicity::White,
        Ethnicity::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ethnicity::Asian => "ASIAN",
            Ethnicity::Black => "BLACK",
            Ethnicity::Hispanic => "HISPANIC",
            Ethnicity::White => "WHITE",
            Ethnicity::Other => "OTHER",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticProfile {
    pub patient_id: PatientId,
    pub age: u32,
    pub gender: Gender,
    pub ethnicity: Ethnicity,
    #[serde(default)]
    pub weight_kg: Option<f64>,
    #[serde(default)]
    pub height_cm: Option<f64>,
    #[serde(default)]
    pub comorbidities: BTreeSet<Condition>,
    #[serde(default)]
    pub palliative: bool,
    #[serde(default)]
    pub head_neck_surgery: bool,
}

impl StaticProfile {
    pub fn charlson(&self) -> u32 {
        charlson_score(&self.comorbidities, self.age)
    }

    pub fn validate(&self) -> crate::Result<()> {
        for (name, v) in [("weight", self.weight_kg), ("height", self.height_cm)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(crate::Error::InvalidInput(format!(
                        "patient {}: {name} must be strictly positive, got {v}",
                        self.patient_id
                    )));
                }
            }
        }
        Ok(())
    }
}
