use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The nineteen comorbidities of the Charlson index as used for cohort scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    MyocardialInfarction,
    CongestiveHeartFailure,
    PeripheralVascularDisease,
    CerebrovascularDisease,
    Dementia,
    ChronicPulmonaryDisease,
    RheumatologicDisease,
    PepticUlcerDisease,
    MildLiverDisease,
    Diabetes,
    CerebrovascularEvent,
    ModerateSevereRenalDisease,
    DiabetesWithComplications,
    CancerWithoutMetastases,
    Leukemia,
    Lymphoma,
    ModerateSevereLiverDisease,
    MetastaticSolidTumour,
    Aids,
}

impl Condition {
    pub const ALL: [Condition; 19] = [
        Condition::MyocardialInfarction,
        Condition::CongestiveHeartFailure,
        Condition::PeripheralVascularDisease,
        Condition::CerebrovascularDisease,
        Condition::Dementia,
        Condition::ChronicPulmonaryDisease,
        Condition::RheumatologicDisease,
        Condition::PepticUlcerDisease,
        Condition::MildLiverDisease,
        Condition::Diabetes,
        Condition::CerebrovascularEvent,
        Condition::ModerateSevereRenalDisease,
        Condition::DiabetesWithComplications,
        Condition::CancerWithoutMetastases,
        Condition::Leukemia,
        Condition::Lymphoma,
        Condition::ModerateSevereLiverDisease,
        Condition::MetastaticSolidTumour,
        Condition::Aids,
    ];

    pub fn weight(self) -> u32 {
        use Condition::*;
        match self {
            MyocardialInfarction
            | CongestiveHeartFailure
            | PeripheralVascularDisease
            | CerebrovascularDisease
            | Dementia
            | ChronicPulmonaryDisease
            | RheumatologicDisease
            | PepticUlcerDisease
            | MildLiverDisease
            | Diabetes => 1,
            CerebrovascularEvent
            | ModerateSevereRenalDisease
            | DiabetesWithComplications
            | CancerWithoutMetastases
            | Leukemia
            | Lymphoma => 2,
            ModerateSevereLiverDisease => 3,
            MetastaticSolidTumour | Aids => 6,
        }
    }

    pub fn id(self) -> &'static str {
        use Condition::*;
        match self {
            MyocardialInfarction => "myocardial_infarction",
            CongestiveHeartFailure => "congestive_heart_failure",
            PeripheralVascularDisease => "peripheral_vascular_disease",
            CerebrovascularDisease => "cerebrovascular_disease",
            Dementia => "dementia",
            ChronicPulmonaryDisease => "chronic_pulmonary_disease",
            RheumatologicDisease => "rheumatologic_disease",
            PepticUlcerDisease => "peptic_ulcer_disease",
            MildLiverDisease => "mild_liver_disease",
            Diabetes => "diabetes",
            CerebrovascularEvent => "cerebrovascular_event",
            ModerateSevereRenalDisease => "moderate_severe_renal_disease",
            DiabetesWithComplications => "diabetes_with_complications",
            CancerWithoutMetastases => "cancer_without_metastases",
            Leukemia => "leukemia",
            Lymphoma => "lymphoma",
            ModerateSevereLiverDisease => "moderate_severe_liver_disease",
            MetastaticSolidTumour => "metastatic_solid_tumour",
            Aids => "aids",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .iter()
            .copied()
            .find(|c| c.id() == s)
            .ok_or_else(|| Error::UnknownCondition(s.to_string()))
    }
}

/// Points added for age: 50-59 → 1, 60-69 → 2, 70-79 → 3, 80+ → 4.
pub fn age_weight(age: u32) -> u32 {
    match age {
        0..=49 => 0,
        50..=59 => 1,
        60..=69 => 2,
        70..=79 => 3,
        _ => 4,
    }
}

pub fn charlson_score(comorbidities: &BTreeSet<Condition>, age: u32) -> u32 {
    comorbidities.iter().map(|c| c.weight()).sum::<u32>() + age_weight(age)
}

/// Scores a set of raw condition identifiers, rejecting any that are not in the table.
pub fn charlson_score_by_id<I, S>(ids: I, age: u32) -> Result<u32>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut set = BTreeSet::new();
    for id in ids {
        set.insert(id.as_ref().parse::<Condition>()?);
    }
    Ok(charlson_score(&set, age))
}
