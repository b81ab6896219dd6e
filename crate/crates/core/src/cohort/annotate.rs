use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{PatientId, StaticProfile, VentilationTimeline};
use crate::error::{Error, Result};

/// Reintubation or death within 48 hours of extubation counts as failure.
pub const REINTUBATION_WINDOW: u64 = 2880;
/// Ventilatory support within 6 hours of extubation counts as failure.
pub const SUPPORT_WINDOW: u64 = 360;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success = 0,
    Failure = 1,
}

impl Outcome {
    pub fn label(self) -> u8 {
        self as u8
    }
}

fn within(t: u64, start: u64, window: u64) -> bool {
    t >= start && t <= start + window
}

/// Labels an extubation. Windows are closed and measured from `extubation_end`;
/// events before extubation are not post-extubation events and never count.
pub fn annotate_outcome(timeline: &VentilationTimeline) -> Outcome {
    let end = timeline.extubation_end;
    let reintubated = timeline
        .reintubation_starts
        .iter()
        .any(|&t| within(t, end, REINTUBATION_WINDOW));
    let died = timeline
        .death_time
        .is_some_and(|t| within(t, end, REINTUBATION_WINDOW));
    let supported = timeline
        .support_events
        .iter()
        .any(|e| within(e.minute, end, SUPPORT_WINDOW));
    if reintubated || died || supported {
        Outcome::Failure
    } else {
        Outcome::Success
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InclusionCriteria {
    pub min_age: u32,
    pub max_age: u32,
    pub min_ventilation_minutes: u64,
    pub max_ventilation_minutes: u64,
}

impl Default for InclusionCriteria {
    fn default() -> Self {
        Self {
            min_age: 18,
            max_age: 89,
            min_ventilation_minutes: 1440,
            max_ventilation_minutes: 43_200,
        }
    }
}

impl InclusionCriteria {
    fn admits(&self, t: &VentilationTimeline, p: &StaticProfile) -> bool {
        let duration = t.ventilation_minutes();
        (self.min_age..=self.max_age).contains(&p.age)
            && (self.min_ventilation_minutes..=self.max_ventilation_minutes).contains(&duration)
            && t.admission_index == 1
            && t.death_time.is_none_or(|d| d > t.extubation_end)
            && !p.palliative
            && !p.head_neck_surgery
    }
}

/// Returns the ids of patients passing every criterion, in timeline order.
pub fn apply_inclusion_exclusion(
    timelines: &[VentilationTimeline],
    profiles: &[StaticProfile],
    criteria: &InclusionCriteria,
) -> Result<Vec<PatientId>> {
    let by_id: HashMap<PatientId, &StaticProfile> =
        profiles.iter().map(|p| (p.patient_id, p)).collect();
    let mut kept = Vec::new();
    for t in timelines {
        let p = by_id
            .get(&t.patient_id)
            .ok_or(Error::MissingProfile(t.patient_id.0))?;
        if criteria.admits(t, p) {
            kept.push(t.patient_id);
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Ethnicity, Gender, SupportEvent, SupportKind};

    fn timeline(end: u64) -> VentilationTimeline {
        VentilationTimeline {
            patient_id: PatientId(1),
            ventilation_start: 0,
            extubation_end: end,
            reintubation_starts: vec![],
            death_time: None,
            support_events: vec![],
            admission_index: 1,
        }
    }

    fn profile(age: u32) -> StaticProfile {
        StaticProfile {
            patient_id: PatientId(1),
            age,
            gender: Gender::Female,
            ethnicity: Ethnicity::White,
            weight_kg: Some(70.0),
            height_cm: Some(165.0),
            comorbidities: Default::default(),
            palliative: false,
            head_neck_surgery: false,
        }
    }

    #[test]
    fn outcome_examples() {
        let mut t = timeline(5000);
        assert_eq!(annotate_outcome(&t), Outcome::Success);
        t.reintubation_starts.push(5000 + 1800);
        assert_eq!(annotate_outcome(&t), Outcome::Failure);

        let mut t = timeline(5000);
        t.support_events.push(SupportEvent {
            minute: 5000 + 420,
            kind: SupportKind::Niv,
        });
        assert_eq!(annotate_outcome(&t), Outcome::Success);
    }

    #[test]
    fn inclusion_examples() {
        let c = InclusionCriteria::default();
        let t = timeline(1440);
        assert!(c.admits(&t, &profile(40)));
        assert!(!c.admits(&t, &profile(17)));
        assert!(!c.admits(&timeline(1439), &profile(40)));
        assert!(c.admits(&timeline(43_200), &profile(89)));
        assert!(!c.admits(&timeline(43_201), &profile(40)));

        let mut died = timeline(2000);
        died.death_time = Some(1500);
        assert!(!c.admits(&died, &profile(40)));
        died.death_time = Some(2000);
        assert!(!c.admits(&died, &profile(40)));

        let mut readmit = timeline(2000);
        readmit.admission_index = 2;
        assert!(!c.admits(&readmit, &profile(40)));

        let mut p = profile(40);
        p.palliative = true;
        assert!(!c.admits(&timeline(2000), &p));
    }

    #[test]
    fn missing_profile_rejected() {
        let err = apply_inclusion_exclusion(&[timeline(2000)], &[], &Default::default());
        assert!(matches!(err, Err(Error::MissingProfile(1))));
    }
}
