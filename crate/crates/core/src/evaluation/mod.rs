//! Threshold metrics, ROC analysis, feature ablation and ensembles.

mod ablation;
mod ensemble;
mod metrics;

pub use ablation::{feature_ablation, AblationReport, AblationRow};
pub use ensemble::{ensemble_average, LogisticStacker, StackingConfig};
pub use metrics::{
    auc_roc, confusion, roc_curve, trapezoid_area, ConfusionMatrix, EvalReport, Metrics, RocPoint,
};
