//! Losses, optimiser, class-imbalance handling, early stopping,
//! cross-validation and hyperparameter search.

mod cv;
mod fit;
mod loss;
mod optim;
mod sampling;
mod search;

pub use cv::{kfold_assign, kfold_cv, kfold_with, CvResult};
pub use fit::{
    carve_validation, fit, Dataset, EarlyStopConfig, EarlyStopping, EpochRecord, History, LossKind,
    ModelSpec, OwnedDataset, TrainConfig, TrainedModel,
};
pub use loss::{bce_loss, bce_with_logits, class_weights, weighted_bce};
pub use optim::{clip_grad_norm, Adam};
pub use sampling::{resample_indices, smote, SamplingMethod};
pub use search::{apply_hyperparams, hyperparam_search, Hyperparams, SearchResult, SearchSpace, Strategy, Trial};
