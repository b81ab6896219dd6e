//! Run configuration: one JSON document whose sections all have defaults,
//! so an empty object `{}` is a valid config.

use std::path::Path;

use extubation_core::cohort::{GeneratorConfig, InclusionCriteria};
use extubation_core::evaluation::StackingConfig;
use extubation_core::gbdt::GbdtParams;
use extubation_core::preprocess::{Layout, PreprocessConfig, SubsetRules};
use extubation_core::temporal::{FfnnSpec, FusedHyper};
use extubation_core::training::{ModelSpec, SearchSpace, Strategy, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Family {
    #[serde(rename = "fused-lstm")]
    #[value(name = "fused-lstm")]
    FusedLstm,
    #[serde(rename = "fused-tcn")]
    #[value(name = "fused-tcn")]
    FusedTcn,
    #[serde(rename = "gbdt")]
    #[value(name = "gbdt")]
    Gbdt,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::FusedLstm => "fused-lstm",
            Family::FusedTcn => "fused-tcn",
            Family::Gbdt => "gbdt",
        }
    }
}

/// Preprocessing knobs. `threshold` defaults per feature set when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub threshold: Option<f64>,
    pub layout: Layout,
    pub rules: SubsetRules,
    pub split_ratio: f64,
    pub strat_interval: u32,
    pub iqr_multiplier: f64,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let d = PreprocessConfig::for_feature_set(1, 0);
        Self {
            threshold: None,
            layout: d.layout,
            rules: d.rules,
            split_ratio: d.split_ratio,
            strat_interval: d.strat_interval,
            iqr_multiplier: d.iqr_multiplier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsSection {
    pub fused_lstm: FusedHyper,
    pub fused_tcn: FusedHyper,
    pub gbdt: GbdtParams,
    /// Static branch used by the fused families when `--static` is given.
    pub static_branch: FfnnSpec,
}

impl Default for ModelsSection {
    fn default() -> Self {
        Self {
            fused_lstm: FusedHyper::default(),
            fused_tcn: FusedHyper {
                kernel_size: 3,
                num_channels: vec![8, 8, 8],
                ..FusedHyper::default()
            },
            gbdt: GbdtParams::default(),
            static_branch: FfnnSpec::default(),
        }
    }
}

/// Training configuration per family. The seed inside each is replaced by
/// the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub fused_lstm: TrainConfig,
    pub fused_tcn: TrainConfig,
    pub gbdt: TrainConfig,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let fused = TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            ..TrainConfig::default()
        };
        Self {
            fused_lstm: fused.clone(),
            fused_tcn: fused,
            gbdt: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    /// Search space per family; families without one use a small built-in space.
    pub fused_lstm: Option<SearchSpace>,
    pub fused_tcn: Option<SearchSpace>,
    pub gbdt: Option<SearchSpace>,
    pub folds: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            fused_lstm: None,
            fused_tcn: None,
            gbdt: None,
            folds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    /// Folds used to produce out-of-fold base probabilities for stacking.
    pub folds: usize,
    pub stacking: StackingConfig,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            folds: 5,
            stacking: StackingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; overrides the generator, split and training seeds.
    pub seed: u64,
    pub feature_set: u8,
    /// Decision threshold for reports (probability strictly above → failure).
    pub decision_threshold: f64,
    pub generator: GeneratorConfig,
    pub inclusion: InclusionCriteria,
    pub preprocess: PreprocessSection,
    pub models: ModelsSection,
    pub training: TrainingSection,
    pub search: SearchSection,
    pub ensemble: EnsembleSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            feature_set: 1,
            decision_threshold: 0.5,
            generator: GeneratorConfig::default(),
            inclusion: InclusionCriteria::default(),
            preprocess: PreprocessSection::default(),
            models: ModelsSection::default(),
            training: TrainingSection::default(),
            search: SearchSection::default(),
            ensemble: EnsembleSection::default(),
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub feature_set: Option<u8>,
    pub threshold: Option<f64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg: RunConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(CliError::io(format!("reading config {}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(f) = overrides.feature_set {
            cfg.feature_set = f;
        }
        if let Some(t) = overrides.threshold {
            cfg.preprocess.threshold = Some(t);
        }
        cfg.generator.seed = cfg.seed;
        for t in [&mut cfg.training.fused_lstm, &mut cfg.training.fused_tcn, &mut cfg.training.gbdt] {
            t.seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.feature_set) {
            return Err(CliError::Config(format!("feature set must be 1, 2 or 3, got {}", self.feature_set)));
        }
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            return Err(CliError::Config("decision_threshold must lie in [0, 1]".into()));
        }
        if self.search.folds < 2 || self.ensemble.folds < 2 {
            return Err(CliError::Config("fold counts must be at least 2".into()));
        }
        self.generator.validate()?;
        self.preprocess_config().validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the effective config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        let base = PreprocessConfig::for_feature_set(self.feature_set, self.seed);
        let p = &self.preprocess;
        PreprocessConfig {
            threshold: p.threshold.unwrap_or(base.threshold),
            rules: p.rules.clone(),
            layout: p.layout,
            split_ratio: p.split_ratio,
            strat_interval: p.strat_interval,
            iqr_multiplier: p.iqr_multiplier,
            ..base
        }
    }

    /// Model spec and training config for a family, with or without the static branch.
    pub fn model(&self, family: Family, use_static: bool) -> (ModelSpec, TrainConfig) {
        let with_static = |h: &FusedHyper| FusedHyper {
            static_branch: use_static.then(|| self.models.static_branch.clone()),
            ..h.clone()
        };
        match family {
            Family::FusedLstm => (
                ModelSpec::FusedLstm(with_static(&self.models.fused_lstm)),
                self.training.fused_lstm.clone(),
            ),
            Family::FusedTcn => (
                ModelSpec::FusedTcn(with_static(&self.models.fused_tcn)),
                self.training.fused_tcn.clone(),
            ),
            Family::Gbdt => (ModelSpec::Gbdt(self.models.gbdt.clone()), self.training.gbdt.clone()),
        }
    }

    pub fn search_space(&self, family: Family) -> SearchSpace {
        let configured = match family {
            Family::FusedLstm => &self.search.fused_lstm,
            Family::FusedTcn => &self.search.fused_tcn,
            Family::Gbdt => &self.search.gbdt,
        };
        if let Some(s) = configured {
            return s.clone();
        }
        let params = match family {
            Family::FusedLstm | Family::FusedTcn => json!({
                "learning_rate": [0.005, 0.01],
                "hidden_dim": [8, 16],
            }),
            Family::Gbdt => json!({
                "learning_rate": [0.05, 0.1],
                "num_leaves": [7, 15],
            }),
        };
        SearchSpace {
            params: serde_json::from_value(params).expect("literal space"),
            strategy: Strategy::Random { n_trials: 4 },
        }
    }
}
