//! Fused multi-rate classifiers: one temporal network per frequency subset,
//! the last valid output of each concatenated with an optional static-feature
//! branch, then a linear layer and a sigmoid.

mod ffnn;
mod fused;
mod tcn;

pub use ffnn::{Ffnn, FfnnCache, FfnnSpec};
pub use fused::{
    last_valid_output, predict, Branch, BranchInput, FusedCache, FusedInput, FusedModel,
};
pub use tcn::{TcnBranch, TcnCache, TemporalBlock, TemporalBlockCache};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::SubsetTensorBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "fused-lstm")]
    Lstm,
    #[serde(rename = "fused-tcn")]
    Tcn,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Lstm => "fused-lstm",
            Family::Tcn => "fused-tcn",
        }
    }
}

/// Hyperparameters shared by all three temporal branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusedHyper {
    pub hidden_dim: usize,
    /// Stacked LSTM layers.
    #[serde(default = "one")]
    pub layer_dim: usize,
    /// Channels of each temporal block (TCN).
    #[serde(default = "default_channels")]
    pub num_channels: Vec<usize>,
    #[serde(default = "two")]
    pub kernel_size: usize,
    #[serde(default)]
    pub dropout_prob: f64,
    #[serde(default)]
    pub static_branch: Option<FfnnSpec>,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn default_channels() -> Vec<usize> {
    vec![16, 16]
}

impl Default for FusedHyper {
    fn default() -> Self {
        Self {
            hidden_dim: 16,
            layer_dim: 1,
            num_channels: default_channels(),
            kernel_size: 2,
            dropout_prob: 0.0,
            static_branch: None,
        }
    }
}

/// Full architecture description: family, hyperparameters and input widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedModelSpec {
    pub family: Family,
    pub hyper: FusedHyper,
    /// Feature count per branch (low, medium, high).
    pub branch_features: [usize; 3],
    pub branch_timesteps: [usize; 3],
    /// Width of the static matrix when the static branch is enabled.
    pub static_dim: Option<usize>,
}

impl FusedModelSpec {
    /// Derives input widths from a bundle. The static branch is enabled when
    /// `hyper.static_branch` is set; the bundle must then carry static data.
    pub fn for_bundle(family: Family, hyper: FusedHyper, bundle: &SubsetTensorBundle) -> Result<Self> {
        let static_dim = match (&hyper.static_branch, &bundle.static_block) {
            (Some(_), Some(sb)) => Some(sb.columns.len()),
            (Some(_), None) => {
                return Err(Error::InvalidConfig(
                    "static branch requested but the bundle has no static block".into(),
                ))
            }
            (None, _) => None,
        };
        let spec = Self {
            family,
            branch_features: std::array::from_fn(|b| bundle.subsets[b].n_features()),
            branch_timesteps: std::array::from_fn(|b| bundle.subsets[b].timesteps()),
            hyper,
            static_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        if h.hidden_dim == 0 {
            return Err(Error::InvalidConfig("hidden_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&h.dropout_prob) {
            return Err(Error::InvalidConfig("dropout_prob must lie in [0, 1)".into()));
        }
        match self.family {
            Family::Lstm if h.layer_dim == 0 => {
                return Err(Error::InvalidConfig("layer_dim must be positive".into()))
            }
            Family::Tcn if h.num_channels.is_empty() || h.num_channels.contains(&0) || h.kernel_size == 0 => {
                return Err(Error::InvalidConfig(
                    "num_channels must be non-empty and positive, kernel_size ≥ 1".into(),
                ))
            }
            _ => {}
        }
        if let Some(s) = &h.static_branch {
            s.validate()?;
        }
        Ok(())
    }

    /// Width of the concatenated branch vector fed to the output layer.
    pub fn fusion_width(&self) -> usize {
        self.hyper.hidden_dim * (3 + usize::from(self.static_dim.is_some()))
    }
}
