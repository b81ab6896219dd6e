//! Dense numeric kernel: layers with hand-derived backward passes,
//! initialisers and a finite-difference gradient checker.
//!
//! Tensors are plain `ndarray` arrays in row-major (standard) layout. Sequence
//! data is `batch × time × features` for recurrent layers and
//! `batch × channels × time` for convolutions. Every `backward` *accumulates*
//! into a gradient value of the same type as the parameters, so gradients of
//! shared or repeated layers add up naturally.

mod activation;
mod batchnorm;
mod conv;
mod dropout;
mod gradcheck;
mod init;
mod linear;
mod lstm;
mod params;

pub use activation::{sigmoid, Activation, LEAKY_SLOPE};
pub use batchnorm::{BatchNorm, BatchNormCache, BN_EPS, BN_MOMENTUM};
pub use conv::Conv1d;
pub use dropout::{dropout_mask, Dropout};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use init::{kaiming_normal, uniform};
pub use linear::Linear;
pub use lstm::{Lstm, LstmCache, LstmLayer, LstmLayerCache};
pub(crate) use params::impl_param_tensors;
pub use params::{add_scaled, fill, global_norm, scale, zeros_like, ParamTensors};

/// Whether a forward pass is part of training (batch statistics, dropout on)
/// or inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
