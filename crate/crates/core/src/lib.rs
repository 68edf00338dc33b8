//! Soft filter pruning for convolutional networks.
//!
//! The crate covers the whole compression pipeline at desk scale:
//!
//! - [`tensor`]: `f64` tensors and conv/dense/ReLU/pooling/loss kernels with
//!   analytic gradients.
//! - [`graph`] and [`arch`]: layer graphs with residual additions, including
//!   CIFAR-style ResNet-20/56/110 and a small test CNN.
//! - [`flops`]: multiply-accumulate accounting under uniform filter pruning.
//! - [`prune`]: ℓ2/ℓ1 filter ranking, mask selection, soft decay of pruned
//!   filters, weight-level masks and physical compaction.
//! - [`schedule`]: exponential and linear decay of the pruned-filter factor
//!   and the asymptotic pruning-rate ramp.
//! - [`train`]: the train–prune–fine-tune loop for SFP, ASFP, SRFP and
//!   ASRFP.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, dataset
//! loaders and the command line live in the `softprune` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod arch;
pub mod data;
mod error;
mod exact;
pub mod flops;
pub mod graph;
pub mod optim;
pub mod prune;
pub mod schedule;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Gradients, LayerKind, LayerSpec, ModelGraph, Param};
pub use tensor::Tensor;
