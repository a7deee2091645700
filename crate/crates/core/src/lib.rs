//! Point-process GLMs for binned spike trains, fitted by maximum likelihood,
//! by stochastic minimization of the maximum mean discrepancy (MMD) between
//! data and free-running model samples, or by a mix of both.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gof;
pub mod glm;
pub mod kernels;
pub mod mmd;
pub mod repeat;
pub mod rng;
pub mod signal;
pub mod spiketrain;
pub mod trace;

pub use error::{Error, Result};
pub use glm::{Glm, GlmParams, GradVec, ObservationModel};
pub use kernels::KernelSpec;
pub use spiketrain::{SpikeTrain, TrialSet};
