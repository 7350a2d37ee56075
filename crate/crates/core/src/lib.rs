//! Weighted U-statistics with asymmetric weights and kernels under
//! independent, non-identically distributed data.
//!
//! Indices passed to weight functions are 1-based throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod decomp;
pub mod distributions;
pub mod error;
pub mod fenwick;
pub mod gof;
pub mod normal;
pub mod quadrature;

pub mod resample;
pub mod rng;
pub mod sim;
pub mod ustat;
pub mod weights;

pub use error::{Error, Result};
pub use ustat::{ap_u, eval_fast, eval_weighted_ustat, kendall_u, tau_from_u, RankStatKind, Sample, UStatSpec};
