//! Exact rate-distortion bookkeeping for latent-variable models on finite
//! alphabets, with a two-cluster toy process, a hand-derived gradient engine,
//! Adam training, sweeps and a CLI.

// Negated comparisons reject NaN on purpose; index loops mirror the matrix algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod cli;
pub mod fmt;
pub mod grad;
pub mod manifest;
pub mod models;
pub mod objectives;
pub mod prob;
pub mod sweep;
pub mod toygen;
pub mod trainer;
