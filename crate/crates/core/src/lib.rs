//! Summary-codebook measurement structures for compressed sensing.
//!
//! A signal of length `N = 2^n` is indexed by `n`-bit labels. A *summary*
//! `(S, c)` fixes the bits of a label on a `d`-subset `S` of positions to
//! the pattern `c`; the corresponding measurement is the sum of all signal
//! entries whose labels conform to it. A codebook of `m` subsets, each
//! crossed with all `2^d` patterns, yields `M = m * 2^d` measurements.
//!
//! The crate provides:
//!
//! - [`codebook`]: labels, bit subsets, summaries and codebooks.
//! - [`signal`]: sparse test signals and the distinguishability predicate.
//! - [`operator`]: the implicit measurement operator `y = A x`.
//! - [`ssii`]: summarized support index inference decoding.
//! - [`mixmatch`]: the two-phase Mix-and-Match decoder.
//! - [`basis_pursuit`] (on top of [`lp`]): nonnegative l1 minimization.
//! - [`bounds`]: closed-form recovery guarantees.
//! - [`harness`]: deterministic Monte-Carlo experiments and file ingestion.
//!
//! Bit positions are 1-based and position 1 is the most significant bit of
//! the label, so label `10xx` (n = 4) is column 8..=11 (zero-based).

pub mod basis_pursuit;
pub mod bounds;
pub mod codebook;
mod error;
pub mod harness;
pub mod lp;
pub mod mixmatch;
pub mod operator;
pub mod signal;
pub mod ssii;

pub use error::{Error, Result};

pub use codebook::{BitSubset, Codebook, Label, SamplingMode, Summary};
pub use operator::MeasurementVector;
pub use signal::{SparseSignal, ValueMode};
pub use ssii::{DecodeResult, DecodeStatus};
