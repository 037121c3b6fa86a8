//! Selective inference engine: hypothesis tests and confidence intervals
//! conditional on model-selection events.
//!
//! The crate provides exact truncated-Gaussian inference for saturated-model
//! questions, Monte Carlo UMPU and equal-tailed tests in empirical
//! exponential families for selected-model questions, constrained Gaussian
//! samplers (hit-and-run, rejection, ball-to-sphere importance weighting),
//! lasso selection events, discrete worked examples, and a simulation
//! harness comparing data splitting with data carving.

pub mod discrete;
pub mod expfam;
pub mod geometry;
pub mod harness;
pub mod interval;
pub mod lasso;
pub mod linalg;
pub mod normal;
pub mod regression;
pub mod samplers;
pub mod saturated;
pub mod truncgauss;
pub mod umpu;

pub use expfam::{pool_tilted, CarrierSampler, NaturalFamily1D, TiltedSampleSet};
pub use geometry::{truncation_set, Polytope, SelectionRegion};
pub use interval::IntervalUnion;
pub use umpu::{Diagnostics, Flag, RandomizedCutoff, TestOutcome};

/// Derives a child RNG seed from a base seed and a stream index.
/// SplitMix64-style mixing keeps distinct streams decorrelated while staying
/// reproducible across platforms.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Two-level stream derivation, for (replicate, purpose) style indexing.
pub fn derive_seed2(base: u64, a: u64, b: u64) -> u64 {
    derive_seed(derive_seed(base, a), b)
}
