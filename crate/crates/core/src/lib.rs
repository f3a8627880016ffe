//! Preference-divergence (PD) scoring and selection for aggregated
//! fine-grained preference datasets.
//!
//! The crate is `no_std` (with `alloc`) and holds every numeric routine of the
//! curation engine: the dataset model, length-debiased Bradley-Terry reward
//! heads, cross-aspect pseudo-reward gaps and PD terms, budgeted selection
//! strategies, DPO/DMPO objectives with their loss bounds, a synthetic corpus
//! generator, and randomized/exhaustive checks of the selection theory.
//!
//! File formats and the command line live in the `pdsel` crate.

#![no_std]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod divergence;
pub mod error;
pub mod math;
pub mod objectives;
pub mod reward;
pub mod selection;
pub mod synth;
pub mod theory;

pub use corpus::{AggregatedDataset, DatasetSummary, GroundTruth, LengthPartition, PreferencePair, Response};
pub use divergence::{PdRow, PdScoreTable, QuantileScales};
pub use error::{Error, Result};
pub use objectives::{BoundParams, MarginRecord};
pub use reward::{RewardModel, TrainConfig};
pub use selection::{SelectionReport, Strategy};
pub use synth::SynthConfig;
