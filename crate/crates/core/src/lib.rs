//! Psychometric item analysis and cross-population agreement.
//!
//! The crate works on binary scored response matrices. Each population
//! (humans, model families, random guessers, simulated respondents) yields a
//! [`ResponseMatrix`]; item properties are estimated per population and then
//! compared against a reference population:
//!
//! * [`ctt`]: proportion correct, inter-item and item-total correlations,
//!   Cronbach's alpha.
//! * [`clustering`]: `1 - c` correlation distances, average-linkage
//!   agglomerative clustering, silhouette-based `k`, co-membership vectors.
//! * [`irt`]: Rasch model fitting by marginal maximum likelihood (EM over a
//!   Gauss-Hermite grid) and EAP abilities.
//! * [`agreement`]: Pearson and Spearman tests with p-values, significance
//!   stars, and per-category agreement reports.
//! * [`validation`]: duplicate/score/attention/justification screening of raw
//!   crowd submissions.
//! * [`synth`]: seeded Rasch-generative and random-guesser populations.
//!
//! Data-parallel inner loops (EM E-step, pairwise correlations, exact
//! permutation tests) run on rayon when the `parallel` feature is enabled and
//! the caller asks for [`Execution::Parallel`]; results are identical either way.

#![allow(clippy::needless_range_loop)]

pub mod agreement;
pub mod clustering;
pub mod ctt;
pub mod data;
pub mod error;
pub mod exec;
pub mod irt;
pub mod special;
pub mod synth;
pub mod validation;

pub use data::{
    align_items, score_responses, slice_by_category, Item, ItemBank, Label, PopulationKind, PopulationTag, RawRecord, ResponseMatrix,
};
pub use error::{Error, Result};
pub use exec::Execution;
