//! Analytic proficiency scoring of second-language speaking transcriptions.
//!
//! The pipeline prompts a logprob-capable language model once per
//! (response, aspect, descriptor ordering) with the six CEFR level
//! descriptors as labeled options, converts the option logits into
//! probability-weighted fair averages, and aggregates those into per-part
//! and overall holistic scores. Companion analyses quantify descriptor
//! position bias, recombine aspect scores against reference ratings by
//! ridge regression, and compare aspects with rank statistics.

pub mod backend;
pub mod bank;
pub mod bias;
pub mod corpus;
pub mod error;
pub mod jsonl;
pub mod pipeline;
pub mod prompting;
pub mod regression;
pub mod report;
pub mod scoring;
pub mod stats;

pub use bank::{AspectId, Descriptor, DescriptorBank, Level};
pub use error::{ErrorKind, NlaError, Result};
