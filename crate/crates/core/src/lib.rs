//! Fingerprint template matching and score fusion.
//!
//! Templates carry a global embedding and a set of minutiae with local
//! embeddings. Pairs are scored by a global matcher and, when the global
//! score falls inside a configurable band, by a minutiae matcher; the two
//! channels are normalized and fused. The crate also provides the training
//! loss formulas with optimal ground-truth correspondence, verification
//! metrics and a seeded synthetic corpus generator.

pub mod assignment;
pub mod codec;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod losses;
pub mod matcher;
pub mod parallel;
pub mod pipeline;
pub mod score;
pub mod synth;
pub mod template;

pub use assignment::{solve_assignment, Assignment, CorrespondenceWeights, CostMatrix};
pub use corpus::Corpus;
pub use error::{Error, Result};
pub use matcher::{global_match, local_match, LocalMatchConfig, LocalMatchResult};
pub use parallel::Execution;
pub use pipeline::{infer_pair, Gate, MatchResult, PipelineConfig, ThresholdConfig};
pub use template::{Minutia, Template};
