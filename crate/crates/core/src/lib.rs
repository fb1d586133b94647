//! Diverse concept proposals for concept bottleneck models.
//!
//! Posterior samples of a concept bottleneck model are drawn with HMC over several restarts,
//! filtered to the predictive ones, and reduced to a small diverse subset (greedy max-min or
//! k-means medoids) for an expert to inspect. Synthetic datasets with enumerated ground-truth
//! concepts and an F1-based matcher measure how many distinct explanations a subset covers.

pub mod catalog;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod hmc;
pub mod metrics;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod sampler;
pub mod select;

pub use catalog::{GroundTruthCatalog, NamedConcept};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use hmc::{HmcConfig, Target};
pub use metrics::MetricKind;
pub use model::{ConceptParams, LabelParams, Matrix, PinnedConcept, PosteriorSample, PriorSpec};
pub use par::Execution;
pub use sampler::ProposalPool;
pub use select::{ProposalSet, SelectionMethod};
