//! Cross-platform social search result organization through hashtags.
//!
//! The pipeline fits a two-level topic tree per source platform, bridges the
//! per-source vocabularies with a random walk over a word similarity graph,
//! co-clusters hashtags against the unified topics, and ranks the resulting
//! hashtag clusters into a cluster, hashtag, item hierarchy.

pub mod corpus;
pub mod metrics;
pub mod topics;
pub mod wordgraph;
pub mod cocluster;
pub mod ranking;
pub mod synth;
pub mod pipeline;
