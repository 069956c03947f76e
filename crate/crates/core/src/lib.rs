//! Core of a prefetching SPARQL query cache.
//!
//! Queries are parsed into a pattern tree ([`query`]), mapped to a structural
//! graph ([`graph`]), compared with an assignment-based graph edit distance
//! ([`distance`]) and embedded as distance vectors to a fixed template set
//! ([`features`]). A KD-tree over the embeddings of past queries suggests
//! likely follow-up queries ([`suggest`]), and a bounded result cache ranks
//! entries by exponentially smoothed hit frequency ([`cache`]).
//!
//! The numeric modules are generic over [`Scalar`]; the aliases below fix the
//! scalar to `f64`, which is what the proxy and the benchmark tools use.

pub mod cache;
pub mod distance;
pub mod features;
pub mod graph;
pub mod query;
pub mod scalar;
pub mod suggest;

pub use query::{parse, CanonicalKey, ParseError, ParsedQuery, Term, TermKind, TriplePattern};
pub use scalar::Scalar;
pub use cache::{CacheEntry, CachePolicyConfig, CacheStats, Origin, Policy};
pub use features::{FeatureSpace, TemplateSet};
pub use graph::{graph_equals, NodeLabel, QueryGraph};

/// Approximate-GED calculator over `f64`.
pub type GedCalculator = distance::GedCalculator<f64>;
/// Edit costs over `f64`.
pub type EditCostScheme = distance::EditCostScheme<f64>;
/// Feature vector over `f64`.
pub type FeatureVector = features::FeatureVector<f64>;
/// KNN suggestion model over `f64`.
pub type SuggestionModel = suggest::SuggestionModel<f64>;
/// Cache store over `f64`.
pub type CacheStore = cache::CacheStore<f64>;
/// Mutex-guarded cache over `f64`.
pub type SharedCache = cache::SharedCache<f64>;
/// Estimation record over `f64`.
pub type EstimationRecord = cache::EstimationRecord<f64>;
