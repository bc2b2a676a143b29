//! Domain-interest classification of social media users.
//!
//! The crate is organised as a pipeline:
//!
//! * [`corpus`] parses post and user archives, removes duplicates, resolves
//!   `@handles` and cleanses text into per-user corpora.
//! * [`knowledge`] loads a domain gazetteer and annotates cleansed text with
//!   longest-leftmost entity mentions.
//! * [`features`] turns annotated corpora into fourteen per-user features
//!   (activity, distinct entities, quarterly entity counts, profile metadata)
//!   and provides scaling and feature-ranking utilities.
//! * [`learn`] holds the classifier families, all trained from scratch, plus
//!   cross-validation and hyperparameter search.
//! * [`eval`] holds splitting, metrics, ROC/AUC and multi-model reports.
//!
//! All randomness is driven by a single `u64` seed feeding
//! [`rng::SeededRng`] (xoshiro256++), so every stage is reproducible.

pub mod corpus;
pub mod eval;
pub mod features;
pub mod knowledge;
pub mod learn;
pub mod rng;
pub mod text;
pub mod timefmt;

pub use corpus::{CleansingConfig, RawPost, UserCorpus, UserProfile};
pub use eval::{ConfusionMatrix, EvaluationReport};
pub use features::{FeatureMatrix, QuarterWindows, UserFeatureVector};
pub use knowledge::{Entity, EntityMention, KnowledgeBase};
pub use learn::{Dataset, Family, Model};
