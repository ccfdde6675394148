//! Fashion knowledge extraction from social-media posts.
//!
//! The crate follows the pipeline end to end: archive [`ingest`], the
//! [`filters`] cascade, the [`model`] concept learner, the [`kb`] knowledge
//! base with its indexes, faceted [`search`] and the HTTP [`server`].
//! [`pipeline`] chains the stages over plain files.

pub mod corpus;
pub mod filters;
pub mod ingest;
pub mod kb;
pub mod model;
pub mod pipeline;
pub mod search;
pub mod server;
pub mod synthetic;
pub mod vocab;

pub use corpus::{CorpusRecord, Post};
pub use vocab::ConceptVocabulary;
