//! K-NRM: kernel-pooling neural ranking for ad-hoc search.
//!
//! The crate covers the whole experimental pipeline: query logs and
//! vocabularies ([`corpus`]), word embeddings ([`embedding`]), the
//! translation matrix and kernel pooling ([`kernel`]), the ranking model
//! ([`model`]), pairwise training with hand-written gradients
//! ([`trainer`]), click-derived labels ([`clicks`]), metrics ([`eval`]),
//! word-based baselines ([`baselines`]), and a synthetic log generator
//! ([`synth`]).

pub mod baselines;
pub mod clicks;
pub mod corpus;
pub mod diagnose;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod kernel;
pub mod model;
pub mod model_io;
pub mod runs;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
