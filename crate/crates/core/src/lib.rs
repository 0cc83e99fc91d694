pub mod chain_crf;
pub mod cli;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod feature_crf;
mod format;
pub mod numerics;
pub mod recurrent;
pub mod sequence_model;
pub mod synth_corpus;
pub mod training;

pub use error::{Error, Result};
