//! Linear-chain CRF tagger: feature extraction, exact inference
//! (forward-backward, Viterbi), maximum-likelihood training, span decoding
//! for both tag layers, and triple-keyword extraction.

mod crf;
mod features;
mod predict;
mod train;

pub use crf::{CrfModel, FbResult};
pub use features::{FeatureExtractor, GazetteerKind};
pub use predict::{
    extract_triple_keyword, predict_entities, predict_sentence, TripleKeyword,
};
pub use train::{train_crf, CrfEpochStats, CrfTrainConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NerError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown label `{0}`")]
    InvalidLabel(String),
    #[error("no retrieval entities found in the text")]
    EmptyQuery,
    #[error("model error: {0}")]
    Model(String),
}
