//! Corpus construction pipeline: attribute catalog, sentence templates,
//! record sampling, template rendering with automatic annotations,
//! informal variants, dataset splitting, and corpus statistics.

mod catalog;
mod generate;
mod split;
mod template;

pub use catalog::{AttributeCatalog, ColorEntry, ModelEntry, VariantEntry};
pub use generate::{
    apply_informalization, generate_corpus, render_sentence, sample_vehicle_record, ClassWeights,
    GenConfig, VehicleRecord,
};
pub use split::{corpus_stats, split_dataset, CorpusStats};
pub use template::{SlotKind, Style, Template};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("catalog error: {0}")]
    Catalog(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}
