//! Domain types for annotated traffic-domain sentences plus the two
//! serialization formats (JSON and CoNLL-style) and the annotation
//! correction framework ([`validate`]).

mod conll;
mod json;
mod tokenize;
mod types;
mod validate;

pub use conll::{from_conll, read_conll, to_conll, write_conll};
pub use json::{from_json, read_corpus_json, to_json, write_corpus_json};
pub use tokenize::{pos_tag, pos_tag_word, tokenize};
pub use types::{
    Dataset, EntityAnnotation, EntityClass, Layer, Pos, Sentence, Split, Token,
    COARSE_CLASSES, FINE_CLASSES,
};
pub use validate::{validate, Violation, ViolationKind};

use thiserror::Error;

/// Errors for corpus construction and (de)serialization.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parse error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, msg: String },
}

impl CorpusError {
    pub(crate) fn parse(line: Option<usize>, msg: impl Into<String>) -> Self {
        CorpusError::Parse {
            line,
            msg: msg.into(),
        }
    }
}
