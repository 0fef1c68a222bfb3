//! Traffic-domain vehicle retrieval toolkit.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! * [`corpus`] — annotated-sentence domain types, JSON and CoNLL-style
//!   serialization, and the annotation validator.
//! * [`generator`] — attribute catalog, sentence templates, and the
//!   deterministic corpus generator with long-tail class weighting.
//! * [`ner`] — linear-chain CRF tagger: feature extraction, exact
//!   inference, maximum-likelihood training, and span decoding for the
//!   coarse and fine tag layers.
//! * [`tensor`] — dense-array substrate with reverse-mode gradients,
//!   generic over the scalar type (`f32` for speed, `f64` for checks).
//! * [`ctim`] — the contrastive text-image module and its training loop.
//! * [`vti`] — procedural text-image dataset and scene synthesis.
//! * [`retrieval`] — keyword extraction to thresholded proposal retention,
//!   with retrieval metrics and latency accounting.
//! * [`metrics`] — confusion-matrix metrics and the per-class entity report.

pub mod corpus;
pub mod ctim;
pub mod generator;
pub mod metrics;
pub mod ner;
pub mod tensor;
pub mod scalar;
pub mod util;
pub mod vti;

pub use scalar::Scalar;
