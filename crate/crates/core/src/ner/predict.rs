//! Span decoding for both tag layers and triple-keyword extraction.

use serde::{Deserialize, Serialize};

use super::crf::CrfModel;
use super::NerError;
use crate::corpus::{EntityAnnotation, EntityClass, Layer, Sentence};
use crate::scalar::Scalar;

/// Decodes BIO tags into spans. Illegal `I-x` openings (after `O` or a
/// different class) are repaired to `B-x`.
fn decode_spans(tags: &[String]) -> Vec<(usize, usize, EntityClass)> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, EntityClass)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let parsed = tag
            .split_once('-')
            .and_then(|(prefix, class)| EntityClass::from_tag(class).map(|c| (prefix, c)));
        match parsed {
            None => {
                if let Some((start, class)) = open.take() {
                    spans.push((start, i, class));
                }
            }
            Some(("B", class)) => {
                if let Some((start, prev)) = open.take() {
                    spans.push((start, i, prev));
                }
                open = Some((i, class));
            }
            Some(("I", class)) => match open {
                Some((_, prev)) if prev == class => {}
                _ => {
                    // Repair: treat as a fresh begin.
                    if let Some((start, prev)) = open.take() {
                        spans.push((start, i, prev));
                    }
                    open = Some((i, class));
                }
            },
            Some(_) => {
                if let Some((start, prev)) = open.take() {
                    spans.push((start, i, prev));
                }
            }
        }
    }
    if let Some((start, class)) = open {
        spans.push((start, tags.len(), class));
    }
    spans
}

fn spans_to_annotations(
    sentence: &Sentence,
    spans: Vec<(usize, usize, EntityClass)>,
) -> Vec<EntityAnnotation> {
    spans
        .into_iter()
        .filter(|(start, end, _)| *end > *start && *end <= sentence.tokens.len())
        .map(|(start, end, class)| {
            EntityAnnotation::new(
                class,
                (
                    sentence.tokens[start].char_start,
                    sentence.tokens[end - 1].char_end,
                ),
                (start, end),
            )
        })
        .collect()
}

/// Single-layer prediction as a sentence clone; used for evaluation.
pub fn layer_prediction<S: Scalar>(model: &CrfModel<S>, sentence: &Sentence) -> Sentence {
    let tags = model.decode_tags(sentence);
    let annotations = spans_to_annotations(sentence, decode_spans(&tags));
    Sentence {
        text: sentence.text.clone(),
        tokens: sentence.tokens.clone(),
        annotations,
        relation_groups: Vec::new(),
    }
}

/// Decodes both layers and merges them into one annotation list that always
/// passes the corpus validator: fine spans whose overlap is anything other
/// than brand/model coarse spans are dropped.
pub fn predict_entities<S: Scalar>(
    coarse_model: &CrfModel<S>,
    fine_model: &CrfModel<S>,
    sentence: &Sentence,
) -> Vec<EntityAnnotation> {
    let coarse = spans_to_annotations(sentence, decode_spans(&coarse_model.decode_tags(sentence)));
    let fine = spans_to_annotations(sentence, decode_spans(&fine_model.decode_tags(sentence)));
    let mut merged = coarse;
    let n_coarse = merged.len();
    for f in fine {
        let compatible = merged[..n_coarse].iter().all(|c| {
            !c.overlaps_tokens(&f)
                || matches!(c.class, EntityClass::Brand | EntityClass::Model)
        });
        if compatible {
            merged.push(f);
        }
    }
    merged
}

/// Convenience wrapper returning a sentence with the merged prediction.
pub fn predict_sentence<S: Scalar>(
    coarse_model: &CrfModel<S>,
    fine_model: &CrfModel<S>,
    sentence: &Sentence,
) -> Sentence {
    Sentence {
        text: sentence.text.clone(),
        tokens: sentence.tokens.clone(),
        annotations: predict_entities(coarse_model, fine_model, sentence),
        relation_groups: Vec::new(),
    }
}

/// The (type, color, orientation) retrieval query. At least one field must
/// be present for a usable query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleKeyword {
    pub vtype: Option<String>,
    pub color: Option<String>,
    pub orientation: Option<String>,
}

impl TripleKeyword {
    pub fn new(
        vtype: Option<String>,
        color: Option<String>,
        orientation: Option<String>,
    ) -> Result<TripleKeyword, NerError> {
        let triple = TripleKeyword {
            vtype,
            color,
            orientation,
        };
        if triple.present_fields() == 0 {
            return Err(NerError::EmptyQuery);
        }
        Ok(triple)
    }

    pub fn present_fields(&self) -> usize {
        [
            self.vtype.is_some(),
            self.color.is_some(),
            self.orientation.is_some(),
        ]
        .iter()
        .filter(|&&p| p)
        .count()
    }

    /// True when one or two of the three fields are absent.
    pub fn has_missing(&self) -> bool {
        self.present_fields() < 3
    }
}

/// Extracts the retrieval triple from predicted annotations: the surfaces
/// of the first type, color, and orientation entities. A fine vehicle-type
/// span stands in for the base type word when no coarse type span exists.
pub fn extract_triple_keyword(
    annotations: &[EntityAnnotation],
    sentence: &Sentence,
) -> Result<TripleKeyword, NerError> {
    let first_surface = |class: EntityClass| {
        annotations
            .iter()
            .find(|a| a.class == class)
            .map(|a| sentence.surface(a))
    };
    let vtype = first_surface(EntityClass::VehicleType).or_else(|| {
        annotations
            .iter()
            .find(|a| a.layer == Layer::Fine)
            .and_then(|a| a.class.type_surface())
    });
    let color = first_surface(EntityClass::Color);
    let orientation = first_surface(EntityClass::Orientation);
    TripleKeyword::new(vtype, color, orientation)
}
