//! Annotation correction framework: checks every structural invariant a
//! sentence must satisfy and reports violations as data instead of errors.

use super::types::{EntityClass, Layer, Sentence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Token has an empty or inverted span, or tokens overlap/are unordered.
    TokenSpanInvalid,
    /// Token span points outside the text or mismatches its surface.
    TokenTextMismatch,
    /// Annotation char or token span lies outside the sentence.
    SpanOutOfBounds,
    /// Char span and token span disagree.
    CharTokenMismatch,
    /// Annotation layer does not match the class granularity.
    LayerMismatch,
    /// Two same-layer annotations share a token, or a fine annotation
    /// overlaps a coarse annotation other than brand/model.
    IllegalOverlap,
    /// Relation group refers to a missing annotation index.
    RelationIndexOutOfBounds,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: String,
}

impl Violation {
    fn new(kind: ViolationKind, location: impl Into<String>) -> Self {
        Violation {
            kind,
            location: location.into(),
        }
    }
}

/// Returns an empty list iff all type invariants hold: token structure,
/// span bounds, char/token consistency, the overlap rules, and relation
/// group indices.
pub fn validate(sentence: &Sentence) -> Vec<Violation> {
    let mut out = Vec::new();
    let char_len = sentence.char_len();
    let n_tokens = sentence.tokens.len();

    let mut prev_end = 0usize;
    for (i, t) in sentence.tokens.iter().enumerate() {
        if t.char_start >= t.char_end {
            out.push(Violation::new(
                ViolationKind::TokenSpanInvalid,
                format!("token {i}"),
            ));
            continue;
        }
        if i > 0 && t.char_start < prev_end {
            out.push(Violation::new(
                ViolationKind::TokenSpanInvalid,
                format!("token {i} overlaps or precedes token {}", i - 1),
            ));
        }
        if t.char_end > char_len || sentence.char_slice(t.char_start, t.char_end) != t.surface {
            out.push(Violation::new(
                ViolationKind::TokenTextMismatch,
                format!("token {i}"),
            ));
        }
        prev_end = t.char_end;
    }

    // Per-annotation checks, first failure wins so that one corruption is
    // reported once.
    let mut usable = vec![false; sentence.annotations.len()];
    for (i, a) in sentence.annotations.iter().enumerate() {
        let loc = format!("annotation {i}");
        if a.char_span.0 >= a.char_span.1
            || a.char_span.1 > char_len
            || a.token_span.0 >= a.token_span.1
            || a.token_span.1 > n_tokens
        {
            out.push(Violation::new(ViolationKind::SpanOutOfBounds, loc));
            continue;
        }
        if a.layer != a.class.layer() {
            out.push(Violation::new(ViolationKind::LayerMismatch, loc));
            continue;
        }
        let span_start = sentence.tokens[a.token_span.0].char_start;
        let span_end = sentence.tokens[a.token_span.1 - 1].char_end;
        if a.char_span != (span_start, span_end) {
            out.push(Violation::new(ViolationKind::CharTokenMismatch, loc));
            continue;
        }
        usable[i] = true;
    }

    for i in 0..sentence.annotations.len() {
        for j in (i + 1)..sentence.annotations.len() {
            if !usable[i] || !usable[j] {
                continue;
            }
            let (a, b) = (&sentence.annotations[i], &sentence.annotations[j]);
            if !a.overlaps_tokens(b) {
                continue;
            }
            if a.layer == b.layer {
                out.push(Violation::new(
                    ViolationKind::IllegalOverlap,
                    format!("annotations {i} and {j}"),
                ));
            } else {
                let coarse = if a.layer == Layer::Coarse { a } else { b };
                let allowed = matches!(coarse.class, EntityClass::Brand | EntityClass::Model);
                if !allowed {
                    out.push(Violation::new(
                        ViolationKind::IllegalOverlap,
                        format!("annotations {i} and {j}"),
                    ));
                }
            }
        }
    }

    for (g, group) in sentence.relation_groups.iter().enumerate() {
        for &idx in group {
            if idx >= sentence.annotations.len() {
                out.push(Violation::new(
                    ViolationKind::RelationIndexOutOfBounds,
                    format!("relation group {g} index {idx}"),
                ));
            }
        }
    }

    out
}
