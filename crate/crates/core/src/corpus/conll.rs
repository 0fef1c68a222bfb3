//! CoNLL-style serialization: one line per token with four TAB-separated
//! columns (surface, POS, coarse BIO tag, fine BIO tag), a blank line after
//! each sentence, LF line endings. Two BIO columns encode the overlapped
//! fine entities on top of the flat coarse layer.

use super::tokenize::pos_tag_word;
use super::types::{EntityAnnotation, EntityClass, Layer, Pos, Sentence, Token};
use super::CorpusError;

/// Renders one sentence as a CoNLL block, terminated by a blank line.
pub fn to_conll(sentence: &Sentence) -> String {
    let coarse = bio_encode(sentence, Layer::Coarse);
    let fine = bio_encode(sentence, Layer::Fine);
    let mut out = String::new();
    for (i, token) in sentence.tokens.iter().enumerate() {
        let pos = token.pos.unwrap_or_else(|| pos_tag_word(&token.surface));
        out.push_str(&token.surface);
        out.push('\t');
        out.push_str(pos.tag());
        out.push('\t');
        out.push_str(&coarse[i]);
        out.push('\t');
        out.push_str(&fine[i]);
        out.push('\n');
    }
    out.push('\n');
    out
}

/// Renders a whole corpus as concatenated CoNLL blocks.
pub fn write_conll(sentences: &[Sentence]) -> String {
    sentences.iter().map(to_conll).collect()
}

fn bio_encode(sentence: &Sentence, layer: Layer) -> Vec<String> {
    let mut tags = vec!["O".to_string(); sentence.tokens.len()];
    for ann in sentence.annotations_in_layer(layer) {
        for t in ann.token_span.0..ann.token_span.1.min(tags.len()) {
            let prefix = if t == ann.token_span.0 { "B" } else { "I" };
            tags[t] = format!("{prefix}-{}", ann.class.tag());
        }
    }
    tags
}

/// Parses exactly one sentence block.
pub fn from_conll(text: &str) -> Result<Sentence, CorpusError> {
    let sentences = read_conll(text)?;
    match sentences.len() {
        1 => Ok(sentences.into_iter().next().unwrap()),
        n => Err(CorpusError::parse(
            None,
            format!("expected exactly one sentence block, found {n}"),
        )),
    }
}

/// Parses a corpus of blank-line separated CoNLL blocks. Char offsets are
/// recomputed with single-space gaps; relation groups are not representable
/// in this format and come back empty.
pub fn read_conll(text: &str) -> Result<Vec<Sentence>, CorpusError> {
    let mut sentences = Vec::new();
    let mut rows: Vec<(usize, Row)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            if !rows.is_empty() {
                sentences.push(build_sentence(&rows)?);
                rows.clear();
            }
            continue;
        }
        rows.push((lineno + 1, parse_row(lineno + 1, line)?));
    }
    if !rows.is_empty() {
        sentences.push(build_sentence(&rows)?);
    }
    Ok(sentences)
}

struct Row {
    surface: String,
    pos: Pos,
    coarse: BioTag,
    fine: BioTag,
}

#[derive(Clone, PartialEq)]
enum BioTag {
    Outside,
    Begin(EntityClass),
    Inside(EntityClass),
}

fn parse_row(lineno: usize, line: &str) -> Result<Row, CorpusError> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 4 {
        return Err(CorpusError::parse(
            Some(lineno),
            format!("expected 4 TAB-separated columns, found {}", cols.len()),
        ));
    }
    if cols[0].is_empty() {
        return Err(CorpusError::parse(Some(lineno), "empty surface column"));
    }
    let pos = Pos::from_tag(cols[1])
        .ok_or_else(|| CorpusError::parse(Some(lineno), format!("unknown POS tag `{}`", cols[1])))?;
    let coarse = parse_bio(lineno, cols[2], Layer::Coarse)?;
    let fine = parse_bio(lineno, cols[3], Layer::Fine)?;
    Ok(Row {
        surface: cols[0].to_string(),
        pos,
        coarse,
        fine,
    })
}

fn parse_bio(lineno: usize, tag: &str, layer: Layer) -> Result<BioTag, CorpusError> {
    if tag == "O" {
        return Ok(BioTag::Outside);
    }
    let (prefix, class_tag) = tag
        .split_once('-')
        .ok_or_else(|| CorpusError::parse(Some(lineno), format!("malformed BIO tag `{tag}`")))?;
    let class = EntityClass::from_tag(class_tag).ok_or_else(|| {
        CorpusError::parse(Some(lineno), format!("unknown entity class `{class_tag}`"))
    })?;
    if class.layer() != layer {
        return Err(CorpusError::parse(
            Some(lineno),
            format!("class `{class_tag}` is not valid in this tag column"),
        ));
    }
    match prefix {
        "B" => Ok(BioTag::Begin(class)),
        "I" => Ok(BioTag::Inside(class)),
        _ => Err(CorpusError::parse(
            Some(lineno),
            format!("malformed BIO tag `{tag}`"),
        )),
    }
}

fn build_sentence(rows: &[(usize, Row)]) -> Result<Sentence, CorpusError> {
    let mut tokens = Vec::with_capacity(rows.len());
    let mut text = String::new();
    let mut cursor = 0;
    for (_, row) in rows {
        if !text.is_empty() {
            text.push(' ');
            cursor += 1;
        }
        let len = row.surface.chars().count();
        tokens.push(Token {
            surface: row.surface.clone(),
            char_start: cursor,
            char_end: cursor + len,
            pos: Some(row.pos),
        });
        text.push_str(&row.surface);
        cursor += len;
    }

    let mut annotations = bio_decode(rows, &tokens, |r| &r.coarse)?;
    annotations.extend(bio_decode(rows, &tokens, |r| &r.fine)?);
    Ok(Sentence {
        text,
        tokens,
        annotations,
        relation_groups: Vec::new(),
    })
}

fn bio_decode(
    rows: &[(usize, Row)],
    tokens: &[Token],
    pick: impl Fn(&Row) -> &BioTag,
) -> Result<Vec<EntityAnnotation>, CorpusError> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, EntityClass)> = None;
    for (i, (lineno, row)) in rows.iter().enumerate() {
        match pick(row) {
            BioTag::Outside => {
                if let Some((start, class)) = open.take() {
                    spans.push((start, i, class));
                }
            }
            BioTag::Begin(class) => {
                if let Some((start, prev)) = open.take() {
                    spans.push((start, i, prev));
                }
                open = Some((i, *class));
            }
            BioTag::Inside(class) => match open {
                Some((_, prev)) if prev == *class => {}
                _ => {
                    return Err(CorpusError::parse(
                        Some(*lineno),
                        format!(
                            "illegal BIO transition: I-{} not preceded by B-{0}/I-{0}",
                            class.tag()
                        ),
                    ))
                }
            },
        }
    }
    if let Some((start, class)) = open {
        spans.push((start, rows.len(), class));
    }
    Ok(spans
        .into_iter()
        .map(|(ts, te, class)| {
            EntityAnnotation::new(
                class,
                (tokens[ts].char_start, tokens[te - 1].char_end),
                (ts, te),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::tokenize::{pos_tag, tokenize};
    use super::*;

    fn sentence(text: &str, anns: Vec<EntityAnnotation>) -> Sentence {
        let mut tokens = tokenize(text).unwrap();
        pos_tag(&mut tokens);
        Sentence {
            text: text.to_string(),
            tokens,
            annotations: anns,
            relation_groups: Vec::new(),
        }
    }

    #[test]
    fn overlapped_brand_model_uses_two_tag_columns() {
        let s = sentence(
            "BMW X5",
            vec![
                EntityAnnotation::new(EntityClass::Brand, (0, 3), (0, 1)),
                EntityAnnotation::new(EntityClass::Model, (4, 6), (1, 2)),
                EntityAnnotation::new(EntityClass::TypeSuv, (0, 6), (0, 2)),
            ],
        );
        let block = to_conll(&s);
        let lines: Vec<&str> = block.lines().collect();
        assert_eq!(lines[0], "BMW\tNOUN\tB-vehicle_brand\tB-vehicle_type-suv");
        assert_eq!(lines[1], "X5\tNOUN\tB-vehicle_model\tI-vehicle_type-suv");
        assert_eq!(lines[2], "");

        let back = from_conll(&block).unwrap();
        assert_eq!(back.span_keys(Layer::Coarse), s.span_keys(Layer::Coarse));
        assert_eq!(back.span_keys(Layer::Fine), s.span_keys(Layer::Fine));
    }

    #[test]
    fn sentence_without_entities_is_all_outside() {
        let s = sentence("Nothing to see here .", vec![]);
        let block = to_conll(&s);
        for line in block.lines().filter(|l| !l.is_empty()) {
            assert!(line.ends_with("\tO\tO"), "{line}");
        }
        let back = from_conll(&block).unwrap();
        assert!(back.annotations.is_empty());
    }

    #[test]
    fn wrong_column_count_reports_line_number() {
        let err = read_conll("BMW\tNOUN\tO\n").unwrap_err();
        match err {
            CorpusError::Parse { line, .. } => assert_eq!(line, Some(1)),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn illegal_bio_transition_is_rejected() {
        let text = "BMW\tNOUN\tO\tO\nX5\tNOUN\tI-vehicle_model\tO\n\n";
        let err = read_conll(text).unwrap_err();
        match err {
            CorpusError::Parse { line, msg } => {
                assert_eq!(line, Some(2));
                assert!(msg.contains("illegal BIO transition"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn round_trip_recomputes_offsets_with_single_space_gaps() {
        let s = sentence(
            "A  grey   sedan .",
            vec![EntityAnnotation::new(EntityClass::Color, (3, 7), (1, 2))],
        );
        let back = from_conll(&to_conll(&s)).unwrap();
        assert_eq!(back.text, "A grey sedan .");
        let surfaces: Vec<_> = back.tokens.iter().map(|t| t.surface.clone()).collect();
        assert_eq!(surfaces, vec!["A", "grey", "sedan", "."]);
        assert_eq!(back.annotations[0].char_span, (2, 6));
        assert_eq!(back.span_keys(Layer::Coarse), s.span_keys(Layer::Coarse));
    }
}
