//! JSON annotation format. Each sentence object has exactly the keys
//! `sentence` (text), `ner_label` (entries of
//! `[entity type, char start, char end, token start, token end]`) and
//! `re_label` (lists of `ner_label` indices that refer to one vehicle).

use serde_json::{json, Value};

use super::tokenize::{pos_tag, tokenize};
use super::types::{EntityAnnotation, EntityClass, Sentence};
use super::CorpusError;

pub fn to_json(sentence: &Sentence) -> Value {
    let ner_label: Vec<Value> = sentence
        .annotations
        .iter()
        .map(|a| {
            json!([
                a.class.tag(),
                a.char_span.0,
                a.char_span.1,
                a.token_span.0,
                a.token_span.1
            ])
        })
        .collect();
    json!({
        "sentence": sentence.text,
        "ner_label": ner_label,
        "re_label": sentence.relation_groups,
    })
}

pub fn from_json(value: &Value) -> Result<Sentence, CorpusError> {
    let obj = value
        .as_object()
        .ok_or_else(|| CorpusError::parse(None, "sentence entry is not an object"))?;
    let text = obj
        .get("sentence")
        .and_then(Value::as_str)
        .ok_or_else(|| CorpusError::parse(None, "missing or non-string key `sentence`"))?
        .to_string();
    let ner = obj
        .get("ner_label")
        .and_then(Value::as_array)
        .ok_or_else(|| CorpusError::parse(None, "missing or non-array key `ner_label`"))?;
    let re = obj
        .get("re_label")
        .and_then(Value::as_array)
        .ok_or_else(|| CorpusError::parse(None, "missing or non-array key `re_label`"))?;

    let mut tokens = tokenize(&text)
        .map_err(|e| CorpusError::parse(None, format!("bad sentence text: {e}")))?;
    pos_tag(&mut tokens);
    let char_len = text.chars().count();

    let mut annotations = Vec::with_capacity(ner.len());
    for (i, entry) in ner.iter().enumerate() {
        let parts = entry
            .as_array()
            .filter(|p| p.len() == 5)
            .ok_or_else(|| {
                CorpusError::parse(None, format!("ner_label[{i}] is not a 5-element array"))
            })?;
        let tag = parts[0].as_str().ok_or_else(|| {
            CorpusError::parse(None, format!("ner_label[{i}] entity type is not a string"))
        })?;
        let class = EntityClass::from_tag(tag).ok_or_else(|| {
            CorpusError::parse(None, format!("ner_label[{i}] unknown entity class `{tag}`"))
        })?;
        let nums: Vec<usize> = parts[1..]
            .iter()
            .map(|v| {
                v.as_u64().map(|n| n as usize).ok_or_else(|| {
                    CorpusError::parse(None, format!("ner_label[{i}] span index is not an integer"))
                })
            })
            .collect::<Result<_, _>>()?;
        let (cs, ce, ts, te) = (nums[0], nums[1], nums[2], nums[3]);
        if cs >= ce || ce > char_len {
            return Err(CorpusError::parse(
                None,
                format!("ner_label[{i}] char span {cs}..{ce} out of bounds (len {char_len})"),
            ));
        }
        if ts >= te || te > tokens.len() {
            return Err(CorpusError::parse(
                None,
                format!(
                    "ner_label[{i}] token span {ts}..{te} out of bounds ({} tokens)",
                    tokens.len()
                ),
            ));
        }
        annotations.push(EntityAnnotation::new(class, (cs, ce), (ts, te)));
    }

    let mut relation_groups = Vec::with_capacity(re.len());
    for (i, group) in re.iter().enumerate() {
        let idxs = group
            .as_array()
            .ok_or_else(|| CorpusError::parse(None, format!("re_label[{i}] is not an array")))?;
        let mut out = Vec::with_capacity(idxs.len());
        for v in idxs {
            let idx = v.as_u64().map(|n| n as usize).ok_or_else(|| {
                CorpusError::parse(None, format!("re_label[{i}] index is not an integer"))
            })?;
            if idx >= annotations.len() {
                return Err(CorpusError::parse(
                    None,
                    format!("re_label[{i}] index {idx} out of bounds"),
                ));
            }
            out.push(idx);
        }
        relation_groups.push(out);
    }

    Ok(Sentence {
        text,
        tokens,
        annotations,
        relation_groups,
    })
}

/// Renders a corpus file: one top-level array of sentence objects.
pub fn write_corpus_json(sentences: &[Sentence]) -> String {
    let arr = Value::Array(sentences.iter().map(to_json).collect());
    let mut out = serde_json::to_string_pretty(&arr).expect("corpus serialization cannot fail");
    out.push('\n');
    out
}

pub fn read_corpus_json(text: &str) -> Result<Vec<Sentence>, CorpusError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| CorpusError::parse(Some(e.line()), format!("invalid JSON: {e}")))?;
    let arr = value
        .as_array()
        .ok_or_else(|| CorpusError::parse(None, "corpus file must be a top-level array"))?;
    arr.iter()
        .enumerate()
        .map(|(i, v)| {
            from_json(v).map_err(|e| CorpusError::parse(None, format!("sentence {i}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Sentence {
        let text = "A grey sedan drives right .";
        let mut tokens = tokenize(text).unwrap();
        pos_tag(&mut tokens);
        Sentence {
            text: text.to_string(),
            tokens,
            annotations: vec![
                EntityAnnotation::new(EntityClass::Color, (2, 6), (1, 2)),
                EntityAnnotation::new(EntityClass::VehicleType, (7, 12), (2, 3)),
                EntityAnnotation::new(EntityClass::Orientation, (20, 25), (4, 5)),
            ],
            relation_groups: vec![vec![0, 1, 2]],
        }
    }

    #[test]
    fn one_entity_sentence_has_single_five_element_entry() {
        let mut s = sample();
        s.annotations.truncate(1);
        s.relation_groups = vec![vec![0]];
        let v = to_json(&s);
        let ner = v["ner_label"].as_array().unwrap();
        assert_eq!(ner.len(), 1);
        assert_eq!(ner[0].as_array().unwrap().len(), 5);
        assert_eq!(ner[0][0], "vehicle_color");
    }

    #[test]
    fn empty_annotations_serialize_to_empty_array() {
        let mut s = sample();
        s.annotations.clear();
        s.relation_groups.clear();
        let v = to_json(&s);
        assert_eq!(v["ner_label"], json!([]));
        assert_eq!(v["re_label"], json!([]));
    }

    #[test]
    fn round_trip_identity() {
        let s = sample();
        let back = from_json(&to_json(&s)).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn missing_key_is_a_parse_error() {
        let v = json!({"sentence": "A sedan .", "ner_label": []});
        assert!(matches!(from_json(&v), Err(CorpusError::Parse { .. })));
    }

    #[test]
    fn out_of_bounds_span_is_a_parse_error() {
        let v = json!({
            "sentence": "A sedan .",
            "ner_label": [["vehicle_type", 2, 99, 1, 2]],
            "re_label": [],
        });
        assert!(matches!(from_json(&v), Err(CorpusError::Parse { .. })));
    }
}
