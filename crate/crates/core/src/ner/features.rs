//! Sparse feature extraction for the CRF: lexical features, a small shape
//! alphabet, context words, and gazetteer hits against the attribute
//! catalog.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, Token};
use crate::generator::AttributeCatalog;

/// Catalog fields a gazetteer feature can reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GazetteerKind {
    Brand,
    Model,
    Type,
    Color,
    Orientation,
    Location,
}

impl GazetteerKind {
    const ALL: [GazetteerKind; 6] = [
        GazetteerKind::Brand,
        GazetteerKind::Model,
        GazetteerKind::Type,
        GazetteerKind::Color,
        GazetteerKind::Orientation,
        GazetteerKind::Location,
    ];

    fn name(&self) -> &'static str {
        match self {
            GazetteerKind::Brand => "brand",
            GazetteerKind::Model => "model",
            GazetteerKind::Type => "type",
            GazetteerKind::Color => "color",
            GazetteerKind::Orientation => "orientation",
            GazetteerKind::Location => "location",
        }
    }
}

/// Lowercased unigram and phrase lexicons per gazetteer kind. Field order
/// follows [`GazetteerKind::ALL`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Gazetteer {
    unigrams: Vec<BTreeSet<String>>,
    phrases: Vec<Vec<Vec<String>>>,
}

impl Gazetteer {
    fn from_catalog(catalog: &AttributeCatalog) -> Gazetteer {
        let mut unigrams = vec![BTreeSet::new(); GazetteerKind::ALL.len()];
        let mut phrases: Vec<BTreeSet<Vec<String>>> = vec![BTreeSet::new(); GazetteerKind::ALL.len()];
        let mut add = |kind: GazetteerKind, surface: &str| {
            let idx = kind as usize;
            let words: Vec<String> = surface.split_whitespace().map(str::to_lowercase).collect();
            match words.len() {
                0 => {}
                1 => {
                    unigrams[idx].insert(words.into_iter().next().unwrap());
                }
                _ => {
                    phrases[idx].insert(words);
                }
            }
        };
        for b in &catalog.brands {
            add(GazetteerKind::Brand, b);
        }
        for m in &catalog.models {
            add(GazetteerKind::Model, &m.model);
            add(
                GazetteerKind::Type,
                &m.fine.type_surface().expect("catalog types are fine-grained"),
            );
        }
        for c in &catalog.colors {
            add(GazetteerKind::Color, &c.name);
            for v in &c.variants {
                add(GazetteerKind::Color, v);
            }
        }
        for o in &catalog.orientations {
            add(GazetteerKind::Orientation, &o.name);
            for v in &o.variants {
                add(GazetteerKind::Orientation, v);
            }
        }
        for l in &catalog.locations {
            add(GazetteerKind::Location, &l.name);
            for v in &l.variants {
                add(GazetteerKind::Location, v);
            }
        }
        Gazetteer {
            unigrams,
            phrases: phrases
                .into_iter()
                .map(|set| set.into_iter().collect())
                .collect(),
        }
    }
}

/// Stateless feature extractor; the gazetteer is baked in so that a model
/// dump fully determines decoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    gazetteer: Gazetteer,
}

fn shape_of(surface: &str) -> String {
    if surface.chars().all(|c| c.is_ascii_punctuation()) {
        return "punct".into();
    }
    let mut shape = String::new();
    let mut last = '\0';
    for c in surface.chars() {
        let class = if c.is_uppercase() {
            'X'
        } else if c.is_lowercase() {
            'x'
        } else if c.is_ascii_digit() {
            '9'
        } else if c.is_ascii_punctuation() {
            'p'
        } else {
            'o'
        };
        if class != last {
            shape.push(class);
            last = class;
        }
    }
    shape
}

fn affixes(lower: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = lower.chars().collect();
    for n in 1..=3.min(chars.len()) {
        out.push(format!("p{}={}", n, chars[..n].iter().collect::<String>()));
        out.push(format!(
            "s{}={}",
            n,
            chars[chars.len() - n..].iter().collect::<String>()
        ));
    }
}

impl FeatureExtractor {
    pub fn new(catalog: &AttributeCatalog) -> FeatureExtractor {
        FeatureExtractor {
            gazetteer: Gazetteer::from_catalog(catalog),
        }
    }

    /// Features for every position of a sentence.
    pub fn sentence_features(&self, sentence: &Sentence) -> Vec<Vec<String>> {
        let tokens = &sentence.tokens;
        let lower: Vec<String> = tokens.iter().map(|t| t.surface.to_lowercase()).collect();

        // Gazetteer hit markers: B at a match start, I inside a phrase.
        let mut hits: Vec<Vec<Option<char>>> =
            vec![vec![None; tokens.len()]; GazetteerKind::ALL.len()];
        for (k, kind) in GazetteerKind::ALL.iter().enumerate() {
            let _ = kind;
            for i in 0..tokens.len() {
                if self.gazetteer.unigrams[k].contains(&lower[i]) {
                    hits[k][i] = Some('B');
                }
            }
            for phrase in &self.gazetteer.phrases[k] {
                let len = phrase.len();
                if len > tokens.len() {
                    continue;
                }
                for start in 0..=(tokens.len() - len) {
                    if lower[start..start + len] == phrase[..] {
                        hits[k][start] = Some('B');
                        for cover in hits[k].iter_mut().skip(start + 1).take(len - 1) {
                            if cover.is_none() {
                                *cover = Some('I');
                            }
                        }
                    }
                }
            }
        }

        (0..tokens.len())
            .map(|i| self.position_features(tokens, &lower, &hits, i))
            .collect()
    }

    /// Features for one position; deterministic in the sentence content.
    pub fn extract_features(&self, sentence: &Sentence, position: usize) -> Vec<String> {
        self.sentence_features(sentence)
            .into_iter()
            .nth(position)
            .expect("position within sentence")
    }

    fn position_features(
        &self,
        tokens: &[Token],
        lower: &[String],
        hits: &[Vec<Option<char>>],
        i: usize,
    ) -> Vec<String> {
        let t = &tokens[i];
        let mut out = Vec::with_capacity(16);
        out.push(format!("w={}", t.surface));
        out.push(format!("lw={}", lower[i]));
        out.push(format!("sh={}", shape_of(&t.surface)));
        affixes(&lower[i], &mut out);
        if let Some(pos) = t.pos {
            out.push(format!("pos={}", pos.tag()));
        }
        out.push(match i {
            0 => "pw=<bos>".to_string(),
            _ => format!("pw={}", lower[i - 1]),
        });
        out.push(if i + 1 == tokens.len() {
            "nw=<eos>".to_string()
        } else {
            format!("nw={}", lower[i + 1])
        });
        for (k, kind) in GazetteerKind::ALL.iter().enumerate() {
            if let Some(mark) = hits[k][i] {
                out.push(format!("gaz={}:{}", kind.name(), mark));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{pos_tag, tokenize};

    fn sentence(text: &str) -> Sentence {
        let mut tokens = tokenize(text).unwrap();
        pos_tag(&mut tokens);
        Sentence {
            text: text.to_string(),
            tokens,
            annotations: Vec::new(),
            relation_groups: Vec::new(),
        }
    }

    fn extractor() -> FeatureExtractor {
        FeatureExtractor::new(&AttributeCatalog::default_catalog())
    }

    #[test]
    fn brand_token_fires_the_brand_gazetteer() {
        let s = sentence("A BMW waits");
        let feats = extractor().extract_features(&s, 1);
        assert!(feats.contains(&"gaz=brand:B".to_string()), "{feats:?}");
    }

    #[test]
    fn punctuation_shape_is_punct() {
        let s = sentence("Stop .");
        let feats = extractor().extract_features(&s, 1);
        assert!(feats.contains(&"sh=punct".to_string()), "{feats:?}");
    }

    #[test]
    fn extraction_is_deterministic() {
        let s = sentence("A red Ferrari 458 drives this way");
        let e = extractor();
        assert_eq!(e.sentence_features(&s), e.sentence_features(&s));
    }

    #[test]
    fn phrase_gazetteer_marks_begin_and_inside() {
        let s = sentence("going this way now");
        let e = extractor();
        let f1 = e.extract_features(&s, 1);
        let f2 = e.extract_features(&s, 2);
        assert!(f1.contains(&"gaz=orientation:B".to_string()), "{f1:?}");
        assert!(f2.contains(&"gaz=orientation:I".to_string()), "{f2:?}");
    }

    #[test]
    fn multiword_brand_matches_as_phrase() {
        let s = sentence("a Land Rover parked");
        let e = extractor();
        let f1 = e.extract_features(&s, 1);
        assert!(f1.contains(&"gaz=brand:B".to_string()), "{f1:?}");
    }
}
