//! Whitespace tokenizer with boundary punctuation detachment, plus the
//! closed-rule POS tagger.

use super::types::{Pos, Token};
use super::CorpusError;

/// Splits text on whitespace and detaches leading/trailing punctuation of
/// each chunk into separate tokens. Internal punctuation ("58km/h",
/// "top-left") is kept. Offsets count Unicode scalars.
pub fn tokenize(text: &str) -> Result<Vec<Token>, CorpusError> {
    if text.is_empty() {
        return Err(CorpusError::InvalidInput("empty text".into()));
    }
    if text.chars().any(|c| c.is_control()) {
        return Err(CorpusError::InvalidInput(
            "text must be printable (no control characters)".into(),
        ));
    }

    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        push_chunk(&chars, start, i, &mut tokens);
    }
    Ok(tokens)
}

fn push_chunk(chars: &[char], start: usize, end: usize, out: &mut Vec<Token>) {
    let mut lo = start;
    let mut hi = end;
    let mut head = Vec::new();
    let mut tail = Vec::new();
    while lo < hi && chars[lo].is_ascii_punctuation() {
        head.push(lo);
        lo += 1;
    }
    while hi > lo && chars[hi - 1].is_ascii_punctuation() {
        tail.push(hi - 1);
        hi -= 1;
    }
    for &p in &head {
        out.push(single(chars, p));
    }
    if lo < hi {
        out.push(Token {
            surface: chars[lo..hi].iter().collect(),
            char_start: lo,
            char_end: hi,
            pos: None,
        });
    }
    tail.reverse();
    for &p in &tail {
        out.push(single(chars, p));
    }
}

fn single(chars: &[char], at: usize) -> Token {
    Token {
        surface: chars[at].to_string(),
        char_start: at,
        char_end: at + 1,
        pos: None,
    }
}

/// Fills `pos` on every token via the per-token rule set.
pub fn pos_tag(tokens: &mut [Token]) {
    for t in tokens {
        t.pos = Some(pos_tag_word(&t.surface));
    }
}

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "its", "our", "my", "some",
];

const PREPOSITIONS: &[&str] = &[
    "about", "above", "across", "after", "along", "around", "at", "before", "behind", "below",
    "beside", "between", "by", "down", "during", "for", "from", "in", "inside", "into", "near",
    "next", "of", "off", "on", "onto", "out", "over", "past", "through", "to", "toward",
    "towards", "under", "until", "up", "while", "with", "within",
];

const VERBS: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "am", "appear", "appears", "caught", "creep",
    "creeps", "cruise", "cruises", "do", "does", "doing", "drive", "drives", "drift", "drifts",
    "find", "follow", "follows", "go", "goes", "got", "happen", "happens", "head", "heads",
    "keep", "keeps", "kept", "look", "looks", "looked", "move", "moves", "note", "notes",
    "noted", "notice", "noticed", "overtake", "overtakes", "park", "parks", "pull", "pulls",
    "pulled", "race", "races", "remember", "see", "sees", "saw", "sit", "sits", "speed",
    "speeds", "spot", "spots", "stand", "stands", "stop", "stops", "travel", "travels", "turn",
    "turns", "turned", "wait", "waits", "watch", "can", "could", "will", "would", "may",
    "might",
];

const ADJECTIVES: &[&str] = &[
    "red", "blue", "green", "black", "white", "grey", "gray", "silver", "yellow", "orange",
    "brown", "purple", "pink", "gold", "golden", "beige", "maroon", "navy", "cyan", "teal",
    "olive", "magenta", "turquoise", "crimson", "ivory", "charcoal", "burgundy", "lime",
    "scarlet", "big", "small", "large", "little", "old", "new", "fast", "slow", "heavy",
    "light", "dark", "bright", "shiny", "dusty", "long", "short", "tall", "low", "unusual",
    "clear", "barely", "roughly",
];

/// Deterministic per-token POS rule: punctuation, then digit-initial
/// numerals, then the closed lexicons, then verbal suffixes, default NOUN.
pub fn pos_tag_word(surface: &str) -> Pos {
    if !surface.is_empty() && surface.chars().all(|c| c.is_ascii_punctuation()) {
        return Pos::Punct;
    }
    if surface.chars().next().is_some_and(|c| c.is_ascii_digit()) {
        return Pos::Num;
    }
    let lower = surface.to_lowercase();
    let lower = lower.as_str();
    if DETERMINERS.contains(&lower) {
        return Pos::Det;
    }
    if PREPOSITIONS.contains(&lower) {
        return Pos::Prep;
    }
    if VERBS.contains(&lower) {
        return Pos::Verb;
    }
    if ADJECTIVES.contains(&lower) {
        return Pos::Adj;
    }
    if lower.len() > 4 && (lower.ends_with("ing") || lower.ends_with("ed")) {
        return Pos::Verb;
    }
    Pos::Noun
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surfaces(text: &str) -> Vec<String> {
        tokenize(text).unwrap().into_iter().map(|t| t.surface).collect()
    }

    #[test]
    fn splits_whitespace_and_detaches_boundary_punctuation() {
        assert_eq!(surfaces("A grey sedan."), vec!["A", "grey", "sedan", "."]);
        assert_eq!(surfaces("(fast)."), vec!["(", "fast", ")", "."]);
    }

    #[test]
    fn keeps_internal_punctuation() {
        assert_eq!(surfaces("58km/h"), vec!["58km/h"]);
        assert_eq!(surfaces("top-left"), vec!["top-left"]);
    }

    #[test]
    fn empty_text_is_invalid() {
        assert!(matches!(tokenize(""), Err(CorpusError::InvalidInput(_))));
        assert!(matches!(tokenize("a\tb"), Err(CorpusError::InvalidInput(_))));
    }

    #[test]
    fn reconstruction_with_gaps_is_identity() {
        let text = "A Volvo truck is parked , behind a Ferrari 458 .";
        let tokens = tokenize(text).unwrap();
        let chars: Vec<char> = text.chars().collect();
        let mut rebuilt = String::new();
        let mut cursor = 0;
        for t in &tokens {
            rebuilt.extend(chars[cursor..t.char_start].iter());
            rebuilt.push_str(&t.surface);
            cursor = t.char_end;
        }
        rebuilt.extend(chars[cursor..].iter());
        assert_eq!(rebuilt, text);
    }

    #[test]
    fn pos_rules() {
        assert_eq!(pos_tag_word("."), Pos::Punct);
        assert_eq!(pos_tag_word("58"), Pos::Num);
        assert_eq!(pos_tag_word("58km/h"), Pos::Num);
        assert_eq!(pos_tag_word("driving"), Pos::Verb);
        assert_eq!(pos_tag_word("the"), Pos::Det);
        assert_eq!(pos_tag_word("behind"), Pos::Prep);
        assert_eq!(pos_tag_word("grey"), Pos::Adj);
        assert_eq!(pos_tag_word("sedan"), Pos::Noun);
    }
}
