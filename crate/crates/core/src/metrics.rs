//! Confusion-matrix metrics shared by the NER and CTIM evaluations, plus
//! the per-class entity report with exact span+class matching.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EntityClass, Layer, Sentence};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

/// A ratio whose denominator may be empty; `defined` is false when the
/// value was forced to zero because of a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub defined: bool,
}

impl Metric {
    fn ratio(num: u64, den: u64) -> Metric {
        if den == 0 {
            Metric {
                value: 0.0,
                defined: false,
            }
        } else {
            Metric {
                value: num as f64 / den as f64,
                defined: true,
            }
        }
    }
}

pub fn precision(c: &ConfusionCounts) -> Metric {
    Metric::ratio(c.true_pos, c.true_pos + c.false_pos)
}

pub fn recall(c: &ConfusionCounts) -> Metric {
    Metric::ratio(c.true_pos, c.true_pos + c.false_neg)
}

pub fn f1(c: &ConfusionCounts) -> Metric {
    let p = precision(c);
    let r = recall(c);
    if !p.defined || !r.defined || p.value + r.value == 0.0 {
        return Metric {
            value: 0.0,
            defined: p.defined && r.defined,
        };
    }
    Metric {
        value: 2.0 * p.value * r.value / (p.value + r.value),
        defined: true,
    }
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    let total = c.true_pos + c.false_pos + c.false_neg + c.true_neg;
    if total == 0 {
        return Err(MetricsError::InvalidInput("empty confusion counts".into()));
    }
    Ok((c.true_pos + c.true_neg) as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScores {
    pub counts: ConfusionCounts,
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
}

impl PrfScores {
    fn from_counts(counts: ConfusionCounts) -> PrfScores {
        PrfScores {
            counts,
            precision: precision(&counts),
            recall: recall(&counts),
            f1: f1(&counts),
        }
    }
}

/// Entity-level evaluation report. Matching is exact: an entity counts as
/// correct only when span, class, and layer all agree. Flat aggregates the
/// coarse layer, overlapped the fine layer.
#[derive(Debug, Clone, Serialize)]
pub struct EntityReport {
    pub per_class: BTreeMap<String, PrfScores>,
    pub coarse: PrfScores,
    pub fine: PrfScores,
    pub flat: PrfScores,
    pub overlapped: PrfScores,
    pub micro: PrfScores,
    /// Unweighted mean F1 over classes that occur in the gold data.
    pub macro_f1: f64,
}

fn multiset(sentence: &Sentence) -> Vec<(usize, usize, EntityClass)> {
    let mut v: Vec<_> = sentence
        .annotations
        .iter()
        .map(|a| (a.token_span.0, a.token_span.1, a.class))
        .collect();
    v.sort();
    v
}

pub fn entity_report(gold: &[Sentence], predicted: &[Sentence]) -> Result<EntityReport, MetricsError> {
    if gold.len() != predicted.len() {
        return Err(MetricsError::InvalidInput(format!(
            "mismatched sentence sets: {} gold vs {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    let mut class_counts: BTreeMap<EntityClass, ConfusionCounts> =
        EntityClass::all().map(|c| (c, ConfusionCounts::default())).collect();

    for (i, (g, p)) in gold.iter().zip(predicted).enumerate() {
        if g.text != p.text {
            return Err(MetricsError::InvalidInput(format!(
                "sentence {i}: gold and predicted texts differ"
            )));
        }
        let mut gold_spans = multiset(g);
        for span in multiset(p) {
            if let Some(pos) = gold_spans.iter().position(|s| *s == span) {
                gold_spans.remove(pos);
                class_counts.get_mut(&span.2).unwrap().true_pos += 1;
            } else {
                class_counts.get_mut(&span.2).unwrap().false_pos += 1;
            }
        }
        for span in gold_spans {
            class_counts.get_mut(&span.2).unwrap().false_neg += 1;
        }
    }

    let sum = |layer: Option<Layer>| {
        let mut total = ConfusionCounts::default();
        for (class, c) in &class_counts {
            if layer.is_none_or(|l| class.layer() == l) {
                total.true_pos += c.true_pos;
                total.false_pos += c.false_pos;
                total.false_neg += c.false_neg;
            }
        }
        total
    };

    let coarse = PrfScores::from_counts(sum(Some(Layer::Coarse)));
    let fine = PrfScores::from_counts(sum(Some(Layer::Fine)));
    let micro = PrfScores::from_counts(sum(None));

    let gold_classes: Vec<EntityClass> = class_counts
        .iter()
        .filter(|(_, c)| c.true_pos + c.false_neg > 0)
        .map(|(class, _)| *class)
        .collect();
    let macro_f1 = if gold_classes.is_empty() {
        0.0
    } else {
        gold_classes
            .iter()
            .map(|c| f1(&class_counts[c]).value)
            .sum::<f64>()
            / gold_classes.len() as f64
    };

    Ok(EntityReport {
        per_class: class_counts
            .iter()
            .map(|(class, c)| (class.tag().to_string(), PrfScores::from_counts(*c)))
            .collect(),
        coarse,
        fine,
        flat: coarse,
        overlapped: fine,
        micro,
        macro_f1,
    })
}

impl EntityReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str("class                          P       R      F1      TP    FP    FN\n");
        let mut row = |name: &str, s: &PrfScores| {
            out.push_str(&format!(
                "{name:<28} {:>6.3} {:>7.3} {:>7.3} {:>6} {:>5} {:>5}\n",
                s.precision.value,
                s.recall.value,
                s.f1.value,
                s.counts.true_pos,
                s.counts.false_pos,
                s.counts.false_neg,
            ));
        };
        for (tag, scores) in &self.per_class {
            row(tag, scores);
        }
        row("coarse (flat)", &self.coarse);
        row("fine (overlapped)", &self.fine);
        row("micro", &self.micro);
        out.push_str(&format!("macro F1 {:.3}\n", self.macro_f1));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{pos_tag, tokenize, EntityAnnotation};

    #[test]
    fn precision_recall_f1_match_hand_computation() {
        let c = ConfusionCounts {
            true_pos: 3,
            false_pos: 1,
            false_neg: 3,
            true_neg: 0,
        };
        assert_eq!(precision(&c).value, 0.75);
        assert_eq!(recall(&c).value, 0.5);
        assert!((f1(&c).value - 0.6).abs() < 1e-12);
    }

    #[test]
    fn zero_denominator_is_flagged_undefined() {
        let c = ConfusionCounts::default();
        let p = precision(&c);
        assert_eq!(p.value, 0.0);
        assert!(!p.defined);
    }

    #[test]
    fn equal_precision_and_recall_give_equal_f1() {
        let c = ConfusionCounts {
            true_pos: 4,
            false_pos: 2,
            false_neg: 2,
            true_neg: 0,
        };
        let p = precision(&c);
        assert_eq!(p.value, recall(&c).value);
        assert!((f1(&c).value - p.value).abs() < 1e-12);
    }

    #[test]
    fn accuracy_corner_cases() {
        let perfect = ConfusionCounts {
            true_pos: 5,
            true_neg: 5,
            ..Default::default()
        };
        assert_eq!(accuracy(&perfect).unwrap(), 1.0);
        let wrong = ConfusionCounts {
            false_pos: 4,
            false_neg: 6,
            ..Default::default()
        };
        assert_eq!(accuracy(&wrong).unwrap(), 0.0);
        let toy = ConfusionCounts {
            true_pos: 60,
            true_neg: 30,
            false_pos: 5,
            false_neg: 5,
        };
        assert_eq!(accuracy(&toy).unwrap(), 0.9);
        assert!(accuracy(&ConfusionCounts::default()).is_err());
    }

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
    fn identical_prediction_scores_one() {
        let s = sentence(
            "A grey sedan",
            vec![
                EntityAnnotation::new(EntityClass::Color, (2, 6), (1, 2)),
                EntityAnnotation::new(EntityClass::VehicleType, (7, 12), (2, 3)),
            ],
        );
        let report = entity_report(&[s.clone()], &[s]).unwrap();
        assert_eq!(report.micro.f1.value, 1.0);
        assert_eq!(report.per_class["vehicle_color"].f1.value, 1.0);
    }

    #[test]
    fn shifted_span_counts_as_both_fp_and_fn() {
        let gold = sentence(
            "A grey sedan",
            vec![EntityAnnotation::new(EntityClass::Color, (2, 6), (1, 2))],
        );
        let pred = sentence(
            "A grey sedan",
            vec![EntityAnnotation::new(EntityClass::Color, (2, 12), (1, 3))],
        );
        let report = entity_report(&[gold], &[pred]).unwrap();
        let c = report.per_class["vehicle_color"].counts;
        assert_eq!(c.false_pos, 1);
        assert_eq!(c.false_neg, 1);
        assert_eq!(c.true_pos, 0);
    }

    #[test]
    fn report_is_invariant_under_sentence_reordering() {
        let a = sentence(
            "A grey sedan",
            vec![EntityAnnotation::new(EntityClass::Color, (2, 6), (1, 2))],
        );
        let b = sentence(
            "A red truck",
            vec![EntityAnnotation::new(EntityClass::Color, (2, 5), (1, 2))],
        );
        let r1 = entity_report(&[a.clone(), b.clone()], &[a.clone(), b.clone()]).unwrap();
        let r2 = entity_report(&[b.clone(), a.clone()], &[b, a]).unwrap();
        assert_eq!(r1.micro.counts, r2.micro.counts);
    }

    #[test]
    fn mismatched_sets_are_rejected() {
        let s = sentence("A sedan", vec![]);
        assert!(entity_report(&[s.clone()], &[]).is_err());
        let other = sentence("B sedan", vec![]);
        assert!(entity_report(&[s], &[other]).is_err());
    }
}
