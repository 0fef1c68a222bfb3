//! Dataset splitting with template holdout, and corpus statistics.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::GenError;
use crate::corpus::{Dataset, EntityClass, Layer, Split};
use crate::util::stream_rng;

const SPLIT_SALT: u64 = 0x73_706c_6974;

/// Splits a dataset into disjoint train and test halves. Sentences from
/// templates or vehicle models reserved for test never land in train; the
/// test side is then topped up with randomly drawn sentences to hit the
/// requested fraction (within one sentence).
pub fn split_dataset(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), GenError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(GenError::InvalidInput(
            "test_fraction must be strictly between 0 and 1".into(),
        ));
    }
    let n = dataset.len();
    let target_test = ((n as f64) * test_fraction).round() as usize;

    let template_provenance = dataset.template_ids.len() == n;
    let model_provenance = dataset.model_keys.len() == n;
    let mut is_test = vec![false; n];
    let mut forced = 0usize;
    for i in 0..n {
        let by_template = template_provenance
            && dataset.test_templates.contains(&dataset.template_ids[i]);
        let by_model = model_provenance
            && dataset.model_keys[i]
                .iter()
                .any(|k| dataset.test_models.contains(k));
        if by_template || by_model {
            is_test[i] = true;
            forced += 1;
        }
    }

    let mut free: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
    let mut rng = stream_rng(seed, SPLIT_SALT);
    free.shuffle(&mut rng);
    for &i in free.iter().take(target_test.saturating_sub(forced)) {
        is_test[i] = true;
    }

    let mut train = Dataset::new(Vec::new(), Split::Train, seed);
    let mut test = Dataset::new(Vec::new(), Split::Test, seed);
    for side in [&mut train, &mut test] {
        side.test_templates = dataset.test_templates.clone();
        side.test_models = dataset.test_models.clone();
    }
    for i in 0..n {
        let side = if is_test[i] { &mut test } else { &mut train };
        side.sentences.push(dataset.sentences[i].clone());
        if template_provenance {
            side.template_ids.push(dataset.template_ids[i].clone());
        }
        if model_provenance {
            side.model_keys.push(dataset.model_keys[i].clone());
        }
    }
    Ok((train, test))
}

/// Corpus statistics: totals, per-class counts, coarse/fine and
/// flat/overlapped breakdowns. Flat counts the coarse layer and overlapped
/// the fine layer, since every fine annotation is the covering span of an
/// overlap and coarse annotations never overlap each other.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub tokens: usize,
    pub entities_total: usize,
    pub coarse_entities: usize,
    pub fine_entities: usize,
    pub flat_entities: usize,
    pub overlapped_entities: usize,
    pub per_class: BTreeMap<String, usize>,
}

pub fn corpus_stats(dataset: &Dataset) -> CorpusStats {
    let mut per_class: BTreeMap<String, usize> = EntityClass::all()
        .map(|c| (c.tag().to_string(), 0))
        .collect();
    let mut tokens = 0;
    let mut coarse = 0;
    let mut fine = 0;
    for s in &dataset.sentences {
        tokens += s.tokens.len();
        for a in &s.annotations {
            *per_class.get_mut(a.class.tag()).expect("all classes present") += 1;
            match a.layer {
                Layer::Coarse => coarse += 1,
                Layer::Fine => fine += 1,
            }
        }
    }
    CorpusStats {
        sentences: dataset.len(),
        tokens,
        entities_total: coarse + fine,
        coarse_entities: coarse,
        fine_entities: fine,
        flat_entities: coarse,
        overlapped_entities: fine,
        per_class,
    }
}

impl CorpusStats {
    /// Counts sorted by frequency, the rank-frequency curve.
    pub fn rank_frequency(&self) -> Vec<(String, usize)> {
        let mut entries: Vec<(String, usize)> =
            self.per_class.iter().map(|(k, v)| (k.clone(), *v)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "sentences {:>8}\ntokens    {:>8}\nentities  {:>8}  (coarse {}, fine {}, flat {}, overlapped {})\n",
            self.sentences,
            self.tokens,
            self.entities_total,
            self.coarse_entities,
            self.fine_entities,
            self.flat_entities,
            self.overlapped_entities,
        ));
        out.push_str("class                        count\n");
        for (tag, count) in self.rank_frequency() {
            out.push_str(&format!("{tag:<28} {count:>6}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::super::generate::{generate_corpus, GenConfig};
    use super::super::{AttributeCatalog, Template};
    use super::*;

    fn small_corpus(n: usize, seed: u64) -> Dataset {
        let config = GenConfig {
            n_sentences: n,
            seed,
            ..GenConfig::default()
        };
        generate_corpus(
            &config,
            &AttributeCatalog::default_catalog(),
            &Template::default_pool(),
        )
        .unwrap()
    }

    #[test]
    fn half_split_of_100_is_50_50() {
        let ds = small_corpus(100, 9);
        let (train, test) = split_dataset(&ds, 0.5, 9).unwrap();
        assert_eq!(train.len(), 50);
        assert_eq!(test.len(), 50);
        assert_eq!(train.split_name, Split::Train);
        assert_eq!(test.split_name, Split::Test);
    }

    #[test]
    fn reserved_templates_and_models_never_leak_into_train() {
        let ds = small_corpus(400, 10);
        assert!(!ds.test_templates.is_empty());
        assert!(!ds.test_models.is_empty());
        let (train, test) = split_dataset(&ds, 0.5, 10).unwrap();
        for id in &train.template_ids {
            assert!(!ds.test_templates.contains(id), "template {id} leaked");
        }
        for keys in &train.model_keys {
            for key in keys {
                assert!(!ds.test_models.contains(key), "model {key} leaked");
            }
        }
        assert_eq!(train.len() + test.len(), ds.len());
    }

    #[test]
    fn invalid_fraction_is_rejected() {
        let ds = small_corpus(10, 1);
        assert!(split_dataset(&ds, 0.0, 1).is_err());
        assert!(split_dataset(&ds, 1.0, 1).is_err());
    }

    #[test]
    fn stats_of_empty_dataset_are_all_zero() {
        let stats = corpus_stats(&Dataset::new(Vec::new(), Split::Train, 0));
        assert_eq!(stats.sentences, 0);
        assert_eq!(stats.tokens, 0);
        assert_eq!(stats.entities_total, 0);
        assert!(stats.per_class.values().all(|&v| v == 0));
        assert_eq!(stats.per_class.len(), 21);
    }

    #[test]
    fn overlapped_count_equals_fine_annotation_count() {
        let ds = small_corpus(200, 2);
        let stats = corpus_stats(&ds);
        assert_eq!(stats.overlapped_entities, stats.fine_entities);
        assert_eq!(stats.flat_entities, stats.coarse_entities);
        assert_eq!(
            stats.entities_total,
            stats.coarse_entities + stats.fine_entities
        );
    }
}
