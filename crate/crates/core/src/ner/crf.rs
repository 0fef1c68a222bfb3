//! The linear-chain CRF model and its exact inference routines.
//!
//! Scores are log-linear: emission weights fire per (feature, label) and
//! transition weights per adjacent label pair, with dedicated BOS and EOS
//! rows. The partition function and marginals come from the forward-
//! backward recursion in log space; decoding is Viterbi with ties broken
//! towards the lowest label index.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::features::FeatureExtractor;
use super::NerError;
use crate::corpus::{EntityClass, Layer, Sentence, COARSE_CLASSES, FINE_CLASSES};
use crate::scalar::Scalar;

/// Feature name dictionary; ids are the insertion order, which keeps model
/// dumps byte-deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub(crate) struct FeatureDict {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl FeatureDict {
    pub(crate) fn new() -> FeatureDict {
        FeatureDict {
            names: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub(crate) fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub(crate) fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub(crate) fn len(&self) -> usize {
        self.names.len()
    }
}

impl From<Vec<String>> for FeatureDict {
    fn from(names: Vec<String>) -> Self {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        FeatureDict { names, index }
    }
}

impl From<FeatureDict> for Vec<String> {
    fn from(dict: FeatureDict) -> Self {
        dict.names
    }
}

/// BIO label set for one layer: `O` first, then `B-`/`I-` per class.
pub(crate) fn layer_labels(layer: Layer) -> Vec<String> {
    let classes: &[EntityClass] = match layer {
        Layer::Coarse => &COARSE_CLASSES,
        Layer::Fine => &FINE_CLASSES,
    };
    let mut labels = vec!["O".to_string()];
    for class in classes {
        labels.push(format!("B-{}", class.tag()));
        labels.push(format!("I-{}", class.tag()));
    }
    labels
}

const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct CrfModel<S: Scalar> {
    version: u32,
    pub layer: Layer,
    labels: Vec<String>,
    pub(crate) features: FeatureDict,
    /// `[feature id x label]` emission weights, label-major per feature.
    pub(crate) emission: Vec<S>,
    /// `[from x to]` transition weights.
    pub(crate) transition: Vec<S>,
    pub(crate) bos: Vec<S>,
    pub(crate) eos: Vec<S>,
    pub(crate) extractor: FeatureExtractor,
}

/// Forward-backward output: log partition plus normalized marginals.
pub struct FbResult<S> {
    pub log_partition: S,
    /// `[position][label]` marginal probabilities.
    pub marginals: Vec<Vec<S>>,
    /// `[position][from * n_labels + to]` pairwise marginals for the
    /// transition between `position` and `position + 1`.
    pub pairwise: Vec<Vec<S>>,
}

fn logsumexp<S: Scalar>(xs: &[S]) -> S {
    let mut m = S::neg_infinity();
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if m == S::neg_infinity() {
        return m;
    }
    let mut sum = S::zero();
    for &x in xs {
        sum += (x - m).exp();
    }
    m + sum.ln()
}

impl<S: Scalar> CrfModel<S> {
    /// Fresh zero-weight model over the given layer's label set.
    pub(crate) fn new(layer: Layer, features: FeatureDict, extractor: FeatureExtractor) -> Self {
        let labels = layer_labels(layer);
        let n = labels.len();
        let n_feats = features.len();
        CrfModel {
            version: MODEL_VERSION,
            layer,
            labels,
            features,
            emission: vec![S::zero(); n_feats * n],
            transition: vec![S::zero(); n * n],
            bos: vec![S::zero(); n],
            eos: vec![S::zero(); n],
            extractor,
        }
    }

    /// Builds a model from explicit parts; intended for oracle tests that
    /// need arbitrary weight settings.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        layer: Layer,
        labels: Vec<String>,
        feature_names: Vec<String>,
        emission: Vec<S>,
        transition: Vec<S>,
        bos: Vec<S>,
        eos: Vec<S>,
        extractor: FeatureExtractor,
    ) -> Result<Self, NerError> {
        let n = labels.len();
        if labels.first().map(String::as_str) != Some("O") {
            return Err(NerError::InvalidInput("labels[0] must be \"O\"".into()));
        }
        if emission.len() != feature_names.len() * n
            || transition.len() != n * n
            || bos.len() != n
            || eos.len() != n
        {
            return Err(NerError::InvalidInput("weight shapes do not match".into()));
        }
        if emission.iter().chain(&transition).chain(&bos).chain(&eos).any(|w| !w.is_finite()) {
            return Err(NerError::InvalidInput("weights must be finite".into()));
        }
        Ok(CrfModel {
            version: MODEL_VERSION,
            layer,
            labels,
            features: FeatureDict::from(feature_names),
            emission,
            transition,
            bos,
            eos,
            extractor,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Feature ids per position; unseen features are dropped.
    pub(crate) fn feature_ids(&self, sentence: &Sentence) -> Vec<Vec<u32>> {
        self.extractor
            .sentence_features(sentence)
            .into_iter()
            .map(|feats| feats.iter().filter_map(|f| self.features.get(f)).collect())
            .collect()
    }

    /// Emission score matrix `[position][label]` from interned feature ids.
    pub(crate) fn emissions_from_ids(&self, ids: &[Vec<u32>]) -> Vec<Vec<S>> {
        let n = self.n_labels();
        ids.iter()
            .map(|feats| {
                let mut row = vec![S::zero(); n];
                for &f in feats {
                    let base = f as usize * n;
                    for (y, r) in row.iter_mut().enumerate() {
                        *r += self.emission[base + y];
                    }
                }
                row
            })
            .collect()
    }

    pub(crate) fn emissions(&self, sentence: &Sentence) -> Vec<Vec<S>> {
        self.emissions_from_ids(&self.feature_ids(sentence))
    }

    /// Unnormalized log-potential of a labeling.
    pub fn sequence_score(&self, sentence: &Sentence, labels: &[&str]) -> Result<S, NerError> {
        if labels.len() != sentence.tokens.len() {
            return Err(NerError::InvalidInput(format!(
                "expected {} labels, got {}",
                sentence.tokens.len(),
                labels.len()
            )));
        }
        let idx: Vec<usize> = labels
            .iter()
            .map(|l| {
                self.label_index(l)
                    .ok_or_else(|| NerError::InvalidLabel((*l).to_string()))
            })
            .collect::<Result<_, _>>()?;
        let emissions = self.emissions(sentence);
        Ok(self.score_indexed(&emissions, &idx))
    }

    pub(crate) fn score_indexed(&self, emissions: &[Vec<S>], labels: &[usize]) -> S {
        let n = self.n_labels();
        if labels.is_empty() {
            return S::zero();
        }
        let mut score = self.bos[labels[0]];
        for (i, &y) in labels.iter().enumerate() {
            score += emissions[i][y];
            if i + 1 < labels.len() {
                score += self.transition[y * n + labels[i + 1]];
            }
        }
        score + self.eos[labels[labels.len() - 1]]
    }

    /// Log partition and normalized marginals, log-sum-exp stabilized.
    pub fn forward_backward(&self, sentence: &Sentence) -> FbResult<S> {
        let emissions = self.emissions(sentence);
        self.forward_backward_emissions(&emissions)
    }

    pub(crate) fn forward_backward_emissions(&self, emissions: &[Vec<S>]) -> FbResult<S> {
        let n_pos = emissions.len();
        let n = self.n_labels();
        if n_pos == 0 {
            return FbResult {
                log_partition: S::zero(),
                marginals: Vec::new(),
                pairwise: Vec::new(),
            };
        }

        let mut alpha = vec![vec![S::zero(); n]; n_pos];
        for y in 0..n {
            alpha[0][y] = self.bos[y] + emissions[0][y];
        }
        let mut scratch = vec![S::zero(); n];
        for i in 1..n_pos {
            for y in 0..n {
                for (prev, slot) in scratch.iter_mut().enumerate() {
                    *slot = alpha[i - 1][prev] + self.transition[prev * n + y];
                }
                alpha[i][y] = logsumexp(&scratch) + emissions[i][y];
            }
        }
        for y in 0..n {
            scratch[y] = alpha[n_pos - 1][y] + self.eos[y];
        }
        let log_partition = logsumexp(&scratch);

        let mut beta = vec![vec![S::zero(); n]; n_pos];
        for y in 0..n {
            beta[n_pos - 1][y] = self.eos[y];
        }
        for i in (0..n_pos - 1).rev() {
            for y in 0..n {
                for (next, slot) in scratch.iter_mut().enumerate() {
                    *slot = self.transition[y * n + next] + emissions[i + 1][next] + beta[i + 1][next];
                }
                beta[i][y] = logsumexp(&scratch);
            }
        }

        let mut marginals = vec![vec![S::zero(); n]; n_pos];
        for i in 0..n_pos {
            for y in 0..n {
                marginals[i][y] = (alpha[i][y] + beta[i][y] - log_partition).exp();
            }
        }
        let mut pairwise = vec![vec![S::zero(); n * n]; n_pos.saturating_sub(1)];
        for i in 0..n_pos.saturating_sub(1) {
            for y in 0..n {
                for next in 0..n {
                    pairwise[i][y * n + next] = (alpha[i][y]
                        + self.transition[y * n + next]
                        + emissions[i + 1][next]
                        + beta[i + 1][next]
                        - log_partition)
                        .exp();
                }
            }
        }

        FbResult {
            log_partition,
            marginals,
            pairwise,
        }
    }

    /// Maximum-score labeling; ties break towards the lowest label index,
    /// so the all-zero model decodes everything as `O`.
    pub fn viterbi_decode(&self, sentence: &Sentence) -> Vec<usize> {
        let emissions = self.emissions(sentence);
        self.viterbi_emissions(&emissions)
    }

    pub(crate) fn viterbi_emissions(&self, emissions: &[Vec<S>]) -> Vec<usize> {
        let n_pos = emissions.len();
        let n = self.n_labels();
        if n_pos == 0 {
            return Vec::new();
        }
        let mut delta = vec![vec![S::zero(); n]; n_pos];
        let mut back = vec![vec![0usize; n]; n_pos];
        for y in 0..n {
            delta[0][y] = self.bos[y] + emissions[0][y];
        }
        for i in 1..n_pos {
            for y in 0..n {
                let mut best = S::neg_infinity();
                let mut arg = 0;
                for prev in 0..n {
                    let cand = delta[i - 1][prev] + self.transition[prev * n + y];
                    if cand > best {
                        best = cand;
                        arg = prev;
                    }
                }
                delta[i][y] = best + emissions[i][y];
                back[i][y] = arg;
            }
        }
        let mut best = S::neg_infinity();
        let mut last = 0;
        for y in 0..n {
            let cand = delta[n_pos - 1][y] + self.eos[y];
            if cand > best {
                best = cand;
                last = y;
            }
        }
        let mut path = vec![0usize; n_pos];
        path[n_pos - 1] = last;
        for i in (1..n_pos).rev() {
            path[i - 1] = back[i][path[i]];
        }
        path
    }

    /// Viterbi labels as tag strings.
    pub fn decode_tags(&self, sentence: &Sentence) -> Vec<String> {
        self.viterbi_decode(sentence)
            .into_iter()
            .map(|y| self.labels[y].clone())
            .collect()
    }

    /// Versioned JSON dump; reloading reproduces identical decodes.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("model serialization cannot fail")
    }

    pub fn from_json_str(text: &str) -> Result<Self, NerError> {
        let model: CrfModel<S> =
            serde_json::from_str(text).map_err(|e| NerError::Model(e.to_string()))?;
        if model.version != MODEL_VERSION {
            return Err(NerError::Model(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                model.version
            )));
        }
        if model.labels.first().map(String::as_str) != Some("O") {
            return Err(NerError::Model("label set must contain leading \"O\"".into()));
        }
        Ok(model)
    }
}
