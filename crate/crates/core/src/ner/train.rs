//! Maximum-likelihood CRF training by mini-batch gradient descent on the
//! negative log-likelihood with L2 regularization. The gradient is the
//! classic expected-minus-empirical feature counts plus `l2 * w`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::crf::{CrfModel, FeatureDict};
use super::features::FeatureExtractor;
use super::predict::layer_prediction;
use super::NerError;
use crate::corpus::{Layer, Sentence};
use crate::generator::AttributeCatalog;
use crate::metrics::entity_report;
use crate::scalar::{s, Scalar};
use crate::util::stream_rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrfTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for CrfTrainConfig {
    fn default() -> Self {
        CrfTrainConfig {
            epochs: 20,
            lr: 0.4,
            l2: 1e-6,
            batch: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CrfEpochStats {
    pub epoch: usize,
    /// Mean per-sentence NLL over the training pass.
    pub train_nll: f64,
    pub dev_nll: Option<f64>,
    /// Span-level micro F1 on the dev set for this model's layer.
    pub dev_f1: Option<f64>,
}

/// Gold BIO label indices for one layer.
fn gold_labels<S: Scalar>(model: &CrfModel<S>, sentence: &Sentence, layer: Layer) -> Vec<usize> {
    let mut tags = vec![0usize; sentence.tokens.len()];
    for ann in sentence.annotations_in_layer(layer) {
        for t in ann.token_span.0..ann.token_span.1.min(tags.len()) {
            let prefix = if t == ann.token_span.0 { "B" } else { "I" };
            let label = format!("{prefix}-{}", ann.class.tag());
            tags[t] = model.label_index(&label).unwrap_or(0);
        }
    }
    tags
}

struct Prepared {
    feature_ids: Vec<Vec<u32>>,
    gold: Vec<usize>,
}

/// Trains one BIO layer. Deterministic for a fixed config; reports the dev
/// NLL and span F1 after every epoch.
pub fn train_crf<S: Scalar>(
    train: &[Sentence],
    dev: &[Sentence],
    layer: Layer,
    catalog: &AttributeCatalog,
    config: &CrfTrainConfig,
) -> Result<(CrfModel<S>, Vec<CrfEpochStats>), NerError> {
    if train.is_empty() {
        return Err(NerError::InvalidInput("empty training set".into()));
    }
    if config.batch == 0 || config.epochs == 0 {
        return Err(NerError::InvalidInput("batch and epochs must be positive".into()));
    }

    let extractor = FeatureExtractor::new(catalog);
    let mut dict = FeatureDict::new();
    for sentence in train {
        for feats in extractor.sentence_features(sentence) {
            for f in feats {
                dict.intern(&f);
            }
        }
    }
    let mut model: CrfModel<S> = CrfModel::new(layer, dict, extractor);
    let n = model.n_labels();

    let prepared: Vec<Prepared> = train
        .iter()
        .map(|sentence| Prepared {
            feature_ids: model.feature_ids(sentence),
            gold: gold_labels(&model, sentence, layer),
        })
        .collect();

    let mut grad_emission = vec![S::zero(); model.emission.len()];
    let mut grad_transition = vec![S::zero(); n * n];
    let mut grad_bos = vec![S::zero(); n];
    let mut grad_eos = vec![S::zero(); n];

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let lr = s::<S>(config.lr);
    let l2 = s::<S>(config.l2);

    for epoch in 0..config.epochs {
        let mut rng = stream_rng(config.seed, epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_nll = 0.0;

        for batch in order.chunks(config.batch) {
            grad_emission.fill(S::zero());
            grad_transition.fill(S::zero());
            grad_bos.fill(S::zero());
            grad_eos.fill(S::zero());

            for &idx in batch {
                let item = &prepared[idx];
                if item.gold.is_empty() {
                    continue;
                }
                let emissions = model.emissions_from_ids(&item.feature_ids);
                let fb = model.forward_backward_emissions(&emissions);
                let gold_score = model.score_indexed(&emissions, &item.gold);
                epoch_nll += (fb.log_partition - gold_score).to_f64();

                let n_pos = item.gold.len();
                for i in 0..n_pos {
                    for &f in &item.feature_ids[i] {
                        let base = f as usize * n;
                        for y in 0..n {
                            grad_emission[base + y] += fb.marginals[i][y];
                        }
                        grad_emission[base + item.gold[i]] -= S::one();
                    }
                }
                for y in 0..n {
                    grad_bos[y] += fb.marginals[0][y];
                    grad_eos[y] += fb.marginals[n_pos - 1][y];
                }
                grad_bos[item.gold[0]] -= S::one();
                grad_eos[item.gold[n_pos - 1]] -= S::one();
                for i in 0..n_pos - 1 {
                    for yy in 0..n * n {
                        grad_transition[yy] += fb.pairwise[i][yy];
                    }
                    grad_transition[item.gold[i] * n + item.gold[i + 1]] -= S::one();
                }
            }

            let scale = lr / s::<S>(batch.len() as f64);
            let update = |w: &mut [S], g: &[S]| {
                for (wi, gi) in w.iter_mut().zip(g) {
                    let step = *gi * scale + *wi * l2 * lr;
                    *wi -= step;
                }
            };
            update(&mut model.emission, &grad_emission);
            update(&mut model.transition, &grad_transition);
            update(&mut model.bos, &grad_bos);
            update(&mut model.eos, &grad_eos);
        }

        let (dev_nll, dev_f1) = if dev.is_empty() {
            (None, None)
        } else {
            let mut nll = 0.0;
            for sentence in dev {
                let ids = model.feature_ids(sentence);
                let emissions = model.emissions_from_ids(&ids);
                let fb = model.forward_backward_emissions(&emissions);
                let gold = gold_labels(&model, sentence, layer);
                nll += (fb.log_partition - model.score_indexed(&emissions, &gold)).to_f64();
            }
            let gold_layer: Vec<Sentence> = dev
                .iter()
                .map(|sent| {
                    let mut copy = sent.clone();
                    copy.annotations.retain(|a| a.layer == layer);
                    copy.relation_groups.clear();
                    copy
                })
                .collect();
            let predicted: Vec<Sentence> =
                dev.iter().map(|sent| layer_prediction(&model, sent)).collect();
            let report = entity_report(&gold_layer, &predicted)
                .map_err(|e| NerError::InvalidInput(e.to_string()))?;
            (
                Some(nll / dev.len() as f64),
                Some(report.micro.f1.value),
            )
        };

        history.push(CrfEpochStats {
            epoch,
            train_nll: epoch_nll / train.len() as f64,
            dev_nll,
            dev_f1,
        });
    }

    Ok((model, history))
}
