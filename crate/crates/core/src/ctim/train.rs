//! CTIM training: summed BCE over compressed cosine similarities,
//! optimized with AdamW under a step learning-rate schedule.
//!
//! Gradients accumulate over a fixed number of sub-batches per step, each
//! with its own batch-norm statistics; the reduction order is fixed, so
//! results do not depend on the worker thread count.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{CtimModel, VtiSample};
use super::CtimError;
use crate::metrics::ConfusionCounts;
use crate::scalar::{s, Scalar};
use crate::tensor::graph::BnBatchStats;
use crate::tensor::kernels::BnMode;
use crate::tensor::{adamw_step, AdamWConfig, AdamWState, Graph, StepLr, Tensor};
use crate::util::stream_rng;

/// Source of training samples; images may be stored or rendered on demand.
pub trait SampleSource<S: Scalar>: Sync {
    fn len(&self) -> usize;
    fn get(&self, idx: usize) -> VtiSample<S>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<S: Scalar> SampleSource<S> for [VtiSample<S>] {
    fn len(&self) -> usize {
        <[VtiSample<S>]>::len(self)
    }

    fn get(&self, idx: usize) -> VtiSample<S> {
        self[idx].clone()
    }
}

impl<S: Scalar> SampleSource<S> for Vec<VtiSample<S>> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, idx: usize) -> VtiSample<S> {
        self[idx].clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtimTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Fixed sub-batch count per step for deterministic parallel gradients.
    pub grad_chunks: usize,
    pub sched_gamma: f64,
    pub sched_period: usize,
}

impl Default for CtimTrainConfig {
    fn default() -> Self {
        CtimTrainConfig {
            epochs: 50,
            batch: 64,
            lr: 1e-3,
            weight_decay: 0.0,
            seed: 0,
            grad_chunks: 8,
            sched_gamma: 0.5,
            sched_period: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CtimEpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-sample training loss.
    pub train_loss: f64,
    /// Validation accuracy at the consistency threshold.
    pub val_accuracy: Option<f64>,
}

struct ChunkResult<S: Scalar> {
    grads: Vec<Tensor<S>>,
    stats: Vec<BnBatchStats<S>>,
    loss: f64,
    count: usize,
}

fn materialize<S: Scalar, D: SampleSource<S> + ?Sized>(
    data: &D,
    idxs: &[usize],
    image_numel: usize,
) -> (Tensor<S>, Vec<crate::ner::TripleKeyword>, Tensor<S>) {
    let n = idxs.len();
    let mut pixels = Vec::with_capacity(n * image_numel);
    let mut triples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut shape = vec![n];
    for &i in idxs {
        let sample = data.get(i);
        if shape.len() == 1 {
            shape.extend_from_slice(sample.image.shape());
        }
        pixels.extend_from_slice(sample.image.data());
        triples.push(sample.triple);
        labels.push(s::<S>(sample.label as f64));
    }
    let images = Tensor::from_vec(&shape, pixels).expect("consistent sample image shapes");
    let labels = Tensor::from_vec(&[n], labels).expect("label count");
    (images, triples, labels)
}

fn chunk_pass<S: Scalar, D: SampleSource<S> + ?Sized>(
    model: &CtimModel<S>,
    data: &D,
    idxs: &[usize],
    image_numel: usize,
) -> Result<ChunkResult<S>, CtimError> {
    let (images, triples, labels) = materialize(data, idxs, image_numel);
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let mut stats = Vec::new();
    let raw = model.raw_similarity_graph(&mut g, &bound, images, &triples, BnMode::Train, &mut stats)?;
    let loss = g.bce_compress_loss(raw, labels)?;
    let loss_value = g.value(loss).item().to_f64();
    g.backward(loss)?;
    let grads = bound.ordered().iter().map(|&v| g.grad_or_zeros(v)).collect();
    Ok(ChunkResult {
        grads,
        stats,
        loss: loss_value,
        count: idxs.len(),
    })
}

/// Trains the model on `train`, reporting per-epoch loss and validation
/// accuracy at the consistency threshold. Deterministic for a fixed config.
pub fn train_ctim<S: Scalar, D: SampleSource<S> + ?Sized>(
    mut model: CtimModel<S>,
    train: &D,
    val: &D,
    config: &CtimTrainConfig,
) -> Result<(CtimModel<S>, Vec<CtimEpochStats>), CtimError> {
    if train.is_empty() {
        return Err(CtimError::InvalidInput("empty training set".into()));
    }
    if config.batch == 0 || config.epochs == 0 || config.grad_chunks == 0 {
        return Err(CtimError::InvalidInput(
            "batch, epochs and grad_chunks must be positive".into(),
        ));
    }
    let image_numel =
        model.config.image_channels * model.config.image_hw * model.config.image_hw;
    let sched = StepLr {
        initial_lr: config.lr,
        gamma: config.sched_gamma,
        period: config.sched_period,
    };
    let mut opt_state = AdamWState::new(&model.params.tensors());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = sched.lr_at(epoch);
        let opt_config = AdamWConfig {
            lr,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        };
        let mut rng = stream_rng(config.seed, epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;

        for batch in order.chunks(config.batch) {
            let chunk_size = batch.len().div_ceil(config.grad_chunks);
            let chunks: Vec<&[usize]> = batch.chunks(chunk_size).collect();
            let results: Vec<ChunkResult<S>> = chunks
                .par_iter()
                .map(|idxs| chunk_pass(&model, train, idxs, image_numel))
                .collect::<Result<_, _>>()?;

            // Fixed-order reduction: sum gradients, weight batch-norm
            // statistics by chunk size.
            let mut grads = results[0].grads.clone();
            for r in &results[1..] {
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += *b;
                    }
                }
            }
            let total = results.iter().map(|r| r.count).sum::<usize>() as f64;
            epoch_loss += results.iter().map(|r| r.loss).sum::<f64>();

            let n_bn = results[0].stats.len();
            let mut running = model.running.ordered_mut();
            debug_assert_eq!(running.len(), n_bn);
            for (bi, slot) in running.iter_mut().enumerate() {
                let channels = slot.mean.len();
                let mut mean = vec![S::zero(); channels];
                let mut var = vec![S::zero(); channels];
                for r in &results {
                    let w = s::<S>(r.count as f64 / total);
                    for c in 0..channels {
                        mean[c] += r.stats[bi].mean[c] * w;
                        var[c] += r.stats[bi].var[c] * w;
                    }
                }
                slot.update(&mean, &var, model.config.bn_momentum);
            }

            let mut params = model.params.tensors_mut();
            let grad_refs: Vec<&Tensor<S>> = grads.iter().collect();
            adamw_step(&mut params, &grad_refs, &mut opt_state, &opt_config);
        }

        let val_accuracy = if val.is_empty() {
            None
        } else {
            Some(eval_ctim(&model, val, config.batch)?.accuracy)
        };
        history.push(CtimEpochStats {
            epoch,
            lr,
            train_loss: epoch_loss / train.len() as f64,
            val_accuracy,
        });
    }

    Ok((model, history))
}

#[derive(Debug, Clone, Serialize)]
pub struct CtimEval {
    pub accuracy: f64,
    pub counts: ConfusionCounts,
}

/// Accuracy of the consistency decision at the model threshold.
pub fn eval_ctim<S: Scalar, D: SampleSource<S> + ?Sized>(
    model: &CtimModel<S>,
    data: &D,
    batch: usize,
) -> Result<CtimEval, CtimError> {
    if data.is_empty() {
        return Err(CtimError::InvalidInput("empty evaluation set".into()));
    }
    let image_numel =
        model.config.image_channels * model.config.image_hw * model.config.image_hw;
    let idxs: Vec<usize> = (0..data.len()).collect();
    let counts = idxs
        .par_chunks(batch.clamp(1, 16))
        .map(|chunk| -> Result<ConfusionCounts, CtimError> {
            let (images, triples, labels) = materialize(data, chunk, image_numel);
            let sims = model.similarity_batch(&images, &triples)?;
            let mut c = ConfusionCounts::default();
            for (sim, &label) in sims.iter().zip(labels.data()) {
                let predicted = model.is_consistent(*sim);
                let actual = label.to_f64() >= 0.5;
                match (predicted, actual) {
                    (true, true) => c.true_pos += 1,
                    (true, false) => c.false_pos += 1,
                    (false, true) => c.false_neg += 1,
                    (false, false) => c.true_neg += 1,
                }
            }
            Ok(c)
        })
        .try_reduce(ConfusionCounts::default, |a, b| {
            Ok(ConfusionCounts {
                true_pos: a.true_pos + b.true_pos,
                false_pos: a.false_pos + b.false_pos,
                false_neg: a.false_neg + b.false_neg,
                true_neg: a.true_neg + b.true_neg,
            })
        })?;
    let accuracy = crate::metrics::accuracy(&counts)
        .map_err(|e| CtimError::InvalidInput(e.to_string()))?;
    Ok(CtimEval { accuracy, counts })
}
