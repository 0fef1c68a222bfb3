//! The CTIM model: parameters, the two encoder branches as graph builders,
//! and checkpointing.

use serde::{Deserialize, Serialize};

use super::{compress, CtimConfig, CtimError};
use crate::corpus::FINE_CLASSES;
use crate::generator::AttributeCatalog;
use crate::ner::TripleKeyword;
use crate::scalar::Scalar;
use crate::tensor::graph::BnBatchStats;
use crate::tensor::kernels::{BnMode, RunningStats};
use crate::tensor::{Graph, Tensor, Var};
use crate::util::stream_rng;

/// One text-image training sample. The label is 1 exactly when every
/// non-missing triple field matches the rendered image attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct VtiSample<S: Scalar> {
    pub triple: TripleKeyword,
    pub image: Tensor<S>,
    pub label: u8,
}

/// Closed attribute vocabulary: canonical type/color/orientation surfaces
/// plus the learned `[MISSING]` and `[UNK]` rows. Variants map to their
/// canonical row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeVocab {
    words: Vec<String>,
    synonyms: Vec<(String, usize)>,
    missing_idx: usize,
    unk_idx: usize,
}

impl AttributeVocab {
    pub fn from_catalog(catalog: &AttributeCatalog) -> AttributeVocab {
        let mut words = Vec::new();
        let mut synonyms = Vec::new();
        for class in FINE_CLASSES {
            words.push(class.type_surface().expect("fine class"));
        }
        for color in &catalog.colors {
            let idx = words.len();
            words.push(color.name.to_lowercase());
            for v in &color.variants {
                synonyms.push((v.to_lowercase(), idx));
            }
        }
        for orientation in &catalog.orientations {
            let idx = words.len();
            words.push(orientation.name.to_lowercase());
            for v in &orientation.variants {
                synonyms.push((v.to_lowercase(), idx));
            }
        }
        let missing_idx = words.len();
        words.push("[MISSING]".into());
        let unk_idx = words.len();
        words.push("[UNK]".into());
        AttributeVocab {
            words,
            synonyms,
            missing_idx,
            unk_idx,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn missing_idx(&self) -> usize {
        self.missing_idx
    }

    pub fn unk_idx(&self) -> usize {
        self.unk_idx
    }

    /// Canonical row for a surface: exact word, then catalog synonym, then
    /// `[UNK]`.
    pub fn lookup(&self, surface: &str) -> usize {
        let key = surface.trim().to_lowercase();
        if let Some(i) = self.words.iter().position(|w| *w == key) {
            return i;
        }
        self.synonyms
            .iter()
            .find(|(v, _)| *v == key)
            .map(|(_, i)| *i)
            .unwrap_or(self.unk_idx)
    }

    /// Embedding rows for the three triple slots; absent fields use the
    /// `[MISSING]` row.
    pub fn rows_for(&self, triple: &TripleKeyword) -> [usize; 3] {
        let slot = |field: &Option<String>| {
            field
                .as_deref()
                .map(|sf| self.lookup(sf))
                .unwrap_or(self.missing_idx)
        };
        [
            slot(&triple.vtype),
            slot(&triple.color),
            slot(&triple.orientation),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub(crate) struct BnParam<S> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
}

impl<S: Scalar> BnParam<S> {
    fn new(channels: usize) -> BnParam<S> {
        BnParam {
            gamma: Tensor::full(&[channels], S::one()),
            beta: Tensor::zeros(&[channels]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub(crate) struct UnitParams<S> {
    pub b1_depth: Tensor<S>,
    pub b1_point: Tensor<S>,
    pub bn1: BnParam<S>,
    pub b2_point: Tensor<S>,
    pub bn2: BnParam<S>,
    pub bn3: BnParam<S>,
    pub down_depth: Tensor<S>,
    pub down_point: Tensor<S>,
    pub bn4: BnParam<S>,
    pub res_depth: Tensor<S>,
    pub res_point: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub(crate) struct GroupParams<S> {
    pub w0: Tensor<S>,
    pub b0: Tensor<S>,
    pub follow: Vec<(Tensor<S>, Tensor<S>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub(crate) struct CtimParams<S> {
    pub stem_w: Tensor<S>,
    pub stem_bn: BnParam<S>,
    pub units: Vec<UnitParams<S>>,
    pub img_head_w: Tensor<S>,
    pub img_head_b: Tensor<S>,
    pub embed: Tensor<S>,
    pub groups: Vec<GroupParams<S>>,
    pub txt_head_w: Tensor<S>,
    pub txt_head_b: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub(crate) struct UnitRunning<S> {
    pub bn1: RunningStats<S>,
    pub bn2: RunningStats<S>,
    pub bn3: RunningStats<S>,
    pub bn4: RunningStats<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub(crate) struct RunningState<S> {
    pub stem: RunningStats<S>,
    pub units: Vec<UnitRunning<S>>,
}

impl<S: Scalar> RunningState<S> {
    /// Running-stat slots in the order the forward pass emits batch stats:
    /// stem first, then bn1..bn4 per unit.
    pub(crate) fn ordered_mut(&mut self) -> Vec<&mut RunningStats<S>> {
        let mut out = vec![&mut self.stem];
        for u in &mut self.units {
            out.push(&mut u.bn1);
            out.push(&mut u.bn2);
            out.push(&mut u.bn3);
            out.push(&mut u.bn4);
        }
        out
    }
}

impl<S: Scalar> CtimParams<S> {
    /// Every trainable tensor in a fixed order. `bind` and
    /// `BoundVars::ordered` must list the same fields in the same order.
    pub fn tensors(&self) -> Vec<&Tensor<S>> {
        let mut out: Vec<&Tensor<S>> = vec![&self.stem_w, &self.stem_bn.gamma, &self.stem_bn.beta];
        for u in &self.units {
            out.extend([
                &u.b1_depth,
                &u.b1_point,
                &u.bn1.gamma,
                &u.bn1.beta,
                &u.b2_point,
                &u.bn2.gamma,
                &u.bn2.beta,
                &u.bn3.gamma,
                &u.bn3.beta,
                &u.down_depth,
                &u.down_point,
                &u.bn4.gamma,
                &u.bn4.beta,
                &u.res_depth,
                &u.res_point,
            ]);
        }
        out.extend([&self.img_head_w, &self.img_head_b, &self.embed]);
        for g in &self.groups {
            out.push(&g.w0);
            out.push(&g.b0);
            for (w, b) in &g.follow {
                out.push(w);
                out.push(b);
            }
        }
        out.extend([&self.txt_head_w, &self.txt_head_b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out: Vec<&mut Tensor<S>> =
            vec![&mut self.stem_w, &mut self.stem_bn.gamma, &mut self.stem_bn.beta];
        for u in &mut self.units {
            out.extend([
                &mut u.b1_depth,
                &mut u.b1_point,
                &mut u.bn1.gamma,
                &mut u.bn1.beta,
                &mut u.b2_point,
                &mut u.bn2.gamma,
                &mut u.bn2.beta,
                &mut u.bn3.gamma,
                &mut u.bn3.beta,
                &mut u.down_depth,
                &mut u.down_point,
                &mut u.bn4.gamma,
                &mut u.bn4.beta,
                &mut u.res_depth,
                &mut u.res_point,
            ]);
        }
        out.extend([&mut self.img_head_w, &mut self.img_head_b, &mut self.embed]);
        for g in &mut self.groups {
            out.push(&mut g.w0);
            out.push(&mut g.b0);
            for (w, b) in &mut g.follow {
                out.push(w);
                out.push(b);
            }
        }
        out.extend([&mut self.txt_head_w, &mut self.txt_head_b]);
        out
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }
}

pub(crate) struct BoundUnit {
    b1_depth: Var,
    b1_point: Var,
    bn1: (Var, Var),
    b2_point: Var,
    bn2: (Var, Var),
    bn3: (Var, Var),
    down_depth: Var,
    down_point: Var,
    bn4: (Var, Var),
    res_depth: Var,
    res_point: Var,
}

pub(crate) struct BoundGroup {
    w0: Var,
    b0: Var,
    follow: Vec<(Var, Var)>,
}

pub(crate) struct BoundVars {
    stem_w: Var,
    stem_bn: (Var, Var),
    units: Vec<BoundUnit>,
    img_head: (Var, Var),
    embed: Var,
    groups: Vec<BoundGroup>,
    txt_head: (Var, Var),
}

impl BoundVars {
    /// Same order as [`CtimParams::tensors`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = vec![self.stem_w, self.stem_bn.0, self.stem_bn.1];
        for u in &self.units {
            out.extend([
                u.b1_depth,
                u.b1_point,
                u.bn1.0,
                u.bn1.1,
                u.b2_point,
                u.bn2.0,
                u.bn2.1,
                u.bn3.0,
                u.bn3.1,
                u.down_depth,
                u.down_point,
                u.bn4.0,
                u.bn4.1,
                u.res_depth,
                u.res_point,
            ]);
        }
        out.extend([self.img_head.0, self.img_head.1, self.embed]);
        for g in &self.groups {
            out.push(g.w0);
            out.push(g.b0);
            for (w, b) in &g.follow {
                out.push(*w);
                out.push(*b);
            }
        }
        out.extend([self.txt_head.0, self.txt_head.1]);
        out
    }
}

const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct CtimModel<S: Scalar> {
    version: u32,
    scalar: String,
    pub config: CtimConfig,
    pub vocab: AttributeVocab,
    pub(crate) params: CtimParams<S>,
    pub(crate) running: RunningState<S>,
}

impl<S: Scalar> CtimModel<S> {
    /// Fresh model with deterministic initialization.
    pub fn new(config: CtimConfig, vocab: AttributeVocab, seed: u64) -> Result<CtimModel<S>, CtimError> {
        config.validate()?;
        let mut stream = 0u64;
        let mut next = |shape: &[usize], fan_in: usize| {
            stream += 1;
            Tensor::kaiming(shape, fan_in, &mut stream_rng(seed, stream))
        };

        let stem_c = config.stem_channels;
        let stem_w = next(
            &[stem_c, config.image_channels, 3, 3],
            config.image_channels * 9,
        );
        let mut units = Vec::with_capacity(config.n_units);
        let mut unit_running = Vec::with_capacity(config.n_units);
        let mut c = stem_c;
        for _ in 0..config.n_units {
            units.push(UnitParams {
                b1_depth: next(&[c, 3, 3], 9),
                b1_point: next(&[c, c, 1, 1], c),
                bn1: BnParam::new(c),
                b2_point: next(&[c, c, 1, 1], c),
                bn2: BnParam::new(c),
                bn3: BnParam::new(c),
                down_depth: next(&[c, 3, 3], 9),
                down_point: next(&[2 * c, c, 1, 1], c),
                bn4: BnParam::new(2 * c),
                res_depth: next(&[c, 3, 3], 9),
                res_point: next(&[2 * c, c, 1, 1], c),
            });
            unit_running.push(UnitRunning {
                bn1: RunningStats::new(c),
                bn2: RunningStats::new(c),
                bn3: RunningStats::new(c),
                bn4: RunningStats::new(2 * c),
            });
            c *= 2;
        }
        let final_c = config.final_channels();
        debug_assert_eq!(c, final_c);

        let gc = config.group_channels;
        let heights = [1usize, 2, 3, config.n_slots];
        let groups = heights
            .iter()
            .enumerate()
            .map(|(gi, &h)| GroupParams {
                w0: next(&[gc, 1, h, config.embed_dim], h * config.embed_dim),
                b0: Tensor::zeros(&[gc]),
                follow: if gi < 3 {
                    (1..config.n_follow_convs)
                        .map(|_| (next(&[gc, gc, 1, 1], gc), Tensor::zeros(&[gc])))
                        .collect()
                } else {
                    Vec::new()
                },
            })
            .collect();

        let params = CtimParams {
            stem_w,
            stem_bn: BnParam::new(stem_c),
            units,
            img_head_w: next(&[final_c, config.joint_dim], final_c),
            img_head_b: Tensor::zeros(&[config.joint_dim]),
            embed: Tensor::rand_uniform(
                &[vocab.len(), config.embed_dim],
                0.5,
                &mut stream_rng(seed, u64::MAX),
            ),
            groups,
            txt_head_w: next(&[gc, config.joint_dim], gc),
            txt_head_b: Tensor::zeros(&[config.joint_dim]),
        };
        Ok(CtimModel {
            version: CKPT_VERSION,
            scalar: S::NAME.to_string(),
            config,
            vocab,
            params,
            running: RunningState {
                stem: RunningStats::new(stem_c),
                units: unit_running,
            },
        })
    }

    pub fn parameter_scalars(&self) -> usize {
        self.params.scalar_count()
    }

    pub(crate) fn bind(&self, g: &mut Graph<S>) -> BoundVars {
        let p = &self.params;
        BoundVars {
            stem_w: g.leaf(p.stem_w.clone()),
            stem_bn: (g.leaf(p.stem_bn.gamma.clone()), g.leaf(p.stem_bn.beta.clone())),
            units: p
                .units
                .iter()
                .map(|u| BoundUnit {
                    b1_depth: g.leaf(u.b1_depth.clone()),
                    b1_point: g.leaf(u.b1_point.clone()),
                    bn1: (g.leaf(u.bn1.gamma.clone()), g.leaf(u.bn1.beta.clone())),
                    b2_point: g.leaf(u.b2_point.clone()),
                    bn2: (g.leaf(u.bn2.gamma.clone()), g.leaf(u.bn2.beta.clone())),
                    bn3: (g.leaf(u.bn3.gamma.clone()), g.leaf(u.bn3.beta.clone())),
                    down_depth: g.leaf(u.down_depth.clone()),
                    down_point: g.leaf(u.down_point.clone()),
                    bn4: (g.leaf(u.bn4.gamma.clone()), g.leaf(u.bn4.beta.clone())),
                    res_depth: g.leaf(u.res_depth.clone()),
                    res_point: g.leaf(u.res_point.clone()),
                })
                .collect(),
            img_head: (g.leaf(p.img_head_w.clone()), g.leaf(p.img_head_b.clone())),
            embed: g.leaf(p.embed.clone()),
            groups: p
                .groups
                .iter()
                .map(|gr| BoundGroup {
                    w0: g.leaf(gr.w0.clone()),
                    b0: g.leaf(gr.b0.clone()),
                    follow: gr
                        .follow
                        .iter()
                        .map(|(w, b)| (g.leaf(w.clone()), g.leaf(b.clone())))
                        .collect(),
                })
                .collect(),
            txt_head: (g.leaf(p.txt_head_w.clone()), g.leaf(p.txt_head_b.clone())),
        }
    }

    fn bn(
        &self,
        g: &mut Graph<S>,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        running: &RunningStats<S>,
        stats: &mut Vec<BnBatchStats<S>>,
    ) -> Result<Var, CtimError> {
        match mode {
            BnMode::Train => {
                let (y, st) = g.batch_norm_train(x, gamma, beta, self.config.bn_eps)?;
                stats.push(st);
                Ok(y)
            }
            BnMode::Eval => Ok(g.batch_norm_eval(
                x,
                gamma,
                beta,
                running.mean.clone(),
                running.var.clone(),
                self.config.bn_eps,
            )?),
        }
    }

    /// One encoder unit: (c, h, w) -> (2c, h/2, w/2).
    pub(crate) fn unit_forward(
        &self,
        g: &mut Graph<S>,
        x: Var,
        unit: &BoundUnit,
        running: &UnitRunning<S>,
        mode: BnMode,
        stats: &mut Vec<BnBatchStats<S>>,
    ) -> Result<Var, CtimError> {
        let shape = g.value(x).shape().to_vec();
        let (h, w) = (shape[2], shape[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(CtimError::Tensor(crate::tensor::TensorError::Shape(
                format!("encoder unit needs even spatial dims, got {h}x{w}"),
            )));
        }
        let b1 = g.dw_separable_conv2d(x, unit.b1_depth, unit.b1_point, 1)?;
        let b1 = self.bn(g, b1, unit.bn1.0, unit.bn1.1, mode, &running.bn1, stats)?;
        let b2 = g.conv2d(x, unit.b2_point, 1, 0)?;
        let b2 = self.bn(g, b2, unit.bn2.0, unit.bn2.1, mode, &running.bn2, stats)?;
        let b3 = self.bn(g, x, unit.bn3.0, unit.bn3.1, mode, &running.bn3, stats)?;
        let sum = g.add(b1, b2)?;
        let xhat = g.add(sum, b3)?;
        let act = g.relu(xhat);
        let down = g.dw_separable_conv2d(act, unit.down_depth, unit.down_point, 2)?;
        let down = self.bn(g, down, unit.bn4.0, unit.bn4.1, mode, &running.bn4, stats)?;
        let down_act = g.relu(down);
        let residual = g.dw_separable_conv2d(x, unit.res_depth, unit.res_point, 2)?;
        Ok(g.add(down_act, residual)?)
    }

    /// Image branch: stem, n channel-doubling units, pool, affine.
    pub(crate) fn encode_image_graph(
        &self,
        g: &mut Graph<S>,
        bound: &BoundVars,
        x: Var,
        mode: BnMode,
        stats: &mut Vec<BnBatchStats<S>>,
    ) -> Result<Var, CtimError> {
        let stem = g.conv2d(x, bound.stem_w, 1, 1)?;
        let stem = self.bn(
            g,
            stem,
            bound.stem_bn.0,
            bound.stem_bn.1,
            mode,
            &self.running.stem,
            stats,
        )?;
        let mut cur = g.relu(stem);
        for (unit, running) in bound.units.iter().zip(&self.running.units) {
            cur = self.unit_forward(g, cur, unit, running, mode, stats)?;
        }
        let pooled = g.global_avg_pool(cur)?;
        Ok(g.linear(pooled, bound.img_head.0, bound.img_head.1)?)
    }

    /// Text branch over an already-embedded (N, 1, slots, embed) input.
    pub(crate) fn encode_text_graph(
        &self,
        g: &mut Graph<S>,
        bound: &BoundVars,
        x: Var,
    ) -> Result<Var, CtimError> {
        let mut summed: Option<Var> = None;
        for group in &bound.groups {
            let mut cur = g.conv2d(x, group.w0, 1, 0)?;
            cur = g.add_channel_bias(cur, group.b0)?;
            cur = g.relu(cur);
            for (w, b) in &group.follow {
                cur = g.conv2d(cur, *w, 1, 0)?;
                cur = g.add_channel_bias(cur, *b)?;
                cur = g.relu(cur);
            }
            let pooled = g.global_avg_pool(cur)?;
            summed = Some(match summed {
                Some(acc) => g.add(acc, pooled)?,
                None => pooled,
            });
        }
        let summed = summed.expect("four conv groups");
        Ok(g.linear(summed, bound.txt_head.0, bound.txt_head.1)?)
    }

    pub(crate) fn embed_triples_graph(
        &self,
        g: &mut Graph<S>,
        bound: &BoundVars,
        triples: &[TripleKeyword],
    ) -> Result<Var, CtimError> {
        let rows: Vec<usize> = triples
            .iter()
            .flat_map(|t| self.vocab.rows_for(t))
            .collect();
        let gathered = g.embed_rows(bound.embed, rows)?;
        Ok(g.reshape(
            gathered,
            &[triples.len(), 1, self.config.n_slots, self.config.embed_dim],
        )?)
    }

    /// Raw (uncompressed) similarities for a batch; the full training path.
    pub(crate) fn raw_similarity_graph(
        &self,
        g: &mut Graph<S>,
        bound: &BoundVars,
        images: Tensor<S>,
        triples: &[TripleKeyword],
        mode: BnMode,
        stats: &mut Vec<BnBatchStats<S>>,
    ) -> Result<Var, CtimError> {
        let x = g.leaf(images);
        let img = self.encode_image_graph(g, bound, x, mode, stats)?;
        let emb = self.embed_triples_graph(g, bound, triples)?;
        let txt = self.encode_text_graph(g, bound, emb)?;
        Ok(g.cosine_rows(img, txt)?)
    }

    fn image_batch(&self, image: &Tensor<S>) -> Result<Tensor<S>, CtimError> {
        let hw = self.config.image_hw;
        let c = self.config.image_channels;
        match image.shape() {
            [ic, h, w] if *ic == c && *h == hw && *w == hw => {
                Ok(image.reshape(&[1, c, hw, hw])?)
            }
            [_, ic, h, w] if *ic == c && *h == hw && *w == hw => Ok(image.clone()),
            other => Err(CtimError::Tensor(crate::tensor::TensorError::Shape(
                format!("expected ({c}, {hw}, {hw}) image, got {other:?}"),
            ))),
        }
    }

    /// Joint-space embedding of one image (eval mode).
    pub fn encode_image(&self, image: &Tensor<S>) -> Result<Vec<S>, CtimError> {
        let batch = self.image_batch(image)?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let x = g.leaf(batch);
        let mut stats = Vec::new();
        let emb = self.encode_image_graph(&mut g, &bound, x, BnMode::Eval, &mut stats)?;
        Ok(g.value(emb).data()[..self.config.joint_dim].to_vec())
    }

    /// The slots-by-embed entity matrix for a triple.
    pub fn embed_entities(&self, triple: &TripleKeyword) -> Tensor<S> {
        let rows = self.vocab.rows_for(triple);
        crate::tensor::kernels::embed_rows(&self.params.embed, &rows)
            .expect("vocab rows are in range")
    }

    /// Joint-space embedding of an entity matrix.
    pub fn encode_text(&self, matrix: &Tensor<S>) -> Result<Vec<S>, CtimError> {
        if matrix.shape() != [self.config.n_slots, self.config.embed_dim] {
            return Err(CtimError::Tensor(crate::tensor::TensorError::Shape(
                format!(
                    "expected ({}, {}) entity matrix, got {:?}",
                    self.config.n_slots,
                    self.config.embed_dim,
                    matrix.shape()
                ),
            )));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let reshaped = matrix.reshape(&[1, 1, self.config.n_slots, self.config.embed_dim])?;
        let x = g.leaf(reshaped);
        let emb = self.encode_text_graph(&mut g, &bound, x)?;
        Ok(g.value(emb).data().to_vec())
    }

    /// Compressed similarity in [0, 1] for one image and one triple.
    pub fn forward_similarity(
        &self,
        image: &Tensor<S>,
        triple: &TripleKeyword,
    ) -> Result<S, CtimError> {
        Ok(self.similarity_batch(image, std::slice::from_ref(triple))?[0])
    }

    /// Compressed similarities for a batch of images and aligned triples.
    pub fn similarity_batch(
        &self,
        images: &Tensor<S>,
        triples: &[TripleKeyword],
    ) -> Result<Vec<S>, CtimError> {
        let batch = self.image_batch(images)?;
        if batch.shape()[0] != triples.len() {
            return Err(CtimError::InvalidInput(format!(
                "{} images vs {} triples",
                batch.shape()[0],
                triples.len()
            )));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let mut stats = Vec::new();
        let raw =
            self.raw_similarity_graph(&mut g, &bound, batch, triples, BnMode::Eval, &mut stats)?;
        g.value(raw)
            .data()
            .iter()
            .map(|&c| compress(c).map_err(CtimError::Tensor))
            .collect()
    }

    /// Consistency decision at the configured threshold (inclusive).
    pub fn is_consistent(&self, sim: S) -> bool {
        super::is_consistent(sim.to_f64(), self.config.consistency_threshold)
    }

    /// Versioned checkpoint; reloading reproduces bit-identical inference.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json_str(text: &str) -> Result<CtimModel<S>, CtimError> {
        let model: CtimModel<S> =
            serde_json::from_str(text).map_err(|e| CtimError::Model(e.to_string()))?;
        if model.version != CKPT_VERSION {
            return Err(CtimError::Model(format!(
                "unsupported checkpoint version {}",
                model.version
            )));
        }
        if model.scalar != S::NAME {
            return Err(CtimError::Model(format!(
                "checkpoint stores {} parameters, expected {}",
                model.scalar,
                S::NAME
            )));
        }
        model.config.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::kernels::BnMode;

    fn small_config() -> CtimConfig {
        CtimConfig {
            image_hw: 16,
            stem_channels: 2,
            n_units: 2,
            embed_dim: 24,
            group_channels: 6,
            joint_dim: 8,
            ..CtimConfig::default()
        }
    }

    fn vocab() -> AttributeVocab {
        AttributeVocab::from_catalog(&AttributeCatalog::default_catalog())
    }

    fn triple(t: &str, c: &str, o: &str) -> TripleKeyword {
        TripleKeyword {
            vtype: (!t.is_empty()).then(|| t.to_string()),
            color: (!c.is_empty()).then(|| c.to_string()),
            orientation: (!o.is_empty()).then(|| o.to_string()),
        }
    }

    #[test]
    fn unit_shape_contract() {
        let model: CtimModel<f64> = CtimModel::new(small_config(), vocab(), 3).unwrap();
        for (cin, h, w) in [(4usize, 32usize, 32usize), (8, 2, 2)] {
            let mut g = Graph::new();
            // Build a free-standing unit for this channel count.
            let mut stream = stream_rng(9, 0);
            let u = UnitParams::<f64> {
                b1_depth: Tensor::kaiming(&[cin, 3, 3], 9, &mut stream),
                b1_point: Tensor::kaiming(&[cin, cin, 1, 1], cin, &mut stream),
                bn1: BnParam::new(cin),
                b2_point: Tensor::kaiming(&[cin, cin, 1, 1], cin, &mut stream),
                bn2: BnParam::new(cin),
                bn3: BnParam::new(cin),
                down_depth: Tensor::kaiming(&[cin, 3, 3], 9, &mut stream),
                down_point: Tensor::kaiming(&[2 * cin, cin, 1, 1], cin, &mut stream),
                bn4: BnParam::new(2 * cin),
                res_depth: Tensor::kaiming(&[cin, 3, 3], 9, &mut stream),
                res_point: Tensor::kaiming(&[2 * cin, cin, 1, 1], cin, &mut stream),
            };
            let bound = BoundUnit {
                b1_depth: g.leaf(u.b1_depth.clone()),
                b1_point: g.leaf(u.b1_point.clone()),
                bn1: (g.leaf(u.bn1.gamma.clone()), g.leaf(u.bn1.beta.clone())),
                b2_point: g.leaf(u.b2_point.clone()),
                bn2: (g.leaf(u.bn2.gamma.clone()), g.leaf(u.bn2.beta.clone())),
                bn3: (g.leaf(u.bn3.gamma.clone()), g.leaf(u.bn3.beta.clone())),
                down_depth: g.leaf(u.down_depth.clone()),
                down_point: g.leaf(u.down_point.clone()),
                bn4: (g.leaf(u.bn4.gamma.clone()), g.leaf(u.bn4.beta.clone())),
                res_depth: g.leaf(u.res_depth.clone()),
                res_point: g.leaf(u.res_point.clone()),
            };
            let running = UnitRunning {
                bn1: RunningStats::new(cin),
                bn2: RunningStats::new(cin),
                bn3: RunningStats::new(cin),
                bn4: RunningStats::new(2 * cin),
            };
            let x = g.leaf(Tensor::rand_uniform(&[2, cin, h, w], 0.5, &mut stream));
            let mut stats = Vec::new();
            let y = model
                .unit_forward(&mut g, x, &bound, &running, BnMode::Train, &mut stats)
                .unwrap();
            assert_eq!(g.value(y).shape(), &[2, 2 * cin, h / 2, w / 2]);

            let odd = g.leaf(Tensor::rand_uniform(&[1, cin, 3, 4], 0.5, &mut stream));
            assert!(model
                .unit_forward(&mut g, odd, &bound, &running, BnMode::Train, &mut stats)
                .is_err());
        }
    }

    #[test]
    fn image_embedding_has_joint_dim_and_is_deterministic() {
        let model: CtimModel<f32> = CtimModel::new(small_config(), vocab(), 4).unwrap();
        let image = Tensor::rand_uniform(&[3, 16, 16], 0.5, &mut stream_rng(5, 0));
        let a = model.encode_image(&image).unwrap();
        let b = model.encode_image(&image).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);
    }

    #[test]
    fn channel_trace_doubles_from_stem() {
        let config = CtimConfig::default();
        let mut c = config.stem_channels;
        let mut trace = vec![c];
        for _ in 0..config.n_units {
            c *= 2;
            trace.push(c);
        }
        assert_eq!(trace, vec![8, 16, 32, 64, 128, 256]);
        assert_eq!(config.final_channels(), 256);
    }

    #[test]
    fn entity_matrix_is_slots_by_embed() {
        let model: CtimModel<f64> = CtimModel::new(small_config(), vocab(), 5).unwrap();
        let full = model.embed_entities(&triple("sedan", "red", "towards"));
        assert_eq!(full.shape(), &[3, 24]);

        let missing = model.embed_entities(&triple("sedan", "", ""));
        let missing_row = &model.params.embed.data()
            [model.vocab.missing_idx() * 24..(model.vocab.missing_idx() + 1) * 24];
        assert_eq!(&missing.data()[24..48], missing_row);
        assert_eq!(&missing.data()[48..72], missing_row);

        let again = model.embed_entities(&triple("sedan", "", ""));
        assert_eq!(missing, again);
    }

    #[test]
    fn vocab_synonyms_map_to_canonical_rows() {
        let v = vocab();
        assert_eq!(v.lookup("this way"), v.lookup("towards"));
        assert_eq!(v.lookup("silver grey"), v.lookup("silver"));
        assert_eq!(v.lookup("SEDAN"), v.lookup("sedan"));
        assert_eq!(v.lookup("warp drive"), v.unk_idx());
    }

    #[test]
    fn text_embedding_has_joint_dim_and_group_positions_check_out() {
        let config = small_config();
        let model: CtimModel<f64> = CtimModel::new(config.clone(), vocab(), 6).unwrap();
        let matrix = model.embed_entities(&triple("suv", "black", "left"));
        let out = model.encode_text(&matrix).unwrap();
        assert_eq!(out.len(), config.joint_dim);

        // Group output position counts before pooling for d = 3: 3, 2, 1, 1.
        for (h, want) in [(1usize, 3usize), (2, 2), (3, 1), (3, 1)] {
            assert_eq!(config.n_slots - h + 1, want);
        }
    }

    #[test]
    fn similarity_is_in_unit_interval_and_symmetric_under_branch_swap() {
        let model: CtimModel<f64> = CtimModel::new(small_config(), vocab(), 7).unwrap();
        let mut rng = stream_rng(8, 0);
        for i in 0..5 {
            let image = Tensor::rand_uniform(&[3, 16, 16], 0.5, &mut rng);
            let t = triple("truck", "blue", if i % 2 == 0 { "left" } else { "right" });
            let sim = model.forward_similarity(&image, &t).unwrap();
            assert!((0.0..=1.0).contains(&sim), "sim {sim}");

            // Cosine is symmetric in its two inputs.
            let img_vec = model.encode_image(&image).unwrap();
            let txt_vec = model.encode_text(&model.embed_entities(&t)).unwrap();
            let ab = super::super::cosine_distance(&img_vec, &txt_vec).unwrap();
            let ba = super::super::cosine_distance(&txt_vec, &img_vec).unwrap();
            assert!((ab - ba).abs() < 1e-12);

            // And compress is invariant under positive rescaling.
            let scaled: Vec<f64> = img_vec.iter().map(|v| v * 3.5).collect();
            let ab_scaled = super::super::cosine_distance(&scaled, &txt_vec).unwrap();
            assert!((ab - ab_scaled).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_reload_reproduces_identical_inference() {
        let model: CtimModel<f64> = CtimModel::new(small_config(), vocab(), 9).unwrap();
        let reloaded = CtimModel::<f64>::from_json_str(&model.to_json_string()).unwrap();
        let image = Tensor::rand_uniform(&[3, 16, 16], 0.5, &mut stream_rng(10, 0));
        let t = triple("bus", "yellow", "away");
        let a = model.forward_similarity(&image, &t).unwrap();
        let b = reloaded.forward_similarity(&image, &t).unwrap();
        assert_eq!(a, b);
        assert!(CtimModel::<f32>::from_json_str(&model.to_json_string()).is_err());
    }

    #[test]
    fn bound_vars_match_parameter_order() {
        let model: CtimModel<f64> = CtimModel::new(small_config(), vocab(), 11).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let vars = bound.ordered();
        let tensors = model.params.tensors();
        assert_eq!(vars.len(), tensors.len());
        for (v, t) in vars.iter().zip(tensors) {
            assert_eq!(g.value(*v).shape(), t.shape());
        }
    }
}
