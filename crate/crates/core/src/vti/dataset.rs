//! Vehicle-TI-style matching dataset and retrieval scene composition.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::{render_proposal, RenderSpec};
use super::VtiError;
use crate::corpus::FINE_CLASSES;
use crate::ctim::{SampleSource, VtiSample};
use crate::generator::{
    apply_informalization, render_sentence, AttributeCatalog, SlotKind, Template, VehicleRecord,
};
use crate::ner::TripleKeyword;
use crate::scalar::Scalar;
use crate::util::stream_rng;

/// Replaces exactly `k` of the three attribute fields with different
/// catalog values; pose jitter and seed stay put.
pub fn corrupt_attributes(
    spec: &RenderSpec,
    rng: &mut ChaCha8Rng,
    k: usize,
    catalog: &AttributeCatalog,
) -> RenderSpec {
    let k = k.clamp(1, 3);
    let mut fields = [0usize, 1, 2];
    fields.shuffle(rng);
    let mut out = spec.clone();
    for &field in fields.iter().take(k) {
        match field {
            0 => {
                let mut vtype = out.vtype;
                while vtype == out.vtype {
                    vtype = FINE_CLASSES[rng.gen_range(0..FINE_CLASSES.len())];
                }
                out.vtype = vtype;
            }
            1 => {
                let mut color = out.color.clone();
                while color == out.color {
                    color = catalog.colors[rng.gen_range(0..catalog.colors.len())].name.clone();
                }
                out.color = color;
            }
            _ => {
                let mut orientation = out.orientation.clone();
                while orientation == out.orientation {
                    orientation = catalog.orientations[rng.gen_range(0..catalog.orientations.len())]
                        .name
                        .clone();
                }
                out.orientation = orientation;
            }
        }
    }
    out
}

/// One matching sample before rendering: the image is defined by `spec`,
/// the query by `triple`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VtiRecord {
    pub spec: RenderSpec,
    pub triple: TripleKeyword,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VtiDataset {
    pub train: Vec<VtiRecord>,
    pub test: Vec<VtiRecord>,
    pub val: Vec<VtiRecord>,
    pub seed: u64,
}

impl VtiDataset {
    pub fn total(&self) -> usize {
        self.train.len() + self.test.len() + self.val.len()
    }
}

fn drop_fields(triple: &mut TripleKeyword, rng: &mut ChaCha8Rng, n_drop: usize) {
    let mut fields = [0usize, 1, 2];
    fields.shuffle(rng);
    for &f in fields.iter().take(n_drop) {
        match f {
            0 => triple.vtype = None,
            1 => triple.color = None,
            _ => triple.orientation = None,
        }
    }
}

fn make_record(catalog: &AttributeCatalog, rng: &mut ChaCha8Rng, positive: bool) -> VtiRecord {
    let spec = RenderSpec::sample(catalog, rng);
    // Missing-entity pattern on a quarter of the queries.
    let n_drop = if rng.gen::<f64>() < 0.25 {
        if rng.gen::<f64>() < 0.7 {
            1
        } else {
            2
        }
    } else {
        0
    };
    if positive {
        let mut triple = spec.triple();
        drop_fields(&mut triple, rng, n_drop);
        VtiRecord {
            spec,
            triple,
            label: 1,
        }
    } else {
        // Corrupt only fields that stay present in the query, so the label
        // invariant (some non-missing field mismatches) holds.
        let n_present = 3 - n_drop;
        let k = match rng.gen::<f64>() {
            x if x < 0.60 => 1,
            x if x < 0.85 => 2,
            _ => 3,
        }
        .min(n_present);
        let corrupted = corrupt_attributes(&spec, rng, k, catalog);
        let mut triple = corrupted.triple();
        // Drop fields that were NOT corrupted. Corrupted fields must stay.
        let mut droppable: Vec<usize> = Vec::new();
        if corrupted.vtype == spec.vtype {
            droppable.push(0);
        }
        if corrupted.color == spec.color {
            droppable.push(1);
        }
        if corrupted.orientation == spec.orientation {
            droppable.push(2);
        }
        droppable.shuffle(rng);
        for &f in droppable.iter().take(n_drop.min(droppable.len())) {
            match f {
                0 => triple.vtype = None,
                1 => triple.color = None,
                _ => triple.orientation = None,
            }
        }
        VtiRecord {
            spec,
            triple,
            label: 0,
        }
    }
}

/// True iff every non-missing triple field matches the spec.
pub(crate) fn triple_matches(triple: &TripleKeyword, spec: &RenderSpec) -> bool {
    triple
        .vtype
        .as_deref()
        .is_none_or(|t| spec.vtype.type_surface().as_deref() == Some(t))
        && triple.color.as_deref().is_none_or(|c| spec.color == c)
        && triple
            .orientation
            .as_deref()
            .is_none_or(|o| spec.orientation == o)
}

/// Builds the three splits with the 56/30/14 proportions and alternating
/// positive/negative labels. Deterministic per seed.
pub fn make_vti_dataset(
    n_total: usize,
    seed: u64,
    catalog: &AttributeCatalog,
) -> Result<VtiDataset, VtiError> {
    if n_total < 100 {
        return Err(VtiError::InvalidInput(format!(
            "need at least 100 samples, got {n_total}"
        )));
    }
    let n_test = ((n_total as f64) * 0.30).round() as usize;
    let n_val = ((n_total as f64) * 0.14).round() as usize;
    let n_train = n_total - n_test - n_val;

    let records: Vec<VtiRecord> = (0..n_total)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            make_record(catalog, &mut rng, i % 2 == 0)
        })
        .collect();

    let mut it = records.into_iter();
    let train: Vec<VtiRecord> = it.by_ref().take(n_train).collect();
    let test: Vec<VtiRecord> = it.by_ref().take(n_test).collect();
    let val: Vec<VtiRecord> = it.collect();
    Ok(VtiDataset {
        train,
        test,
        val,
        seed,
    })
}

/// Renders records into CTIM samples on demand.
pub struct LazyVti<'a> {
    records: &'a [VtiRecord],
    catalog: &'a AttributeCatalog,
}

impl<'a> LazyVti<'a> {
    pub fn new(records: &'a [VtiRecord], catalog: &'a AttributeCatalog) -> LazyVti<'a> {
        LazyVti { records, catalog }
    }
}

impl<S: Scalar> SampleSource<S> for LazyVti<'_> {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn get(&self, idx: usize) -> VtiSample<S> {
        let record = &self.records[idx];
        VtiSample {
            triple: record.triple.clone(),
            image: render_proposal(&record.spec, self.catalog).expect("records render"),
            label: record.label,
        }
    }
}

/// One proposal in a scene: id, bounding box (left, top, width, height),
/// and its ground-truth render spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub id: usize,
    pub bbox: (u32, u32, u32, u32),
    pub spec: RenderSpec,
}

/// A retrieval scene: proposals on a frame canvas plus a command whose
/// triple matches exactly the target proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub frame_id: u64,
    pub proposals: Vec<Proposal>,
    pub retrieval_text: String,
    pub target_ids: Vec<usize>,
    /// The command's ground-truth triple (canonical surfaces).
    pub gold_triple: TripleKeyword,
}

const TILE: u32 = 64;
pub const SCENE_CANVAS: usize = 256;

/// Composes one scene: distinct-attribute proposals on a 3x3 layout, a
/// command rendered from one target's attributes through the sentence
/// templates (sometimes in missing-entity style), and the matching target
/// set.
pub fn compose_scene(
    n_proposals: usize,
    rng: &mut ChaCha8Rng,
    catalog: &AttributeCatalog,
    templates: &[Template],
    missing_rate: f64,
    frame_id: u64,
) -> Result<SceneRecord, VtiError> {
    if n_proposals == 0 || n_proposals > 9 {
        return Err(VtiError::InvalidInput(
            "scenes hold between 1 and 9 proposals".into(),
        ));
    }

    // Distinct attribute combos.
    let mut specs: Vec<RenderSpec> = Vec::with_capacity(n_proposals);
    while specs.len() < n_proposals {
        let cand = RenderSpec::sample(catalog, rng);
        let duplicate = specs.iter().any(|s| {
            s.vtype == cand.vtype && s.color == cand.color && s.orientation == cand.orientation
        });
        if !duplicate {
            specs.push(cand);
        }
    }

    // Layout: shuffled 3x3 cells with per-cell jitter.
    let mut cells: Vec<(u32, u32)> = (0..9).map(|i| (i % 3, i / 3)).collect();
    cells.shuffle(rng);
    let proposals: Vec<Proposal> = specs
        .iter()
        .enumerate()
        .map(|(id, spec)| {
            let (cx, cy) = cells[id];
            let left = cx * 85 + rng.gen_range(0..=16);
            let top = cy * 85 + rng.gen_range(0..=16);
            Proposal {
                id,
                bbox: (left, top, TILE, TILE),
                spec: spec.clone(),
            }
        })
        .collect();

    // Command template pool: single-vehicle templates over triple kinds.
    let triple_kinds = [SlotKind::Type, SlotKind::Color, SlotKind::Orientation];
    let command_pool: Vec<&Template> = templates
        .iter()
        .filter(|t| {
            t.vehicle_arity == 1 && t.kinds().iter().all(|k| triple_kinds.contains(k))
        })
        .collect();
    if command_pool.is_empty() {
        return Err(VtiError::InvalidInput(
            "no command-compatible templates (arity 1 over type/color/orientation)".into(),
        ));
    }
    let full_pool: Vec<&&Template> = command_pool.iter().filter(|t| t.kinds().len() == 3).collect();
    let missing_pool: Vec<&&Template> =
        command_pool.iter().filter(|t| t.kinds().len() < 3).collect();
    let use_missing = !missing_pool.is_empty() && (full_pool.is_empty() || rng.gen::<f64>() < missing_rate);
    let template = if use_missing {
        missing_pool[rng.gen_range(0..missing_pool.len())]
    } else {
        full_pool[rng.gen_range(0..full_pool.len())]
    };

    let target = &specs[rng.gen_range(0..specs.len())];
    let record = VehicleRecord {
        brand: None,
        model: None,
        fine_type: target.vtype,
        color: target.color.clone(),
        orientation: target.orientation.clone(),
        location: None,
        range_m: None,
        velocity_kmh: None,
    };
    let sentence = render_sentence(template, &[record], catalog, rng)?;
    let sentence = apply_informalization(&sentence, rng, 0.2, catalog)?;

    let kinds = template.kinds();
    let gold_triple = TripleKeyword {
        vtype: kinds
            .contains(&SlotKind::Type)
            .then(|| target.vtype.type_surface().expect("fine type")),
        color: kinds.contains(&SlotKind::Color).then(|| target.color.clone()),
        orientation: kinds
            .contains(&SlotKind::Orientation)
            .then(|| target.orientation.clone()),
    };
    let target_ids: Vec<usize> = proposals
        .iter()
        .filter(|p| triple_matches(&gold_triple, &p.spec))
        .map(|p| p.id)
        .collect();

    Ok(SceneRecord {
        frame_id,
        proposals,
        retrieval_text: sentence.text,
        target_ids,
        gold_triple,
    })
}

/// Deterministic scene set; each scene owns an RNG stream derived from
/// `(seed, index)`.
pub fn compose_scene_set(
    n_scenes: usize,
    seed: u64,
    catalog: &AttributeCatalog,
    templates: &[Template],
    missing_rate: f64,
) -> Result<Vec<SceneRecord>, VtiError> {
    (0..n_scenes)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let n_proposals = rng.gen_range(4..=8);
            compose_scene(n_proposals, &mut rng, catalog, templates, missing_rate, i as u64)
        })
        .collect()
}
