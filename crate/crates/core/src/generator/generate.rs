//! Record sampling, template rendering with automatic annotation, informal
//! variants, and the deterministic corpus generator.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::catalog::AttributeCatalog;
use super::template::{Part, SlotKind, Template};
use super::GenError;
use crate::corpus::{
    pos_tag, tokenize, Dataset, EntityAnnotation, EntityClass, Sentence, Split, Token,
    FINE_CLASSES,
};
use crate::util::stream_rng;

/// Per-class sampling weights. Fine-class weights drive the vehicle-type
/// draw directly; coarse weights (relative to `vehicle_type`) drive how
/// often the corresponding attribute appears in generated sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassWeights {
    pub weights: BTreeMap<EntityClass, f64>,
}

impl ClassWeights {
    /// Long-tail defaults mirroring a plausible traffic distribution.
    pub fn default_long_tail() -> ClassWeights {
        let pairs = [
            (EntityClass::VehicleType, 1.0),
            (EntityClass::Color, 0.93),
            (EntityClass::Orientation, 0.72),
            (EntityClass::Brand, 0.86),
            (EntityClass::Model, 0.86),
            (EntityClass::Location, 0.38),
            (EntityClass::Velocity, 0.30),
            (EntityClass::Range, 0.24),
            (EntityClass::TypeSedan, 0.30),
            (EntityClass::TypeSuv, 0.24),
            (EntityClass::TypeTruck, 0.13),
            (EntityClass::TypeHatchback, 0.10),
            (EntityClass::TypeVan, 0.07),
            (EntityClass::TypeBus, 0.05),
            (EntityClass::TypeMpv, 0.04),
            (EntityClass::TypeCoupe, 0.035),
            (EntityClass::TypeSportsCar, 0.03),
            (EntityClass::TypeEstateCar, 0.025),
            (EntityClass::TypeMotorcycle, 0.02),
            (EntityClass::TypeVintageCar, 0.012),
            (EntityClass::TypeRoadster, 0.008),
        ];
        ClassWeights {
            weights: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, class: EntityClass) -> f64 {
        self.weights.get(&class).copied().unwrap_or(0.0)
    }

    /// Attribute presence rate relative to the always-present head class.
    fn ratio(&self, class: EntityClass) -> f64 {
        let head = self.get(EntityClass::VehicleType);
        if head <= 0.0 {
            return 0.0;
        }
        (self.get(class) / head).clamp(0.0, 1.0)
    }

    pub fn validate(&self) -> Result<(), GenError> {
        for class in EntityClass::all() {
            if self.get(class) <= 0.0 {
                return Err(GenError::InvalidInput(format!(
                    "class weight for {} must be positive",
                    class.tag()
                )));
            }
        }
        Ok(())
    }
}

/// One sampled vehicle. If brand and model are both present they map to
/// `fine_type` in the catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub brand: Option<String>,
    pub model: Option<String>,
    pub fine_type: EntityClass,
    pub color: String,
    pub orientation: String,
    pub location: Option<String>,
    pub range_m: Option<u32>,
    pub velocity_kmh: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_sentences: usize,
    pub seed: u64,
    /// Per-entity probability of swapping the formal surface for a variant.
    pub informal_rate: f64,
    pub class_frequency_weights: ClassWeights,
    /// Fraction of the template pool reserved for the test split.
    pub template_pool_split: f64,
    /// Fraction of catalog (brand, model) pairs reserved for the test
    /// split, so evaluation covers vehicles never seen in training.
    pub model_pool_split: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_sentences: 1000,
            seed: 0,
            informal_rate: 0.25,
            class_frequency_weights: ClassWeights::default_long_tail(),
            template_pool_split: 0.3,
            model_pool_split: 0.15,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        self.class_frequency_weights.validate()?;
        if !(0.0..=1.0).contains(&self.informal_rate) {
            return Err(GenError::InvalidInput("informal_rate must be in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.template_pool_split) {
            return Err(GenError::InvalidInput(
                "template_pool_split must be in [0, 1)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.model_pool_split) {
            return Err(GenError::InvalidInput(
                "model_pool_split must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn model_key(brand: &str, model: &str) -> String {
    format!("{}|{}", brand.to_lowercase(), model.to_lowercase())
}

fn weighted_choice(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0);
    let mut x = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        x -= w;
        if x <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

fn draw_fine_type(
    catalog: &AttributeCatalog,
    rng: &mut ChaCha8Rng,
    weights: &ClassWeights,
    needs_model: bool,
) -> Result<EntityClass, GenError> {
    let candidates: Vec<EntityClass> = FINE_CLASSES
        .into_iter()
        .filter(|c| !needs_model || !catalog.models_of_type(*c).is_empty())
        .collect();
    if candidates.is_empty() {
        return Err(GenError::Template(
            "catalog has no models for any vehicle type".into(),
        ));
    }
    let w: Vec<f64> = candidates.iter().map(|c| weights.get(*c)).collect();
    Ok(candidates[weighted_choice(rng, &w)])
}

fn draw_pair(
    catalog: &AttributeCatalog,
    rng: &mut ChaCha8Rng,
    fine: EntityClass,
) -> Option<(String, String)> {
    let models = catalog.models_of_type(fine);
    models
        .choose(rng)
        .map(|m| (m.brand.clone(), m.model.clone()))
}

/// Samples a vehicle record: the fine type follows the fine-class weights,
/// optional attributes appear with rates derived from the coarse weights.
pub fn sample_vehicle_record(
    catalog: &AttributeCatalog,
    rng: &mut ChaCha8Rng,
    weights: &ClassWeights,
) -> Result<VehicleRecord, GenError> {
    let fine = draw_fine_type(catalog, rng, weights, false)?;
    let color = catalog
        .colors
        .choose(rng)
        .ok_or_else(|| GenError::Catalog("catalog has no colors".into()))?
        .name
        .clone();
    let orientation = catalog.orientations[rng.gen_range(0..catalog.orientations.len())]
        .name
        .clone();

    let (mut brand, mut model) = (None, None);
    if rng.gen::<f64>() < weights.ratio(EntityClass::Brand) {
        match draw_pair(catalog, rng, fine) {
            Some((b, m)) => {
                brand = Some(b);
                // A small slice of records carries the brand alone.
                if rng.gen::<f64>() < 0.92 {
                    model = Some(m);
                }
            }
            None => brand = catalog.brands.choose(rng).cloned(),
        }
    }

    let location = (rng.gen::<f64>() < weights.ratio(EntityClass::Location))
        .then(|| catalog.locations[rng.gen_range(0..catalog.locations.len())].name.clone());
    let range_m =
        (rng.gen::<f64>() < weights.ratio(EntityClass::Range)).then(|| rng.gen_range(5..=300));
    let velocity_kmh =
        (rng.gen::<f64>() < weights.ratio(EntityClass::Velocity)).then(|| rng.gen_range(5..=200));

    Ok(VehicleRecord {
        brand,
        model,
        fine_type: fine,
        color,
        orientation,
        location,
        range_m,
        velocity_kmh,
    })
}

/// Samples a record guaranteed to fill the given slot kinds.
pub(crate) fn sample_record_for(
    catalog: &AttributeCatalog,
    rng: &mut ChaCha8Rng,
    weights: &ClassWeights,
    required: &[SlotKind],
) -> Result<VehicleRecord, GenError> {
    let needs_model = required.contains(&SlotKind::Model);
    let needs_brand = required.contains(&SlotKind::Brand) || needs_model;
    let fine = draw_fine_type(catalog, rng, weights, needs_model)?;
    let (mut brand, mut model) = (None, None);
    if needs_model {
        let (b, m) = draw_pair(catalog, rng, fine).ok_or_else(|| {
            GenError::Template(format!("no catalog model of type {}", fine.tag()))
        })?;
        brand = Some(b);
        model = Some(m);
    } else if needs_brand {
        brand = catalog.brands.choose(rng).cloned();
    }
    let color = catalog
        .colors
        .choose(rng)
        .ok_or_else(|| GenError::Catalog("catalog has no colors".into()))?
        .name
        .clone();
    let orientation = catalog.orientations[rng.gen_range(0..catalog.orientations.len())]
        .name
        .clone();
    let location = required
        .contains(&SlotKind::Location)
        .then(|| catalog.locations[rng.gen_range(0..catalog.locations.len())].name.clone());
    let range_m = required.contains(&SlotKind::Range).then(|| rng.gen_range(5..=300));
    let velocity_kmh = required
        .contains(&SlotKind::Velocity)
        .then(|| rng.gen_range(5..=200));
    Ok(VehicleRecord {
        brand,
        model,
        fine_type: fine,
        color,
        orientation,
        location,
        range_m,
        velocity_kmh,
    })
}

struct Fill {
    kind: SlotKind,
    vehicle: usize,
    char_span: (usize, usize),
}

fn fill_surface(
    kind: SlotKind,
    record: &VehicleRecord,
    catalog: &AttributeCatalog,
    rng: &mut ChaCha8Rng,
) -> Result<String, GenError> {
    let missing = |k: SlotKind| GenError::Template(format!("slot {} not fillable", k.name()));
    Ok(match kind {
        SlotKind::Color => record.color.clone(),
        SlotKind::Type => record
            .fine_type
            .type_surface()
            .expect("record fine_type is fine-grained"),
        SlotKind::Brand => record.brand.clone().ok_or(missing(kind))?,
        SlotKind::Model => record.model.clone().ok_or(missing(kind))?,
        SlotKind::Orientation => record.orientation.clone(),
        SlotKind::Location => record.location.clone().ok_or(missing(kind))?,
        SlotKind::Range => {
            let n = record.range_m.ok_or(missing(kind))?;
            let pattern = &catalog.range_patterns[rng.gen_range(0..catalog.range_patterns.len())];
            pattern.replace("NN", &n.to_string())
        }
        SlotKind::Velocity => {
            let n = record.velocity_kmh.ok_or(missing(kind))?;
            let pattern =
                &catalog.velocity_patterns[rng.gen_range(0..catalog.velocity_patterns.len())];
            pattern.replace("NN", &n.to_string())
        }
    })
}

fn token_span_for(tokens: &[Token], span: (usize, usize)) -> Option<(usize, usize)> {
    let start = tokens.iter().position(|t| t.char_start == span.0)?;
    let end = tokens.iter().position(|t| t.char_end == span.1)? + 1;
    (end > start).then_some((start, end))
}

/// Fills a template with vehicle records, producing a fully annotated
/// sentence: a coarse annotation per filled slot, one overlapped fine
/// annotation per adjacent brand/model pair, and (for multi-vehicle
/// templates) relation groups tying annotations to their record.
pub fn render_sentence(
    template: &Template,
    records: &[VehicleRecord],
    catalog: &AttributeCatalog,
    rng: &mut ChaCha8Rng,
) -> Result<Sentence, GenError> {
    if records.len() != template.vehicle_arity {
        return Err(GenError::Template(format!(
            "template {} needs {} records, got {}",
            template.id,
            template.vehicle_arity,
            records.len()
        )));
    }
    for r in records {
        if let (Some(b), Some(m)) = (&r.brand, &r.model) {
            if catalog.fine_type_of(b, m) != Some(r.fine_type) {
                return Err(GenError::InvalidInput(format!(
                    "record ({b}, {m}) does not map to {}",
                    r.fine_type.tag()
                )));
            }
        }
    }

    let mut text = String::new();
    let mut cursor = 0usize;
    let mut fills: Vec<Fill> = Vec::new();
    for part in &template.parts {
        match part {
            Part::Literal(lit) => {
                text.push_str(lit);
                cursor += lit.chars().count();
            }
            Part::Slot { kind, vehicle } => {
                let surface = fill_surface(*kind, &records[vehicle - 1], catalog, rng)?;
                let start = cursor;
                cursor += surface.chars().count();
                text.push_str(&surface);
                fills.push(Fill {
                    kind: *kind,
                    vehicle: vehicle - 1,
                    char_span: (start, cursor),
                });
            }
        }
    }

    let mut tokens = tokenize(&text)?;
    pos_tag(&mut tokens);

    let mut annotations = Vec::with_capacity(fills.len() + 1);
    let mut owners: Vec<usize> = Vec::new();
    for fill in &fills {
        let token_span = token_span_for(&tokens, fill.char_span).ok_or_else(|| {
            GenError::Template(format!(
                "template {}: slot {} fill is not token aligned",
                template.id,
                fill.kind.name()
            ))
        })?;
        annotations.push(EntityAnnotation::new(
            fill.kind.entity_class(),
            fill.char_span,
            token_span,
        ));
        owners.push(fill.vehicle);
    }

    // Adjacent BRAND MODEL fills of one record yield the overlapped fine
    // annotation covering both spans.
    for i in 0..fills.len().saturating_sub(1) {
        let (a, b) = (&fills[i], &fills[i + 1]);
        if a.kind == SlotKind::Brand
            && b.kind == SlotKind::Model
            && a.vehicle == b.vehicle
            && b.char_span.0 == a.char_span.1 + 1
        {
            let char_span = (a.char_span.0, b.char_span.1);
            let token_span = (
                annotations[i].token_span.0,
                annotations[i + 1].token_span.1,
            );
            annotations.push(EntityAnnotation::new(
                records[a.vehicle].fine_type,
                char_span,
                token_span,
            ));
            owners.push(a.vehicle);
        }
    }

    let relation_groups = if template.vehicle_arity >= 2 {
        (0..records.len())
            .map(|v| {
                owners
                    .iter()
                    .enumerate()
                    .filter_map(|(i, o)| (*o == v).then_some(i))
                    .collect()
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(Sentence {
        text,
        tokens,
        annotations,
        relation_groups,
    })
}

/// Swaps formal entity surfaces for informal catalog variants with the
/// given per-entity rate, recomputing every span.
pub fn apply_informalization(
    sentence: &Sentence,
    rng: &mut ChaCha8Rng,
    rate: f64,
    catalog: &AttributeCatalog,
) -> Result<Sentence, GenError> {
    struct Edit {
        start: usize,
        old_len: usize,
        replacement: Vec<char>,
        annotation: usize,
    }

    let mut edits: Vec<Edit> = Vec::new();
    for (i, ann) in sentence.annotations.iter().enumerate() {
        let variants = match ann.class {
            EntityClass::Color => catalog
                .color_by_surface(&sentence.surface(ann))
                .map(|c| c.variants.clone()),
            EntityClass::Orientation => catalog
                .orientation_by_surface(&sentence.surface(ann))
                .map(|o| o.variants.clone()),
            EntityClass::Location => catalog
                .location_by_surface(&sentence.surface(ann))
                .map(|l| l.variants.clone()),
            _ => None,
        };
        let Some(variants) = variants else { continue };
        if variants.is_empty() || rng.gen::<f64>() >= rate {
            continue;
        }
        let replacement: Vec<char> = variants[rng.gen_range(0..variants.len())].chars().collect();
        edits.push(Edit {
            start: ann.char_span.0,
            old_len: ann.char_span.1 - ann.char_span.0,
            replacement,
            annotation: i,
        });
    }
    if edits.is_empty() {
        return Ok(sentence.clone());
    }

    let mut chars: Vec<char> = sentence.text.chars().collect();
    for edit in edits.iter().rev() {
        chars.splice(edit.start..edit.start + edit.old_len, edit.replacement.iter().copied());
    }
    let text: String = chars.into_iter().collect();

    // Shift char spans. Edits never partially overlap an annotation: the
    // edited classes overlap nothing, and fine spans only cover brand/model.
    let mut char_spans: Vec<(usize, usize)> =
        sentence.annotations.iter().map(|a| a.char_span).collect();
    for edit in &edits {
        let new_len = edit.replacement.len();
        let delta = new_len as isize - edit.old_len as isize;
        let edit_end = edit.start + edit.old_len;
        for (i, span) in char_spans.iter_mut().enumerate() {
            if i == edit.annotation {
                span.1 = (span.1 as isize + delta) as usize;
            } else if span.0 >= edit_end {
                span.0 = (span.0 as isize + delta) as usize;
                span.1 = (span.1 as isize + delta) as usize;
            }
        }
    }

    let mut tokens = tokenize(&text)?;
    pos_tag(&mut tokens);
    let mut annotations = Vec::with_capacity(sentence.annotations.len());
    for (ann, span) in sentence.annotations.iter().zip(char_spans) {
        let token_span = token_span_for(&tokens, span).ok_or_else(|| {
            GenError::Template("informal variant broke token alignment".into())
        })?;
        annotations.push(EntityAnnotation::new(ann.class, span, token_span));
    }

    Ok(Sentence {
        text,
        tokens,
        annotations,
        relation_groups: sentence.relation_groups.clone(),
    })
}

const RESERVE_SALT: u64 = 0x7465_6d70;
const MODEL_SALT: u64 = 0x6d6f_6465;

/// Template ids reserved for the test split under this config.
pub(crate) fn reserved_templates(
    config: &GenConfig,
    templates: &[Template],
) -> Vec<String> {
    let mut ids: Vec<String> = templates.iter().map(|t| t.id.clone()).collect();
    let mut rng = stream_rng(config.seed, RESERVE_SALT);
    ids.shuffle(&mut rng);
    let n = ((templates.len() as f64) * config.template_pool_split).round() as usize;
    ids.truncate(n.min(templates.len().saturating_sub(1)));
    ids.sort();
    ids
}

/// (brand, model) keys reserved for the test split under this config.
pub(crate) fn reserved_models(config: &GenConfig, catalog: &AttributeCatalog) -> Vec<String> {
    let mut keys: Vec<String> = catalog
        .models
        .iter()
        .map(|m| model_key(&m.brand, &m.model))
        .collect();
    let mut rng = stream_rng(config.seed, MODEL_SALT);
    keys.shuffle(&mut rng);
    let n = ((keys.len() as f64) * config.model_pool_split).round() as usize;
    keys.truncate(n.min(keys.len().saturating_sub(1)));
    keys.sort();
    keys
}

/// Generates `n_sentences` annotated sentences. Each sentence draws its own
/// RNG stream from `(seed, index)`, so output is deterministic and
/// independent of evaluation order.
pub fn generate_corpus(
    config: &GenConfig,
    catalog: &AttributeCatalog,
    templates: &[Template],
) -> Result<Dataset, GenError> {
    config.validate()?;
    if templates.is_empty() {
        return Err(GenError::Template("template pool is empty".into()));
    }
    let weights = &config.class_frequency_weights;

    // Template choice runs in two stages: first whether the sentence carries
    // a brand/model pair (the rate that controls the overlapped-entity
    // share), then a weighted draw within that pool where rarer attribute
    // kinds shrink a template's selection weight.
    let pool_weight = |t: &Template| -> f64 {
        t.kinds()
            .iter()
            .filter(|k| !matches!(k, SlotKind::Brand | SlotKind::Model | SlotKind::Type))
            .map(|k| weights.ratio(k.entity_class()).clamp(0.02, 1.0))
            .product()
    };
    let (pair_pool, solo_pool): (Vec<usize>, Vec<usize>) = (0..templates.len()).partition(|&i| {
        let kinds = templates[i].kinds();
        kinds.contains(&SlotKind::Brand) && kinds.contains(&SlotKind::Model)
    });
    let pair_weights: Vec<f64> = pair_pool.iter().map(|&i| pool_weight(&templates[i])).collect();
    let solo_weights: Vec<f64> = solo_pool.iter().map(|&i| pool_weight(&templates[i])).collect();
    let pair_rate = weights
        .ratio(EntityClass::Brand)
        .min(weights.ratio(EntityClass::Model));

    let mut sentences = Vec::with_capacity(config.n_sentences);
    let mut template_ids = Vec::with_capacity(config.n_sentences);
    let mut model_keys = Vec::with_capacity(config.n_sentences);
    for i in 0..config.n_sentences {
        let mut rng = stream_rng(config.seed, i as u64);
        let use_pair = !pair_pool.is_empty()
            && (solo_pool.is_empty() || rng.gen::<f64>() < pair_rate);
        let template = if use_pair {
            &templates[pair_pool[weighted_choice(&mut rng, &pair_weights)]]
        } else {
            &templates[solo_pool[weighted_choice(&mut rng, &solo_weights)]]
        };
        let records: Vec<VehicleRecord> = (1..=template.vehicle_arity)
            .map(|v| {
                sample_record_for(catalog, &mut rng, weights, &template.kinds_for_vehicle(v))
            })
            .collect::<Result<_, _>>()?;
        let rendered = render_sentence(template, &records, catalog, &mut rng)?;
        let informal =
            apply_informalization(&rendered, &mut rng, config.informal_rate, catalog)?;
        sentences.push(informal);
        template_ids.push(template.id.clone());
        model_keys.push(
            records
                .iter()
                .filter_map(|r| match (&r.brand, &r.model) {
                    (Some(b), Some(m)) => Some(model_key(b, m)),
                    _ => None,
                })
                .collect(),
        );
    }

    let mut dataset = Dataset::new(sentences, Split::Train, config.seed);
    dataset.template_ids = template_ids;
    dataset.test_templates = reserved_templates(config, templates);
    dataset.model_keys = model_keys;
    dataset.test_models = reserved_models(config, catalog);
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::super::template::Style;
    use super::*;
    use crate::corpus::{validate, Layer};

    fn catalog() -> AttributeCatalog {
        AttributeCatalog::default_catalog()
    }

    #[test]
    fn sample_record_is_deterministic_for_a_seed() {
        let cat = catalog();
        let weights = ClassWeights::default_long_tail();
        let a = sample_vehicle_record(&cat, &mut stream_rng(0, 0), &weights).unwrap();
        let b = sample_vehicle_record(&cat, &mut stream_rng(0, 0), &weights).unwrap();
        assert_eq!(a, b);
        if let (Some(brand), Some(model)) = (&a.brand, &a.model) {
            assert_eq!(cat.fine_type_of(brand, model), Some(a.fine_type));
        }
    }

    #[test]
    fn concentrated_weights_dominate_the_type_draw() {
        let cat = catalog();
        let mut weights = ClassWeights::default_long_tail();
        for class in FINE_CLASSES {
            weights.weights.insert(class, 0.01);
        }
        weights.weights.insert(EntityClass::TypeSedan, 100.0);
        let mut rng = stream_rng(3, 0);
        let sedans = (0..1000)
            .filter(|_| {
                sample_vehicle_record(&cat, &mut rng, &weights).unwrap().fine_type
                    == EntityClass::TypeSedan
            })
            .count();
        assert!(sedans >= 600, "only {sedans}/1000 sedans");
    }

    #[test]
    fn record_with_brand_but_no_model_is_valid() {
        let record = VehicleRecord {
            brand: Some("BMW".into()),
            model: None,
            fine_type: EntityClass::TypeVan,
            color: "red".into(),
            orientation: "left".into(),
            location: None,
            range_m: None,
            velocity_kmh: None,
        };
        let cat = catalog();
        let template = Template::parse(
            "x",
            super::super::template::Style::Simple,
            1,
            "A {COLOR} {TYPE} near a {BRAND}.",
        )
        .unwrap();
        let s = render_sentence(&template, &[record], &cat, &mut stream_rng(0, 0)).unwrap();
        assert!(validate(&s).is_empty());
    }

    #[test]
    fn simple_template_yields_three_coarse_annotations() {
        let cat = catalog();
        let template = Template::parse(
            "x",
            super::super::template::Style::Simple,
            1,
            "A {COLOR} {TYPE} drives {ORIENTATION}.",
        )
        .unwrap();
        let record = VehicleRecord {
            brand: None,
            model: None,
            fine_type: EntityClass::TypeSedan,
            color: "grey".into(),
            orientation: "right".into(),
            location: None,
            range_m: None,
            velocity_kmh: None,
        };
        let s = render_sentence(&template, &[record], &cat, &mut stream_rng(0, 0)).unwrap();
        assert_eq!(s.text, "A grey sedan drives right.");
        assert_eq!(s.annotations.len(), 3);
        assert!(s.annotations.iter().all(|a| a.layer == Layer::Coarse));
        assert!(validate(&s).is_empty());
        assert_eq!(s.surface(&s.annotations[0]), "grey");
        assert_eq!(s.surface(&s.annotations[1]), "sedan");
        assert_eq!(s.surface(&s.annotations[2]), "right");
    }

    #[test]
    fn adjacent_brand_model_gets_an_overlapped_fine_annotation() {
        let cat = catalog();
        let template = Template::parse(
            "x",
            super::super::template::Style::Simple,
            1,
            "Parked behind a {BRAND} {MODEL}.",
        )
        .unwrap();
        let record = VehicleRecord {
            brand: Some("Ferrari".into()),
            model: Some("458".into()),
            fine_type: EntityClass::TypeSportsCar,
            color: "red".into(),
            orientation: "left".into(),
            location: None,
            range_m: None,
            velocity_kmh: None,
        };
        let s = render_sentence(&template, &[record], &cat, &mut stream_rng(0, 0)).unwrap();
        assert_eq!(s.annotations.len(), 3);
        let fine: Vec<_> = s.annotations_in_layer(Layer::Fine).collect();
        assert_eq!(fine.len(), 1);
        assert_eq!(fine[0].class, EntityClass::TypeSportsCar);
        assert_eq!(s.surface(fine[0]), "Ferrari 458");
        assert!(validate(&s).is_empty());
    }

    #[test]
    fn informalization_rate_zero_is_identity() {
        let cat = catalog();
        let config = GenConfig {
            n_sentences: 20,
            ..GenConfig::default()
        };
        let ds = generate_corpus(&config, &cat, &Template::default_pool()).unwrap();
        for s in &ds.sentences {
            let out = apply_informalization(s, &mut stream_rng(1, 1), 0.0, &cat).unwrap();
            assert_eq!(&out, s);
        }
    }

    #[test]
    fn informalization_rate_one_swaps_orientation_for_a_listed_variant() {
        let cat = catalog();
        let template = Template::parse(
            "x",
            super::super::template::Style::Simple,
            1,
            "A {COLOR} {TYPE} drives {ORIENTATION}.",
        )
        .unwrap();
        let record = VehicleRecord {
            brand: None,
            model: None,
            fine_type: EntityClass::TypeSedan,
            color: "black".into(),
            orientation: "towards".into(),
            location: None,
            range_m: None,
            velocity_kmh: None,
        };
        let s = render_sentence(&template, &[record], &cat, &mut stream_rng(0, 0)).unwrap();
        let out = apply_informalization(&s, &mut stream_rng(0, 1), 1.0, &cat).unwrap();
        assert!(validate(&out).is_empty());
        let orient = out
            .annotations
            .iter()
            .find(|a| a.class == EntityClass::Orientation)
            .unwrap();
        let surf = out.surface(orient);
        let entry = cat.orientation_by_surface("towards").unwrap();
        assert!(entry.variants.contains(&surf), "surface {surf:?}");
    }

    #[test]
    fn spans_stay_consistent_over_many_informalized_renders() {
        let cat = catalog();
        let pool = Template::default_pool();
        let config = GenConfig {
            n_sentences: 2000,
            informal_rate: 0.6,
            seed: 11,
            ..GenConfig::default()
        };
        let ds = generate_corpus(&config, &cat, &pool).unwrap();
        for (i, s) in ds.sentences.iter().enumerate() {
            let violations = validate(s);
            assert!(violations.is_empty(), "sentence {i}: {violations:?}");
        }
    }

    #[test]
    fn empty_corpus_is_allowed() {
        let cat = catalog();
        let config = GenConfig {
            n_sentences: 0,
            ..GenConfig::default()
        };
        let ds = generate_corpus(&config, &cat, &Template::default_pool()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn same_seed_gives_byte_identical_corpus_json() {
        let cat = catalog();
        let config = GenConfig {
            n_sentences: 60,
            seed: 42,
            ..GenConfig::default()
        };
        let pool = Template::default_pool();
        let a = generate_corpus(&config, &cat, &pool).unwrap();
        let b = generate_corpus(&config, &cat, &pool).unwrap();
        assert_eq!(
            crate::corpus::write_corpus_json(&a.sentences),
            crate::corpus::write_corpus_json(&b.sentences)
        );
    }

    #[test]
    fn narrative_templates_show_up_in_output() {
        let cat = catalog();
        let pool = Template::default_pool();
        let config = GenConfig {
            n_sentences: 300,
            seed: 5,
            ..GenConfig::default()
        };
        let ds = generate_corpus(&config, &cat, &pool).unwrap();
        let narrative_ids: Vec<&str> = pool
            .iter()
            .filter(|t| t.style == Style::Narrative)
            .map(|t| t.id.as_str())
            .collect();
        assert!(ds
            .template_ids
            .iter()
            .any(|id| narrative_ids.contains(&id.as_str())));
    }
}
