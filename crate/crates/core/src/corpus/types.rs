//! Core annotation types: entity classes, tokens, spans, sentences.

use serde::{Deserialize, Serialize};

/// Annotation layer. Coarse holds the eight attribute classes, fine the
/// thirteen `vehicle_type-*` subclasses that overlap brand/model spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Coarse,
    Fine,
}

/// The 21 entity classes: 8 coarse attribute classes and 13 fine-grained
/// vehicle-type classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityClass {
    Location,
    Orientation,
    Brand,
    Model,
    VehicleType,
    Color,
    Range,
    Velocity,
    TypeSedan,
    TypeSuv,
    TypeMotorcycle,
    TypeSportsCar,
    TypeHatchback,
    TypeVintageCar,
    TypeCoupe,
    TypeTruck,
    TypeVan,
    TypeMpv,
    TypeEstateCar,
    TypeBus,
    TypeRoadster,
}

pub const COARSE_CLASSES: [EntityClass; 8] = [
    EntityClass::Location,
    EntityClass::Orientation,
    EntityClass::Brand,
    EntityClass::Model,
    EntityClass::VehicleType,
    EntityClass::Color,
    EntityClass::Range,
    EntityClass::Velocity,
];

pub const FINE_CLASSES: [EntityClass; 13] = [
    EntityClass::TypeSedan,
    EntityClass::TypeSuv,
    EntityClass::TypeMotorcycle,
    EntityClass::TypeSportsCar,
    EntityClass::TypeHatchback,
    EntityClass::TypeVintageCar,
    EntityClass::TypeCoupe,
    EntityClass::TypeTruck,
    EntityClass::TypeVan,
    EntityClass::TypeMpv,
    EntityClass::TypeEstateCar,
    EntityClass::TypeBus,
    EntityClass::TypeRoadster,
];

impl EntityClass {
    /// All 21 classes, coarse first.
    pub fn all() -> impl Iterator<Item = EntityClass> {
        COARSE_CLASSES.into_iter().chain(FINE_CLASSES)
    }

    /// The annotation tag as written in corpus files.
    pub fn tag(&self) -> &'static str {
        match self {
            EntityClass::Location => "vehicle_location",
            EntityClass::Orientation => "vehicle_orientation",
            EntityClass::Brand => "vehicle_brand",
            EntityClass::Model => "vehicle_model",
            EntityClass::VehicleType => "vehicle_type",
            EntityClass::Color => "vehicle_color",
            EntityClass::Range => "vehicle_range",
            EntityClass::Velocity => "vehicle_velocity",
            EntityClass::TypeSedan => "vehicle_type-sedan",
            EntityClass::TypeSuv => "vehicle_type-suv",
            EntityClass::TypeMotorcycle => "vehicle_type-motorcycle",
            EntityClass::TypeSportsCar => "vehicle_type-sports_car",
            EntityClass::TypeHatchback => "vehicle_type-hatchback",
            EntityClass::TypeVintageCar => "vehicle_type-vintage_car",
            EntityClass::TypeCoupe => "vehicle_type-coupe",
            EntityClass::TypeTruck => "vehicle_type-truck",
            EntityClass::TypeVan => "vehicle_type-van",
            EntityClass::TypeMpv => "vehicle_type-mpv",
            EntityClass::TypeEstateCar => "vehicle_type-estate_car",
            EntityClass::TypeBus => "vehicle_type-bus",
            EntityClass::TypeRoadster => "vehicle_type-roadster",
        }
    }

    pub fn from_tag(tag: &str) -> Option<EntityClass> {
        EntityClass::all().find(|c| c.tag() == tag)
    }

    pub fn is_fine(&self) -> bool {
        matches!(self.layer(), Layer::Fine)
    }

    pub fn layer(&self) -> Layer {
        if COARSE_CLASSES.contains(self) {
            Layer::Coarse
        } else {
            Layer::Fine
        }
    }

    /// For a fine class, the plain-text surface of its base type, e.g.
    /// `vehicle_type-sports_car` maps to "sports car".
    pub fn type_surface(&self) -> Option<String> {
        if !self.is_fine() {
            return None;
        }
        let suffix = self.tag().strip_prefix("vehicle_type-").unwrap();
        Some(suffix.replace('_', " "))
    }

    /// Inverse of [`EntityClass::type_surface`].
    pub fn fine_from_type_surface(surface: &str) -> Option<EntityClass> {
        let key = surface.trim().to_lowercase().replace(' ', "_");
        FINE_CLASSES
            .into_iter()
            .find(|c| c.tag().strip_prefix("vehicle_type-") == Some(key.as_str()))
    }
}

impl Serialize for EntityClass {
    fn serialize<Ser: serde::Serializer>(&self, ser: Ser) -> Result<Ser::Ok, Ser::Error> {
        ser.serialize_str(self.tag())
    }
}

impl<'de> Deserialize<'de> for EntityClass {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let tag = String::deserialize(de)?;
        EntityClass::from_tag(&tag)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown entity class `{tag}`")))
    }
}

/// Coarse part-of-speech tags produced by the closed rule set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pos {
    Noun,
    Verb,
    Adj,
    Num,
    Prep,
    Det,
    Punct,
    Other,
}

impl Pos {
    pub fn tag(&self) -> &'static str {
        match self {
            Pos::Noun => "NOUN",
            Pos::Verb => "VERB",
            Pos::Adj => "ADJ",
            Pos::Num => "NUM",
            Pos::Prep => "PREP",
            Pos::Det => "DET",
            Pos::Punct => "PUNCT",
            Pos::Other => "OTHER",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Pos> {
        [
            Pos::Noun,
            Pos::Verb,
            Pos::Adj,
            Pos::Num,
            Pos::Prep,
            Pos::Det,
            Pos::Punct,
            Pos::Other,
        ]
        .into_iter()
        .find(|p| p.tag() == tag)
    }
}

/// One token. Offsets count Unicode scalar values, start inclusive and end
/// exclusive. `pos` is filled by [`super::pos_tag`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub char_start: usize,
    pub char_end: usize,
    pub pos: Option<Pos>,
}

/// One entity span over both the char and token index spaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub class: EntityClass,
    pub char_span: (usize, usize),
    pub token_span: (usize, usize),
    pub layer: Layer,
}

impl EntityAnnotation {
    pub fn new(class: EntityClass, char_span: (usize, usize), token_span: (usize, usize)) -> Self {
        EntityAnnotation {
            class,
            char_span,
            token_span,
            layer: class.layer(),
        }
    }

    pub fn overlaps_tokens(&self, other: &EntityAnnotation) -> bool {
        self.token_span.0 < other.token_span.1 && other.token_span.0 < self.token_span.1
    }
}

/// An annotated sentence. `relation_groups` lists, per described vehicle,
/// the indices of the annotations that refer to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub tokens: Vec<Token>,
    pub annotations: Vec<EntityAnnotation>,
    pub relation_groups: Vec<Vec<usize>>,
}

impl Sentence {
    /// Text slice covered by an annotation, in char index space.
    pub fn surface(&self, ann: &EntityAnnotation) -> String {
        self.char_slice(ann.char_span.0, ann.char_span.1)
    }

    pub fn char_slice(&self, start: usize, end: usize) -> String {
        self.text
            .chars()
            .skip(start)
            .take(end.saturating_sub(start))
            .collect()
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    pub fn annotations_in_layer(&self, layer: Layer) -> impl Iterator<Item = &EntityAnnotation> {
        self.annotations.iter().filter(move |a| a.layer == layer)
    }

    /// Canonical per-layer span keys, used by round-trip comparisons where
    /// annotation order is not meaningful.
    pub fn span_keys(&self, layer: Layer) -> Vec<(usize, usize, EntityClass)> {
        let mut keys: Vec<_> = self
            .annotations_in_layer(layer)
            .map(|a| (a.token_span.0, a.token_span.1, a.class))
            .collect();
        keys.sort();
        keys
    }
}

/// Dataset split names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Val,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Val => "val",
        }
    }
}

/// A set of sentences with generation provenance. Sentence ids are the
/// vector indices. The provenance fields (`template_ids`, `model_keys`) and
/// reservation lists (`test_templates`, `test_models`) are carried by the
/// generator so that the dataset split can hold whole templates and whole
/// vehicle models out of training; all are empty for corpora loaded from
/// plain corpus files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub sentences: Vec<Sentence>,
    pub split_name: Split,
    pub seed: u64,
    #[serde(default)]
    pub template_ids: Vec<String>,
    #[serde(default)]
    pub test_templates: Vec<String>,
    /// Per sentence: lowercased "brand|model" keys of the pairs it mentions.
    #[serde(default)]
    pub model_keys: Vec<Vec<String>>,
    #[serde(default)]
    pub test_models: Vec<String>,
}

impl Dataset {
    pub fn new(sentences: Vec<Sentence>, split_name: Split, seed: u64) -> Self {
        Dataset {
            sentences,
            split_name,
            seed,
            template_ids: Vec::new(),
            test_templates: Vec::new(),
            model_keys: Vec::new(),
            test_models: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_eight_coarse_and_thirteen_fine_classes() {
        assert_eq!(COARSE_CLASSES.len(), 8);
        assert_eq!(FINE_CLASSES.len(), 13);
        assert_eq!(EntityClass::all().count(), 21);
    }

    #[test]
    fn every_fine_class_has_the_type_prefix() {
        for class in FINE_CLASSES {
            assert!(class.tag().starts_with("vehicle_type-"), "{}", class.tag());
            assert!(class.is_fine());
        }
        for class in COARSE_CLASSES {
            assert!(!class.is_fine());
        }
    }

    #[test]
    fn tag_round_trip() {
        for class in EntityClass::all() {
            assert_eq!(EntityClass::from_tag(class.tag()), Some(class));
        }
        assert_eq!(EntityClass::from_tag("vehicle_sedan"), None);
    }

    #[test]
    fn type_surfaces_use_spaces() {
        assert_eq!(
            EntityClass::TypeSportsCar.type_surface().unwrap(),
            "sports car"
        );
        assert_eq!(
            EntityClass::fine_from_type_surface("sports car"),
            Some(EntityClass::TypeSportsCar)
        );
        assert_eq!(EntityClass::VehicleType.type_surface(), None);
    }
}
