//! Sentence templates with typed attribute slots.
//!
//! Slot syntax is `{KIND}` for single-vehicle templates and `{KIND#k}`
//! (1-based vehicle index) for multi-vehicle ones.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GenError;
use crate::corpus::EntityClass;

/// The eight attribute kinds a slot can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotKind {
    Color,
    Type,
    Brand,
    Model,
    Orientation,
    Location,
    Range,
    Velocity,
}

impl SlotKind {
    pub const ALL: [SlotKind; 8] = [
        SlotKind::Color,
        SlotKind::Type,
        SlotKind::Brand,
        SlotKind::Model,
        SlotKind::Orientation,
        SlotKind::Location,
        SlotKind::Range,
        SlotKind::Velocity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SlotKind::Color => "COLOR",
            SlotKind::Type => "TYPE",
            SlotKind::Brand => "BRAND",
            SlotKind::Model => "MODEL",
            SlotKind::Orientation => "ORIENTATION",
            SlotKind::Location => "LOCATION",
            SlotKind::Range => "RANGE",
            SlotKind::Velocity => "VELOCITY",
        }
    }

    fn from_name(name: &str) -> Option<SlotKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Coarse entity class a filled slot is annotated with.
    pub fn entity_class(&self) -> EntityClass {
        match self {
            SlotKind::Color => EntityClass::Color,
            SlotKind::Type => EntityClass::VehicleType,
            SlotKind::Brand => EntityClass::Brand,
            SlotKind::Model => EntityClass::Model,
            SlotKind::Orientation => EntityClass::Orientation,
            SlotKind::Location => EntityClass::Location,
            SlotKind::Range => EntityClass::Range,
            SlotKind::Velocity => EntityClass::Velocity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Simple,
    Narrative,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Part {
    Literal(String),
    Slot { kind: SlotKind, vehicle: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub id: String,
    pub style: Style,
    pub vehicle_arity: usize,
    pub pattern: String,
    pub(crate) parts: Vec<Part>,
}

#[derive(Serialize, Deserialize)]
struct TemplateFile {
    id: String,
    style: Style,
    arity: usize,
    pattern: String,
}

impl Template {
    pub fn parse(id: &str, style: Style, arity: usize, pattern: &str) -> Result<Template, GenError> {
        if !(1..=2).contains(&arity) {
            return Err(GenError::Template(format!(
                "template {id}: arity must be 1 or 2, got {arity}"
            )));
        }
        let parts = parse_parts(id, arity, pattern)?;
        let has_slot = parts.iter().any(|p| matches!(p, Part::Slot { .. }));
        if !has_slot {
            return Err(GenError::Template(format!("template {id} has no slots")));
        }
        for v in 1..=arity {
            if !parts
                .iter()
                .any(|p| matches!(p, Part::Slot { vehicle, .. } if *vehicle == v))
            {
                return Err(GenError::Template(format!(
                    "template {id}: vehicle {v} has no slots"
                )));
            }
        }
        Ok(Template {
            id: id.to_string(),
            style,
            vehicle_arity: arity,
            pattern: pattern.to_string(),
            parts,
        })
    }

    /// Distinct slot kinds used for the given vehicle (1-based).
    pub fn kinds_for_vehicle(&self, vehicle: usize) -> Vec<SlotKind> {
        let mut kinds = Vec::new();
        for p in &self.parts {
            if let Part::Slot { kind, vehicle: v } = p {
                if *v == vehicle && !kinds.contains(kind) {
                    kinds.push(*kind);
                }
            }
        }
        kinds
    }

    /// Distinct slot kinds over all vehicles.
    pub fn kinds(&self) -> Vec<SlotKind> {
        let mut kinds = Vec::new();
        for v in 1..=self.vehicle_arity {
            for k in self.kinds_for_vehicle(v) {
                if !kinds.contains(&k) {
                    kinds.push(k);
                }
            }
        }
        kinds
    }

    /// Loads a template file: a JSON array of {id, style, arity, pattern}.
    pub fn load_file(path: &Path) -> Result<Vec<Template>, GenError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Vec<Template>, GenError> {
        let entries: Vec<TemplateFile> =
            serde_json::from_str(text).map_err(|e| GenError::Template(e.to_string()))?;
        let mut out = Vec::with_capacity(entries.len());
        let mut seen = std::collections::HashSet::new();
        for e in entries {
            if !seen.insert(e.id.clone()) {
                return Err(GenError::Template(format!("duplicate template id {}", e.id)));
            }
            out.push(Template::parse(&e.id, e.style, e.arity, &e.pattern)?);
        }
        Ok(out)
    }

    /// The template pool shipped with the crate.
    pub fn default_pool() -> Vec<Template> {
        Self::from_json(include_str!("../../assets/default_templates.json"))
            .expect("shipped templates are valid")
    }
}

fn parse_parts(id: &str, arity: usize, pattern: &str) -> Result<Vec<Part>, GenError> {
    let mut parts = Vec::new();
    let mut literal = String::new();
    let mut chars = pattern.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '{' {
            if c == '}' {
                return Err(GenError::Template(format!(
                    "template {id}: unmatched `}}` in pattern"
                )));
            }
            literal.push(c);
            continue;
        }
        let mut inner = String::new();
        let mut closed = false;
        for c in chars.by_ref() {
            if c == '}' {
                closed = true;
                break;
            }
            inner.push(c);
        }
        if !closed {
            return Err(GenError::Template(format!(
                "template {id}: unterminated slot in pattern"
            )));
        }
        let (name, vehicle) = match inner.split_once('#') {
            Some((name, idx)) => {
                let v: usize = idx.parse().map_err(|_| {
                    GenError::Template(format!("template {id}: bad vehicle index in `{{{inner}}}`"))
                })?;
                (name, v)
            }
            None => (inner.as_str(), 1),
        };
        let kind = SlotKind::from_name(name).ok_or_else(|| {
            GenError::Template(format!("template {id}: unknown slot kind `{name}`"))
        })?;
        if vehicle == 0 || vehicle > arity {
            return Err(GenError::Template(format!(
                "template {id}: vehicle index {vehicle} out of range for arity {arity}"
            )));
        }
        if !literal.is_empty() {
            parts.push(Part::Literal(std::mem::take(&mut literal)));
        }
        parts.push(Part::Slot { kind, vehicle });
    }
    if !literal.is_empty() {
        parts.push(Part::Literal(literal));
    }
    Ok(parts)
}
