//! The relational attribute table driving sentence generation, gazetteer
//! features, and proposal rendering.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GenError;
use crate::corpus::EntityClass;

/// Canonical color with its render RGB and informal surface variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorEntry {
    pub name: String,
    pub rgb: [u8; 3],
    #[serde(default)]
    pub variants: Vec<String>,
}

/// Canonical surface with informal variants (orientations, locations).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantEntry {
    pub name: String,
    #[serde(default)]
    pub variants: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelEntry {
    pub brand: String,
    pub model: String,
    pub fine: EntityClass,
}

/// On-disk catalog layout.
#[derive(Serialize, Deserialize)]
struct CatalogFile {
    brands: Vec<String>,
    models: Vec<(String, String, String)>,
    colors: Vec<ColorEntry>,
    orientations: Vec<VariantEntry>,
    locations: Vec<VariantEntry>,
    range_patterns: Vec<String>,
    velocity_patterns: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct AttributeCatalog {
    pub brands: Vec<String>,
    pub models: Vec<ModelEntry>,
    pub colors: Vec<ColorEntry>,
    pub orientations: Vec<VariantEntry>,
    pub locations: Vec<VariantEntry>,
    pub range_patterns: Vec<String>,
    pub velocity_patterns: Vec<String>,
    model_types: HashMap<(String, String), EntityClass>,
}

const ORIENTATION_CANON: [&str; 4] = ["towards", "away", "left", "right"];

impl AttributeCatalog {
    /// Loads and validates a catalog file.
    pub fn load(path: &Path) -> Result<AttributeCatalog, GenError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// The catalog shipped with the crate.
    pub fn default_catalog() -> AttributeCatalog {
        Self::from_json(include_str!("../../assets/default_catalog.json"))
            .expect("shipped catalog is valid")
    }

    pub fn from_json(text: &str) -> Result<AttributeCatalog, GenError> {
        let file: CatalogFile =
            serde_json::from_str(text).map_err(|e| GenError::Catalog(e.to_string()))?;
        let mut models = Vec::with_capacity(file.models.len());
        let mut model_types = HashMap::new();
        for (brand, model, fine_tag) in file.models {
            let fine = EntityClass::from_tag(&fine_tag)
                .filter(EntityClass::is_fine)
                .ok_or_else(|| {
                    GenError::Catalog(format!(
                        "model ({brand}, {model}) maps to unknown fine type `{fine_tag}`"
                    ))
                })?;
            if !file.brands.contains(&brand) {
                return Err(GenError::Catalog(format!(
                    "model ({brand}, {model}) references a brand not in `brands`"
                )));
            }
            let key = (brand.to_lowercase(), model.to_lowercase());
            if model_types.insert(key, fine).is_some() {
                return Err(GenError::Catalog(format!(
                    "duplicate (brand, model) pair ({brand}, {model})"
                )));
            }
            models.push(ModelEntry { brand, model, fine });
        }
        for o in &file.orientations {
            if !ORIENTATION_CANON.contains(&o.name.as_str()) {
                return Err(GenError::Catalog(format!(
                    "orientation `{}` is not one of {:?}",
                    o.name, ORIENTATION_CANON
                )));
            }
        }
        if file.orientations.len() != ORIENTATION_CANON.len() {
            return Err(GenError::Catalog(
                "catalog must define exactly the four canonical orientations".into(),
            ));
        }
        if file.range_patterns.is_empty() || file.velocity_patterns.is_empty() {
            return Err(GenError::Catalog(
                "range/velocity pattern lists must not be empty".into(),
            ));
        }
        Ok(AttributeCatalog {
            brands: file.brands,
            models,
            colors: file.colors,
            orientations: file.orientations,
            locations: file.locations,
            range_patterns: file.range_patterns,
            velocity_patterns: file.velocity_patterns,
            model_types,
        })
    }

    pub fn to_json(&self) -> String {
        let file = CatalogFile {
            brands: self.brands.clone(),
            models: self
                .models
                .iter()
                .map(|m| (m.brand.clone(), m.model.clone(), m.fine.tag().to_string()))
                .collect(),
            colors: self.colors.clone(),
            orientations: self.orientations.clone(),
            locations: self.locations.clone(),
            range_patterns: self.range_patterns.clone(),
            velocity_patterns: self.velocity_patterns.clone(),
        };
        serde_json::to_string_pretty(&file).expect("catalog serialization cannot fail")
    }

    /// Fine vehicle type of a (brand, model) pair, case-insensitive.
    pub fn fine_type_of(&self, brand: &str, model: &str) -> Option<EntityClass> {
        self.model_types
            .get(&(brand.to_lowercase(), model.to_lowercase()))
            .copied()
    }

    pub fn models_of_type(&self, fine: EntityClass) -> Vec<&ModelEntry> {
        self.models.iter().filter(|m| m.fine == fine).collect()
    }

    /// Canonical color entry for a canonical name or any variant.
    pub fn color_by_surface(&self, surface: &str) -> Option<&ColorEntry> {
        let key = surface.trim().to_lowercase();
        self.colors
            .iter()
            .find(|c| c.name == key || c.variants.iter().any(|v| *v == key))
    }

    pub fn orientation_by_surface(&self, surface: &str) -> Option<&VariantEntry> {
        let key = surface.trim().to_lowercase();
        self.orientations
            .iter()
            .find(|c| c.name == key || c.variants.iter().any(|v| *v == key))
    }

    pub fn location_by_surface(&self, surface: &str) -> Option<&VariantEntry> {
        let key = surface.trim().to_lowercase();
        self.locations
            .iter()
            .find(|c| c.name == key || c.variants.iter().any(|v| *v == key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FINE_CLASSES;

    #[test]
    fn shipped_catalog_loads_with_all_thirteen_types() {
        let cat = AttributeCatalog::default_catalog();
        for fine in FINE_CLASSES {
            assert!(
                !cat.models_of_type(fine).is_empty(),
                "no models of {}",
                fine.tag()
            );
        }
        assert!(cat.brands.len() >= 20, "{} brands", cat.brands.len());
        assert!(cat.models.len() >= 100, "{} models", cat.models.len());
        assert!(cat.colors.len() >= 25, "{} colors", cat.colors.len());
    }

    #[test]
    fn bmw_x5_is_an_suv() {
        let cat = AttributeCatalog::default_catalog();
        assert_eq!(cat.fine_type_of("BMW", "X5"), Some(EntityClass::TypeSuv));
        assert_eq!(cat.fine_type_of("bmw", "x5"), Some(EntityClass::TypeSuv));
    }

    #[test]
    fn unknown_fine_type_is_a_catalog_error() {
        let bad = r#"{
            "brands": ["Acme"],
            "models": [["Acme", "Jetstream", "jet"]],
            "colors": [], "locations": [],
            "orientations": [
                {"name": "towards"}, {"name": "away"}, {"name": "left"}, {"name": "right"}
            ],
            "range_patterns": ["NN m"], "velocity_patterns": ["NN km/h"]
        }"#;
        assert!(matches!(
            AttributeCatalog::from_json(bad),
            Err(GenError::Catalog(_))
        ));
    }

    #[test]
    fn duplicate_pair_is_a_catalog_error() {
        let bad = r#"{
            "brands": ["Acme"],
            "models": [
                ["Acme", "One", "vehicle_type-sedan"],
                ["Acme", "One", "vehicle_type-suv"]
            ],
            "colors": [], "locations": [],
            "orientations": [
                {"name": "towards"}, {"name": "away"}, {"name": "left"}, {"name": "right"}
            ],
            "range_patterns": ["NN m"], "velocity_patterns": ["NN km/h"]
        }"#;
        assert!(matches!(
            AttributeCatalog::from_json(bad),
            Err(GenError::Catalog(_))
        ));
    }

    #[test]
    fn variant_lookup_maps_to_canonical_entry() {
        let cat = AttributeCatalog::default_catalog();
        assert_eq!(cat.orientation_by_surface("this way").unwrap().name, "towards");
        assert_eq!(cat.color_by_surface("silver grey").unwrap().name, "silver");
        assert_eq!(cat.location_by_surface("top-left").unwrap().name, "top left");
    }
}
