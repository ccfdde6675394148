//! Closed concept worlds: occasions, garment categories and attribute types.
//!
//! The vocabulary is data. The reference inventory ships in
//! `data/vocabulary.toml` and is embedded into the binary so every tool can
//! fall back to it.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The reference vocabulary file, embedded at build time.
pub const REFERENCE_VOCABULARY: &str = include_str!("../data/vocabulary.toml");

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("cannot read vocabulary file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse vocabulary: {0}")]
    Parse(String),
    #[error("duplicate {kind} name {name:?}")]
    Duplicate { kind: &'static str, name: String },
    #[error("attribute value {value:?} appears under both {first:?} and {second:?}")]
    ValueInTwoTypes {
        value: String,
        first: String,
        second: String,
    },
    #[error("attribute type {0:?} needs at least two values")]
    TooFewValues(String),
    #[error("vocabulary has no {0}")]
    Empty(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeType {
    pub name: String,
    pub values: Vec<String>,
}

/// Raw on-disk layout; validated into [`ConceptVocabulary`].
#[derive(Deserialize)]
struct VocabularyFile {
    version: String,
    occasions: Vec<String>,
    categories: Vec<String>,
    attributes: Vec<AttributeType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawVocabulary", into = "RawVocabulary")]
pub struct ConceptVocabulary {
    version: String,
    occasions: Vec<String>,
    categories: Vec<String>,
    attributes: Vec<AttributeType>,
    // value name -> (attribute index, value index)
    value_lookup: HashMap<String, (usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct RawVocabulary {
    version: String,
    occasions: Vec<String>,
    categories: Vec<String>,
    attributes: Vec<AttributeType>,
}

impl TryFrom<RawVocabulary> for ConceptVocabulary {
    type Error = VocabError;
    fn try_from(raw: RawVocabulary) -> Result<Self, VocabError> {
        ConceptVocabulary::new(raw.version, raw.occasions, raw.categories, raw.attributes)
    }
}

impl From<ConceptVocabulary> for RawVocabulary {
    fn from(v: ConceptVocabulary) -> Self {
        RawVocabulary {
            version: v.version,
            occasions: v.occasions,
            categories: v.categories,
            attributes: v.attributes,
        }
    }
}

fn check_unique(kind: &'static str, names: &[String]) -> Result<(), VocabError> {
    let mut seen = HashSet::new();
    for name in names {
        if !seen.insert(name.as_str()) {
            return Err(VocabError::Duplicate {
                kind,
                name: name.clone(),
            });
        }
    }
    Ok(())
}

impl ConceptVocabulary {
    pub fn new(
        version: impl Into<String>,
        occasions: Vec<String>,
        categories: Vec<String>,
        attributes: Vec<AttributeType>,
    ) -> Result<Self, VocabError> {
        if occasions.is_empty() {
            return Err(VocabError::Empty("occasions"));
        }
        if categories.is_empty() {
            return Err(VocabError::Empty("categories"));
        }
        check_unique("occasion", &occasions)?;
        check_unique("category", &categories)?;
        let names: Vec<String> = attributes.iter().map(|a| a.name.clone()).collect();
        check_unique("attribute type", &names)?;

        let mut value_lookup: HashMap<String, (usize, usize)> = HashMap::new();
        for (ai, attr) in attributes.iter().enumerate() {
            if attr.values.len() < 2 {
                return Err(VocabError::TooFewValues(attr.name.clone()));
            }
            check_unique("attribute value", &attr.values)?;
            for (vi, value) in attr.values.iter().enumerate() {
                if let Some(&(other, _)) = value_lookup.get(value) {
                    return Err(VocabError::ValueInTwoTypes {
                        value: value.clone(),
                        first: attributes[other].name.clone(),
                        second: attr.name.clone(),
                    });
                }
                value_lookup.insert(value.clone(), (ai, vi));
            }
        }
        Ok(Self {
            version: version.into(),
            occasions,
            categories,
            attributes,
            value_lookup,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, VocabError> {
        let file: VocabularyFile =
            toml::from_str(text).map_err(|e| VocabError::Parse(e.to_string()))?;
        Self::new(
            file.version,
            file.occasions,
            file.categories,
            file.attributes,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// The embedded reference vocabulary (10 occasions, 21 categories,
    /// 8 attribute types, 50 values).
    pub fn reference() -> Self {
        Self::from_toml_str(REFERENCE_VOCABULARY).expect("embedded vocabulary is valid")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn occasions(&self) -> &[String] {
        &self.occasions
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn attributes(&self) -> &[AttributeType] {
        &self.attributes
    }

    pub fn attribute_value_count(&self) -> usize {
        self.attributes.iter().map(|a| a.values.len()).sum()
    }

    pub fn occasion_index(&self, name: &str) -> Option<usize> {
        self.occasions.iter().position(|o| o == name)
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Resolve an attribute value to `(attribute index, value index)`.
    pub fn locate_value(&self, value: &str) -> Option<(usize, usize)> {
        self.value_lookup.get(value).copied()
    }

    /// Number of concept slots per garment: the category plus one per attribute type.
    pub fn slot_count(&self) -> usize {
        1 + self.attributes.len()
    }

    /// Label-set size of every task in canonical order:
    /// occasion, category, then each attribute type.
    pub fn task_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.occasions.len(), self.categories.len()];
        sizes.extend(self.attributes.iter().map(|a| a.values.len()));
        sizes
    }

    /// Task names in the order of [`task_sizes`](Self::task_sizes).
    pub fn task_names(&self) -> Vec<String> {
        let mut names = vec!["occasion".to_string(), "category".to_string()];
        names.extend(self.attributes.iter().map(|a| a.name.clone()));
        names
    }

    pub fn to_toml_string(&self) -> String {
        let raw = RawVocabulary::from(self.clone());
        toml::to_string(&raw).expect("vocabulary serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_counts() {
        let v = ConceptVocabulary::reference();
        assert_eq!(v.occasions().len(), 10);
        assert_eq!(v.categories().len(), 21);
        assert_eq!(v.attributes().len(), 8);
        assert_eq!(v.attribute_value_count(), 50);
        assert_eq!(v.task_sizes().iter().sum::<usize>(), 81);
    }

    #[test]
    fn duplicate_occasion_rejected() {
        let text = r#"
version = "x"
occasions = ["prom", "wedding", "prom"]
categories = ["dress"]
[[attributes]]
name = "color"
values = ["red", "blue"]
"#;
        let err = ConceptVocabulary::from_toml_str(text).unwrap_err();
        assert!(
            matches!(
                err,
                VocabError::Duplicate {
                    kind: "occasion",
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn value_in_two_types_rejected() {
        let text = r#"
version = "x"
occasions = ["prom"]
categories = ["dress"]
[[attributes]]
name = "color"
values = ["red", "blue"]
[[attributes]]
name = "trim"
values = ["red", "lace"]
"#;
        let err = ConceptVocabulary::from_toml_str(text).unwrap_err();
        assert!(matches!(err, VocabError::ValueInTwoTypes { .. }), "{err}");
    }

    #[test]
    fn empty_value_list_rejected() {
        let text = r#"
version = "x"
occasions = ["prom"]
categories = ["dress"]
[[attributes]]
name = "color"
values = []
"#;
        assert!(matches!(
            ConceptVocabulary::from_toml_str(text),
            Err(VocabError::TooFewValues(_))
        ));
    }

    #[test]
    fn parse_failure_reported() {
        assert!(matches!(
            ConceptVocabulary::from_toml_str("occasions = ["),
            Err(VocabError::Parse(_))
        ));
    }

    #[test]
    fn names_are_case_sensitive() {
        let text = r#"
version = "x"
occasions = ["Prom", "prom"]
categories = ["dress"]
attributes = []
"#;
        let v = ConceptVocabulary::from_toml_str(text).unwrap();
        assert_eq!(v.occasion_index("prom"), Some(1));
    }

    #[test]
    fn toml_round_trip() {
        let v = ConceptVocabulary::reference();
        let again = ConceptVocabulary::from_toml_str(&v.to_toml_string()).unwrap();
        assert_eq!(v, again);
    }
}
