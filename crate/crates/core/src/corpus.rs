//! Post data model and the line-delimited corpus format.
//!
//! A corpus file is UTF-8 text with one JSON object per line. Each object
//! carries the post fields, plus optional `labels` (training data) and
//! optional `person_pairs` (written by the filter stage). Feature vectors
//! are arrays of decimal numbers printed in shortest round-trip form, so a
//! write followed by a read reproduces every `f64` bit for bit.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::PersonPair;
use crate::vocab::ConceptVocabulary;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {what} dimension {found} differs from corpus dimension {expected}")]
    DimensionMismatch {
        line: usize,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate post_id {post_id:?}")]
    DuplicatePost { line: usize, post_id: String },
}

/// Axis-aligned box in pixels, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn right(&self) -> f64 {
        self.x + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.height
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.width / 2.0, self.y + self.height / 2.0)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.right().min(other.right()) - self.x.max(other.x);
        let h = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    fn check(&self, image_width: f64, image_height: f64) -> Result<(), String> {
        let finite = [self.x, self.y, self.width, self.height]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err("box has a non-finite coordinate".into());
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(format!(
                "box has non-positive size {}x{}",
                self.width, self.height
            ));
        }
        if self.x < 0.0
            || self.y < 0.0
            || self.right() > image_width
            || self.bottom() > image_height
        {
            return Err(format!(
                "box ({}, {}, {}, {}) leaves the {}x{} image",
                self.x, self.y, self.width, self.height, image_width, image_height
            ));
        }
        Ok(())
    }
}

/// A detector output: a box with its confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarmentRegion {
    pub region_id: String,
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rough_category: Option<String>,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub image_width: f64,
    pub image_height: f64,
    #[serde(default)]
    pub caption: String,
    #[serde(default)]
    pub hashtags: Vec<String>,
    pub timestamp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default)]
    pub likes: u64,
    #[serde(default)]
    pub comments: u64,
    #[serde(default)]
    pub faces: Vec<Detection>,
    #[serde(default)]
    pub bodies: Vec<Detection>,
    #[serde(default)]
    pub garments: Vec<GarmentRegion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender_hint: Option<Gender>,
    pub image_feature: Vec<f64>,
}

impl Post {
    /// Structural checks that need no vocabulary.
    pub fn validate(&self) -> Result<(), String> {
        if self.post_id.is_empty() {
            return Err("post_id is empty".into());
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return Err(format!(
                "image size {}x{} is not positive",
                self.image_width, self.image_height
            ));
        }
        for det in self.faces.iter().chain(&self.bodies) {
            det.bbox.check(self.image_width, self.image_height)?;
            if !(0.0..=1.0).contains(&det.confidence) {
                return Err(format!("confidence {} outside [0, 1]", det.confidence));
            }
        }
        let mut ids = HashSet::new();
        for g in &self.garments {
            if !ids.insert(g.region_id.as_str()) {
                return Err(format!("duplicate region_id {:?}", g.region_id));
            }
            g.bbox.check(self.image_width, self.image_height)?;
            if g.feature.iter().any(|v| !v.is_finite()) {
                return Err(format!("region {:?} has a non-finite feature", g.region_id));
            }
        }
        if self.image_feature.iter().any(|v| !v.is_finite()) {
            return Err("image_feature has a non-finite value".into());
        }
        Ok(())
    }

    /// Checks that reference the vocabulary (rough categories).
    pub fn validate_against(&self, vocab: &ConceptVocabulary) -> Result<(), String> {
        for g in &self.garments {
            if let Some(c) = &g.rough_category {
                if vocab.category_index(c).is_none() {
                    return Err(format!("unknown rough_category {c:?}"));
                }
            }
        }
        Ok(())
    }

    /// Feature dimension of the garment regions, if the post has any and they agree.
    fn region_dim(&self) -> Result<Option<usize>, (usize, usize)> {
        let mut dim = None;
        for g in &self.garments {
            match dim {
                None => dim = Some(g.feature.len()),
                Some(d) if d != g.feature.len() => return Err((d, g.feature.len())),
                _ => {}
            }
        }
        Ok(dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Clean,
    Weak,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GarmentLabels {
    pub category: String,
    /// attribute type -> value
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostLabels {
    pub occasion: String,
    /// Parallel to `Post::garments`.
    pub garments: Vec<GarmentLabels>,
    pub source: LabelSource,
}

/// Label indices resolved against a vocabulary, in task order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelIndices {
    pub occasion: usize,
    /// Per garment: category index followed by one value index per attribute type.
    pub garments: Vec<Vec<usize>>,
    pub source: LabelSource,
}

impl PostLabels {
    pub fn resolve(&self, vocab: &ConceptVocabulary) -> Result<LabelIndices, String> {
        let occasion = vocab
            .occasion_index(&self.occasion)
            .ok_or_else(|| format!("unknown occasion {:?}", self.occasion))?;
        let mut garments = Vec::with_capacity(self.garments.len());
        for g in &self.garments {
            let mut slots = Vec::with_capacity(vocab.slot_count());
            slots.push(
                vocab
                    .category_index(&g.category)
                    .ok_or_else(|| format!("unknown category {:?}", g.category))?,
            );
            if g.attributes.len() != vocab.attributes().len() {
                return Err(format!(
                    "garment has {} attribute labels, vocabulary has {} types",
                    g.attributes.len(),
                    vocab.attributes().len()
                ));
            }
            for attr in vocab.attributes() {
                let value = g
                    .attributes
                    .get(&attr.name)
                    .ok_or_else(|| format!("missing label for attribute {:?}", attr.name))?;
                let vi = attr
                    .values
                    .iter()
                    .position(|v| v == value)
                    .ok_or_else(|| format!("unknown value {value:?} for {:?}", attr.name))?;
                slots.push(vi);
            }
            garments.push(slots);
        }
        Ok(LabelIndices {
            occasion,
            garments,
            source: self.source,
        })
    }
}

impl LabelIndices {
    pub fn to_labels(&self, vocab: &ConceptVocabulary) -> PostLabels {
        PostLabels {
            occasion: vocab.occasions()[self.occasion].clone(),
            garments: self
                .garments
                .iter()
                .map(|slots| GarmentLabels {
                    category: vocab.categories()[slots[0]].clone(),
                    attributes: vocab
                        .attributes()
                        .iter()
                        .zip(&slots[1..])
                        .map(|(a, &v)| (a.name.clone(), a.values[v].clone()))
                        .collect(),
                })
                .collect(),
            source: self.source,
        }
    }
}

/// One corpus line: a post with optional training labels and optional
/// person pairs attached by the filter stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    #[serde(flatten)]
    pub post: Post,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PostLabels>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_pairs: Option<Vec<PersonPair>>,
}

impl From<Post> for CorpusRecord {
    fn from(post: Post) -> Self {
        Self {
            post,
            labels: None,
            person_pairs: None,
        }
    }
}

impl CorpusRecord {
    pub fn labeled(post: Post, labels: PostLabels) -> Self {
        Self {
            post,
            labels: Some(labels),
            person_pairs: None,
        }
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self, CorpusError> {
        let record: CorpusRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        record
            .post
            .validate()
            .map_err(|message| CorpusError::Malformed {
                line: line_no,
                message,
            })?;
        if let Some(labels) = &record.labels {
            if labels.garments.len() != record.post.garments.len() {
                return Err(CorpusError::Malformed {
                    line: line_no,
                    message: format!(
                        "{} garment labels for {} garment regions",
                        labels.garments.len(),
                        record.post.garments.len()
                    ),
                });
            }
        }
        Ok(record)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("corpus record serializes")
    }
}

/// Streams records from a corpus file one line at a time. Blank lines are
/// skipped. Dimension and uniqueness checks are left to the caller.
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl CorpusReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::new(BufReader::new(file)))
    }
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    /// `(line number, record)`; line numbers start at 1.
    type Item = (usize, Result<CorpusRecord, CorpusError>);

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    return Some((
                        self.line_no,
                        Err(CorpusError::Malformed {
                            line: self.line_no,
                            message: e.to_string(),
                        }),
                    ))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some((self.line_no, CorpusRecord::parse_line(&line, self.line_no)));
        }
    }
}

/// Tracks feature dimensions across a corpus.
#[derive(Debug, Default, Clone)]
pub struct DimensionGuard {
    image: Option<usize>,
    region: Option<usize>,
}

impl DimensionGuard {
    pub fn check(&mut self, post: &Post, line: usize) -> Result<(), CorpusError> {
        let img = post.image_feature.len();
        match self.image {
            None => self.image = Some(img),
            Some(d) if d != img => {
                return Err(CorpusError::DimensionMismatch {
                    line,
                    what: "image_feature",
                    expected: d,
                    found: img,
                })
            }
            _ => {}
        }
        let region =
            post.region_dim()
                .map_err(|(expected, found)| CorpusError::DimensionMismatch {
                    line,
                    what: "region feature",
                    expected,
                    found,
                })?;
        if let Some(r) = region {
            match self.region {
                None => self.region = Some(r),
                Some(d) if d != r => {
                    return Err(CorpusError::DimensionMismatch {
                        line,
                        what: "region feature",
                        expected: d,
                        found: r,
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn image_dim(&self) -> Option<usize> {
        self.image
    }

    pub fn region_dim(&self) -> Option<usize> {
        self.region
    }
}

/// Reads a whole corpus, enforcing unique post ids and uniform feature dimensions.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>, CorpusError> {
    collect_corpus(CorpusReader::open(path)?)
}

pub fn read_corpus_from<R: BufRead>(reader: R) -> Result<Vec<CorpusRecord>, CorpusError> {
    collect_corpus(CorpusReader::new(reader))
}

fn collect_corpus<R: BufRead>(reader: CorpusReader<R>) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut dims = DimensionGuard::default();
    let mut ids = HashSet::new();
    let mut out = Vec::new();
    for (line, record) in reader {
        let record = record?;
        dims.check(&record.post, line)?;
        if !ids.insert(record.post.post_id.clone()) {
            return Err(CorpusError::DuplicatePost {
                line,
                post_id: record.post.post_id,
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_corpus<'a>(
    records: impl IntoIterator<Item = &'a CorpusRecord>,
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    write_corpus_to(records, &mut out).map_err(io_err)?;
    out.flush().map_err(io_err)
}

pub fn write_corpus_to<'a, W: Write>(
    records: impl IntoIterator<Item = &'a CorpusRecord>,
    out: &mut W,
) -> std::io::Result<()> {
    for record in records {
        out.write_all(record.to_line().as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
