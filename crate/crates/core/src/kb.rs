//! Triplet instances, their aggregated counts, the inverted indexes used by
//! search, and the snapshot file format.
//!
//! Snapshot layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes   "FKBS"
//! version  1 byte    SNAPSHOT_VERSION
//! length   8 bytes   payload length in bytes
//! payload  length    JSON: vocabulary, post metadata, instances (sorted)
//! checksum 32 bytes  SHA-256 of the payload
//! ```
//!
//! Only instances and post metadata are stored; counts and indexes are
//! rebuilt on load.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Gender, Post, PostLabels};
use crate::filters::PersonPair;
use crate::vocab::ConceptVocabulary;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"FKBS";
pub const SNAPSHOT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("duplicate triplet provenance ({post_id}, {region_id})")]
    DuplicateProvenance { post_id: String, region_id: String },
    #[error("triplet ({post_id}, {region_id}) belongs to another post than {expected}")]
    ForeignTriplet {
        post_id: String,
        region_id: String,
        expected: String,
    },
    #[error("{what} {value:?} is not in the vocabulary")]
    UnknownValue { what: String, value: String },
    #[error("snapshot i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a knowledge-base snapshot")]
    BadMagic,
    #[error("snapshot version {found} is not supported (expected {SNAPSHOT_VERSION})")]
    VersionMismatch { found: u8 },
    #[error("snapshot is truncated")]
    Truncated,
    #[error("snapshot checksum mismatch")]
    ChecksumMismatch,
    #[error("snapshot payload is corrupt: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripletGender {
    Female,
    Male,
    Unknown,
}

impl TripletGender {
    pub const ALL: [TripletGender; 3] = [
        TripletGender::Female,
        TripletGender::Male,
        TripletGender::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TripletGender::Female => "female",
            TripletGender::Male => "male",
            TripletGender::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.as_str() == s)
    }
}

impl From<Gender> for TripletGender {
    fn from(g: Gender) -> Self {
        match g {
            Gender::Female => TripletGender::Female,
            Gender::Male => TripletGender::Male,
        }
    }
}

/// Where a triplet instance came from. Ordered by post, then region.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub post_id: String,
    pub region_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FashionTriplet {
    pub occasion: String,
    pub gender: TripletGender,
    pub category: String,
    /// attribute type -> value
    pub attribute_values: BTreeMap<String, String>,
    pub provenance: Provenance,
}

impl FashionTriplet {
    pub fn key(&self) -> TripletKey {
        TripletKey {
            occasion: self.occasion.clone(),
            gender: self.gender,
            category: self.category.clone(),
        }
    }
}

/// The aggregation identity; ordered field by field.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripletKey {
    pub occasion: String,
    pub gender: TripletGender,
    pub category: String,
}

/// Post-level metadata kept for the metadata facets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostMeta {
    pub post_id: String,
    pub hashtags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    pub timestamp: i64,
    pub likes: u64,
    pub comments: u64,
}

impl From<&Post> for PostMeta {
    fn from(post: &Post) -> Self {
        Self {
            post_id: post.post_id.clone(),
            hashtags: post.hashtags.clone(),
            location: post.location.clone(),
            timestamp: post.timestamp,
            likes: post.likes,
            comments: post.comments,
        }
    }
}

/// Hashtags are matched case-insensitively without the leading `#`.
pub fn normalize_hashtag(tag: &str) -> String {
    tag.trim_start_matches('#').to_lowercase()
}

/// Majority gender over the pairs; unknown on a tie or when no pair has one.
pub fn majority_gender(pairs: &[PersonPair]) -> TripletGender {
    let female = pairs
        .iter()
        .filter(|p| p.gender == Some(Gender::Female))
        .count();
    let male = pairs
        .iter()
        .filter(|p| p.gender == Some(Gender::Male))
        .count();
    match female.cmp(&male) {
        std::cmp::Ordering::Greater => TripletGender::Female,
        std::cmp::Ordering::Less => TripletGender::Male,
        std::cmp::Ordering::Equal => TripletGender::Unknown,
    }
}

/// One triplet per garment region, sharing the post's occasion and gender.
/// `labels` are the decoded predictions, parallel to `post.garments`.
pub fn build_triplets(
    post: &Post,
    labels: &PostLabels,
    pairs: &[PersonPair],
) -> Vec<FashionTriplet> {
    let gender = majority_gender(pairs);
    post.garments
        .iter()
        .zip(&labels.garments)
        .map(|(region, g)| FashionTriplet {
            occasion: labels.occasion.clone(),
            gender,
            category: g.category.clone(),
            attribute_values: g.attributes.clone(),
            provenance: Provenance {
                post_id: post.post_id.clone(),
                region_id: region.region_id.clone(),
            },
        })
        .collect()
}

type Postings = BTreeSet<Provenance>;

/// Inverted indexes. Concept indexes point at instances, metadata indexes
/// at posts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Indexes {
    pub occasion: BTreeMap<String, Postings>,
    pub gender: BTreeMap<TripletGender, Postings>,
    pub category: BTreeMap<String, Postings>,
    /// (attribute type, value) -> instances
    pub attribute_value: BTreeMap<(String, String), Postings>,
    pub hashtag: BTreeMap<String, BTreeSet<String>>,
    pub location: BTreeMap<String, BTreeSet<String>>,
    pub timestamp: BTreeMap<i64, BTreeSet<String>>,
    pub likes: BTreeMap<u64, BTreeSet<String>>,
    pub comments: BTreeMap<u64, BTreeSet<String>>,
}

impl Indexes {
    fn add_instance(&mut self, t: &FashionTriplet) {
        let p = &t.provenance;
        self.occasion
            .entry(t.occasion.clone())
            .or_default()
            .insert(p.clone());
        self.gender.entry(t.gender).or_default().insert(p.clone());
        self.category
            .entry(t.category.clone())
            .or_default()
            .insert(p.clone());
        for (a, v) in &t.attribute_values {
            self.attribute_value
                .entry((a.clone(), v.clone()))
                .or_default()
                .insert(p.clone());
        }
    }

    fn add_post(&mut self, m: &PostMeta) {
        let id = &m.post_id;
        for tag in &m.hashtags {
            self.hashtag
                .entry(normalize_hashtag(tag))
                .or_default()
                .insert(id.clone());
        }
        if let Some(loc) = &m.location {
            self.location
                .entry(loc.clone())
                .or_default()
                .insert(id.clone());
        }
        self.timestamp
            .entry(m.timestamp)
            .or_default()
            .insert(id.clone());
        self.likes.entry(m.likes).or_default().insert(id.clone());
        self.comments
            .entry(m.comments)
            .or_default()
            .insert(id.clone());
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBase {
    vocabulary: ConceptVocabulary,
    instances: BTreeMap<Provenance, FashionTriplet>,
    posts: BTreeMap<String, PostMeta>,
    counts: BTreeMap<TripletKey, usize>,
    indexes: Indexes,
}

#[derive(Serialize, Deserialize)]
struct SnapshotPayload {
    vocabulary: ConceptVocabulary,
    posts: Vec<PostMeta>,
    instances: Vec<FashionTriplet>,
}

impl KnowledgeBase {
    pub fn new(vocabulary: ConceptVocabulary) -> Self {
        Self {
            vocabulary,
            instances: BTreeMap::new(),
            posts: BTreeMap::new(),
            counts: BTreeMap::new(),
            indexes: Indexes::default(),
        }
    }

    pub fn vocabulary(&self) -> &ConceptVocabulary {
        &self.vocabulary
    }

    pub fn instance_count(&self) -> usize {
        self.instances.len()
    }

    pub fn post_count(&self) -> usize {
        self.posts.len()
    }

    /// Instances in provenance order.
    pub fn instances(&self) -> impl Iterator<Item = &FashionTriplet> {
        self.instances.values()
    }

    pub fn instance(&self, p: &Provenance) -> Option<&FashionTriplet> {
        self.instances.get(p)
    }

    pub fn posts(&self) -> impl Iterator<Item = &PostMeta> {
        self.posts.values()
    }

    pub fn post(&self, post_id: &str) -> Option<&PostMeta> {
        self.posts.get(post_id)
    }

    /// Instances of one post, in region order.
    pub fn post_instances<'a>(
        &'a self,
        post_id: &'a str,
    ) -> impl Iterator<Item = &'a FashionTriplet> + 'a {
        let start = Provenance {
            post_id: post_id.to_string(),
            region_id: String::new(),
        };
        self.instances
            .range(start..)
            .take_while(move |(p, _)| p.post_id == post_id)
            .map(|(_, t)| t)
    }

    pub fn counts(&self) -> &BTreeMap<TripletKey, usize> {
        &self.counts
    }

    pub fn indexes(&self) -> &Indexes {
        &self.indexes
    }

    fn check_triplet(&self, t: &FashionTriplet) -> Result<(), KbError> {
        let unknown = |what: &str, value: &str| KbError::UnknownValue {
            what: what.to_string(),
            value: value.to_string(),
        };
        let v = &self.vocabulary;
        if v.occasion_index(&t.occasion).is_none() {
            return Err(unknown("occasion", &t.occasion));
        }
        if v.category_index(&t.category).is_none() {
            return Err(unknown("category", &t.category));
        }
        for (a, value) in &t.attribute_values {
            let attr = v
                .attribute_index(a)
                .map(|i| &v.attributes()[i])
                .ok_or_else(|| unknown("attribute type", a))?;
            if !attr.values.contains(value) {
                return Err(unknown(&format!("{a} value"), value));
            }
        }
        Ok(())
    }

    /// Adds a post's triplets. All-or-nothing: on error the knowledge base
    /// is unchanged. Posts without triplets are not recorded.
    pub fn insert(&mut self, meta: PostMeta, triplets: Vec<FashionTriplet>) -> Result<(), KbError> {
        if triplets.is_empty() {
            return Ok(());
        }
        let mut seen = BTreeSet::new();
        for t in &triplets {
            let p = &t.provenance;
            if p.post_id != meta.post_id {
                return Err(KbError::ForeignTriplet {
                    post_id: p.post_id.clone(),
                    region_id: p.region_id.clone(),
                    expected: meta.post_id.clone(),
                });
            }
            if self.instances.contains_key(p) || !seen.insert(p) {
                return Err(KbError::DuplicateProvenance {
                    post_id: p.post_id.clone(),
                    region_id: p.region_id.clone(),
                });
            }
            self.check_triplet(t)?;
        }
        if !self.posts.contains_key(&meta.post_id) {
            self.indexes.add_post(&meta);
            self.posts.insert(meta.post_id.clone(), meta);
        }
        for t in triplets {
            *self.counts.entry(t.key()).or_default() += 1;
            self.indexes.add_instance(&t);
            self.instances.insert(t.provenance.clone(), t);
        }
        Ok(())
    }

    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let payload = SnapshotPayload {
            vocabulary: self.vocabulary.clone(),
            posts: self.posts.values().cloned().collect(),
            instances: self.instances.values().cloned().collect(),
        };
        let json = serde_json::to_vec(&payload).expect("snapshot payload serializes");
        let mut out = Vec::with_capacity(json.len() + 45);
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.push(SNAPSHOT_VERSION);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&Sha256::digest(&json));
        out
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Self, KbError> {
        if bytes.len() < 4 {
            return Err(KbError::Truncated);
        }
        if &bytes[..4] != SNAPSHOT_MAGIC {
            return Err(KbError::BadMagic);
        }
        let version = *bytes.get(4).ok_or(KbError::Truncated)?;
        if version != SNAPSHOT_VERSION {
            return Err(KbError::VersionMismatch { found: version });
        }
        let len_bytes: [u8; 8] = bytes
            .get(5..13)
            .ok_or(KbError::Truncated)?
            .try_into()
            .expect("8 bytes");
        let len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| KbError::Truncated)?;
        let end = 13usize.checked_add(len).ok_or(KbError::Truncated)?;
        let payload = bytes.get(13..end).ok_or(KbError::Truncated)?;
        let checksum = bytes.get(end..end + 32).ok_or(KbError::Truncated)?;
        if bytes.len() != end + 32 {
            return Err(KbError::Corrupt("trailing bytes after checksum".into()));
        }
        if Sha256::digest(payload).as_slice() != checksum {
            return Err(KbError::ChecksumMismatch);
        }
        let payload: SnapshotPayload =
            serde_json::from_slice(payload).map_err(|e| KbError::Corrupt(e.to_string()))?;
        let mut kb = KnowledgeBase::new(payload.vocabulary);
        let mut by_post: BTreeMap<String, Vec<FashionTriplet>> = BTreeMap::new();
        for t in payload.instances {
            by_post
                .entry(t.provenance.post_id.clone())
                .or_default()
                .push(t);
        }
        for meta in payload.posts {
            let triplets = by_post.remove(&meta.post_id).unwrap_or_default();
            if triplets.is_empty() {
                return Err(KbError::Corrupt(format!(
                    "post {} has no instances",
                    meta.post_id
                )));
            }
            kb.insert(meta, triplets)
                .map_err(|e| KbError::Corrupt(e.to_string()))?;
        }
        if let Some(post_id) = by_post.keys().next() {
            return Err(KbError::Corrupt(format!(
                "instances of unknown post {post_id}"
            )));
        }
        Ok(kb)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), KbError> {
        fs::write(path, self.to_snapshot_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KbError> {
        Self::from_snapshot_bytes(&fs::read(path)?)
    }
}
