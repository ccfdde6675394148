//! Faceted queries over a [`KnowledgeBase`] in two modes: triplet keys
//! ranked by matching-instance count, and posts ranked by likes.
//!
//! Facets combine with AND; several values of one facet combine with OR.
//! Attribute values are grouped by attribute type: OR within a type, AND
//! across types.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Post;
use crate::kb::{
    normalize_hashtag, FashionTriplet, KnowledgeBase, PostMeta, Provenance, TripletGender,
    TripletKey,
};

pub const DEFAULT_LIMIT: usize = 24;
pub const MAX_LIMIT: usize = 200;
pub const MAX_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    UnknownFacetValue,
    MalformedRange,
    InvalidParameter,
    UnknownParameter,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::UnknownFacetValue => "unknown_facet_value",
            ErrorCode::MalformedRange => "malformed_range",
            ErrorCode::InvalidParameter => "invalid_parameter",
            ErrorCode::UnknownParameter => "unknown_parameter",
        }
    }
}

/// A client error with a stable machine-readable code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_values: Option<Vec<String>>,
}

impl fmt::Display for SearchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code.as_str(), self.message)
    }
}

impl std::error::Error for SearchError {}

impl SearchError {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            valid_values: None,
        }
    }

    fn unknown(facet: &str, value: &str, valid: Vec<String>) -> Self {
        Self {
            code: ErrorCode::UnknownFacetValue,
            message: format!("unknown {facet} {value:?}"),
            valid_values: Some(valid),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub occasion: Vec<String>,
    pub gender: Vec<TripletGender>,
    pub category: Vec<String>,
    /// Attribute values; each value names its attribute type implicitly.
    pub attribute_value: Vec<String>,
    pub hashtag: Vec<String>,
    pub location: Vec<String>,
    /// Inclusive bounds on the post timestamp.
    pub time_from: Option<i64>,
    pub time_to: Option<i64>,
    pub min_likes: Option<u64>,
    pub min_comments: Option<u64>,
    pub offset: usize,
    pub limit: usize,
}

impl Default for Query {
    fn default() -> Self {
        Self {
            occasion: Vec::new(),
            gender: Vec::new(),
            category: Vec::new(),
            attribute_value: Vec::new(),
            hashtag: Vec::new(),
            location: Vec::new(),
            time_from: None,
            time_to: None,
            min_likes: None,
            min_comments: None,
            offset: 0,
            limit: DEFAULT_LIMIT,
        }
    }
}

fn parse_num<T: std::str::FromStr>(name: &str, value: &str) -> Result<T, SearchError> {
    value.parse().map_err(|_| {
        SearchError::new(
            ErrorCode::InvalidParameter,
            format!("{name}={value:?} is not a valid integer"),
        )
    })
}

impl Query {
    /// Parses a URL query string (`occasion=prom&gender=female`). Repeated
    /// parameters add values to the facet.
    pub fn from_query_string(qs: &str) -> Result<Self, SearchError> {
        let mut q = Query::default();
        let single = |seen: &mut BTreeSet<String>, name: &str| {
            if seen.insert(name.to_string()) {
                Ok(())
            } else {
                Err(SearchError::new(
                    ErrorCode::InvalidParameter,
                    format!("{name} given more than once"),
                ))
            }
        };
        let mut seen = BTreeSet::new();
        for (key, value) in url::form_urlencoded::parse(qs.trim_start_matches('?').as_bytes()) {
            let (key, value) = (key.as_ref(), value.into_owned());
            match key {
                "occasion" => q.occasion.push(value),
                "gender" => q.gender.push(TripletGender::parse(&value).ok_or_else(|| {
                    SearchError::unknown(
                        "gender",
                        &value,
                        TripletGender::ALL
                            .iter()
                            .map(|g| g.as_str().to_string())
                            .collect(),
                    )
                })?),
                "category" => q.category.push(value),
                "attribute_value" => q.attribute_value.push(value),
                "hashtag" => q.hashtag.push(value),
                "location" => q.location.push(value),
                "time_from" | "time_to" | "min_likes" | "min_comments" | "offset" | "limit" => {
                    single(&mut seen, key)?;
                    match key {
                        "time_from" => q.time_from = Some(parse_num(key, &value)?),
                        "time_to" => q.time_to = Some(parse_num(key, &value)?),
                        "min_likes" => q.min_likes = Some(parse_num(key, &value)?),
                        "min_comments" => q.min_comments = Some(parse_num(key, &value)?),
                        "offset" => q.offset = parse_num(key, &value)?,
                        _ => q.limit = parse_num(key, &value)?,
                    }
                }
                other => {
                    return Err(SearchError::new(
                        ErrorCode::UnknownParameter,
                        format!("unknown query parameter {other:?}"),
                    ))
                }
            }
        }
        Ok(q)
    }

    /// Inverse of [`Query::from_query_string`]; defaults are omitted.
    pub fn to_query_string(&self) -> String {
        let mut s = url::form_urlencoded::Serializer::new(String::new());
        for v in &self.occasion {
            s.append_pair("occasion", v);
        }
        for g in &self.gender {
            s.append_pair("gender", g.as_str());
        }
        for v in &self.category {
            s.append_pair("category", v);
        }
        for v in &self.attribute_value {
            s.append_pair("attribute_value", v);
        }
        for v in &self.hashtag {
            s.append_pair("hashtag", v);
        }
        for v in &self.location {
            s.append_pair("location", v);
        }
        let nums = [
            ("time_from", self.time_from.map(|v| v.to_string())),
            ("time_to", self.time_to.map(|v| v.to_string())),
            ("min_likes", self.min_likes.map(|v| v.to_string())),
            ("min_comments", self.min_comments.map(|v| v.to_string())),
            (
                "offset",
                (self.offset != 0).then(|| self.offset.to_string()),
            ),
            (
                "limit",
                (self.limit != DEFAULT_LIMIT).then(|| self.limit.to_string()),
            ),
        ];
        for (name, v) in nums {
            if let Some(v) = v {
                s.append_pair(name, &v);
            }
        }
        s.finish()
    }

    /// Checks facet values against the knowledge base's vocabulary and
    /// indexes, ranges, and pagination bounds.
    pub fn validate(&self, kb: &KnowledgeBase) -> Result<(), SearchError> {
        let vocab = kb.vocabulary();
        for v in &self.occasion {
            if vocab.occasion_index(v).is_none() {
                return Err(SearchError::unknown(
                    "occasion",
                    v,
                    vocab.occasions().to_vec(),
                ));
            }
        }
        for v in &self.category {
            if vocab.category_index(v).is_none() {
                return Err(SearchError::unknown(
                    "category",
                    v,
                    vocab.categories().to_vec(),
                ));
            }
        }
        for v in &self.attribute_value {
            if vocab.locate_value(v).is_none() {
                let all = vocab
                    .attributes()
                    .iter()
                    .flat_map(|a| a.values.iter().cloned())
                    .collect();
                return Err(SearchError::unknown("attribute_value", v, all));
            }
        }
        let index = kb.indexes();
        for v in &self.hashtag {
            if !index.hashtag.contains_key(&normalize_hashtag(v)) {
                return Err(SearchError::unknown(
                    "hashtag",
                    v,
                    index.hashtag.keys().cloned().collect(),
                ));
            }
        }
        for v in &self.location {
            if !index.location.contains_key(v) {
                return Err(SearchError::unknown(
                    "location",
                    v,
                    index.location.keys().cloned().collect(),
                ));
            }
        }
        if let (Some(from), Some(to)) = (self.time_from, self.time_to) {
            if from > to {
                return Err(SearchError::new(
                    ErrorCode::MalformedRange,
                    format!("time_from {from} is after time_to {to}"),
                ));
            }
        }
        if !(1..=MAX_LIMIT).contains(&self.limit) {
            return Err(SearchError::new(
                ErrorCode::InvalidParameter,
                format!(
                    "limit must be between 1 and {MAX_LIMIT}, got {}",
                    self.limit
                ),
            ));
        }
        Ok(())
    }

    fn has_post_facets(&self) -> bool {
        !self.hashtag.is_empty()
            || !self.location.is_empty()
            || self.time_from.is_some()
            || self.time_to.is_some()
            || self.min_likes.is_some()
            || self.min_comments.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page<T> {
    pub results: Vec<T>,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
}

fn paginate<T>(mut all: Vec<T>, q: &Query) -> Page<T> {
    let total = all.len();
    let start = q.offset.min(total);
    let end = start.saturating_add(q.limit).min(total);
    let results = all.drain(start..end).collect();
    Page {
        results,
        total,
        offset: q.offset,
        limit: q.limit,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletResult {
    pub key: TripletKey,
    pub count: usize,
    /// The first matching instances in provenance order.
    pub samples: Vec<Provenance>,
}

/// What the posts mode shows beyond the indexed metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostDetails {
    pub caption: String,
}

pub type PostDetailsMap = BTreeMap<String, PostDetails>;

pub fn post_details<'a>(posts: impl IntoIterator<Item = &'a Post>) -> PostDetailsMap {
    posts
        .into_iter()
        .map(|p| {
            (
                p.post_id.clone(),
                PostDetails {
                    caption: p.caption.clone(),
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostResult {
    #[serde(flatten)]
    pub meta: PostMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    /// Every triplet of the post, matching or not.
    pub triplets: Vec<FashionTriplet>,
}

type Postings = BTreeSet<Provenance>;

fn union<'a>(lists: impl IntoIterator<Item = Option<&'a Postings>>) -> Postings {
    let mut out = Postings::new();
    for list in lists.into_iter().flatten() {
        out.extend(list.iter().cloned());
    }
    out
}

fn intersect(a: Postings, b: &Postings) -> Postings {
    a.into_iter().filter(|p| b.contains(p)).collect()
}

/// Posts passing every metadata facet, or `None` when there is none.
fn matching_posts(kb: &KnowledgeBase, q: &Query) -> Option<BTreeSet<String>> {
    if !q.has_post_facets() {
        return None;
    }
    let index = kb.indexes();
    let mut sets: Vec<BTreeSet<String>> = Vec::new();
    if !q.hashtag.is_empty() {
        sets.push(
            q.hashtag
                .iter()
                .filter_map(|h| index.hashtag.get(&normalize_hashtag(h)))
                .flatten()
                .cloned()
                .collect(),
        );
    }
    if !q.location.is_empty() {
        sets.push(
            q.location
                .iter()
                .filter_map(|l| index.location.get(l))
                .flatten()
                .cloned()
                .collect(),
        );
    }
    if q.time_from.is_some() || q.time_to.is_some() {
        let from = q.time_from.unwrap_or(i64::MIN);
        let to = q.time_to.unwrap_or(i64::MAX);
        sets.push(
            index
                .timestamp
                .range(from..=to)
                .flat_map(|(_, ids)| ids)
                .cloned()
                .collect(),
        );
    }
    if let Some(min) = q.min_likes {
        sets.push(
            index
                .likes
                .range(min..)
                .flat_map(|(_, ids)| ids)
                .cloned()
                .collect(),
        );
    }
    if let Some(min) = q.min_comments {
        sets.push(
            index
                .comments
                .range(min..)
                .flat_map(|(_, ids)| ids)
                .cloned()
                .collect(),
        );
    }
    sets.sort_by_key(|s| s.len());
    let mut iter = sets.into_iter();
    let first = iter.next().unwrap_or_default();
    Some(iter.fold(first, |acc, s| {
        acc.into_iter().filter(|id| s.contains(id)).collect()
    }))
}

/// Provenances of instances matching all facets, in provenance order.
pub fn matching_instances(kb: &KnowledgeBase, q: &Query) -> Vec<Provenance> {
    let index = kb.indexes();
    let vocab = kb.vocabulary();
    let mut facets: Vec<Postings> = Vec::new();
    if !q.occasion.is_empty() {
        facets.push(union(q.occasion.iter().map(|v| index.occasion.get(v))));
    }
    if !q.gender.is_empty() {
        facets.push(union(q.gender.iter().map(|g| index.gender.get(g))));
    }
    if !q.category.is_empty() {
        facets.push(union(q.category.iter().map(|v| index.category.get(v))));
    }
    let mut by_type: BTreeMap<usize, Vec<&String>> = BTreeMap::new();
    for v in &q.attribute_value {
        if let Some((a, _)) = vocab.locate_value(v) {
            by_type.entry(a).or_default().push(v);
        }
    }
    for (a, values) in by_type {
        let name = &vocab.attributes()[a].name;
        facets.push(union(
            values
                .into_iter()
                .map(|v| index.attribute_value.get(&(name.clone(), v.clone()))),
        ));
    }
    let posts = matching_posts(kb, q);

    facets.sort_by_key(|s| s.len());
    let mut iter = facets.into_iter();
    let candidates: Vec<Provenance> = match iter.next() {
        Some(first) => iter
            .fold(first, |acc, s| intersect(acc, &s))
            .into_iter()
            .collect(),
        None => match &posts {
            Some(ids) => ids
                .iter()
                .flat_map(|id| kb.post_instances(id).map(|t| t.provenance.clone()))
                .collect(),
            None => kb.instances().map(|t| t.provenance.clone()).collect(),
        },
    };
    match posts {
        Some(ids) => candidates
            .into_iter()
            .filter(|p| ids.contains(&p.post_id))
            .collect(),
        None => candidates,
    }
}

pub fn query_triplets(kb: &KnowledgeBase, q: &Query) -> Result<Page<TripletResult>, SearchError> {
    q.validate(kb)?;
    let mut groups: BTreeMap<TripletKey, (usize, Vec<Provenance>)> = BTreeMap::new();
    for p in matching_instances(kb, q) {
        let key = kb.instance(&p).expect("indexed instance exists").key();
        let entry = groups.entry(key).or_default();
        entry.0 += 1;
        if entry.1.len() < MAX_SAMPLES {
            entry.1.push(p);
        }
    }
    let mut all: Vec<TripletResult> = groups
        .into_iter()
        .map(|(key, (count, samples))| TripletResult {
            key,
            count,
            samples,
        })
        .collect();
    // stable sort keeps key order among equal counts
    all.sort_by_key(|r| std::cmp::Reverse(r.count));
    Ok(paginate(all, q))
}

pub fn query_posts(
    kb: &KnowledgeBase,
    details: Option<&PostDetailsMap>,
    q: &Query,
) -> Result<Page<PostResult>, SearchError> {
    q.validate(kb)?;
    let ids: BTreeSet<String> = matching_instances(kb, q)
        .into_iter()
        .map(|p| p.post_id)
        .collect();
    let mut metas: Vec<&PostMeta> = ids.iter().filter_map(|id| kb.post(id)).collect();
    metas.sort_by(|a, b| {
        b.likes
            .cmp(&a.likes)
            .then_with(|| a.post_id.cmp(&b.post_id))
    });
    let page = paginate(metas, q);
    Ok(Page {
        results: page
            .results
            .into_iter()
            .map(|m| PostResult {
                meta: m.clone(),
                caption: details
                    .and_then(|d| d.get(&m.post_id))
                    .map(|d| d.caption.clone()),
                triplets: kb.post_instances(&m.post_id).cloned().collect(),
            })
            .collect(),
        total: page.total,
        offset: page.offset,
        limit: page.limit,
    })
}
