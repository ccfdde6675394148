//! Archive ingestion: the stand-in for a live crawler. Posts are streamed
//! from a local corpus file, selected by occasion hashtags and deduplicated
//! by `post_id`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, CorpusReader, CorpusRecord, DimensionGuard};
use crate::vocab::ConceptVocabulary;

pub const DEFAULT_HASHTAGS: &str = include_str!("../data/hashtags.toml");

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read hashtag map {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse hashtag map: {0}")]
    Parse(String),
    #[error("occasion {0:?} has no hashtags")]
    UncoveredOccasion(String),
    #[error("hashtag map names unknown occasion {0:?}")]
    UnknownOccasion(String),
    #[error("hashtag {tag:?} listed under both {first:?} and {second:?}")]
    SharedHashtag {
        tag: String,
        first: String,
        second: String,
    },
    #[error("hashtag {0:?} must be lowercase without a leading '#'")]
    BadHashtag(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Deserialize, Serialize)]
struct HashtagFile {
    hashtags: BTreeMap<String, Vec<String>>,
}

/// Occasion -> hashtags, with a reverse lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct HashtagMap {
    by_occasion: BTreeMap<String, Vec<String>>,
    lookup: HashMap<String, String>,
}

impl HashtagMap {
    pub fn new(
        by_occasion: BTreeMap<String, Vec<String>>,
        vocab: &ConceptVocabulary,
    ) -> Result<Self, IngestError> {
        for occasion in by_occasion.keys() {
            if vocab.occasion_index(occasion).is_none() {
                return Err(IngestError::UnknownOccasion(occasion.clone()));
            }
        }
        let mut lookup: HashMap<String, String> = HashMap::new();
        for occasion in vocab.occasions() {
            let tags = by_occasion
                .get(occasion)
                .filter(|t| !t.is_empty())
                .ok_or_else(|| IngestError::UncoveredOccasion(occasion.clone()))?;
            for tag in tags {
                if tag.is_empty() || tag.starts_with('#') || tag.to_lowercase() != *tag {
                    return Err(IngestError::BadHashtag(tag.clone()));
                }
                if let Some(first) = lookup.insert(tag.clone(), occasion.clone()) {
                    return Err(IngestError::SharedHashtag {
                        tag: tag.clone(),
                        first,
                        second: occasion.clone(),
                    });
                }
            }
        }
        Ok(Self {
            by_occasion,
            lookup,
        })
    }

    pub fn from_toml_str(text: &str, vocab: &ConceptVocabulary) -> Result<Self, IngestError> {
        let file: HashtagFile =
            toml::from_str(text).map_err(|e| IngestError::Parse(e.to_string()))?;
        Self::new(file.hashtags, vocab)
    }

    pub fn load(path: impl AsRef<Path>, vocab: &ConceptVocabulary) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, vocab)
    }

    /// The shipped default map over the reference vocabulary.
    pub fn reference() -> Self {
        Self::from_toml_str(DEFAULT_HASHTAGS, &ConceptVocabulary::reference())
            .expect("embedded hashtag map is valid")
    }

    pub fn by_occasion(&self) -> &BTreeMap<String, Vec<String>> {
        &self.by_occasion
    }

    pub fn hashtags(&self, occasion: &str) -> &[String] {
        self.by_occasion
            .get(occasion)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Case-insensitive exact token match; a leading '#' is ignored.
    pub fn occasion_of(&self, hashtag: &str) -> Option<&str> {
        let tag = hashtag.strip_prefix('#').unwrap_or(hashtag).to_lowercase();
        self.lookup.get(&tag).map(String::as_str)
    }

    pub fn matches_any(&self, hashtags: &[String]) -> bool {
        hashtags.iter().any(|h| self.occasion_of(h).is_some())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub read_count: usize,
    pub kept_count: usize,
    pub dropped_no_hashtag: usize,
    pub dropped_duplicate: usize,
    /// Unparseable lines; skipped and not part of `read_count`.
    pub malformed: usize,
}

impl IngestReport {
    pub fn is_consistent(&self) -> bool {
        self.read_count == self.kept_count + self.dropped_no_hashtag + self.dropped_duplicate
    }
}

/// Throttle applied before each record is emitted, so a live client can
/// replace the archive without changing callers.
pub trait RateLimiter {
    fn acquire(&mut self);
}

#[derive(Debug, Default)]
pub struct Unlimited;

impl RateLimiter for Unlimited {
    fn acquire(&mut self) {}
}

/// At most `per_second` records per second.
#[derive(Debug)]
pub struct MaxRate {
    interval: Duration,
    next: Option<Instant>,
}

impl MaxRate {
    pub fn new(per_second: f64) -> Self {
        Self {
            interval: Duration::from_secs_f64(1.0 / per_second),
            next: None,
        }
    }
}

impl RateLimiter for MaxRate {
    fn acquire(&mut self) {
        let now = Instant::now();
        if let Some(next) = self.next {
            if next > now {
                std::thread::sleep(next - now);
            }
        }
        self.next = Some(self.next.unwrap_or(now).max(now) + self.interval);
    }
}

/// Streaming ingest over a corpus reader. Owns its dedup set.
pub struct Ingest<'m, R> {
    reader: CorpusReader<R>,
    map: &'m HashtagMap,
    seen: HashSet<String>,
    dims: DimensionGuard,
    limiter: Box<dyn RateLimiter>,
    report: IngestReport,
}

impl<'m, R: BufRead> Ingest<'m, R> {
    pub fn new(reader: CorpusReader<R>, map: &'m HashtagMap) -> Self {
        Self {
            reader,
            map,
            seen: HashSet::new(),
            dims: DimensionGuard::default(),
            limiter: Box::new(Unlimited),
            report: IngestReport::default(),
        }
    }

    pub fn with_rate_limit(mut self, limiter: Box<dyn RateLimiter>) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn report(&self) -> IngestReport {
        self.report
    }
}

impl<R: BufRead> Iterator for Ingest<'_, R> {
    type Item = CorpusRecord;

    fn next(&mut self) -> Option<CorpusRecord> {
        loop {
            let (line, record) = self.reader.next()?;
            let record = match record.and_then(|r| self.dims.check(&r.post, line).map(|_| r)) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("ingest: skipping line {line}: {e}");
                    self.report.malformed += 1;
                    continue;
                }
            };
            self.report.read_count += 1;
            if !self.map.matches_any(&record.post.hashtags) {
                self.report.dropped_no_hashtag += 1;
                continue;
            }
            if !self.seen.insert(record.post.post_id.clone()) {
                self.report.dropped_duplicate += 1;
                continue;
            }
            self.limiter.acquire();
            self.report.kept_count += 1;
            return Some(record);
        }
    }
}

pub fn ingest_archive(
    path: impl AsRef<Path>,
    map: &HashtagMap,
) -> Result<Ingest<'_, std::io::BufReader<std::fs::File>>, IngestError> {
    Ok(Ingest::new(CorpusReader::open(path)?, map))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_map_covers_vocabulary() {
        let map = HashtagMap::reference();
        let vocab = ConceptVocabulary::reference();
        for o in vocab.occasions() {
            assert!(!map.hashtags(o).is_empty());
        }
        assert_eq!(map.occasion_of("#PROM"), Some("prom"));
        assert_eq!(map.occasion_of("promo"), None);
    }

    #[test]
    fn shared_hashtag_rejected() {
        let vocab = ConceptVocabulary::reference();
        let mut m: BTreeMap<String, Vec<String>> = vocab
            .occasions()
            .iter()
            .map(|o| (o.clone(), vec![o.clone()]))
            .collect();
        m.get_mut("wedding").unwrap().push("prom".into());
        assert!(matches!(
            HashtagMap::new(m, &vocab),
            Err(IngestError::SharedHashtag { .. })
        ));
    }

    #[test]
    fn uncovered_occasion_rejected() {
        let vocab = ConceptVocabulary::reference();
        let mut m: BTreeMap<String, Vec<String>> = vocab
            .occasions()
            .iter()
            .map(|o| (o.clone(), vec![o.clone()]))
            .collect();
        m.remove("beach");
        assert!(matches!(
            HashtagMap::new(m, &vocab),
            Err(IngestError::UncoveredOccasion(o)) if o == "beach"
        ));
    }

    #[test]
    fn rate_limit_spaces_records() {
        let mut limiter = MaxRate::new(200.0);
        let start = Instant::now();
        for _ in 0..5 {
            limiter.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(19));
    }
}
