//! Synthetic corpora with planted concept correlations and label noise.
//!
//! Generative process per post:
//!
//! 1. occasion ~ marginals, gender uniform, garment count ~ count table;
//! 2. per garment: category ~ table[occasion], each attribute value ~
//!    table[attribute][occasion][category];
//! 3. features: region feature = sum of the prototype vectors of the
//!    garment's labels + Gaussian noise, image feature = occasion
//!    prototype + Gaussian noise, both rescaled to unit variance per entry;
//! 4. weak posts have every label passed through the planted transition
//!    matrix of its task;
//! 5. face/body geometry passes the filter rules unless the post was
//!    picked to violate them.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    BoundingBox, CorpusRecord, Detection, GarmentRegion, Gender, LabelIndices, LabelSource, Post,
};
use crate::vocab::ConceptVocabulary;

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("{table}: {message}")]
    InvalidTable { table: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// How a transition matrix spreads its off-diagonal mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseShape {
    /// All off-diagonal mass moves to the next class (cyclically).
    PairFlip,
    /// Off-diagonal mass spread evenly.
    Uniform,
}

/// Row-major `c x c` matrix with `1 - off` on the diagonal.
pub fn transition_matrix(shape: NoiseShape, c: usize, off: f64) -> Vec<f64> {
    let mut t = vec![0.0; c * c];
    if c == 1 {
        t[0] = 1.0;
        return t;
    }
    for i in 0..c {
        t[i * c + i] = 1.0 - off;
        match shape {
            NoiseShape::PairFlip => t[i * c + (i + 1) % c] += off,
            NoiseShape::Uniform => {
                for j in (0..c).filter(|&j| j != i) {
                    t[i * c + j] = off / (c - 1) as f64;
                }
            }
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_posts: usize,
    pub vocabulary: ConceptVocabulary,
    pub occasion_marginals: Vec<f64>,
    /// Probability of 1, 2, ... garments per post.
    pub garment_counts: Vec<f64>,
    /// occasion x category
    pub category_given_occasion: Vec<Vec<f64>>,
    /// attribute type x occasion x category x value
    pub value_given_occasion_category: Vec<Vec<Vec<Vec<f64>>>>,
    pub image_dim: usize,
    pub region_dim: usize,
    /// Per-entry standard deviation of region-feature noise.
    pub feature_noise: f64,
    /// Per-entry standard deviation of image-feature noise.
    pub image_noise: f64,
    /// Scale of the category prototype relative to attribute prototypes.
    pub category_scale: f64,
    pub weak_fraction: f64,
    /// Per task (occasion, category, attributes), row-major.
    pub transitions: Vec<Vec<f64>>,
    pub violation_fraction: f64,
    pub ad_fraction: f64,
    /// Occasion -> hashtags used to tag posts; posts are untagged when absent.
    pub hashtags: Option<BTreeMap<String, Vec<String>>>,
    /// Fraction of posts carrying no occasion hashtag.
    pub untagged_fraction: f64,
    /// Probability that a post's line is emitted a second time.
    pub duplicate_fraction: f64,
    /// Seed of the prototype vectors.
    pub prototype_seed: u64,
    pub seed: u64,
}

fn normalize(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    for v in row {
        *v /= s;
    }
}

/// A peaked row: the `peaks` get `weights` (in order), the remainder is
/// spread evenly over all other entries.
fn peaked_row(n: usize, peaks: &[usize], weights: &[f64]) -> Vec<f64> {
    let head: f64 = weights.iter().take(peaks.len()).sum();
    let rest = n - peaks.len();
    let mut row = vec![
        if rest > 0 {
            (1.0 - head) / rest as f64
        } else {
            0.0
        };
        n
    ];
    for (&p, &w) in peaks.iter().zip(weights) {
        row[p] = w;
    }
    normalize(&mut row);
    row
}

const FAVORED_PARITY_MASS: f64 = 0.85;

fn distinct(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k.min(n)).into_vec()
}

impl SyntheticConfig {
    /// Planted correlations: each occasion concentrates on a few signature
    /// categories, and per attribute type the odd- or even-indexed values
    /// are favored according to `category_bit XOR occasion_bit`, so an
    /// attribute value says something about the occasion only together
    /// with the category. Tables and prototypes derive from `seed`; no
    /// label noise.
    pub fn planted(vocabulary: ConceptVocabulary, n_posts: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ab1e5);
        let n_occ = vocabulary.occasions().len();
        let n_cat = vocabulary.categories().len();
        let category_given_occasion = (0..n_occ)
            .map(|_| {
                let peaks = distinct(&mut rng, n_cat, 3);
                peaked_row(n_cat, &peaks, &[0.45, 0.25, 0.15])
            })
            .collect();
        let value_given_occasion_category = vocabulary
            .attributes()
            .iter()
            .map(|attr| {
                let c = attr.values.len();
                let cat_bit: Vec<bool> = (0..n_cat).map(|_| rng.random()).collect();
                let occ_bit: Vec<bool> = (0..n_occ).map(|_| rng.random()).collect();
                (0..n_occ)
                    .map(|o| {
                        (0..n_cat)
                            .map(|k| {
                                let odd = cat_bit[k] ^ occ_bit[o];
                                let favored = (0..c).filter(|v| (v % 2 == 1) == odd).count();
                                (0..c)
                                    .map(|v| {
                                        if (v % 2 == 1) == odd {
                                            FAVORED_PARITY_MASS / favored as f64
                                        } else {
                                            (1.0 - FAVORED_PARITY_MASS) / (c - favored) as f64
                                        }
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let transitions = vocabulary
            .task_sizes()
            .iter()
            .map(|&c| transition_matrix(NoiseShape::Uniform, c, 0.0))
            .collect();
        Self {
            n_posts,
            occasion_marginals: vec![1.0 / n_occ as f64; n_occ],
            garment_counts: vec![0.25, 0.35, 0.25, 0.15],
            category_given_occasion,
            value_given_occasion_category,
            image_dim: 64,
            region_dim: 64,
            feature_noise: 1.0,
            image_noise: 2.0,
            category_scale: 1.0,
            weak_fraction: 0.0,
            transitions,
            violation_fraction: 0.0,
            ad_fraction: 0.0,
            hashtags: None,
            untagged_fraction: 0.0,
            duplicate_fraction: 0.0,
            prototype_seed: seed,
            seed,
            vocabulary,
        }
    }

    /// Replaces every task's transition matrix with one of the given shape.
    pub fn with_label_noise(mut self, shape: NoiseShape, off_diagonal: f64) -> Self {
        self.transitions = self
            .vocabulary
            .task_sizes()
            .iter()
            .map(|&c| transition_matrix(shape, c, off_diagonal))
            .collect();
        self
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let vocab = &self.vocabulary;
        let check_row = |table: String, row: &[f64], len: usize| -> Result<(), SyntheticError> {
            let bad = |message: String| SyntheticError::InvalidTable {
                table: table.clone(),
                message,
            };
            if row.len() != len {
                return Err(bad(format!(
                    "row has {} entries, expected {len}",
                    row.len()
                )));
            }
            if row.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                return Err(bad("negative or non-finite probability".into()));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(bad(format!("row sums to {sum}")));
            }
            Ok(())
        };
        check_row(
            "occasion_marginals".into(),
            &self.occasion_marginals,
            vocab.occasions().len(),
        )?;
        if self.garment_counts.is_empty() {
            return Err(SyntheticError::Invalid("garment_counts is empty".into()));
        }
        check_row(
            "garment_counts".into(),
            &self.garment_counts,
            self.garment_counts.len(),
        )?;
        if self.category_given_occasion.len() != vocab.occasions().len() {
            return Err(SyntheticError::Invalid(
                "category_given_occasion needs one row per occasion".into(),
            ));
        }
        for (i, row) in self.category_given_occasion.iter().enumerate() {
            check_row(
                format!("category_given_occasion[{i}]"),
                row,
                vocab.categories().len(),
            )?;
        }
        let tables = &self.value_given_occasion_category;
        if tables.len() != vocab.attributes().len() {
            return Err(SyntheticError::Invalid(
                "value_given_occasion_category needs one table per attribute".into(),
            ));
        }
        for (a, (table, attr)) in tables.iter().zip(vocab.attributes()).enumerate() {
            if table.len() != vocab.occasions().len() {
                return Err(SyntheticError::Invalid(format!(
                    "value_given_occasion_category[{a}] needs one block per occasion"
                )));
            }
            for (o, block) in table.iter().enumerate() {
                if block.len() != vocab.categories().len() {
                    return Err(SyntheticError::Invalid(format!(
                        "value_given_occasion_category[{a}][{o}] needs one row per category"
                    )));
                }
                for (c, row) in block.iter().enumerate() {
                    check_row(
                        format!("value_given_occasion_category[{a}][{o}][{c}]"),
                        row,
                        attr.values.len(),
                    )?;
                }
            }
        }
        let sizes = vocab.task_sizes();
        if self.transitions.len() != sizes.len() {
            return Err(SyntheticError::Invalid(
                "transitions needs one matrix per task".into(),
            ));
        }
        for (k, (t, &c)) in self.transitions.iter().zip(&sizes).enumerate() {
            if t.len() != c * c {
                return Err(SyntheticError::InvalidTable {
                    table: format!("transitions[{k}]"),
                    message: format!("expected {c}x{c} entries"),
                });
            }
            for (i, row) in t.chunks(c).enumerate() {
                check_row(format!("transitions[{k}][{i}]"), row, c)?;
            }
        }
        for (name, f) in [
            ("weak_fraction", self.weak_fraction),
            ("violation_fraction", self.violation_fraction),
            ("ad_fraction", self.ad_fraction),
            ("untagged_fraction", self.untagged_fraction),
            ("duplicate_fraction", self.duplicate_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(SyntheticError::Invalid(format!(
                    "{name} = {f} outside [0, 1]"
                )));
            }
        }
        if !(self.feature_noise >= 0.0 && self.image_noise >= 0.0) {
            return Err(SyntheticError::Invalid(
                "noise levels must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Why a post was made to fail the filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedViolation {
    NoFace,
    FaceTooLarge,
    BodyTooSmall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub post_id: String,
    /// Labels before corruption.
    pub clean: crate::corpus::PostLabels,
    pub weak: bool,
    pub ad: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<PlantedViolation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub posts: Vec<TruthRecord>,
    /// Planted transition matrix per task.
    pub transitions: Vec<Vec<f64>>,
}

fn sample_index(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last non-zero entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

struct Prototypes {
    occasion: Vec<Vec<f64>>,
    /// Per slot (category, attributes), per label.
    slots: Vec<Vec<Vec<f64>>>,
}

impl Prototypes {
    fn new(cfg: &SyntheticConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.prototype_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x9e0,
        );
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut draw = |n: usize, dim: usize, scale: f64| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..dim).map(|_| scale * normal.sample(&mut rng)).collect())
                .collect()
        };
        let vocab = &cfg.vocabulary;
        let occasion = draw(vocab.occasions().len(), cfg.image_dim, 1.0);
        let mut slots = vec![draw(
            vocab.categories().len(),
            cfg.region_dim,
            cfg.category_scale,
        )];
        for attr in vocab.attributes() {
            slots.push(draw(attr.values.len(), cfg.region_dim, 1.0));
        }
        Self { occasion, slots }
    }
}

const LOCATIONS: &[&str] = &[
    "Singapore",
    "New York",
    "London",
    "Paris",
    "Tokyo",
    "Sydney",
];
const GENERIC_TAGS: &[&str] = &["ootd", "fashion", "style", "lookoftheday"];
const AD_CAPTIONS: &[&str] = &[
    "SALE now on! Shop the look, link in bio",
    "Giveaway time: order now with promo code STYLE20",
    "Breaking: new collection drops today, buy now at www.example.com",
];

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Face, body and garment boxes for one post.
fn person_geometry(
    rng: &mut impl Rng,
    width: f64,
    height: f64,
    violation: Option<PlantedViolation>,
) -> (Vec<Detection>, Vec<Detection>, BoundingBox) {
    let body_frac = match violation {
        Some(PlantedViolation::BodyTooSmall) => uniform(rng, 0.25, 0.45),
        _ => uniform(rng, 0.6, 0.95),
    };
    let bh = (body_frac * height).round();
    let bw = (0.35 * bh).round().min(width - 2.0);
    let bx = uniform(rng, 0.0, width - bw).floor();
    let by = uniform(rng, 0.0, height - bh).floor();
    let body = BoundingBox::new(bx, by, bw, bh);
    let face_frac = match violation {
        Some(PlantedViolation::FaceTooLarge) => uniform(rng, 0.22, 0.35),
        _ => uniform(rng, 0.08, 0.17),
    };
    let fh = (face_frac * bh).round().max(1.0);
    let fw = (0.8 * fh).round().min(bw).max(1.0);
    let fx = (bx + (bw - fw) / 2.0).floor();
    let fy = (by + uniform(rng, 0.02, 0.08) * bh).floor();
    let face = BoundingBox::new(fx, fy, fw, fh);
    let det = |bbox, rng: &mut dyn rand::RngCore| Detection {
        bbox,
        confidence: (0.7 + 0.3 * rng.random::<f64>()).min(1.0),
    };
    let faces = match violation {
        Some(PlantedViolation::NoFace) => vec![],
        _ => vec![det(face, rng)],
    };
    (faces, vec![det(body, rng)], body)
}

/// Generates a labeled corpus and its ground truth. Deterministic in the
/// config (including `seed`). Duplicated lines follow their original, so
/// the corpus may hold more lines than `n_posts`; the ground truth has one
/// entry per distinct post.
pub fn generate_synthetic(
    cfg: &SyntheticConfig,
) -> Result<(Vec<CorpusRecord>, GroundTruth), SyntheticError> {
    cfg.validate()?;
    let vocab = &cfg.vocabulary;
    let protos = Prototypes::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let region_noise = Normal::new(0.0, cfg.feature_noise).expect("finite sigma");
    let image_noise = Normal::new(0.0, cfg.image_noise).expect("finite sigma");
    let sizes = vocab.task_sizes();
    let start_ts: i64 = 1_546_300_800;

    let mut records = Vec::with_capacity(cfg.n_posts);
    let mut truth = Vec::with_capacity(cfg.n_posts);
    for i in 0..cfg.n_posts {
        let occasion = sample_index(&mut rng, &cfg.occasion_marginals);
        let gender = if rng.random::<bool>() {
            Gender::Female
        } else {
            Gender::Male
        };
        let n_garments = 1 + sample_index(&mut rng, &cfg.garment_counts);
        let garments: Vec<Vec<usize>> = (0..n_garments)
            .map(|_| {
                let category = sample_index(&mut rng, &cfg.category_given_occasion[occasion]);
                let mut slots = vec![category];
                for table in &cfg.value_given_occasion_category {
                    slots.push(sample_index(&mut rng, &table[occasion][category]));
                }
                slots
            })
            .collect();
        let clean = LabelIndices {
            occasion,
            garments: garments.clone(),
            source: LabelSource::Clean,
        };

        let weak = rng.random::<f64>() < cfg.weak_fraction;
        let ad = rng.random::<f64>() < cfg.ad_fraction;
        let violation =
            (rng.random::<f64>() < cfg.violation_fraction).then(|| match rng.random_range(0..3) {
                0 => PlantedViolation::NoFace,
                1 => PlantedViolation::FaceTooLarge,
                _ => PlantedViolation::BodyTooSmall,
            });
        let emitted = if weak {
            let mut corrupt = |task: usize, label: usize| {
                let c = sizes[task];
                sample_index(&mut rng, &cfg.transitions[task][label * c..(label + 1) * c])
            };
            LabelIndices {
                occasion: corrupt(0, occasion),
                garments: garments
                    .iter()
                    .map(|slots| {
                        slots
                            .iter()
                            .enumerate()
                            .map(|(j, &l)| corrupt(j + 1, l))
                            .collect()
                    })
                    .collect(),
                source: LabelSource::Weak,
            }
        } else {
            clean.clone()
        };

        let height: f64 = [800.0, 1000.0, 1200.0][rng.random_range(0..3)];
        let width = (0.75 * height).round();
        let (mut faces, mut bodies, body) = person_geometry(&mut rng, width, height, violation);
        if violation.is_none() && rng.random::<f64>() < 0.2 {
            let (f2, b2, _) = person_geometry(&mut rng, width, height, None);
            faces.extend(f2);
            bodies.extend(b2);
        }

        let regions = garments
            .iter()
            .enumerate()
            .map(|(k, slots)| {
                let mut feature = vec![0.0; cfg.region_dim];
                for (slot, &label) in slots.iter().enumerate() {
                    for (f, p) in feature.iter_mut().zip(&protos.slots[slot][label]) {
                        *f += p;
                    }
                }
                let scale = (cfg.category_scale.powi(2)
                    + (slots.len() - 1) as f64
                    + cfg.feature_noise.powi(2))
                .sqrt();
                for f in &mut feature {
                    *f = (*f + region_noise.sample(&mut rng)) / scale;
                }
                let gh = (body.height * uniform(&mut rng, 0.2, 0.5)).round().max(1.0);
                let gy = (body.y + uniform(&mut rng, 0.15, 0.5) * body.height)
                    .floor()
                    .min(body.bottom() - gh);
                GarmentRegion {
                    region_id: format!("g{k}"),
                    bbox: BoundingBox::new(body.x, gy, body.width, gh),
                    rough_category: None,
                    feature,
                }
            })
            .collect();
        let image_scale = (1.0 + cfg.image_noise.powi(2)).sqrt();
        let image_feature = protos.occasion[occasion]
            .iter()
            .map(|p| (p + image_noise.sample(&mut rng)) / image_scale)
            .collect();

        let occasion_name = &vocab.occasions()[occasion];
        let mut hashtags: Vec<String> = Vec::new();
        let tagged = rng.random::<f64>() >= cfg.untagged_fraction;
        if let (Some(map), true) = (&cfg.hashtags, tagged) {
            if let Some(tags) = map.get(occasion_name).filter(|t| !t.is_empty()) {
                hashtags.push(tags[rng.random_range(0..tags.len())].clone());
            }
        }
        hashtags.push(GENERIC_TAGS[rng.random_range(0..GENERIC_TAGS.len())].to_string());
        let caption = if ad {
            for extra in [
                "sale",
                "shopnow",
                "discount",
                "newin",
                "limited",
                "deal",
                "fashionsale",
                "musthave",
            ] {
                hashtags.push(extra.to_string());
            }
            AD_CAPTIONS[rng.random_range(0..AD_CAPTIONS.len())].to_string()
        } else {
            format!(
                "{} day in my {}",
                occasion_name,
                vocab.categories()[garments[0][0]]
            )
        };
        let likes = (rng.random::<f64>().powi(2) * 400.0).floor() as u64;
        let comments = (likes as f64 * uniform(&mut rng, 0.0, 0.15)).floor() as u64;
        let location = (rng.random::<f64>() < 0.7)
            .then(|| LOCATIONS[rng.random_range(0..LOCATIONS.len())].to_string());
        let timestamp = start_ts + rng.random_range(0..365 * 86_400);

        let post = Post {
            post_id: format!("syn{}-{i:06}", cfg.seed),
            image_width: width,
            image_height: height,
            caption,
            hashtags,
            timestamp,
            location,
            likes,
            comments,
            faces,
            bodies,
            garments: regions,
            gender_hint: Some(gender),
            image_feature,
        };
        truth.push(TruthRecord {
            post_id: post.post_id.clone(),
            clean: clean.to_labels(vocab),
            weak,
            ad,
            violation,
        });
        let record = CorpusRecord::labeled(post, emitted.to_labels(vocab));
        if cfg.duplicate_fraction > 0.0 && rng.random::<f64>() < cfg.duplicate_fraction {
            records.push(record.clone());
        }
        records.push(record);
    }
    Ok((
        records,
        GroundTruth {
            posts: truth,
            transitions: cfg.transitions.clone(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{run_filters, AdClassifier, Decision, FilterThresholds};

    fn small(n: usize, seed: u64) -> SyntheticConfig {
        let mut cfg = SyntheticConfig::planted(ConceptVocabulary::reference(), n, seed);
        cfg.image_dim = 8;
        cfg.region_dim = 8;
        cfg
    }

    #[test]
    fn deterministic() {
        let cfg = small(50, 3);
        let (a, ta) = generate_synthetic(&cfg).unwrap();
        let (b, tb) = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn empty_corpus() {
        let (posts, truth) = generate_synthetic(&small(0, 1)).unwrap();
        assert!(posts.is_empty());
        assert!(truth.posts.is_empty());
    }

    #[test]
    fn invalid_table_rejected() {
        let mut cfg = small(10, 1);
        cfg.category_given_occasion[2][0] += 0.01;
        assert!(matches!(
            generate_synthetic(&cfg),
            Err(SyntheticError::InvalidTable { .. })
        ));
    }

    #[test]
    fn labels_are_vocabulary_members() {
        let cfg = small(200, 5).with_label_noise(NoiseShape::Uniform, 0.3);
        let cfg = SyntheticConfig {
            weak_fraction: 0.5,
            ..cfg
        };
        let (posts, _) = generate_synthetic(&cfg).unwrap();
        for r in &posts {
            r.labels.as_ref().unwrap().resolve(&cfg.vocabulary).unwrap();
        }
    }

    #[test]
    fn geometry_passes_filters_unless_violating() {
        let mut cfg = small(300, 8);
        cfg.violation_fraction = 0.3;
        let (posts, truth) = generate_synthetic(&cfg).unwrap();
        let t = FilterThresholds::default();
        let clf = AdClassifier::default();
        for (r, tr) in posts.iter().zip(&truth.posts) {
            let kept = run_filters(&r.post, &t, &clf).decision == Decision::Keep;
            assert_eq!(kept, tr.violation.is_none(), "{}", r.post.post_id);
        }
    }

    #[test]
    fn pair_flip_matrix() {
        let t = transition_matrix(NoiseShape::PairFlip, 3, 0.3);
        assert_eq!(t, vec![0.7, 0.3, 0.0, 0.0, 0.7, 0.3, 0.3, 0.0, 0.7]);
        let u = transition_matrix(NoiseShape::Uniform, 3, 0.3);
        assert!((u[1] - 0.15).abs() < 1e-15);
    }
}
