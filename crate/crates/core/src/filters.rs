//! Post filtering cascade: face-body pairing, height-ratio rules, and an
//! ad/poster classifier.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BoundingBox, Gender, Post};

/// A face center must fall inside this top fraction of the body box.
pub const HEAD_BAND: f64 = 0.4;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("threshold {name} = {value} outside {range}")]
    InvalidThreshold {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("training data contains only {0} examples")]
    SingleClass(&'static str),
    #[error("feature vector has length {found}, classifier expects {expected}")]
    FeatureLength { expected: usize, found: usize },
    #[error("training data is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterThresholds {
    pub max_face_body_ratio: f64,
    pub min_body_image_ratio: f64,
    pub ad_threshold: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            max_face_body_ratio: 0.2,
            min_body_image_ratio: 0.5,
            ad_threshold: 0.5,
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<(), FilterError> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.max_face_body_ratio) {
            return Err(FilterError::InvalidThreshold {
                name: "max_face_body_ratio",
                value: self.max_face_body_ratio,
                range: "(0, 1)",
            });
        }
        if !open_unit(self.min_body_image_ratio) {
            return Err(FilterError::InvalidThreshold {
                name: "min_body_image_ratio",
                value: self.min_body_image_ratio,
                range: "(0, 1)",
            });
        }
        if !(0.0..=1.0).contains(&self.ad_threshold) {
            return Err(FilterError::InvalidThreshold {
                name: "ad_threshold",
                value: self.ad_threshold,
                range: "[0, 1]",
            });
        }
        Ok(())
    }
}

/// One person: a face matched to a body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonPair {
    pub face: BoundingBox,
    pub body: BoundingBox,
    pub pair_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
}

/// Fraction of the face inside the body, or 0 when the face is taller than
/// the body or its center is outside the body's head band.
pub fn pair_score(face: &BoundingBox, body: &BoundingBox) -> f64 {
    if face.height > body.height {
        return 0.0;
    }
    let (cx, cy) = face.center();
    let in_band = cx >= body.x
        && cx <= body.right()
        && cy >= body.y
        && cy <= body.y + HEAD_BAND * body.height;
    if !in_band {
        return 0.0;
    }
    face.intersection_area(body) / face.area()
}

/// Greedy one-to-one matching by descending pair score. Ties go to the
/// lower face index, then the lower body index.
pub fn pair_faces_bodies(faces: &[BoundingBox], bodies: &[BoundingBox]) -> Vec<PersonPair> {
    let mut candidates = Vec::new();
    for (fi, face) in faces.iter().enumerate() {
        for (bi, body) in bodies.iter().enumerate() {
            let score = pair_score(face, body);
            if score > 0.0 {
                candidates.push((score, fi, bi));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut face_used = vec![false; faces.len()];
    let mut body_used = vec![false; bodies.len()];
    let mut pairs = Vec::new();
    for (score, fi, bi) in candidates {
        if face_used[fi] || body_used[bi] {
            continue;
        }
        face_used[fi] = true;
        body_used[bi] = true;
        pairs.push(PersonPair {
            face: faces[fi],
            body: bodies[bi],
            pair_score: score,
            gender: None,
        });
    }
    pairs
}

/// The height-ratio rule with strict inequalities on both sides.
pub fn ratio_check(pair: &PersonPair, image_height: f64, t: &FilterThresholds) -> bool {
    pair.face.height / pair.body.height < t.max_face_body_ratio
        && pair.body.height / image_height > t.min_body_image_ratio
}

// --- ad / poster classifier -------------------------------------------------

/// Maps a post to the feature vector the ad classifier scores.
pub trait AdFeatureExtractor: Send + Sync {
    fn names(&self) -> Vec<&'static str>;
    fn extract(&self, post: &Post) -> Vec<f64>;
}

const PROMO_TERMS: &[&str] = &[
    "http",
    "www.",
    "shop",
    "sale",
    "discount",
    "% off",
    "link in bio",
    "order now",
    "giveaway",
    "promo code",
    "buy now",
    "breaking",
];

/// Metadata and geometry features available without pixels.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultAdFeatures;

impl AdFeatureExtractor for DefaultAdFeatures {
    fn names(&self) -> Vec<&'static str> {
        vec![
            "caption_density",
            "hashtag_count",
            "engagement_ratio",
            "face_area_fraction",
            "person_coverage",
            "promo_terms",
        ]
    }

    fn extract(&self, post: &Post) -> Vec<f64> {
        let caption_density = post.caption.chars().count() as f64 / 100.0;
        let hashtag_count = post.hashtags.len() as f64 / 10.0;
        let engagement_ratio = post.comments as f64 / (post.likes as f64 + 1.0);
        let image_area = post.image_width * post.image_height;
        let face_area_fraction = post.faces.iter().map(|f| f.bbox.area()).sum::<f64>() / image_area;
        let person_coverage = post
            .bodies
            .iter()
            .map(|b| b.bbox.height / post.image_height)
            .fold(0.0, f64::max);
        let caption = post.caption.to_lowercase();
        let promo = PROMO_TERMS.iter().filter(|t| caption.contains(*t)).count();
        let promo_terms = promo.min(3) as f64 / 3.0;
        vec![
            caption_density,
            hashtag_count,
            engagement_ratio,
            face_area_fraction,
            person_coverage,
            promo_terms,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Default for AdClassifier {
    /// Hand-set weights over [`DefaultAdFeatures`]: promotional captions and
    /// hashtag spam push towards "ad", visible people push away from it.
    fn default() -> Self {
        Self {
            weights: vec![0.3, 1.5, 0.0, -2.0, -2.0, 8.0],
            bias: -3.0,
        }
    }
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl AdClassifier {
    pub fn score_features(&self, features: &[f64]) -> f64 {
        let margin: f64 = self
            .weights
            .iter()
            .zip(features)
            .map(|(w, f)| w * f)
            .sum::<f64>()
            + self.bias;
        logistic(margin)
    }
}

pub fn ad_score(post: &Post, clf: &AdClassifier) -> f64 {
    clf.score_features(&DefaultAdFeatures.extract(post))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Fraction of examples held out for the accuracy report; 0 disables.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for AdTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 0.5,
            l2: 0.0,
            holdout_fraction: 0.2,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdTrainReport {
    pub n_train: usize,
    pub n_heldout: usize,
    pub train_accuracy: f64,
    /// `None` when nothing was held out.
    pub heldout_accuracy: Option<f64>,
}

fn accuracy(clf: &AdClassifier, xs: &[Vec<f64>], ys: &[bool], idx: &[usize]) -> f64 {
    let correct = idx
        .iter()
        .filter(|&&i| (clf.score_features(&xs[i]) >= 0.5) == ys[i])
        .count();
    correct as f64 / idx.len() as f64
}

/// Full-batch gradient descent on the mean logistic loss. The held-out
/// split is a seeded shuffle; weights start at zero.
pub fn train_logistic(
    xs: &[Vec<f64>],
    ys: &[bool],
    cfg: &AdTrainConfig,
) -> Result<(AdClassifier, AdTrainReport), FilterError> {
    if xs.is_empty() {
        return Err(FilterError::Empty);
    }
    if ys.iter().all(|&y| y) {
        return Err(FilterError::SingleClass("positive"));
    }
    if ys.iter().all(|&y| !y) {
        return Err(FilterError::SingleClass("negative"));
    }
    let dim = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
        return Err(FilterError::FeatureLength {
            expected: dim,
            found: bad.len(),
        });
    }

    let mut order: Vec<usize> = (0..xs.len()).collect();
    let n_heldout = if cfg.holdout_fraction > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        order.shuffle(&mut rng);
        ((xs.len() as f64 * cfg.holdout_fraction).round() as usize).min(xs.len() - 1)
    } else {
        0
    };
    let (heldout, train) = order.split_at(n_heldout);
    let mut train = train.to_vec();
    train.sort_unstable();

    let mut clf = AdClassifier {
        weights: vec![0.0; dim],
        bias: 0.0,
    };
    let n = train.len() as f64;
    for _ in 0..cfg.epochs {
        let mut grad_w = vec![0.0; dim];
        let mut grad_b = 0.0;
        for &i in &train {
            let err = clf.score_features(&xs[i]) - if ys[i] { 1.0 } else { 0.0 };
            for (g, x) in grad_w.iter_mut().zip(&xs[i]) {
                *g += err * x;
            }
            grad_b += err;
        }
        for (w, g) in clf.weights.iter_mut().zip(&grad_w) {
            *w -= cfg.learning_rate * (g / n + cfg.l2 * *w);
        }
        clf.bias -= cfg.learning_rate * grad_b / n;
    }

    let report = AdTrainReport {
        n_train: train.len(),
        n_heldout,
        train_accuracy: accuracy(&clf, xs, ys, &train),
        heldout_accuracy: (n_heldout > 0).then(|| accuracy(&clf, xs, ys, heldout)),
    };
    Ok((clf, report))
}

pub fn train_ad_classifier(
    examples: &[(Post, bool)],
    cfg: &AdTrainConfig,
) -> Result<(AdClassifier, AdTrainReport), FilterError> {
    let xs: Vec<Vec<f64>> = examples
        .iter()
        .map(|(p, _)| DefaultAdFeatures.extract(p))
        .collect();
    let ys: Vec<bool> = examples.iter().map(|(_, y)| *y).collect();
    train_logistic(&xs, &ys, cfg)
}

// --- cascade ----------------------------------------------------------------

/// Assigns a gender to a detected person.
pub trait GenderPredictor: Send + Sync {
    fn predict(&self, post: &Post, pair: &PersonPair) -> Option<Gender>;
}

/// Uses the post's `gender_hint` for every person.
#[derive(Debug, Clone, Copy, Default)]
pub struct HintGender;

impl GenderPredictor for HintGender {
    fn predict(&self, post: &Post, _pair: &PersonPair) -> Option<Gender> {
        post.gender_hint
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    None,
    NoFaceBodyPair,
    RatioViolation,
    AdLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub decision: Decision,
    pub reason: DropReason,
    /// Surviving pairs; empty unless kept.
    pub pairs: Vec<PersonPair>,
    pub ad_score: f64,
}

/// The three-stage cascade with pluggable feature and gender hooks.
pub struct PostFilter {
    pub thresholds: FilterThresholds,
    pub classifier: AdClassifier,
    pub features: Box<dyn AdFeatureExtractor>,
    pub gender: Box<dyn GenderPredictor>,
}

impl PostFilter {
    pub fn new(thresholds: FilterThresholds, classifier: AdClassifier) -> Self {
        Self {
            thresholds,
            classifier,
            features: Box::new(DefaultAdFeatures),
            gender: Box::new(HintGender),
        }
    }

    pub fn evaluate(&self, post: &Post) -> FilterOutcome {
        let ad_score = self.classifier.score_features(&self.features.extract(post));
        let drop = |reason| FilterOutcome {
            decision: Decision::Drop,
            reason,
            pairs: Vec::new(),
            ad_score,
        };

        let faces: Vec<BoundingBox> = post.faces.iter().map(|d| d.bbox).collect();
        let bodies: Vec<BoundingBox> = post.bodies.iter().map(|d| d.bbox).collect();
        let pairs = pair_faces_bodies(&faces, &bodies);
        if pairs.is_empty() {
            return drop(DropReason::NoFaceBodyPair);
        }
        let mut surviving: Vec<PersonPair> = pairs
            .into_iter()
            .filter(|p| ratio_check(p, post.image_height, &self.thresholds))
            .collect();
        if surviving.is_empty() {
            return drop(DropReason::RatioViolation);
        }
        if ad_score >= self.thresholds.ad_threshold {
            return drop(DropReason::AdLike);
        }
        for pair in &mut surviving {
            pair.gender = self.gender.predict(post, pair);
        }
        FilterOutcome {
            decision: Decision::Keep,
            reason: DropReason::None,
            pairs: surviving,
            ad_score,
        }
    }
}

pub fn run_filters(
    post: &Post,
    thresholds: &FilterThresholds,
    clf: &AdClassifier,
) -> FilterOutcome {
    PostFilter::new(*thresholds, clf.clone()).evaluate(post)
}

/// Per-reason counts for one filter run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub read: usize,
    pub kept: usize,
    pub dropped: BTreeMap<DropReason, usize>,
}

impl FilterReport {
    pub fn record(&mut self, outcome: &FilterOutcome) {
        self.read += 1;
        match outcome.decision {
            Decision::Keep => self.kept += 1,
            Decision::Drop => *self.dropped.entry(outcome.reason).or_default() += 1,
        }
    }

    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Detection;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h)
    }

    fn pair(face_h: f64, body_h: f64) -> PersonPair {
        PersonPair {
            face: bx(0.0, 0.0, 10.0, face_h),
            body: bx(0.0, 0.0, 50.0, body_h),
            pair_score: 1.0,
            gender: None,
        }
    }

    fn person_post(faces: Vec<BoundingBox>, bodies: Vec<BoundingBox>) -> Post {
        Post {
            post_id: "p".into(),
            image_width: 300.0,
            image_height: 300.0,
            caption: String::new(),
            hashtags: vec![],
            timestamp: 0,
            location: None,
            likes: 0,
            comments: 0,
            faces: faces
                .into_iter()
                .map(|bbox| Detection {
                    bbox,
                    confidence: 0.9,
                })
                .collect(),
            bodies: bodies
                .into_iter()
                .map(|bbox| Detection {
                    bbox,
                    confidence: 0.9,
                })
                .collect(),
            garments: vec![],
            gender_hint: Some(Gender::Female),
            image_feature: vec![],
        }
    }

    #[test]
    fn full_containment_scores_one() {
        let pairs = pair_faces_bodies(&[bx(40.0, 10.0, 20.0, 20.0)], &[bx(0.0, 0.0, 100.0, 250.0)]);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].pair_score, 1.0);
    }

    #[test]
    fn no_faces_no_pairs() {
        let bodies = vec![bx(0.0, 0.0, 10.0, 10.0); 3];
        assert!(pair_faces_bodies(&[], &bodies).is_empty());
    }

    #[test]
    fn face_below_head_band_is_not_paired() {
        // center at y = 110 of a body spanning 0..200: below the top 40%
        let pairs = pair_faces_bodies(
            &[bx(40.0, 100.0, 20.0, 20.0)],
            &[bx(0.0, 0.0, 100.0, 200.0)],
        );
        assert!(pairs.is_empty());
    }

    #[test]
    fn ratio_examples() {
        let t = FilterThresholds::default();
        assert!(ratio_check(&pair(30.0, 200.0), 300.0, &t));
        assert!(!ratio_check(&pair(40.0, 200.0), 300.0, &t));
        assert!(!ratio_check(&pair(20.0, 150.0), 300.0, &t));
    }

    #[test]
    fn zero_classifier_scores_half() {
        let clf = AdClassifier {
            weights: vec![0.0; 6],
            bias: 0.0,
        };
        let post = person_post(vec![], vec![]);
        assert_eq!(ad_score(&post, &clf), 0.5);
    }

    #[test]
    fn margin_four() {
        // oracle: 1 / (1 + e^-4) = 0.98201379...
        let clf = AdClassifier {
            weights: vec![2.0, 1.0],
            bias: 1.0,
        };
        let expected = 1.0 / (1.0 + (-4.0f64).exp());
        assert!((clf.score_features(&[1.0, 1.0]) - expected).abs() < 1e-15);
        assert!((expected - 0.982).abs() < 5e-4);
    }

    #[test]
    fn single_class_rejected() {
        let xs = vec![vec![1.0], vec![2.0]];
        let err = train_logistic(&xs, &[true, true], &AdTrainConfig::default()).unwrap_err();
        assert_eq!(err, FilterError::SingleClass("positive"));
    }

    #[test]
    fn cascade_reasons() {
        let clf = AdClassifier::default();
        let t = FilterThresholds::default();
        let none = person_post(vec![], vec![bx(0.0, 0.0, 100.0, 250.0)]);
        assert_eq!(
            run_filters(&none, &t, &clf).reason,
            DropReason::NoFaceBodyPair
        );

        // face 60 of body 250: ratio 0.24
        let big_face = person_post(
            vec![bx(30.0, 10.0, 40.0, 60.0)],
            vec![bx(0.0, 0.0, 100.0, 250.0)],
        );
        assert_eq!(
            run_filters(&big_face, &t, &clf).reason,
            DropReason::RatioViolation
        );

        let good = person_post(
            vec![bx(40.0, 10.0, 20.0, 30.0)],
            vec![bx(0.0, 0.0, 100.0, 250.0)],
        );
        let out = run_filters(&good, &t, &clf);
        assert!(out.ad_score < 0.5);
        assert_eq!(out.decision, Decision::Keep);
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.pairs[0].gender, Some(Gender::Female));

        let mut ad = good.clone();
        ad.caption = "SALE! link in bio, shop now with promo code".into();
        assert_eq!(run_filters(&ad, &t, &clf).reason, DropReason::AdLike);
    }

    #[test]
    fn thresholds_validated() {
        assert!(FilterThresholds::default().validate().is_ok());
        let bad = FilterThresholds {
            max_face_body_ratio: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
