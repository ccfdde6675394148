#![allow(dead_code)]

use fashionkb::corpus::{BoundingBox, Detection};
use fashionkb::filters::{AdClassifier, AdFeatureExtractor, DefaultAdFeatures, HEAD_BAND};
use fashionkb::filters::{FilterThresholds, PostFilter};
use fashionkb::ingest::HashtagMap;
use fashionkb::kb::{
    build_triplets, normalize_hashtag, FashionTriplet, KnowledgeBase, PostMeta, TripletGender,
};
use fashionkb::model::train::{loss_and_gradients, TrainingExample};
use fashionkb::model::{loss, ConceptModel, NoiseModel, ParamStore, TrainConfig};
use fashionkb::search::{Page, PostResult, Query, TripletResult};
use fashionkb::synthetic::{generate_synthetic, SyntheticConfig};
use fashionkb::vocab::AttributeType;
use fashionkb::ConceptVocabulary;
use fashionkb::Post;
use rand::seq::IndexedRandom;
use rand::Rng;
use std::collections::BTreeMap;

pub fn small_vocab() -> ConceptVocabulary {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    ConceptVocabulary::new(
        "small",
        s(&["prom", "wedding", "beach", "office"]),
        s(&["dress", "suit", "skirt", "shirt", "jeans"]),
        vec![
            AttributeType {
                name: "color".into(),
                values: s(&["red", "blue", "black"]),
            },
            AttributeType {
                name: "pattern".into(),
                values: s(&["plain", "striped"]),
            },
        ],
    )
    .unwrap()
}

/// Per-tensor relative error between the taped gradient and central
/// differences: `|num - an| / max(|num| + |an|, 1e-12)` over the tensor's
/// flattened vector. Returns (group, name, rel err).
pub fn gradient_check(
    model: &mut ConceptModel,
    noise: &mut NoiseModel,
    batch: &[TrainingExample],
    cfg: &TrainConfig,
    step: f64,
) -> Vec<(usize, String, f64)> {
    let refs: Vec<&TrainingExample> = batch.iter().collect();
    let (_, grads) = loss_and_gradients(model, noise, &refs, cfg).unwrap();
    let mut out = Vec::new();
    for group in 0..2 {
        let n_tensors = store(model, noise, group).len();
        for t in 0..n_tensors {
            let len = store(model, noise, group).get(t).len();
            let analytic = grads.groups[group][t].data().to_vec();
            let mut numeric = vec![0.0; len];
            for (i, slot) in numeric.iter_mut().enumerate() {
                let orig = store(model, noise, group).get(t).data()[i];
                store_mut(model, noise, group).get_mut(t).data_mut()[i] = orig + step;
                let up = loss(model, noise, batch, cfg).unwrap();
                store_mut(model, noise, group).get_mut(t).data_mut()[i] = orig - step;
                let down = loss(model, noise, batch, cfg).unwrap();
                store_mut(model, noise, group).get_mut(t).data_mut()[i] = orig;
                *slot = (up - down) / (2.0 * step);
            }
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff: Vec<f64> = numeric.iter().zip(&analytic).map(|(a, b)| a - b).collect();
            let rel = norm(&diff) / (norm(&numeric) + norm(&analytic)).max(1e-12);
            out.push((group, store(model, noise, group).name(t).to_string(), rel));
        }
    }
    out
}

fn store<'a>(model: &'a ConceptModel, noise: &'a NoiseModel, group: usize) -> &'a ParamStore {
    if group == 0 {
        model.params()
    } else {
        noise.params()
    }
}

fn store_mut<'a>(
    model: &'a mut ConceptModel,
    noise: &'a mut NoiseModel,
    group: usize,
) -> &'a mut ParamStore {
    if group == 0 {
        model.params_mut()
    } else {
        noise.params_mut()
    }
}

/// A knowledge base built from synthetic posts with their true labels,
/// plus the flat rows the oracles scan.
pub struct Extraction {
    pub kb: KnowledgeBase,
    pub rows: Vec<(FashionTriplet, PostMeta)>,
    pub posts: Vec<Post>,
}

pub fn extraction(n: usize, seed: u64) -> Extraction {
    let vocab = ConceptVocabulary::reference();
    let mut cfg = SyntheticConfig::planted(vocab.clone(), n, seed);
    cfg.image_dim = 4;
    cfg.region_dim = 4;
    cfg.violation_fraction = 0.1;
    cfg.hashtags = Some(HashtagMap::reference().by_occasion().clone());
    let (records, _) = generate_synthetic(&cfg).unwrap();
    let filter = PostFilter::new(FilterThresholds::default(), Default::default());
    let mut kb = KnowledgeBase::new(vocab);
    let mut rows = Vec::new();
    let mut posts = Vec::new();
    for r in records {
        let outcome = filter.evaluate(&r.post);
        if outcome.pairs.is_empty() {
            continue;
        }
        let triplets = build_triplets(&r.post, r.labels.as_ref().unwrap(), &outcome.pairs);
        let meta = PostMeta::from(&r.post);
        rows.extend(triplets.iter().map(|t| (t.clone(), meta.clone())));
        kb.insert(meta, triplets).unwrap();
        posts.push(r.post);
    }
    Extraction { kb, rows, posts }
}

fn row_matches(vocab: &ConceptVocabulary, t: &FashionTriplet, m: &PostMeta, q: &Query) -> bool {
    let within = |vals: &[String], v: &String| vals.is_empty() || vals.contains(v);
    if !within(&q.occasion, &t.occasion) || !within(&q.category, &t.category) {
        return false;
    }
    if !q.gender.is_empty() && !q.gender.contains(&t.gender) {
        return false;
    }
    let mut wanted: BTreeMap<String, Vec<&String>> = BTreeMap::new();
    for v in &q.attribute_value {
        let (a, _) = vocab.locate_value(v).unwrap();
        wanted
            .entry(vocab.attributes()[a].name.clone())
            .or_default()
            .push(v);
    }
    for (attr, values) in wanted {
        match t.attribute_values.get(&attr) {
            Some(v) if values.contains(&v) => {}
            _ => return false,
        }
    }
    if !q.hashtag.is_empty() {
        let have: Vec<String> = m.hashtags.iter().map(|h| normalize_hashtag(h)).collect();
        if !q
            .hashtag
            .iter()
            .any(|h| have.contains(&normalize_hashtag(h)))
        {
            return false;
        }
    }
    if !q.location.is_empty() && !m.location.as_ref().is_some_and(|l| q.location.contains(l)) {
        return false;
    }
    q.time_from.is_none_or(|f| m.timestamp >= f)
        && q.time_to.is_none_or(|to| m.timestamp <= to)
        && q.min_likes.is_none_or(|l| m.likes >= l)
        && q.min_comments.is_none_or(|c| m.comments >= c)
}

fn page<T>(all: Vec<T>, q: &Query) -> Page<T> {
    let total = all.len();
    Page {
        results: all.into_iter().skip(q.offset).take(q.limit).collect(),
        total,
        offset: q.offset,
        limit: q.limit,
    }
}

pub fn oracle_triplets(ex: &Extraction, q: &Query) -> Page<TripletResult> {
    let vocab = ex.kb.vocabulary();
    let mut hits: Vec<&FashionTriplet> = ex
        .rows
        .iter()
        .filter(|(t, m)| row_matches(vocab, t, m, q))
        .map(|(t, _)| t)
        .collect();
    hits.sort_by(|a, b| a.provenance.cmp(&b.provenance));
    let mut keys: Vec<_> = hits.iter().map(|t| t.key()).collect();
    keys.sort();
    keys.dedup();
    let mut all: Vec<TripletResult> = keys
        .into_iter()
        .map(|key| {
            let mine: Vec<_> = hits.iter().filter(|t| t.key() == key).collect();
            TripletResult {
                count: mine.len(),
                samples: mine.iter().take(8).map(|t| t.provenance.clone()).collect(),
                key,
            }
        })
        .collect();
    // insertion sort: strictly greater counts move forward, ties keep key order
    for i in 1..all.len() {
        let mut j = i;
        while j > 0 && all[j].count > all[j - 1].count {
            all.swap(j, j - 1);
            j -= 1;
        }
    }
    page(all, q)
}

pub fn oracle_posts(ex: &Extraction, q: &Query) -> Page<PostResult> {
    let vocab = ex.kb.vocabulary();
    let mut metas: Vec<&PostMeta> = Vec::new();
    for (t, m) in &ex.rows {
        if row_matches(vocab, t, m, q) && !metas.iter().any(|x| x.post_id == m.post_id) {
            metas.push(m);
        }
    }
    metas.sort_by(|a, b| {
        (std::cmp::Reverse(a.likes), &a.post_id).cmp(&(std::cmp::Reverse(b.likes), &b.post_id))
    });
    let all = metas
        .into_iter()
        .map(|m| {
            let mut triplets: Vec<FashionTriplet> = ex
                .rows
                .iter()
                .filter(|(t, _)| t.provenance.post_id == m.post_id)
                .map(|(t, _)| t.clone())
                .collect();
            triplets.sort_by(|a, b| a.provenance.cmp(&b.provenance));
            PostResult {
                meta: m.clone(),
                caption: None,
                triplets,
            }
        })
        .collect();
    page(all, q)
}

/// A random valid query over the extraction's vocabulary and metadata.
pub fn random_query(rng: &mut impl Rng, ex: &Extraction) -> Query {
    let vocab = ex.kb.vocabulary();
    let mut q = Query::default();
    let pick = |rng: &mut dyn rand::RngCore, from: &[String], p: f64| -> Vec<String> {
        let mut out = Vec::new();
        while rng.random::<f64>() < p && out.len() < 3 {
            out.push(from.choose(rng).unwrap().clone());
        }
        out
    };
    q.occasion = pick(rng, vocab.occasions(), 0.5);
    q.category = pick(rng, vocab.categories(), 0.4);
    let values: Vec<String> = vocab
        .attributes()
        .iter()
        .flat_map(|a| a.values.clone())
        .collect();
    q.attribute_value = pick(rng, &values, 0.3);
    if rng.random::<f64>() < 0.4 {
        q.gender = vec![*TripletGender::ALL.choose(rng).unwrap()];
    }
    let tags: Vec<String> = ex.kb.indexes().hashtag.keys().cloned().collect();
    q.hashtag = pick(rng, &tags, 0.2);
    let locs: Vec<String> = ex.kb.indexes().location.keys().cloned().collect();
    q.location = pick(rng, &locs, 0.2);
    let times: Vec<i64> = ex.rows.iter().map(|(_, m)| m.timestamp).collect();
    if rng.random::<f64>() < 0.3 {
        let a = *times.choose(rng).unwrap();
        let b = *times.choose(rng).unwrap();
        q.time_from = Some(a.min(b));
        q.time_to = Some(a.max(b));
    } else if rng.random::<f64>() < 0.1 {
        q.time_from = Some(*times.choose(rng).unwrap());
    }
    if rng.random::<f64>() < 0.3 {
        q.min_likes = Some(rng.random_range(0..300));
    }
    if rng.random::<f64>() < 0.2 {
        q.min_comments = Some(rng.random_range(0..40));
    }
    q.offset = if rng.random::<f64>() < 0.3 {
        rng.random_range(0..20)
    } else {
        0
    };
    q.limit = rng.random_range(1..=60);
    q
}

/// Recount of instances per key straight from the rows.
pub fn recount(ex: &Extraction) -> BTreeMap<fashionkb::kb::TripletKey, usize> {
    let mut out = BTreeMap::new();
    for (t, _) in &ex.rows {
        *out.entry(t.key()).or_insert(0) += 1;
    }
    out
}

pub fn det(b: BoundingBox) -> Detection {
    Detection {
        bbox: b,
        confidence: 0.9,
    }
}

/// One person with integer face height `f`, body height `b`, image height `h`.
pub fn person_post(f: u32, b: u32, h: u32) -> Post {
    let (f, b, h) = (f as f64, b as f64, h as f64);
    let body = BoundingBox::new(10.0, 0.0, b / 2.0, b);
    let face = BoundingBox::new(10.0 + b / 4.0 - f / 2.0, 0.0, f, f);
    let base = generate_synthetic(&SyntheticConfig::planted(
        ConceptVocabulary::reference(),
        1,
        1,
    ))
    .unwrap()
    .0;
    let mut post = base[0].post.clone();
    post.image_height = h;
    post.image_width = b + 20.0;
    post.faces = vec![det(face)];
    post.bodies = vec![det(body)];
    post.garments.clear();
    post.caption = String::new();
    post.hashtags.clear();
    post
}

/// 200 (face, body, image) height triples straddling both thresholds.
pub fn boundary_table() -> Vec<(u32, u32, u32)> {
    let mut cases = Vec::new();
    let mut b = 100;
    while cases.len() < 200 {
        for df in [-1i32, 0, 1] {
            for dh in [-1i32, 0, 1] {
                let f = (b / 5) as i32 + df;
                let h = (2 * b) as i32 + dh;
                cases.push((f as u32, b, h as u32));
            }
        }
        b += 10;
    }
    cases.truncate(200);
    cases
}

pub fn oracle_score(face: &BoundingBox, body: &BoundingBox) -> f64 {
    if face.height > body.height {
        return 0.0;
    }
    let cx = face.x + face.width * 0.5;
    let cy = face.y + face.height * 0.5;
    if cx < body.x
        || cx > body.x + body.width
        || cy < body.y
        || cy > body.y + HEAD_BAND * body.height
    {
        return 0.0;
    }
    let ix = (face.x + face.width).min(body.x + body.width) - face.x.max(body.x);
    let iy = (face.y + face.height).min(body.y + body.height) - face.y.max(body.y);
    if ix <= 0.0 || iy <= 0.0 {
        0.0
    } else {
        ix * iy / (face.width * face.height)
    }
}

/// Repeatedly takes the best remaining (face, body) pair.
pub fn oracle_pairs(faces: &[BoundingBox], bodies: &[BoundingBox]) -> Vec<(usize, usize)> {
    let mut free_f: Vec<bool> = vec![true; faces.len()];
    let mut free_b: Vec<bool> = vec![true; bodies.len()];
    let mut out = Vec::new();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, f) in faces.iter().enumerate() {
            for (j, b) in bodies.iter().enumerate() {
                if !free_f[i] || !free_b[j] {
                    continue;
                }
                let s = oracle_score(f, b);
                if s > 0.0 && best.is_none_or(|(bs, _, _)| s > bs) {
                    best = Some((s, i, j));
                }
            }
        }
        match best {
            Some((_, i, j)) => {
                free_f[i] = false;
                free_b[j] = false;
                out.push((i, j));
            }
            None => return out,
        }
    }
}

pub fn oracle_keep(post: &Post, t: &FilterThresholds, clf: &AdClassifier) -> bool {
    let faces: Vec<BoundingBox> = post.faces.iter().map(|d| d.bbox).collect();
    let bodies: Vec<BoundingBox> = post.bodies.iter().map(|d| d.bbox).collect();
    let any_ok = oracle_pairs(&faces, &bodies).into_iter().any(|(i, j)| {
        faces[i].height / bodies[j].height < t.max_face_body_ratio
            && bodies[j].height / post.image_height > t.min_body_image_ratio
    });
    let x = DefaultAdFeatures.extract(post);
    let z: f64 = clf.weights.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + clf.bias;
    let score = 1.0 / (1.0 + (-z).exp());
    any_ok && score < t.ad_threshold
}
