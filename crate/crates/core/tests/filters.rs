mod common;

use std::io::Cursor;

use fashionkb::corpus::{BoundingBox, CorpusReader};
use fashionkb::filters::{
    pair_faces_bodies, pair_score, ratio_check, AdClassifier, DropReason, FilterThresholds,
    PersonPair, PostFilter,
};
use fashionkb::ingest::{HashtagMap, Ingest};
use fashionkb::synthetic::{generate_synthetic, SyntheticConfig};
use fashionkb::{ConceptVocabulary, CorpusRecord};
use proptest::prelude::*;

#[test]
fn boundary_table_matches_integer_oracle() {
    let t = FilterThresholds {
        ad_threshold: 1.0,
        ..FilterThresholds::default()
    };
    let zero = AdClassifier {
        weights: vec![0.0; 6],
        bias: 0.0,
    };
    let filter = PostFilter::new(t, zero);
    let table = common::boundary_table();
    assert!(
        table.contains(&(20, 100, 200)),
        "face/body = 0.2 and body/image = 0.5 exactly"
    );
    let mut mismatches = Vec::new();
    for &(f, b, h) in &table {
        let expect_keep = 5 * f < b && 2 * b > h;
        let outcome = filter.evaluate(&common::person_post(f, b, h));
        let kept = outcome.reason == DropReason::None;
        let expected_reason = if expect_keep {
            DropReason::None
        } else {
            DropReason::RatioViolation
        };
        if kept != expect_keep || outcome.reason != expected_reason {
            mismatches.push((f, b, h, outcome.reason));
        }
    }
    assert!(mismatches.is_empty(), "{mismatches:?}");
}

#[test]
fn exact_threshold_ratios_are_dropped() {
    let t = FilterThresholds::default();
    let pair = |f: f64, b: f64| PersonPair {
        face: BoundingBox::new(0.0, 0.0, f, f),
        body: BoundingBox::new(0.0, 0.0, b, b),
        pair_score: 1.0,
        gender: None,
    };
    assert!(!ratio_check(&pair(20.0, 100.0), 150.0, &t));
    assert!(!ratio_check(&pair(10.0, 100.0), 200.0, &t));
    assert!(ratio_check(&pair(19.0, 100.0), 199.0, &t));
}

fn index_pairs(
    pairs: &[PersonPair],
    faces: &[BoundingBox],
    bodies: &[BoundingBox],
) -> Vec<(usize, usize)> {
    pairs
        .iter()
        .map(|p| {
            (
                faces.iter().position(|f| *f == p.face).unwrap(),
                bodies.iter().position(|b| *b == p.body).unwrap(),
            )
        })
        .collect()
}

fn boxes(max: usize) -> impl Strategy<Value = Vec<BoundingBox>> {
    prop::collection::vec((0u32..40, 0u32..40, 1u32..30, 1u32..60), 0..max).prop_map(|v| {
        v.into_iter()
            .map(|(x, y, w, h)| BoundingBox::new(x as f64, y as f64, w as f64, h as f64))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn greedy_pairing_matches_selection_oracle(faces in boxes(5), bodies in boxes(5)) {
        let pairs = pair_faces_bodies(&faces, &bodies);
        for p in &pairs {
            prop_assert!((p.pair_score - common::oracle_score(&p.face, &p.body)).abs() <= 1e-12);
            prop_assert_eq!(p.pair_score, pair_score(&p.face, &p.body));
        }
        prop_assert_eq!(index_pairs(&pairs, &faces, &bodies), common::oracle_pairs(&faces, &bodies));
    }
}

#[test]
fn keep_set_matches_recheck_on_mixed_corpus() {
    let mut cfg = SyntheticConfig::planted(ConceptVocabulary::reference(), 1000, 21);
    cfg.violation_fraction = 0.25;
    cfg.ad_fraction = 0.15;
    let (records, truth) = generate_synthetic(&cfg).unwrap();
    let t = FilterThresholds::default();
    let clf = AdClassifier::default();
    let filter = PostFilter::new(t, clf.clone());
    let mut kept = 0;
    for (r, tr) in records.iter().zip(&truth.posts) {
        let outcome = filter.evaluate(&r.post);
        let keep = outcome.reason == DropReason::None;
        assert_eq!(
            keep,
            common::oracle_keep(&r.post, &t, &clf),
            "{}",
            r.post.post_id
        );
        if tr.violation.is_some() {
            assert!(!keep, "{} carries a planted violation", r.post.post_id);
        }
        kept += usize::from(keep);
    }
    assert!(kept > 400 && kept < 1000, "kept {kept}");
}

fn archive_line(id: &str, tag: &str) -> String {
    let base = generate_synthetic(&SyntheticConfig::planted(
        ConceptVocabulary::reference(),
        1,
        2,
    ))
    .unwrap()
    .0;
    let mut post = base[0].post.clone();
    post.post_id = id.to_string();
    post.hashtags = vec![tag.to_string()];
    CorpusRecord::from(post).to_line()
}

#[test]
fn ingest_counts_on_constructed_archive() {
    let map = HashtagMap::reference();
    let tag = &map.hashtags("prom")[0];
    let mut lines = Vec::new();
    for i in 0..35 {
        lines.push(archive_line(&format!("m{i}"), &tag.to_uppercase()));
    }
    for i in 0..5 {
        lines.push(archive_line(&format!("m{}", i * 7), tag));
    }
    for i in 0..60 {
        lines.push(archive_line(&format!("u{i}"), &format!("{tag}s")));
    }
    // interleave deterministically
    let mut order: Vec<usize> = (0..lines.len()).collect();
    order.sort_by_key(|&i| (i * 37) % 100);
    let text: String = order.iter().map(|&i| lines[i].clone() + "\n").collect();

    let mapped_unique: std::collections::BTreeSet<String> =
        (0..35).map(|i| format!("m{i}")).collect();
    let mut ingest = Ingest::new(CorpusReader::new(Cursor::new(text)), &map);
    let kept: Vec<String> = ingest.by_ref().map(|r| r.post.post_id).collect();
    let report = ingest.report();
    assert_eq!(
        (
            report.read_count,
            report.kept_count,
            report.dropped_no_hashtag,
            report.dropped_duplicate
        ),
        (100, 35, 60, 5)
    );
    assert!(report.is_consistent());
    assert_eq!(
        kept.iter()
            .cloned()
            .collect::<std::collections::BTreeSet<_>>(),
        mapped_unique
    );
}

#[test]
fn second_occurrence_is_the_one_dropped() {
    let map = HashtagMap::reference();
    let tag = &map.hashtags("wedding")[0];
    let mut a = archive_line("x", tag);
    let first_caption = "first";
    let mut v: serde_json::Value = serde_json::from_str(&a).unwrap();
    v["caption"] = first_caption.into();
    a = v.to_string();
    let text = format!("{a}\n{}\n", archive_line("x", tag));
    let mut ingest = Ingest::new(CorpusReader::new(Cursor::new(text)), &map);
    let kept: Vec<_> = ingest.by_ref().collect();
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].post.caption, first_caption);
    assert_eq!(ingest.report().dropped_duplicate, 1);
}
