mod common;

use fashionkb::corpus::LabelSource;
use fashionkb::model::{
    apply_noise, load_checkpoint, loss, save_checkpoint, train, ConceptModel, EncoderMode,
    ModelDims, NoiseModel, TrainConfig, TrainingExample,
};
use fashionkb::synthetic::{generate_synthetic, SyntheticConfig};
use fashionkb::Post;
use proptest::prelude::*;

fn dims(n: usize) -> ModelDims {
    ModelDims {
        image_dim: n,
        region_dim: n,
        garment_hidden: n,
        slot_hidden: n,
        slot_embedding: n,
    }
}

fn corpus(n: usize, seed: u64, dim: usize) -> (SyntheticConfig, Vec<fashionkb::CorpusRecord>) {
    let mut cfg = SyntheticConfig::planted(common::small_vocab(), n, seed);
    cfg.image_dim = dim;
    cfg.region_dim = dim;
    let (records, _) = generate_synthetic(&cfg).unwrap();
    (cfg, records)
}

fn as_weak(ex: &TrainingExample) -> TrainingExample {
    let mut w = ex.clone();
    w.labels.source = LabelSource::Weak;
    w
}

fn noise_for(model: &ConceptModel) -> NoiseModel {
    NoiseModel::new(
        &model.vocab().task_names(),
        &model.vocab().task_sizes(),
        0.9,
    )
}

#[test]
fn gradients_match_central_differences() {
    for mode in [EncoderMode::Contextual, EncoderMode::PerItem] {
        let (_, records) = corpus(6, 3, 4);
        let mut model = ConceptModel::new(common::small_vocab(), dims(4), mode, 11);
        let mut noise = noise_for(&model);
        let mut batch = TrainingExample::from_records(&records, &model).unwrap();
        for ex in batch.iter_mut().skip(3) {
            *ex = as_weak(ex);
        }
        let cfg = TrainConfig {
            trace_weight: 0.1,
            weak_weight: 0.7,
            ..TrainConfig::default()
        };
        for (group, name, rel) in common::gradient_check(&mut model, &mut noise, &batch, &cfg, 1e-4)
        {
            assert!(
                rel <= 1e-4,
                "{mode:?} group {group} {name}: rel err {rel:e}"
            );
        }
    }
}

#[test]
fn weak_loss_with_identity_transitions_equals_clean_loss() {
    let (_, records) = corpus(5, 4, 4);
    let model = ConceptModel::new(common::small_vocab(), dims(4), EncoderMode::Contextual, 2);
    let mut noise = noise_for(&model);
    for task in 0..noise.task_count() {
        let t = noise.params_mut().get_mut(task);
        let c = t.cols();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = if i / c == i % c { 0.0 } else { -800.0 };
        }
    }
    let clean = TrainingExample::from_records(&records, &model).unwrap();
    let weak: Vec<_> = clean.iter().map(as_weak).collect();
    let cfg = TrainConfig::default();
    let a = loss(&model, &noise, &clean, &cfg).unwrap();
    let b = loss(&model, &noise, &weak, &cfg).unwrap();
    assert!((a - b).abs() <= 1e-12 * a.abs(), "{a} vs {b}");
}

#[test]
fn training_is_deterministic_and_lowers_loss() {
    let (_, records) = corpus(60, 8, 6);
    let run = || {
        let mut model =
            ConceptModel::new(common::small_vocab(), dims(6), EncoderMode::Contextual, 3);
        let mut noise = noise_for(&model);
        let ex = TrainingExample::from_records(&records, &model).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &mut noise, &ex, &[], None, &cfg).unwrap();
        (model, noise, history)
    };
    let (m1, n1, h1) = run();
    let (m2, n2, h2) = run();
    assert_eq!(m1.params(), m2.params());
    assert_eq!(n1.params(), n2.params());
    assert_eq!(h1, h2);
    assert!(h1.last().unwrap().loss < h1[0].loss);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (_, records) = corpus(20, 5, 6);
    let mut model = ConceptModel::new(common::small_vocab(), dims(6), EncoderMode::Contextual, 3);
    let mut noise = noise_for(&model);
    let ex = TrainingExample::from_records(&records, &model).unwrap();
    let weak: Vec<_> = ex.iter().take(8).map(as_weak).collect();
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    train(&mut model, &mut noise, &ex, &weak, None, &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    save_checkpoint(&model, &noise, &a).unwrap();
    let (m2, n2) = load_checkpoint(&a).unwrap();
    assert_eq!(model, m2);
    assert_eq!(noise, n2);
    for r in &records {
        assert_eq!(
            model.forward(&r.post).unwrap(),
            m2.forward(&r.post).unwrap()
        );
    }
    save_checkpoint(&m2, &n2, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn missing_checkpoint_is_an_error() {
    assert!(load_checkpoint("/nonexistent/model.json").is_err());
}

fn random_post(feats: &[Vec<f64>], image: Vec<f64>) -> Post {
    let (_, records) = corpus(1, 1, image.len());
    let mut post = records[0].post.clone();
    post.image_feature = image;
    let template = post.garments[0].clone();
    post.garments = feats
        .iter()
        .map(|f| {
            let mut g = template.clone();
            g.feature = f.clone();
            g
        })
        .collect();
    post
}

fn normalized(d: &[f64]) -> bool {
    d.iter().all(|&p| p >= 0.0) && (d.iter().sum::<f64>() - 1.0).abs() <= 1e-6
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_distribution_is_normalized(
        garments in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 4), 1..5),
        image in prop::collection::vec(-4.0f64..4.0, 4),
        seed in 0u64..1000,
        contextual in any::<bool>(),
    ) {
        let mode = if contextual { EncoderMode::Contextual } else { EncoderMode::PerItem };
        let model = ConceptModel::new(common::small_vocab(), dims(4), mode, seed);
        let pred = model.forward(&random_post(&garments, image)).unwrap();
        prop_assert!(normalized(&pred.occasion));
        prop_assert_eq!(pred.garments.len(), garments.len());
        for slots in &pred.garments {
            prop_assert_eq!(slots.len(), model.vocab().slot_count());
            for d in slots {
                prop_assert!(normalized(d));
            }
        }
    }

    #[test]
    fn apply_noise_preserves_mass(
        p in prop::collection::vec(0.0f64..1.0, 2..8),
        raw in prop::collection::vec(0.0f64..1.0, 64),
    ) {
        let c = p.len();
        let s: f64 = p.iter().sum::<f64>().max(1e-9);
        let p: Vec<f64> = p.iter().map(|v| v / s).collect();
        let mut t = raw[..c * c].to_vec();
        for row in t.chunks_mut(c) {
            let rs: f64 = row.iter().sum::<f64>().max(1e-9);
            row.iter_mut().for_each(|v| *v /= rs);
        }
        let q = apply_noise(&p, &t).unwrap();
        prop_assert!((q.iter().sum::<f64>() - p.iter().sum::<f64>()).abs() <= 1e-12);
        prop_assert!(q.iter().all(|&v| v >= 0.0));
    }
}
