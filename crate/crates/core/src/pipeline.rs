//! The stages as file-to-file functions, and the full run over a
//! [`PipelineConfig`]: ingest -> filter -> (train) -> predict -> extract.
//!
//! Every stage writes its artifact and a JSON report into the work
//! directory, so a run can be repeated stage by stage from the shell.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    read_corpus, write_corpus, CorpusReader, CorpusRecord, GarmentLabels, LabelSource, PostLabels,
};
use crate::filters::{AdClassifier, FilterReport, FilterThresholds, PostFilter};
use crate::ingest::{ingest_archive, HashtagMap, IngestReport};
use crate::kb::{build_triplets, KnowledgeBase, PostMeta};
use crate::model::{
    decode, load_checkpoint, save_checkpoint, train, ConceptModel, EncoderMode, ModelDims,
    NoiseModel, TrainConfig, TrainingExample,
};
use crate::vocab::ConceptVocabulary;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{stage} failed: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
}

impl PipelineError {
    /// Process exit code: 1 config, 2 missing input, 3 stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::MissingInput(_) => 2,
            PipelineError::Stage { .. } => 3,
        }
    }
}

fn stage_err(stage: &'static str) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

fn require(path: &Path) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput(path.to_path_buf()))
    }
}

fn write_json<T: Serialize>(
    path: &Path,
    value: &T,
    stage: &'static str,
) -> Result<(), PipelineError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| stage_err(stage)(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| stage_err(stage)(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Defaults to the bundled reference vocabulary.
    pub vocabulary: Option<PathBuf>,
    /// Defaults to the bundled hashtag map.
    pub hashtags: Option<PathBuf>,
    pub archive: Option<PathBuf>,
    pub work_dir: PathBuf,
    /// Read by predict; written by train when enabled.
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `<work_dir>/kb.fkbs`.
    pub kb: Option<PathBuf>,
    /// Ad classifier weights (JSON); defaults to the built-in weights.
    pub ad_model: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            vocabulary: None,
            hashtags: None,
            archive: None,
            work_dir: PathBuf::from("fashionkb-out"),
            checkpoint: None,
            kb: None,
            ad_model: None,
        }
    }
}

/// Model shape for training; feature dimensions come from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: EncoderMode,
    pub garment_hidden: usize,
    pub slot_hidden: usize,
    pub slot_embedding: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = ModelDims::default();
        Self {
            mode: EncoderMode::Contextual,
            garment_hidden: d.garment_hidden,
            slot_hidden: d.slot_hidden,
            slot_embedding: d.slot_embedding,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub ingest: bool,
    pub filter: bool,
    pub train: bool,
    pub predict: bool,
    pub extract: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            ingest: true,
            filter: true,
            train: false,
            predict: true,
            extract: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Overrides `train.seed` when set.
    pub seed: Option<u64>,
    pub paths: PathsConfig,
    pub filter: FilterThresholds,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub stages: StageToggles,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Loads a config; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        require(path)?;
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        fix(&mut paths.work_dir);
        for p in [
            &mut paths.vocabulary,
            &mut paths.hashtags,
            &mut paths.archive,
            &mut paths.checkpoint,
            &mut paths.kb,
            &mut paths.ad_model,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.train.seed = s;
        }
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.filter
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn vocabulary(&self) -> Result<ConceptVocabulary, PipelineError> {
        match &self.paths.vocabulary {
            Some(p) => {
                require(p)?;
                ConceptVocabulary::load(p).map_err(|e| PipelineError::Config(e.to_string()))
            }
            None => Ok(ConceptVocabulary::reference()),
        }
    }

    pub fn hashtags(&self, vocab: &ConceptVocabulary) -> Result<HashtagMap, PipelineError> {
        match &self.paths.hashtags {
            Some(p) => {
                require(p)?;
                HashtagMap::load(p, vocab).map_err(|e| PipelineError::Config(e.to_string()))
            }
            None => Ok(HashtagMap::reference()),
        }
    }

    pub fn ad_classifier(&self) -> Result<AdClassifier, PipelineError> {
        match &self.paths.ad_model {
            Some(p) => load_ad_model(p),
            None => Ok(AdClassifier::default()),
        }
    }

    pub fn kb_path(&self) -> PathBuf {
        self.paths
            .kb
            .clone()
            .unwrap_or_else(|| self.paths.work_dir.join("kb.fkbs"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.paths.work_dir.join("model.ckpt.json"))
    }
}

pub fn load_ad_model(path: &Path) -> Result<AdClassifier, PipelineError> {
    require(path)?;
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

// --- stages -----------------------------------------------------------------

pub fn ingest_stage(
    archive: &Path,
    map: &HashtagMap,
    out: &Path,
) -> Result<IngestReport, PipelineError> {
    require(archive)?;
    let err = stage_err("ingest");
    let mut ingest = ingest_archive(archive, map).map_err(|e| err(e.to_string()))?;
    let mut w =
        BufWriter::new(File::create(out).map_err(|e| err(format!("{}: {e}", out.display())))?);
    for record in ingest.by_ref() {
        writeln!(w, "{}", record.to_line()).map_err(|e| err(e.to_string()))?;
    }
    w.flush().map_err(|e| err(e.to_string()))?;
    Ok(ingest.report())
}

/// Keeps posts passing the cascade and attaches their person pairs.
pub fn filter_stage(
    input: &Path,
    out: &Path,
    filter: &PostFilter,
) -> Result<FilterReport, PipelineError> {
    require(input)?;
    let err = stage_err("filter");
    let reader = CorpusReader::open(input).map_err(|e| err(e.to_string()))?;
    let mut w =
        BufWriter::new(File::create(out).map_err(|e| err(format!("{}: {e}", out.display())))?);
    let mut report = FilterReport::default();
    for (_, record) in reader {
        let mut record = record.map_err(|e| err(e.to_string()))?;
        let outcome = filter.evaluate(&record.post);
        report.record(&outcome);
        if outcome.reason == crate::filters::DropReason::None {
            record.person_pairs = Some(outcome.pairs);
            writeln!(w, "{}", record.to_line()).map_err(|e| err(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| err(e.to_string()))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub clean: usize,
    pub weak: usize,
    pub final_loss: f64,
    /// Per-task accuracy on the evaluation set, when one was given.
    pub eval_accuracy: Option<Vec<f64>>,
}

fn read_examples(path: &Path, model: &ConceptModel) -> Result<Vec<TrainingExample>, PipelineError> {
    require(path)?;
    let err = stage_err("train");
    let records = read_corpus(path).map_err(|e| err(e.to_string()))?;
    TrainingExample::from_records(&records, model).map_err(|e| err(e.to_string()))
}

fn feature_dims(path: &Path) -> Result<(usize, usize), PipelineError> {
    let err = stage_err("train");
    let reader = CorpusReader::open(path).map_err(|e| err(e.to_string()))?;
    for (_, record) in reader {
        let record = record.map_err(|e| err(e.to_string()))?;
        if let Some(g) = record.post.garments.first() {
            return Ok((record.post.image_feature.len(), g.feature.len()));
        }
    }
    Err(err(format!("{} has no post with garments", path.display())))
}

/// Trains from a clean corpus and an optional weak one. Records in the clean
/// file are treated per their own label source, as are those in the weak
/// file.
pub fn train_stage(
    vocab: &ConceptVocabulary,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    clean: &Path,
    weak: Option<&Path>,
    eval: Option<&Path>,
    out: &Path,
) -> Result<TrainReport, PipelineError> {
    require(clean)?;
    let err = stage_err("train");
    let (image_dim, region_dim) = feature_dims(clean)?;
    let dims = ModelDims {
        image_dim,
        region_dim,
        garment_hidden: model_cfg.garment_hidden,
        slot_hidden: model_cfg.slot_hidden,
        slot_embedding: model_cfg.slot_embedding,
    };
    let mut model = ConceptModel::new(vocab.clone(), dims, model_cfg.mode, train_cfg.seed);
    let mut noise = NoiseModel::new(
        &vocab.task_names(),
        &vocab.task_sizes(),
        train_cfg.initial_self_mass,
    );
    let mut all = read_examples(clean, &model)?;
    if let Some(w) = weak {
        all.extend(read_examples(w, &model)?);
    }
    let (weak_set, clean_set): (Vec<_>, Vec<_>) = all
        .into_iter()
        .partition(|e| e.labels.source == LabelSource::Weak);
    let eval_set = eval.map(|p| read_examples(p, &model)).transpose()?;
    let history = train(
        &mut model,
        &mut noise,
        &clean_set,
        &weak_set,
        eval_set.as_deref(),
        train_cfg,
    )
    .map_err(|e| err(e.to_string()))?;
    save_checkpoint(&model, &noise, out).map_err(|e| err(e.to_string()))?;
    let last = history.last().expect("at least one epoch");
    Ok(TrainReport {
        clean: clean_set.len(),
        weak: weak_set.len(),
        final_loss: last.loss,
        eval_accuracy: last.accuracy.clone(),
    })
}

/// Decoded labels for one post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub post_id: String,
    pub occasion: String,
    /// Parallel to the post's garment regions.
    pub garments: Vec<GarmentLabels>,
}

impl PredictionRecord {
    pub fn labels(&self) -> PostLabels {
        PostLabels {
            occasion: self.occasion.clone(),
            garments: self.garments.clone(),
            source: LabelSource::Weak,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictReport {
    pub read: usize,
    pub predicted: usize,
    /// Posts without garment regions get no prediction.
    pub skipped_no_garments: usize,
}

pub fn predict_records(
    model: &ConceptModel,
    records: impl IntoIterator<Item = Result<CorpusRecord, String>>,
    mut sink: impl FnMut(PredictionRecord) -> Result<(), String>,
) -> Result<PredictReport, String> {
    let mut report = PredictReport::default();
    for record in records {
        let record = record?;
        report.read += 1;
        if record.post.garments.is_empty() {
            report.skipped_no_garments += 1;
            continue;
        }
        let hard = decode(&model.forward(&record.post).map_err(|e| e.to_string())?);
        let labels = crate::corpus::LabelIndices {
            occasion: hard.occasion,
            garments: hard.garments,
            source: LabelSource::Weak,
        }
        .to_labels(model.vocab());
        sink(PredictionRecord {
            post_id: record.post.post_id,
            occasion: labels.occasion,
            garments: labels.garments,
        })?;
        report.predicted += 1;
    }
    Ok(report)
}

pub fn predict_stage(
    checkpoint: &Path,
    input: &Path,
    out: &Path,
) -> Result<PredictReport, PipelineError> {
    require(checkpoint)?;
    require(input)?;
    let err = stage_err("predict");
    let (model, _) = load_checkpoint(checkpoint).map_err(|e| err(e.to_string()))?;
    let reader = CorpusReader::open(input).map_err(|e| err(e.to_string()))?;
    let mut w =
        BufWriter::new(File::create(out).map_err(|e| err(format!("{}: {e}", out.display())))?);
    let report = predict_records(
        &model,
        reader.map(|(_, r)| r.map_err(|e| e.to_string())),
        |p| {
            let line = serde_json::to_string(&p).map_err(|e| e.to_string())?;
            writeln!(w, "{line}").map_err(|e| e.to_string())
        },
    )
    .map_err(&err)?;
    w.flush().map_err(|e| err(e.to_string()))?;
    Ok(report)
}

pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, PredictionRecord>, PipelineError> {
    require(path)?;
    let err = stage_err("extract");
    let file = File::open(path).map_err(|e| err(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionRecord = serde_json::from_str(&line)
            .map_err(|e| err(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.insert(p.post_id.clone(), p);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractReport {
    pub posts: usize,
    pub posts_with_triplets: usize,
    pub triplets: usize,
    pub distinct_keys: usize,
}

/// Builds the knowledge base from a filtered corpus and its predictions and
/// writes the snapshot.
pub fn extract_stage(
    vocab: &ConceptVocabulary,
    input: &Path,
    predictions: &BTreeMap<String, PredictionRecord>,
    kb_out: &Path,
) -> Result<(KnowledgeBase, ExtractReport), PipelineError> {
    require(input)?;
    let err = stage_err("extract");
    let mut kb = KnowledgeBase::new(vocab.clone());
    let mut report = ExtractReport::default();
    let reader = CorpusReader::open(input).map_err(|e| err(e.to_string()))?;
    for (_, record) in reader {
        let record = record.map_err(|e| err(e.to_string()))?;
        report.posts += 1;
        let Some(pred) = predictions.get(&record.post.post_id) else {
            continue;
        };
        if pred.garments.len() != record.post.garments.len() {
            return Err(err(format!(
                "prediction for {} has {} garments, post has {}",
                pred.post_id,
                pred.garments.len(),
                record.post.garments.len()
            )));
        }
        let pairs = record.person_pairs.clone().unwrap_or_default();
        let triplets = build_triplets(&record.post, &pred.labels(), &pairs);
        report.triplets += triplets.len();
        report.posts_with_triplets += usize::from(!triplets.is_empty());
        kb.insert(PostMeta::from(&record.post), triplets)
            .map_err(|e| err(e.to_string()))?;
    }
    report.distinct_keys = kb.counts().len();
    kb.save(kb_out).map_err(|e| err(e.to_string()))?;
    Ok((kb, report))
}

/// Predictions kept in memory, for `extract --ckpt`.
pub fn predict_in_memory(
    checkpoint: &Path,
    input: &Path,
) -> Result<BTreeMap<String, PredictionRecord>, PipelineError> {
    require(checkpoint)?;
    require(input)?;
    let err = stage_err("predict");
    let (model, _) = load_checkpoint(checkpoint).map_err(|e| err(e.to_string()))?;
    let reader = CorpusReader::open(input).map_err(|e| err(e.to_string()))?;
    let mut out = BTreeMap::new();
    predict_records(
        &model,
        reader.map(|(_, r)| r.map_err(|e| e.to_string())),
        |p| {
            out.insert(p.post_id.clone(), p);
            Ok(())
        },
    )
    .map_err(err)?;
    Ok(out)
}

// --- full run ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineReport {
    pub ingest: Option<IngestReport>,
    pub filter: Option<FilterReport>,
    pub train: Option<TrainReport>,
    pub predict: Option<PredictReport>,
    pub extract: Option<ExtractReport>,
}

/// Artifact names inside the work directory.
pub mod artifacts {
    pub const INGESTED: &str = "ingested.jsonl";
    pub const FILTERED: &str = "filtered.jsonl";
    pub const PREDICTIONS: &str = "predictions.jsonl";
    pub const INGEST_REPORT: &str = "ingest_report.json";
    pub const FILTER_REPORT: &str = "filter_report.json";
    pub const TRAIN_REPORT: &str = "train_report.json";
    pub const PREDICT_REPORT: &str = "predict_report.json";
    pub const EXTRACT_REPORT: &str = "extract_report.json";
    pub const PIPELINE_REPORT: &str = "pipeline_report.json";
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    use artifacts::*;
    cfg.validate()?;
    let vocab = cfg.vocabulary()?;
    let work = &cfg.paths.work_dir;
    fs::create_dir_all(work)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", work.display())))?;
    let ingested = work.join(INGESTED);
    let filtered = work.join(FILTERED);
    let predictions = work.join(PREDICTIONS);
    let checkpoint = cfg.checkpoint_path();
    let mut report = PipelineReport::default();

    if cfg.stages.ingest {
        let archive =
            cfg.paths.archive.as_ref().ok_or_else(|| {
                PipelineError::Config("paths.archive is required for ingest".into())
            })?;
        let map = cfg.hashtags(&vocab)?;
        let r = ingest_stage(archive, &map, &ingested)?;
        log::info!("ingest: kept {} of {}", r.kept_count, r.read_count);
        write_json(&work.join(INGEST_REPORT), &r, "ingest")?;
        report.ingest = Some(r);
    }
    if cfg.stages.filter {
        let filter = PostFilter::new(cfg.filter, cfg.ad_classifier()?);
        let r = filter_stage(&ingested, &filtered, &filter)?;
        log::info!("filter: kept {} of {}", r.kept, r.read);
        write_json(&work.join(FILTER_REPORT), &r, "filter")?;
        report.filter = Some(r);
    }
    if cfg.stages.train {
        let r = train_stage(
            &vocab,
            &cfg.model,
            &cfg.train,
            &filtered,
            None,
            None,
            &checkpoint,
        )?;
        write_json(&work.join(TRAIN_REPORT), &r, "train")?;
        report.train = Some(r);
    }
    if cfg.stages.predict {
        let r = predict_stage(&checkpoint, &filtered, &predictions)?;
        log::info!("predict: {} posts", r.predicted);
        write_json(&work.join(PREDICT_REPORT), &r, "predict")?;
        report.predict = Some(r);
    }
    if cfg.stages.extract {
        let preds = read_predictions(&predictions)?;
        let (_, r) = extract_stage(&vocab, &filtered, &preds, &cfg.kb_path())?;
        log::info!("extract: {} triplets, {} keys", r.triplets, r.distinct_keys);
        write_json(&work.join(EXTRACT_REPORT), &r, "extract")?;
        report.extract = Some(r);
    }
    write_json(&work.join(PIPELINE_REPORT), &report, "pipeline")?;
    Ok(report)
}

/// Writes a corpus, mapping the error into a stage failure.
pub fn write_records(
    path: &Path,
    records: &[CorpusRecord],
    stage: &'static str,
) -> Result<(), PipelineError> {
    write_corpus(records, path).map_err(|e| stage_err(stage)(e.to_string()))
}
