use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fashionkb::corpus::{read_corpus, CorpusReader};
use fashionkb::filters::{train_ad_classifier, AdTrainConfig, PostFilter};
use fashionkb::kb::KnowledgeBase;
use fashionkb::model::EncoderMode;
use fashionkb::pipeline::{self, PipelineConfig, PipelineError};
use fashionkb::search::{post_details, query_posts, query_triplets, PostDetailsMap, Query};
use fashionkb::server::{serve, AppState};
use fashionkb::synthetic::{generate_synthetic, NoiseShape, SyntheticConfig};

#[derive(Parser)]
#[command(
    name = "fashionkb",
    version,
    about = "Fashion knowledge extraction pipeline"
)]
struct Cli {
    /// Pipeline config (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic archive with planted correlations
    GenSynthetic(GenArgs),
    /// Select posts by occasion hashtag and drop duplicates
    Ingest(IngestArgs),
    /// Run the face/body, ratio and ad filters
    Filter(FilterArgs),
    /// Train the concept model
    Train(TrainArgs),
    /// Label a corpus with a trained model
    Predict(PredictArgs),
    /// Build the knowledge base snapshot
    Extract(ExtractArgs),
    /// Serve the search API
    Serve(ServeArgs),
    /// Run one search against a snapshot and print JSON
    Query(QueryArgs),
    /// Run every enabled stage of the config
    Run,
    /// Fit the ad classifier from synthetic ground truth
    TrainAd(TrainAdArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON (clean labels, planted matrices)
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    posts: usize,
    #[arg(long, default_value_t = 0.0)]
    weak_fraction: f64,
    /// Off-diagonal mass of the planted transition matrices
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    violation_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    ad_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    untagged_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    duplicate_fraction: f64,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    hashtags: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    max_face_body: Option<f64>,
    #[arg(long)]
    min_body_image: Option<f64>,
    #[arg(long)]
    ad_threshold: Option<f64>,
    /// Ad classifier weights written by train-ad
    #[arg(long)]
    ad_model: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Contextual,
    PerItem,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    weak: Option<PathBuf>,
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(
        long,
        required_unless_present = "predictions",
        conflicts_with = "predictions"
    )]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    kb: PathBuf,
    /// Corpus for captions in post results
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory served under /
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SearchMode {
    Triplets,
    Posts,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long, value_enum, default_value = "triplets")]
    mode: SearchMode,
    /// URL query string, e.g. "occasion=prom&gender=female"
    #[arg(default_value = "")]
    query: String,
}

#[derive(Args)]
struct TrainAdArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Ground truth from gen-synthetic
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
}

fn stage(name: &'static str) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage {
        stage: name,
        message,
    }
}

fn exists(path: &Path) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput(path.to_path_buf()))
    }
}

fn write_report<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| stage("report")(e.to_string()))?;
    match path {
        Some(p) => {
            fs::write(p, text + "\n").map_err(|e| stage("report")(format!("{}: {e}", p.display())))
        }
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}") {
                // a closed pipe (`| head`) is not a failure
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(stage("report")(e.to_string()))
                }
                _ => Ok(()),
            }
        }
    }
}

fn load_kb(path: &Path) -> Result<KnowledgeBase, PipelineError> {
    exists(path)?;
    KnowledgeBase::load(path).map_err(|e| stage("load kb")(e.to_string()))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    }
    .with_seed(cli.seed);

    match cli.command {
        Command::GenSynthetic(a) => {
            let vocab = cfg.vocabulary()?;
            let tags = cfg.hashtags(&vocab)?;
            let seed = cfg.seed.unwrap_or(1);
            let mut syn = SyntheticConfig::planted(vocab, a.posts, seed)
                .with_label_noise(NoiseShape::PairFlip, a.noise);
            syn.weak_fraction = a.weak_fraction;
            syn.violation_fraction = a.violation_fraction;
            syn.ad_fraction = a.ad_fraction;
            syn.untagged_fraction = a.untagged_fraction;
            syn.duplicate_fraction = a.duplicate_fraction;
            syn.hashtags = Some(tags.by_occasion().clone());
            let (records, truth) =
                generate_synthetic(&syn).map_err(|e| PipelineError::Config(e.to_string()))?;
            pipeline::write_records(&a.out, &records, "gen-synthetic")?;
            if let Some(t) = &a.truth {
                write_report(Some(t), &truth)?;
            }
            log::info!("wrote {} records to {}", records.len(), a.out.display());
        }
        Command::Ingest(a) => {
            let vocab = cfg.vocabulary()?;
            let map = match &a.hashtags {
                Some(p) => {
                    exists(p)?;
                    fashionkb::ingest::HashtagMap::load(p, &vocab)
                        .map_err(|e| PipelineError::Config(e.to_string()))?
                }
                None => cfg.hashtags(&vocab)?,
            };
            let report = pipeline::ingest_stage(&a.archive, &map, &a.out)?;
            write_report(a.report.as_deref(), &report)?;
        }
        Command::Filter(a) => {
            let mut t = cfg.filter;
            if let Some(v) = a.max_face_body {
                t.max_face_body_ratio = v;
            }
            if let Some(v) = a.min_body_image {
                t.min_body_image_ratio = v;
            }
            if let Some(v) = a.ad_threshold {
                t.ad_threshold = v;
            }
            t.validate()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            let clf = match &a.ad_model {
                Some(p) => pipeline::load_ad_model(p)?,
                None => cfg.ad_classifier()?,
            };
            let report = pipeline::filter_stage(&a.input, &a.out, &PostFilter::new(t, clf))?;
            write_report(a.report.as_deref(), &report)?;
        }
        Command::Train(a) => {
            let vocab = cfg.vocabulary()?;
            let mut model = cfg.model;
            if let Some(m) = a.mode {
                model.mode = match m {
                    Mode::Contextual => EncoderMode::Contextual,
                    Mode::PerItem => EncoderMode::PerItem,
                };
            }
            let mut train = cfg.train.clone();
            if let Some(e) = a.epochs {
                train.epochs = e;
            }
            train
                .validate()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            let report = pipeline::train_stage(
                &vocab,
                &model,
                &train,
                &a.clean,
                a.weak.as_deref(),
                a.eval.as_deref(),
                &a.out,
            )?;
            write_report(a.report.as_deref(), &report)?;
        }
        Command::Predict(a) => {
            let report = pipeline::predict_stage(&a.ckpt, &a.input, &a.out)?;
            log::info!("predicted {} posts", report.predicted);
        }
        Command::Extract(a) => {
            let preds = match (&a.ckpt, &a.predictions) {
                (Some(ckpt), _) => pipeline::predict_in_memory(ckpt, &a.input)?,
                (None, Some(p)) => pipeline::read_predictions(p)?,
                (None, None) => unreachable!("clap requires one of --ckpt and --predictions"),
            };
            let vocab = cfg.vocabulary()?;
            let (_, report) = pipeline::extract_stage(&vocab, &a.input, &preds, &a.kb)?;
            write_report(a.report.as_deref(), &report)?;
        }
        Command::Serve(a) => {
            let kb = load_kb(&a.kb)?;
            let details = match &a.corpus {
                Some(p) => {
                    exists(p)?;
                    let reader =
                        CorpusReader::open(p).map_err(|e| stage("serve")(e.to_string()))?;
                    let mut posts = Vec::new();
                    for (_, r) in reader {
                        posts.push(r.map_err(|e| stage("serve")(e.to_string()))?.post);
                    }
                    post_details(&posts)
                }
                None => PostDetailsMap::new(),
            };
            if let Some(d) = &a.static_dir {
                exists(d)?;
            }
            let state = Arc::new(AppState { kb, details });
            let rt = tokio::runtime::Runtime::new().map_err(|e| stage("serve")(e.to_string()))?;
            rt.block_on(serve(state, a.addr, a.static_dir))
                .map_err(|e| stage("serve")(e.to_string()))?;
        }
        Command::Query(a) => {
            let kb = load_kb(&a.kb)?;
            let q =
                Query::from_query_string(&a.query).map_err(|e| stage("query")(e.to_string()))?;
            let err = stage("query");
            match a.mode {
                SearchMode::Triplets => write_report(
                    None,
                    &query_triplets(&kb, &q).map_err(|e| err(e.to_string()))?,
                )?,
                SearchMode::Posts => write_report(
                    None,
                    &query_posts(&kb, None, &q).map_err(|e| err(e.to_string()))?,
                )?,
            }
        }
        Command::Run => {
            if cli.config.is_none() {
                return Err(PipelineError::Config("run needs --config".into()));
            }
            let report = pipeline::run_pipeline(&cfg)?;
            write_report(None, &report)?;
        }
        Command::TrainAd(a) => {
            exists(&a.input)?;
            exists(&a.truth)?;
            let records = read_corpus(&a.input).map_err(|e| stage("train-ad")(e.to_string()))?;
            let text =
                fs::read_to_string(&a.truth).map_err(|e| stage("train-ad")(e.to_string()))?;
            let truth: fashionkb::synthetic::GroundTruth =
                serde_json::from_str(&text).map_err(|e| stage("train-ad")(e.to_string()))?;
            let ads: std::collections::HashMap<&str, bool> = truth
                .posts
                .iter()
                .map(|t| (t.post_id.as_str(), t.ad))
                .collect();
            let examples: Vec<_> = records
                .into_iter()
                .filter_map(|r| ads.get(r.post.post_id.as_str()).map(|&ad| (r.post, ad)))
                .collect();
            let mut tc = AdTrainConfig {
                seed: cfg.seed.unwrap_or(AdTrainConfig::default().seed),
                ..AdTrainConfig::default()
            };
            if let Some(e) = a.epochs {
                tc.epochs = e;
            }
            let (clf, report) = train_ad_classifier(&examples, &tc)
                .map_err(|e| stage("train-ad")(e.to_string()))?;
            write_report(Some(&a.out), &clf)?;
            write_report(None, &report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
