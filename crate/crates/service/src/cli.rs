//! `foresearch` command line. Exit codes: 0 success, 1 input error,
//! 2 backend failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use clap::{Args, Parser, Subcommand};
use foresearch_core::encoder::mock::{MockEncoder, MockEncoderConfig, Palette};
use foresearch_core::eval::{emit_report, EvalConfig, ReportFormat};
use foresearch_core::frames::{FrameSource, VideoManifest};
use foresearch_core::qa::stub::ScriptedModel;
use foresearch_core::qa::{load_captions, ModelClient, QaEngine, QaError, RecordingClient, ReplayClient, Stage};
use foresearch_core::synth::{ScenarioConfig, SyntheticWorld};
use foresearch_core::vecindex::VecIndex;
use foresearch_core::{Subtask, TimeInterval};

use crate::api;
use crate::app::{App, AppError, EvalRequest, IngestRequest, QueryRequest, QueryResponse};
use crate::clients::{self, load_palette, qa_clients};
use crate::config::{ConfigError, ServiceConfig};
use crate::corpus::write_corpus;
use crate::mock;
use crate::registry::VideoRegistry;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(m: impl ToString) -> Self {
        Self {
            code: 1,
            message: m.to_string(),
        }
    }

    pub fn backend(m: impl ToString) -> Self {
        Self {
            code: 2,
            message: m.to_string(),
        }
    }
}

impl From<AppError> for CliError {
    fn from(e: AppError) -> Self {
        match e {
            AppError::Input(_) | AppError::NotFound(_) | AppError::Conflict(_) => CliError::input(e),
            AppError::Backend(_) | AppError::Internal(_) => CliError::backend(e),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::input(e)
    }
}

impl From<QaError> for CliError {
    fn from(e: QaError) -> Self {
        match e {
            QaError::Unavailable(_) => CliError::backend(e),
            _ => CliError::input(e),
        }
    }
}

type CliResult = Result<(), CliError>;

#[derive(Debug, Parser)]
#[command(name = "foresearch", version, about = "Forensic video search: ingest, index, query, evaluate")]
pub struct Cli {
    /// TOML or YAML config file; FORESEARCH_* variables override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log filter, e.g. `info` or `foresearch=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
    /// Track, clip, embed and index one video's detections.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        /// Detections as JSON lines.
        #[arg(long)]
        detections: PathBuf,
    },
    /// Inspect or maintain the index file.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Search the index, optionally answering with the VLM.
    Query(QueryArgs),
    /// Score a benchmark against predictions or the live stack.
    Eval(EvalArgs),
    /// Run the benchmark data engine.
    QaEngine(QaArgs),
    /// Work the review queue of the data engine.
    Review {
        #[command(subcommand)]
        action: ReviewAction,
    },
    /// Serve the mock encoder over HTTP.
    MockEncoder {
        #[arg(long, default_value = "127.0.0.1:8081")]
        listen: String,
        /// Label → colour table written by `synth`.
        #[arg(long)]
        palette: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 512)]
        dimension: usize,
    },
    /// Serve the mock VLM over HTTP.
    MockVlm {
        #[arg(long, default_value = "127.0.0.1:8082")]
        listen: String,
        #[arg(long)]
        benchmark: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        fidelity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic corpus (frames, detections, benchmark, config).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        videos: usize,
        #[arg(long, default_value_t = 4)]
        actors: usize,
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum IndexAction {
    /// Record counts per video.
    Stats,
    /// Load the file and check its checksum and sidecar.
    Verify,
    /// Drop a video's clips and rewrite the file.
    Remove { video_id: String },
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub text: String,
    /// Query image (PNG or JPEG).
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub video: Option<String>,
    #[arg(long)]
    pub camera: Option<String>,
    /// Time window start (seconds, video-relative).
    #[arg(long, requires = "to")]
    pub from: Option<f64>,
    #[arg(long, requires = "from")]
    pub to: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Also run the VLM over the top hits.
    #[arg(long)]
    pub answer: bool,
    /// Answer option (repeat for each).
    #[arg(long = "option")]
    pub options: Vec<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub benchmark: PathBuf,
    /// Scored instead of running the live stack.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    pub format: String,
    /// Restrict to these subtasks (repeatable).
    #[arg(long = "subtask")]
    pub subtasks: Vec<String>,
    /// Clips passed to the VLM per question (live runs).
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct QaArgs {
    /// extract, ground, generate, package, or all.
    pub stage: String,
    #[arg(long)]
    pub captions: PathBuf,
    /// Defaults to the configured qa work directory.
    #[arg(long)]
    pub work_dir: Option<PathBuf>,
    /// Use the scripted stub models over this synthetic world.
    #[arg(long)]
    pub stub_world: Option<PathBuf>,
    /// Replay recorded model exchanges: expects llm_recordings.jsonl and
    /// lmm_recordings.jsonl.
    #[arg(long)]
    pub replay_dir: Option<PathBuf>,
    /// Save the model exchanges of this run here.
    #[arg(long)]
    pub record_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ReviewAction {
    List,
    Accept {
        item_id: String,
        #[arg(long)]
        reviewer: Option<String>,
    },
    Reject {
        item_id: String,
        #[arg(long)]
        reason: String,
        #[arg(long)]
        reviewer: Option<String>,
    },
    Edit {
        item_id: String,
        /// The corrected sample as JSON.
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        reviewer: Option<String>,
    },
}

fn print_json(v: &impl serde::Serialize) -> CliResult {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v).map_err(CliError::backend)?;
    writeln!(out).map_err(CliError::backend)
}

fn load_config(path: Option<&Path>) -> Result<ServiceConfig, CliError> {
    Ok(ServiceConfig::load(path)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn init_logging(filter: &str) {
    let filter = std::env::var("FORESEARCH_LOG").unwrap_or_else(|_| filter.to_string());
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(filter))
        .with_writer(std::io::stderr)
        .try_init();
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::backend)
}

async fn serve_router(listen: &str, router: axum::Router) -> CliResult {
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .map_err(|e| CliError::input(format!("cannot listen on {listen}: {e}")))?;
    eprintln!("listening on {}", listener.local_addr().map_err(CliError::backend)?);
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(CliError::backend)
}

fn print_hits(resp: &QueryResponse) {
    for h in &resp.hits {
        println!(
            "{:>3}  {:.4}  {:<28} {:>8.2}s – {:>8.2}s  {}",
            h.rank,
            h.score,
            h.clip.clip_id,
            h.clip.span.start(),
            h.clip.span.end(),
            h.clip.camera_id
        );
    }
    if let Some(a) = &resp.answer {
        if let Some(s) = &a.summary {
            println!("\nsummary: {s}");
        }
        if let Some(i) = a.answer {
            println!("answer: {i}{}", a.answer_text.as_deref().map(|t| format!(" ({t})")).unwrap_or_default());
        }
        let spans: Vec<String> = a.intervals.intervals().iter().map(|i| format!("[{:.1}, {:.1}]", i.start(), i.end())).collect();
        println!("intervals: {}", spans.join(" "));
    }
    for w in &resp.warnings {
        eprintln!("warning: {w}");
    }
}

fn query(cfg: ServiceConfig, a: QueryArgs) -> CliResult {
    let image_base64 = match &a.image {
        Some(p) => Some(B64.encode(std::fs::read(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?)),
        None => None,
    };
    let time_range = match (a.from, a.to) {
        (Some(s), Some(e)) => Some(TimeInterval::new(s, e).map_err(CliError::input)?),
        _ => None,
    };
    let app = App::open(cfg)?;
    let resp = app.query(&QueryRequest {
        text: a.text,
        image_base64,
        video_id: a.video,
        camera_id: a.camera,
        time_range,
        k: a.k,
        mode: None,
        answer: a.answer,
        options: a.options,
        sample_id: None,
    })?;
    if a.json {
        print_json(&resp)
    } else {
        print_hits(&resp);
        Ok(())
    }
}

fn eval(cfg: ServiceConfig, a: EvalArgs) -> CliResult {
    let format: ReportFormat = a.format.parse().map_err(CliError::input)?;
    let subtask_filter = if a.subtasks.is_empty() {
        None
    } else {
        Some(
            a.subtasks
                .iter()
                .map(|s| serde_json::from_value::<Subtask>(serde_json::Value::String(s.to_uppercase())))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::input(format!("--subtask: {e}")))?,
        )
    };
    let mut mode = cfg.grounding.clone();
    if let Some(k) = a.top_k {
        mode.top_k = k;
    }
    let req = EvalRequest {
        benchmark: a.benchmark,
        predictions: a.predictions,
        config: EvalConfig {
            subtask_filter,
            ..Default::default()
        },
        mode: Some(mode),
    };
    // scoring a predictions file needs no model backends
    let report = if req.predictions.is_some() {
        let app = App::with_backends(cfg, Arc::new(clients::HttpEncoder::new("http://127.0.0.1:9", 1)), Arc::new(clients::NoVlm))?;
        app.evaluate(&req)?
    } else {
        App::open(cfg)?.evaluate(&req)?
    };
    std::io::stdout().write_all(&emit_report(&report, format)).map_err(CliError::backend)
}

fn qa_engine(cfg: ServiceConfig, a: QaArgs) -> CliResult {
    let stages: Vec<Stage> = if a.stage == "all" {
        Stage::ALL.to_vec()
    } else {
        vec![a.stage.parse().map_err(CliError::input)?]
    };
    let tracks = load_captions(&a.captions)?;
    let work_dir = a.work_dir.clone().unwrap_or_else(|| cfg.qa_work_dir());
    let (frames, llm, lmm): (Arc<dyn FrameSource>, Arc<dyn ModelClient>, Arc<dyn ModelClient>) = match &a.stub_world {
        Some(w) => {
            let text = std::fs::read_to_string(w).map_err(|e| CliError::input(format!("{}: {e}", w.display())))?;
            let world = SyntheticWorld::from_json(&text).map_err(|e| CliError::input(format!("{}: {e}", w.display())))?;
            let model = Arc::new(ScriptedModel::new(world.palette().clone()));
            (Arc::new(world), model.clone(), model)
        }
        None => {
            let frames = Arc::new(VideoRegistry::open(&cfg.data_dir.join("videos.json")).map_err(CliError::input)?);
            match &a.replay_dir {
                Some(d) => (
                    frames,
                    Arc::new(ReplayClient::from_file(cfg.qa.model_id.clone(), &d.join("llm_recordings.jsonl"))?),
                    Arc::new(ReplayClient::from_file(cfg.qa.model_id.clone(), &d.join("lmm_recordings.jsonl"))?),
                ),
                None => {
                    let (l, m) = qa_clients(&cfg).map_err(CliError::input)?;
                    (frames, l, m)
                }
            }
        }
    };
    let (llm, lmm, recorders) = match &a.record_dir {
        Some(_) => {
            let l = Arc::new(RecordingClient::new(llm));
            let m = Arc::new(RecordingClient::new(lmm));
            (l.clone() as Arc<dyn ModelClient>, m.clone() as Arc<dyn ModelClient>, Some((l, m)))
        }
        None => (llm, lmm, None),
    };
    let engine = QaEngine {
        llm,
        lmm,
        frames,
        config: Default::default(),
        work_dir,
    };
    let mut reports = Vec::new();
    for s in stages {
        reports.push(engine.run_stage(s, &tracks)?);
    }
    if let (Some(dir), Some((l, m))) = (&a.record_dir, recorders) {
        std::fs::create_dir_all(dir).map_err(CliError::input)?;
        l.save(&dir.join("llm_recordings.jsonl"))?;
        m.save(&dir.join("lmm_recordings.jsonl"))?;
    }
    print_json(&reports)
}

fn index(cfg: ServiceConfig, action: IndexAction) -> CliResult {
    let path = cfg.index_path();
    let load = || VecIndex::load(&path).map_err(|e| CliError::input(format!("{}: {e}", path.display())));
    match action {
        IndexAction::Stats | IndexAction::Verify => {
            let ix = load()?;
            let mut per_video = std::collections::BTreeMap::<String, usize>::new();
            for c in ix.clips() {
                *per_video.entry(c.video_id.clone()).or_default() += 1;
            }
            print_json(&serde_json::json!({
                "path": path,
                "dimension": ix.dimension(),
                "records": ix.len(),
                "videos": per_video,
            }))
        }
        IndexAction::Remove { video_id } => {
            let mut ix = load()?;
            let ids: Vec<String> = ix.clips().filter(|c| c.video_id == video_id).map(|c| c.clip_id.clone()).collect();
            for id in &ids {
                ix.remove(id);
            }
            ix.compact();
            ix.save(&path).map_err(CliError::backend)?;
            print_json(&serde_json::json!({"removed": ids.len()}))
        }
    }
}

fn review(cfg: ServiceConfig, action: ReviewAction) -> CliResult {
    let store = crate::review::ReviewStore::new(&cfg.qa_work_dir());
    let map = |e: crate::review::ReviewError| CliError::input(e);
    match action {
        ReviewAction::List => print_json(&store.list().map_err(map)?),
        ReviewAction::Accept { item_id, reviewer } => print_json(&store.accept(&item_id, reviewer).map_err(map)?),
        ReviewAction::Reject {
            item_id,
            reason,
            reviewer,
        } => print_json(&store.reject(&item_id, reviewer, reason).map_err(map)?),
        ReviewAction::Edit {
            item_id,
            sample,
            reviewer,
        } => print_json(&store.edit(&item_id, reviewer, read_json(&sample)?).map_err(map)?),
    }
}

pub fn run(cli: Cli) -> CliResult {
    init_logging(&cli.log);
    let cfg_path = cli.config.as_deref();
    match cli.command {
        Command::Serve { listen } => {
            let mut cfg = load_config(cfg_path)?;
            if let Some(l) = listen {
                cfg.listen = l;
                cfg.validate()?;
            }
            let app = Arc::new(App::open(cfg)?);
            let listen = app.cfg.listen.clone();
            runtime()?.block_on(async move {
                let state = api::ApiState::new(app);
                state.resume_unfinished();
                serve_router(&listen, api::router(state)).await
            })
        }
        Command::Ingest { manifest, detections } => {
            let cfg = load_config(cfg_path)?;
            let manifest: VideoManifest = read_json(&manifest)?;
            let app = App::open(cfg)?;
            let job = app.ingest(&IngestRequest {
                manifest,
                detections: None,
                detections_path: Some(detections),
            })?;
            print_json(&job.result)
        }
        Command::Index { action } => index(load_config(cfg_path)?, action),
        Command::Query(a) => query(load_config(cfg_path)?, a),
        Command::Eval(a) => eval(load_config(cfg_path)?, a),
        Command::QaEngine(a) => qa_engine(load_config(cfg_path)?, a),
        Command::Review { action } => review(load_config(cfg_path)?, action),
        Command::MockEncoder {
            listen,
            palette,
            seed,
            noise,
            dimension,
        } => {
            let palette = match palette {
                Some(p) => load_palette(&p).map_err(CliError::input)?,
                None => Palette::default(),
            };
            let enc = MockEncoder::new(MockEncoderConfig {
                seed,
                dimension,
                noise,
                palette,
                ..Default::default()
            });
            runtime()?.block_on(serve_router(&listen, mock::encoder_router(Arc::new(enc))))
        }
        Command::MockVlm {
            listen,
            benchmark,
            fidelity,
            seed,
        } => {
            if !(0.0..=1.0).contains(&fidelity) {
                return Err(CliError::input("--fidelity must lie in [0, 1]"));
            }
            let vlm = clients::mock_vlm(benchmark.as_deref(), fidelity, seed).map_err(CliError::input)?;
            runtime()?.block_on(serve_router(&listen, mock::vlm_router(Arc::new(vlm))))
        }
        Command::Synth {
            out,
            videos,
            actors,
            duration,
            seed,
        } => {
            if actors == 0 || actors > 6 || videos == 0 || duration < 20.0 {
                return Err(CliError::input("need 1..=6 actors, at least one video and at least 20 s"));
            }
            let c = write_corpus(
                &out,
                &ScenarioConfig {
                    videos,
                    actors_per_video: actors,
                    duration_seconds: duration,
                    seed,
                    ..Default::default()
                },
            )
            .map_err(CliError::backend)?;
            print_json(&serde_json::json!({
                "dir": c.dir,
                "config": c.config,
                "benchmark": c.benchmark,
                "captions": c.captions,
                "world": c.world,
                "videos": c.videos.iter().map(|(m, d)| serde_json::json!({"manifest": m, "detections": d})).collect::<Vec<_>>(),
            }))
        }
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
