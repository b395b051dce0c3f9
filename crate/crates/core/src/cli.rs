//! Command-line front end. [`run`] parses arguments, executes one command and
//! returns the process exit code; results go to `out`, diagnostics to `err`.

use std::ffi::OsString;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::clients::{
    net, Answerer, ClientError, Detector, Fixture, FixtureError, HttpClient, ScriptedClient, Summarizer, TextEncoder,
};
use crate::config::{require_path, AppConfig, ConfigError};
use crate::eval::{emit_report, score, EvalError, LabeledItem, ReportFormat};
use crate::frames::{DirFrameProvider, FrameError, FrameProvider};
use crate::inference::{InferenceError, Pipeline, Prediction, QuerySpec};
use crate::semantic::{load_semantic, store_semantic, SemanticBuilder, SemanticDb, SemanticError, SemdbError};
use crate::visual::{assemble_visual, detect_video, load_visual, persist_visual, VisualBuildError, VisualFormatError};

#[derive(Debug, Parser)]
#[command(name = "evidence-qa", version, about = "Evidence databases and evidence-guided question answering over long videos")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct CommonArgs {
    /// TOML configuration file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replay fixtures instead of calling models; no network access.
    #[arg(long, global = true)]
    mock: bool,
    /// Fixture file used by every client in mock mode.
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,
    /// Semantic evidence db (semdb JSONL).
    #[arg(long, global = true)]
    semdb: Option<PathBuf>,
    /// Visual evidence db (VEVD binary).
    #[arg(long, global = true)]
    visdb: Option<PathBuf>,
    /// Frames are read from <root>/<video_id>/<timestamp_ms>.jpg.
    #[arg(long, global = true)]
    frames_root: Option<PathBuf>,
    /// Similarity a timestamp must exceed to be retrieved [default: 0.2].
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Minimum detector score kept in the visual db [default: 0.3].
    #[arg(long, global = true)]
    detector_threshold: Option<f32>,
    /// Frames per question, overriding the routing table.
    #[arg(long, global = true)]
    frame_budget: Option<usize>,
    /// Coarse chunk length in seconds [default: 600].
    #[arg(long, global = true)]
    coarse_chunk_s: Option<f64>,
    /// Coarse sampling rate [default: 0.1].
    #[arg(long, global = true)]
    coarse_fps: Option<f64>,
    /// Fine chunk length in seconds [default: 60].
    #[arg(long, global = true)]
    fine_chunk_s: Option<f64>,
    /// Fine sampling rate [default: 1].
    #[arg(long, global = true)]
    fine_fps: Option<f64>,
    /// Detector sampling rate, also the frame grid [default: 1].
    #[arg(long, global = true)]
    visual_fps: Option<f64>,
    /// Embedding dimension for a new visual db.
    #[arg(long, global = true)]
    embedding_dim: Option<usize>,
    /// Base URL; each client appends its role path.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Model name sent by every client.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Parallel requests or questions.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output file (build commands, ask) or directory (eval).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the semantic evidence db for the listed videos.
    BuildSemantic(VideoArgs),
    /// Run the detector over every frame and build the visual evidence db.
    BuildVisual(VideoArgs),
    /// Answer one question.
    Ask(AskArgs),
    /// Answer a question batch and score it, or score existing predictions.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct VideoArgs {
    /// VIDEO_ID or VIDEO_ID=DURATION_S; without a duration it is read from
    /// the frame directory.
    #[arg(long = "video", required = true)]
    videos: Vec<String>,
}

#[derive(Debug, Args)]
struct AskArgs {
    /// JSON file with one question.
    #[arg(long)]
    query: PathBuf,
    /// Print the evidence bundle instead of answering.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Questions, one JSON object per line.
    #[arg(long)]
    questions: Option<PathBuf>,
    /// Gold labels, one JSON object per line.
    #[arg(long)]
    labels: PathBuf,
    /// Score this predictions file instead of answering questions.
    #[arg(long, conflicts_with = "questions")]
    predictions: Option<PathBuf>,
    #[arg(long, default_value = "text")]
    format: ReportFormat,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Jsonl { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("video {video_id}: {source}")]
    Semantic { video_id: String, source: SemanticError },
    #[error("{path}: {source}")]
    Semdb { path: PathBuf, source: SemdbError },
    #[error(transparent)]
    VisualBuild(#[from] VisualBuildError),
    #[error("{path}: {source}")]
    VisualFormat { path: PathBuf, source: VisualFormatError },
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses a JSON-lines file, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CliError::Jsonl {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut w: impl Write, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn build_config(c: &CommonArgs) -> Result<AppConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    cfg.mock |= c.mock;
    let paths = &mut cfg.paths;
    for (slot, flag) in [
        (&mut paths.fixtures, &c.fixtures),
        (&mut paths.semdb, &c.semdb),
        (&mut paths.visdb, &c.visdb),
        (&mut paths.frames_root, &c.frames_root),
    ] {
        if flag.is_some() {
            *slot = flag.clone();
        }
    }
    if let Some(v) = c.tau {
        cfg.retrieval.tau = v;
    }
    if let Some(v) = c.detector_threshold {
        cfg.visual.detector_threshold = v;
    }
    if let Some(v) = c.embedding_dim {
        cfg.visual.embedding_dim = Some(v);
    }
    if let Some(v) = c.frame_budget {
        cfg.inference.frame_budget = Some(v);
    }
    let s = &mut cfg.sampling;
    for (slot, flag) in [
        (&mut s.coarse_chunk_s, c.coarse_chunk_s),
        (&mut s.coarse_fps, c.coarse_fps),
        (&mut s.fine_chunk_s, c.fine_chunk_s),
        (&mut s.fine_fps, c.fine_fps),
        (&mut s.visual_fps, c.visual_fps),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    if let Some(w) = c.workers {
        cfg.visual.workers = w;
        cfg.inference.workers = w;
    }
    if let Some(base) = &c.endpoint {
        let base = base.trim_end_matches('/');
        let clients = &mut cfg.clients;
        for (client, role) in [
            (&mut clients.summarizer, ROLE_SUMMARIZE),
            (&mut clients.detector, ROLE_DETECT),
            (&mut clients.encoder, ROLE_EMBED),
            (&mut clients.answerer, ROLE_CHAT),
        ] {
            client.endpoint = Some(format!("{base}{role}"));
        }
    }
    if let Some(m) = &c.model {
        for client in cfg.clients.iter_mut() {
            client.model = m.clone();
        }
    }
    if cfg.mock && c.endpoint.is_some() {
        return Err(CliError::Usage("--mock and --endpoint are mutually exclusive".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

const ROLE_SUMMARIZE: &str = "/summarize";
const ROLE_DETECT: &str = "/detect";
const ROLE_EMBED: &str = "/embed";
const ROLE_CHAT: &str = "/chat";

/// Restores the previous network policy when dropped.
struct NetGuard(bool);

impl NetGuard {
    fn forbid() -> Self {
        let prev = net::is_forbidden();
        net::set_forbidden(true);
        NetGuard(prev)
    }
}

impl Drop for NetGuard {
    fn drop(&mut self) {
        net::set_forbidden(self.0);
    }
}

struct Clients {
    cfg: AppConfig,
    scripted: Option<ScriptedClient>,
}

impl Clients {
    fn new(cfg: &AppConfig) -> Result<Self, CliError> {
        let scripted = if cfg.mock {
            let path = cfg
                .paths
                .fixtures
                .clone()
                .or_else(|| cfg.clients.iter().find_map(|c| c.mock_fixture.clone()));
            let fixture = match path {
                Some(p) => Fixture::load(&p)?,
                None => Fixture::new(),
            };
            Some(ScriptedClient::shared(Arc::new(fixture)))
        } else {
            None
        };
        Ok(Self {
            cfg: cfg.clone(),
            scripted,
        })
    }

    fn http(&self, role: &str) -> Result<HttpClient, CliError> {
        let c = &self.cfg.clients;
        let cfg = match role {
            ROLE_SUMMARIZE => &c.summarizer,
            ROLE_DETECT => &c.detector,
            ROLE_EMBED => &c.encoder,
            _ => &c.answerer,
        };
        Ok(HttpClient::from_config(cfg, role)?.with_max_in_flight(self.cfg.inference.workers.max(1)))
    }

    fn summarizer(&self) -> Result<Box<dyn Summarizer>, CliError> {
        Ok(match &self.scripted {
            Some(s) => Box::new(s.clone()),
            None => Box::new(self.http(ROLE_SUMMARIZE)?),
        })
    }

    fn detector(&self) -> Result<Box<dyn Detector>, CliError> {
        Ok(match &self.scripted {
            Some(s) => Box::new(s.clone()),
            None => Box::new(self.http(ROLE_DETECT)?),
        })
    }

    fn encoder(&self) -> Result<Box<dyn TextEncoder>, CliError> {
        Ok(match &self.scripted {
            Some(s) => Box::new(s.clone()),
            None => Box::new(self.http(ROLE_EMBED)?),
        })
    }

    fn answerer(&self) -> Result<Box<dyn Answerer>, CliError> {
        Ok(match &self.scripted {
            Some(s) => Box::new(s.clone()),
            None => Box::new(self.http(ROLE_CHAT)?),
        })
    }
}

fn frames_provider(cfg: &AppConfig) -> Result<DirFrameProvider, CliError> {
    let root = cfg
        .paths
        .frames_root
        .as_ref()
        .ok_or_else(|| CliError::Usage("--frames-root is required".into()))?;
    Ok(DirFrameProvider::new(root)?)
}

fn parse_video(arg: &str, frames: &DirFrameProvider) -> Result<(String, f64), CliError> {
    match arg.split_once('=') {
        Some((id, dur)) => {
            let d: f64 = dur
                .parse()
                .map_err(|_| CliError::Usage(format!("bad duration in --video {arg}")))?;
            Ok((id.to_string(), d))
        }
        None => {
            frames.video_dir(arg)?;
            let d = frames
                .duration_hint(arg)
                .ok_or_else(|| CliError::Usage(format!("no frames found for video {arg}; give --video {arg}=SECONDS")))?;
            Ok((arg.to_string(), d.as_secs_f64()))
        }
    }
}

fn output_path(out: &Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    out.clone()
        .or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Usage(format!("no output path: pass --out or --{what}")))
}

fn cmd_build_semantic(cfg: &AppConfig, args: &VideoArgs, out_flag: &Option<PathBuf>, out: &mut dyn Write) -> Result<(), CliError> {
    let frames = frames_provider(cfg)?;
    let videos = args
        .videos
        .iter()
        .map(|v| parse_video(v, &frames))
        .collect::<Result<Vec<_>, _>>()?;
    let path = output_path(out_flag, &cfg.paths.semdb, "semdb")?;
    let summarizer = Clients::new(cfg)?.summarizer()?;
    let mut builder = SemanticBuilder::new(&frames, summarizer.as_ref(), cfg.sampling.clone());
    builder.options.max_in_flight = cfg.visual.workers.max(1);
    let mut db = SemanticDb::new();
    for (id, dur) in &videos {
        builder.build_video(&mut db, id, *dur).map_err(|source| CliError::Semantic {
            video_id: id.clone(),
            source,
        })?;
    }
    store_semantic(&path, &db).map_err(|source| CliError::Semdb { path: path.clone(), source })?;
    writeln!(out, "wrote semantic evidence for {} video(s) to {}", db.len(), path.display()).map_err(io_err(&path))?;
    Ok(())
}

fn cmd_build_visual(cfg: &AppConfig, args: &VideoArgs, out_flag: &Option<PathBuf>, out: &mut dyn Write) -> Result<(), CliError> {
    let frames = frames_provider(cfg)?;
    let videos = args
        .videos
        .iter()
        .map(|v| parse_video(v, &frames))
        .collect::<Result<Vec<_>, _>>()?;
    let path = output_path(out_flag, &cfg.paths.visdb, "visdb")?;
    let detector = Clients::new(cfg)?.detector()?;
    let mut per_video = Vec::new();
    let mut frame_count = 0;
    for (id, dur) in &videos {
        let d = detect_video(&frames, detector.as_ref(), id, *dur, cfg.sampling.visual_fps, cfg.visual.workers)?;
        frame_count += d.len();
        per_video.push((id.clone(), d));
    }
    let db = assemble_visual(per_video, cfg.visual.embedding_dim, cfg.visual.detector_threshold)?;
    persist_visual(&path, &db).map_err(|source| CliError::VisualFormat { path: path.clone(), source })?;
    writeln!(
        out,
        "wrote {} proposal(s) from {frame_count} frame(s) of {} video(s) to {}",
        db.proposal_count(),
        db.videos().len(),
        path.display()
    )
    .map_err(io_err(&path))?;
    Ok(())
}

struct LoadedDbs {
    semantic: Option<SemanticDb>,
    visual: Option<crate::visual::VisualDb>,
}

fn load_dbs(cfg: &AppConfig) -> Result<LoadedDbs, CliError> {
    let semantic = match &cfg.paths.semdb {
        Some(p) => {
            require_path("semantic db", Some(p))?;
            Some(load_semantic(p).map_err(|source| CliError::Semdb { path: p.clone(), source })?)
        }
        None => None,
    };
    let visual = match &cfg.paths.visdb {
        Some(p) => {
            require_path("visual db", Some(p))?;
            Some(load_visual(p).map_err(|source| CliError::VisualFormat { path: p.clone(), source })?)
        }
        None => None,
    };
    Ok(LoadedDbs { semantic, visual })
}

fn ask_frames(cfg: &AppConfig) -> Result<DirFrameProvider, CliError> {
    match &cfg.paths.frames_root {
        Some(_) => frames_provider(cfg),
        None => Ok(DirFrameProvider::unchecked("")),
    }
}

#[derive(Serialize)]
struct DryRun<'a> {
    question_id: &'a str,
    plan: &'a crate::inference::InputPlan,
    videos: &'a [String],
    terms: Option<&'a [String]>,
    term_fallback: bool,
    fallback_videos: &'a [String],
    bundle: &'a crate::inference::EvidenceBundle,
    prompt: String,
}

fn cmd_ask(cfg: &AppConfig, args: &AskArgs, out_flag: &Option<PathBuf>, out: &mut dyn Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.query).map_err(io_err(&args.query))?;
    let query: QuerySpec = serde_json::from_str(&text).map_err(|e| CliError::Jsonl {
        path: args.query.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let dbs = load_dbs(cfg)?;
    let frames = ask_frames(cfg)?;
    let clients = Clients::new(cfg)?;
    let answerer = clients.answerer()?;
    let encoder = clients.encoder()?;
    let pipeline = Pipeline {
        semantic: dbs.semantic.as_ref(),
        visual: dbs.visual.as_ref(),
        frames: &frames,
        mllm: answerer.as_ref(),
        encoder: encoder.as_ref(),
        settings: cfg.pipeline_settings(),
    };
    let rendered = if args.dry_run {
        let p = pipeline.prepare(&query)?;
        let view = DryRun {
            question_id: &query.question_id,
            plan: &p.plan,
            videos: &p.videos,
            terms: p.terms.as_ref().map(|t| t.terms.as_slice()),
            term_fallback: p.terms.as_ref().is_some_and(|t| t.fallback),
            fallback_videos: &p.fallback_videos,
            bundle: &p.bundle,
            prompt: p.bundle.prompt(),
        };
        serde_json::to_string_pretty(&view).expect("dry run serializes") + "\n"
    } else {
        let prediction = pipeline.predict(&query);
        serde_json::to_string(&prediction).expect("prediction serializes") + "\n"
    };
    if let Some(p) = out_flag {
        std::fs::write(p, &rendered).map_err(io_err(p))?;
    }
    out.write_all(rendered.as_bytes()).map_err(io_err(Path::new("<stdout>")))?;
    Ok(())
}

fn cmd_eval(cfg: &AppConfig, args: &EvalArgs, out_flag: &Option<PathBuf>, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let labels: Vec<LabeledItem> = read_jsonl(&args.labels)?;
    let predictions: Vec<Prediction> = match (&args.predictions, &args.questions) {
        (Some(p), _) => read_jsonl(p)?,
        (None, Some(q)) => {
            let questions: Vec<QuerySpec> = read_jsonl(q)?;
            let dbs = load_dbs(cfg)?;
            let frames = ask_frames(cfg)?;
            let clients = Clients::new(cfg)?;
            let answerer = clients.answerer()?;
            let encoder = clients.encoder()?;
            let pipeline = Pipeline {
                semantic: dbs.semantic.as_ref(),
                visual: dbs.visual.as_ref(),
                frames: &frames,
                mllm: answerer.as_ref(),
                encoder: encoder.as_ref(),
                settings: cfg.pipeline_settings(),
            };
            pipeline.predict_all(&questions, cfg.inference.workers)
        }
        (None, None) => return Err(CliError::Usage("eval needs --questions or --predictions".into())),
    };
    let fallbacks = predictions.iter().filter(|p| p.fallback_used).count();
    if fallbacks > 0 {
        let _ = writeln!(err, "{fallbacks} of {} prediction(s) used the answer fallback", predictions.len());
    }
    let report = score(&predictions, &labels)?;
    if let Some(dir) = out_flag {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let pred_path = dir.join("predictions.jsonl");
        let file = std::fs::File::create(&pred_path).map_err(io_err(&pred_path))?;
        write_jsonl(std::io::BufWriter::new(file), &predictions).map_err(io_err(&pred_path))?;
        let csv_path = dir.join("report.csv");
        std::fs::write(&csv_path, emit_report(&report, ReportFormat::Csv)).map_err(io_err(&csv_path))?;
    }
    out.write_all(emit_report(&report, args.format).as_bytes())
        .map_err(io_err(Path::new("<stdout>")))?;
    Ok(())
}

/// Runs the command line `args` (including the program name).
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = build_config(&cli.common).and_then(|cfg| {
        let _guard = cfg.mock.then(NetGuard::forbid);
        let o = &cli.common.out;
        match &cli.command {
            Command::BuildSemantic(a) => cmd_build_semantic(&cfg, a, o, out),
            Command::BuildVisual(a) => cmd_build_visual(&cfg, a, o, out),
            Command::Ask(a) => cmd_ask(&cfg, a, o, out),
            Command::Eval(a) => cmd_eval(&cfg, a, o, out, err),
        }
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}
