//! Command-line front end: `run`, `simulate` and `evaluate`.

use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use tracing::info;

use crate::io::eval::{evaluate, EvalOptions, EvalReport};
use crate::io::records::{read_jsonl, to_jsonl_bytes, TrackLogRecord, TruthRecord};
use crate::io::scene::{generate_scene, SceneScript};
use crate::io::session::{Session, SessionConfig, SessionError, SessionSummary};
use crate::io::status::{write_atomic, StatusServer};
use crate::io::stream::StreamReader;
use crate::recognition::Gallery;

pub const TRUTH_FILE: &str = "truth.jsonl";
pub const DETECTIONS_FILE: &str = "detections.jsonl";

#[derive(Debug, Parser)]
#[command(name = "classwatch", version, about = "Classroom tracking and event engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track a detection stream and write track, event and attendance logs.
    Run(RunArgs),
    /// Render a scene script into a detection stream and ground truth.
    Simulate {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a track log against ground truth.
    Evaluate {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou_threshold: f64,
        /// Leading ground-truth frames excluded from scoring.
        #[arg(long, default_value_t = 0)]
        warmup: u64,
    },
}

#[derive(Debug, Args, Default, Clone)]
pub struct RunArgs {
    /// Detection stream (JSON Lines); `-` reads stdin.
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub gallery: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// TOML file with session settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    #[arg(long)]
    pub sim_threshold: Option<f64>,
    #[arg(long)]
    pub max_age: Option<u32>,
    #[arg(long)]
    pub min_hits: Option<u32>,
    #[arg(long)]
    pub sleep_window: Option<f64>,
    #[arg(long)]
    pub sleep_fraction: Option<f64>,
    #[arg(long)]
    pub phone_debounce: Option<f64>,
    /// Rewritten atomically after every frame.
    #[arg(long)]
    pub status_file: Option<PathBuf>,
    /// Serve the status document on this local port.
    #[arg(long)]
    pub serve: Option<u16>,
    /// Drop invalid records with a warning instead of failing.
    #[arg(long)]
    pub skip_bad: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Parse(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Config(m) => CliError::Config(m),
            SessionError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Parse(other.to_string()),
        }
    }
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Io(format!("cannot open {what} {}: {e}", path.display())))
}

/// Config file, then flags on top.
pub fn resolve_config(args: &RunArgs) -> Result<SessionConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?
        }
        None => SessionConfig::default(),
    };
    if let Some(v) = args.iou_threshold {
        cfg.tracker.iou_threshold = v;
    }
    if let Some(v) = args.sim_threshold {
        cfg.sim_threshold = v;
    }
    if let Some(v) = args.max_age {
        cfg.tracker.max_age = v;
    }
    if let Some(v) = args.min_hits {
        cfg.tracker.min_hits = v;
    }
    if let Some(v) = args.sleep_window {
        cfg.sleep.window_seconds = v;
    }
    if let Some(v) = args.sleep_fraction {
        cfg.sleep.asleep_fraction = v;
    }
    if let Some(v) = args.phone_debounce {
        cfg.phone.debounce_seconds = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate().map_err(CliError::from)?;
    Ok(cfg)
}

pub fn run_session(args: &RunArgs) -> Result<SessionSummary, CliError> {
    let cfg = resolve_config(args)?;
    let gallery = Gallery::from_json_reader(open(&args.gallery, "gallery")?)
        .map_err(|e| CliError::Parse(format!("gallery {}: {e}", args.gallery.display())))?;
    let input: Box<dyn io::BufRead> = if args.input == "-" {
        Box::new(io::stdin().lock())
    } else {
        Box::new(open(Path::new(&args.input), "input")?)
    };

    let mut session = Session::new(cfg, &gallery)?;
    let server = match args.serve {
        Some(port) => {
            let addr = SocketAddr::from(([127, 0, 0, 1], port));
            let s = StatusServer::start(addr, session.status().to_json())
                .map_err(|e| CliError::Io(format!("cannot serve status on {addr}: {e}")))?;
            info!("status served at http://{}/status", s.local_addr());
            Some(s)
        }
        None => None,
    };

    let mut reader = StreamReader::new(input, args.skip_bad);
    for batch in reader.by_ref() {
        let batch = batch.map_err(|e| CliError::Parse(format!("{}: {e}", args.input)))?;
        session.process(&batch)?;
        if args.status_file.is_some() || server.is_some() {
            let doc = session.status().to_json();
            if let Some(path) = &args.status_file {
                write_atomic(path, doc.as_bytes())
                    .map_err(|e| CliError::Io(format!("cannot write status {}: {e}", path.display())))?;
            }
            if let Some(s) = &server {
                s.publish(doc);
            }
        }
    }
    let outputs = session.finish(reader.skipped())?;
    outputs
        .write_to(&args.out_dir)
        .map_err(|e| CliError::Io(format!("cannot write outputs to {}: {e}", args.out_dir.display())))?;
    Ok(outputs.summary)
}

pub fn simulate(script: &Path, out: &Path) -> Result<(), CliError> {
    let script: SceneScript = serde_json::from_reader(open(script, "script")?)
        .map_err(|e| CliError::Parse(format!("script {}: {e}", script.display())))?;
    let scene = generate_scene(&script).map_err(|e| CliError::Config(e.to_string()))?;
    let write = |name: &str, bytes: Vec<u8>| {
        fs::write(out.join(name), bytes).map_err(|e| CliError::Io(format!("cannot write {name}: {e}")))
    };
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
    write(TRUTH_FILE, to_jsonl_bytes(&scene.truth))?;
    write(DETECTIONS_FILE, to_jsonl_bytes(&scene.detections))?;
    Ok(())
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<Vec<T>, CliError> {
    read_jsonl(open(path, what)?)
        .map_err(|(line, msg)| CliError::Parse(format!("{}: line {line}: {msg}", path.display())))
}

pub fn evaluate_files(tracks: &Path, truth: &Path, opts: &EvalOptions) -> Result<EvalReport, CliError> {
    let t: Vec<TrackLogRecord> = read_records(tracks, "track log")?;
    let g: Vec<TruthRecord> = read_records(truth, "ground truth")?;
    Ok(evaluate(&t, &g, opts))
}

fn print_json(value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out).map_err(|e| CliError::Io(e.to_string()))
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => print_json(&run_session(&args)?),
        Command::Simulate { script, out } => simulate(&script, &out),
        Command::Evaluate {
            tracks,
            truth,
            iou_threshold,
            warmup,
        } => {
            let opts = EvalOptions {
                iou_threshold,
                warmup_frames: warmup,
            };
            print_json(&evaluate_files(&tracks, &truth, &opts)?)
        }
    }
}
