//! `siteinspect` — index regulation pages, pair site photos with voice notes,
//! generate inspection reports and score them.
//!
//! Exit codes: 0 success, 1 partial item failures, 2 configuration or usage
//! error, 3 fatal I/O or data error.

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use siteinspect::eval::{
    citation_labels, compare_runs, compute_metrics, Averaging, ComplianceMetrics, EvalError,
    GroundTruth,
};
use siteinspect::fsutil::write_atomic;
use siteinspect::index::{build_index, save_index, IndexError};
use siteinspect::pipeline::{
    list_media, match_directories, run_batch, to_json_bytes, BatchPaths, PipelineError,
    QuerySource, RetrievalMode, RunStatus, SafetyReport, IMAGE_EXTENSIONS,
};
use thiserror::Error;
use tracing::{info, warn};

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Fatal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Fatal(_) => 3,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(m) => CliError::Usage(m),
            other => CliError::Fatal(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "siteinspect",
    version,
    about = "Multi-modal construction site inspection"
)]
struct Cli {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Debug-level logs on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed a directory of page images (<page_id>.png|jpg) into an index file.
    Index(IndexArgs),
    /// Pair site images with audio notes by time and location.
    Match(MatchArgs),
    /// Generate one report per site image.
    Inspect(InspectArgs),
    /// Score reports against ground-truth citations.
    Eval(EvalArgs),
    /// Print metric deltas between two metrics files (B relative to A).
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct IndexArgs {
    /// Corpus directory [paths.corpus].
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Index file to write [paths.index].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MatchArgs {
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    audio: Option<PathBuf>,
    /// matches.json destination (default: <paths.output>/matches.json).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    time_window_min: Option<u32>,
    #[arg(long)]
    location_threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    mode: Option<RetrievalMode>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    query_source: Option<QuerySource>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    audio: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Report directory [paths.output].
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    time_window_min: Option<u32>,
    #[arg(long)]
    location_threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory holding <id>.report.json (or .report.txt) files.
    #[arg(long)]
    reports: PathBuf,
    /// Ground truth: {"universe": [...], "reports": {"id": [...]}}.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value = "sample")]
    averaging: Averaging,
    /// metrics.json destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// Also write the delta table as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = match &cli.command {
        Command::Index(a) => cmd_index(cli.config.as_deref(), a),
        Command::Match(a) => cmd_match(cli.config.as_deref(), a),
        Command::Inspect(a) => cmd_inspect(cli.config.as_deref(), a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn init_logging(verbose: bool) {
    let default = if verbose { "debug" } else { "info" };
    let filter = tracing_subscriber::EnvFilter::try_from_env("SITEINSPECT_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
}

fn required(
    flag: Option<&PathBuf>,
    from_cfg: Option<&PathBuf>,
    name: &str,
) -> Result<PathBuf, CliError> {
    flag.or(from_cfg).cloned().ok_or_else(|| {
        CliError::Usage(format!(
            "--{name} is required (or set paths.{name} in the config)"
        ))
    })
}

fn require_existing_dir(p: &Path, what: &str) -> Result<(), CliError> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} directory {} does not exist",
            p.display()
        )))
    }
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Fatal(format!("creating {}: {e}", parent.display())))?;
    }
    write_atomic(path, bytes)
        .map_err(|e| CliError::Fatal(format!("writing {}: {e}", path.display())))
}

fn cmd_index(config: Option<&Path>, a: &IndexArgs) -> Result<u8, CliError> {
    let cfg = RunConfig::load_optional(config)?;
    let corpus = required(a.corpus.as_ref(), cfg.paths.corpus.as_ref(), "corpus")?;
    let out = a.out.clone().or(cfg.paths.index.clone()).ok_or_else(|| {
        CliError::Usage("--out is required (or set paths.index in the config)".into())
    })?;
    require_existing_dir(&corpus, "corpus")?;
    let providers = cfg.providers()?;

    let files =
        list_media(&corpus, IMAGE_EXTENSIONS).map_err(|e| CliError::Fatal(e.to_string()))?;
    if files.is_empty() {
        return Err(CliError::Fatal(format!(
            "no pages found in {}",
            corpus.display()
        )));
    }
    let mut pages = Vec::with_capacity(files.len());
    for (id, path) in &files {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Fatal(format!("reading {}: {e}", path.display())))?;
        pages.push((id.clone(), bytes));
    }
    let index = build_index(&pages, &*providers.retrieval).map_err(|e| match &e {
        IndexError::PageEmbedding { page_id, .. } => {
            let file = files
                .iter()
                .find(|(id, _)| id == page_id)
                .map(|(_, p)| p.display().to_string());
            CliError::Fatal(format!("{} ({e})", file.unwrap_or_default()))
        }
        _ => CliError::Fatal(e.to_string()),
    })?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Fatal(format!("creating {}: {e}", parent.display())))?;
    }
    save_index(&index, &out)
        .map_err(|e| CliError::Fatal(format!("writing {}: {e}", out.display())))?;
    let bytes = std::fs::metadata(&out).map(|m| m.len()).unwrap_or(0);
    println!(
        "indexed {} pages, {} patches, {} bytes -> {}",
        index.len(),
        index.total_patches(),
        bytes,
        out.display()
    );
    println!("fingerprint {}", index.fingerprint_hex());
    Ok(0)
}

fn cmd_match(config: Option<&Path>, a: &MatchArgs) -> Result<u8, CliError> {
    let cfg = RunConfig::load_optional(config)?;
    let images = required(a.images.as_ref(), cfg.paths.images.as_ref(), "images")?;
    let audio = required(a.audio.as_ref(), cfg.paths.audio.as_ref(), "audio")?;
    let out = match (&a.out, &cfg.paths.output) {
        (Some(o), _) => o.clone(),
        (None, Some(dir)) => dir.join("matches.json"),
        (None, None) => {
            return Err(CliError::Usage(
                "--out is required (or set paths.output)".into(),
            ))
        }
    };
    let mut pcfg = cfg.pipeline();
    if let Some(w) = a.time_window_min {
        pcfg.match_cfg.time_window_min = w;
    }
    if let Some(t) = a.location_threshold {
        pcfg.match_cfg.location_threshold = t;
    }
    pcfg.match_cfg.validate().map_err(CliError::Usage)?;
    require_existing_dir(&images, "images")?;
    require_existing_dir(&audio, "audio")?;
    let providers = cfg.providers()?;

    let m = match_directories(
        &images,
        &audio,
        &pcfg.match_cfg,
        &providers,
        pcfg.parallelism,
    )?;
    for f in &m.failures {
        warn!(item = %f.id, stage = f.stage.as_deref().unwrap_or(""), error = f.error.as_deref().unwrap_or(""), "unreadable item");
    }
    write_out(&out, &to_json_bytes(&m.result))?;
    println!(
        "{} pairs, {} unmatched images, {} unmatched audio -> {}",
        m.result.pairs.len(),
        m.result.unmatched_images.len(),
        m.result.unmatched_audio.len(),
        out.display()
    );
    for u in &m.result.unmatched_images {
        println!("unmatched image {} ({})", u.id, serde_reason(&u.reason));
    }
    for u in &m.result.unmatched_audio {
        println!("unmatched audio {} ({})", u.id, serde_reason(&u.reason));
    }
    Ok(0)
}

fn serde_reason<T: serde::Serialize>(r: &T) -> String {
    serde_json::to_value(r)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn cmd_inspect(config: Option<&Path>, a: &InspectArgs) -> Result<u8, CliError> {
    let cfg = RunConfig::load_optional(config)?;
    let mut pcfg = cfg.pipeline();
    if let Some(m) = a.mode {
        pcfg.mode = m;
    }
    if let Some(k) = a.k {
        pcfg.k = k;
    }
    if let Some(q) = a.query_source {
        pcfg.query_source = q;
    }
    if let Some(p) = a.parallelism {
        pcfg.parallelism = p;
    }
    if let Some(w) = a.time_window_min {
        pcfg.match_cfg.time_window_min = w;
    }
    if let Some(t) = a.location_threshold {
        pcfg.match_cfg.location_threshold = t;
    }
    let pick = |flag: &Option<PathBuf>, c: &Option<PathBuf>| flag.clone().or(c.clone());
    let paths = BatchPaths {
        images: required(a.images.as_ref(), cfg.paths.images.as_ref(), "images")?,
        audio: pick(&a.audio, &cfg.paths.audio),
        index: pick(&a.index, &cfg.paths.index),
        corpus: pick(&a.corpus, &cfg.paths.corpus),
        output: required(a.output.as_ref(), cfg.paths.output.as_ref(), "output")?,
    };
    siteinspect::pipeline::validate_paths(&paths, &pcfg)?;
    let providers = cfg.providers()?;
    info!(mode = %pcfg.mode, k = pcfg.k, parallelism = pcfg.parallelism, "inspect starting");

    let manifest = run_batch(&paths, &pcfg, &providers)?;
    println!(
        "{}: {} reports from {} images ({} image failures, {} audio failures) -> {}",
        match manifest.status {
            RunStatus::Complete => "complete",
            RunStatus::Partial => "partial",
        },
        manifest.summary.reports,
        manifest.summary.images,
        manifest.summary.failed_images,
        manifest.summary.failed_audio,
        paths.output.display()
    );
    Ok(match manifest.status {
        RunStatus::Complete => 0,
        RunStatus::Partial => 1,
    })
}

/// Report texts keyed by report id; `.report.json` wins over `.report.txt`.
fn read_reports(dir: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("reports directory {}: {e}", dir.display())))?;
    let mut json = BTreeMap::new();
    let mut txt = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Fatal(e.to_string()))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(id) = name.strip_suffix(".report.json") {
            let bytes = std::fs::read(&path)
                .map_err(|e| CliError::Fatal(format!("reading {}: {e}", path.display())))?;
            let r: SafetyReport = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Fatal(format!("{}: {e}", path.display())))?;
            json.insert(id.to_string(), r.report_text);
        } else if let Some(id) = name.strip_suffix(".report.txt") {
            let t = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Fatal(format!("reading {}: {e}", path.display())))?;
            txt.insert(id.to_string(), t);
        }
    }
    for (id, t) in txt {
        json.entry(id).or_insert(t);
    }
    Ok(json)
}

fn metrics_table(m: &ComplianceMetrics) -> String {
    let mut out = format!("{:<14}{:>10}\n", "metric", "value");
    for (name, v) in [
        ("hamming_loss", m.hamming_loss),
        ("precision", m.precision),
        ("recall", m.recall),
        ("f1", m.f1),
    ] {
        out.push_str(&format!("{name:<14}{v:>10.4}\n"));
    }
    out.push_str(&format!(
        "averaging: {}  reports: {}  universe_size: {}\n",
        m.averaging, m.n_reports, m.universe_size
    ));
    out
}

fn cmd_eval(a: &EvalArgs) -> Result<u8, CliError> {
    if !a.gt.is_file() {
        return Err(CliError::Usage(format!(
            "ground truth {} does not exist",
            a.gt.display()
        )));
    }
    require_existing_dir(&a.reports, "reports")?;
    let gt_bytes = std::fs::read(&a.gt)
        .map_err(|e| CliError::Fatal(format!("reading {}: {e}", a.gt.display())))?;
    let gt: GroundTruth = serde_json::from_slice(&gt_bytes)
        .map_err(|e| CliError::Fatal(format!("{}: {e}", a.gt.display())))?;
    let reports = read_reports(&a.reports)?;
    let preds: BTreeMap<String, BTreeSet<String>> = reports
        .iter()
        .map(|(id, text)| (id.clone(), citation_labels(text)))
        .collect();
    let metrics = compute_metrics(&gt, &preds, a.averaging).map_err(|e| match e {
        EvalError::KeyMismatch { .. } => CliError::Usage(e.to_string()),
        other => CliError::Fatal(other.to_string()),
    })?;
    if let Some(out) = &a.out {
        write_out(out, &to_json_bytes(&metrics))?;
    }
    print!("{}", metrics_table(&metrics));
    Ok(0)
}

fn read_metrics(p: &Path) -> Result<ComplianceMetrics, CliError> {
    let bytes =
        std::fs::read(p).map_err(|e| CliError::Usage(format!("reading {}: {e}", p.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Fatal(format!("{}: {e}", p.display())))
}

fn cmd_compare(a: &CompareArgs) -> Result<u8, CliError> {
    let ma = read_metrics(&a.a)?;
    let mb = read_metrics(&a.b)?;
    let table = compare_runs(&ma, &mb).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(out) = &a.json {
        write_out(out, &to_json_bytes(&table))?;
    }
    print!("{}", table.render_text());
    Ok(0)
}
