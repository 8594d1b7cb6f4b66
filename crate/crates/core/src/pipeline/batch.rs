use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::{
    generate_inspection_report, retrieve_evidence, ConfigSnapshot, PipelineConfig, PipelineError,
    RetrievalMode, SafetyReport, SiteObservation,
};
use crate::fsutil::write_atomic;
use crate::index::{load_index, PatchIndex};
use crate::matcher::{match_pairs, Annotated, MatchConfig, MatchResult};
use crate::provider::media::decode_image;
use crate::provider::Providers;

pub const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];
pub const AUDIO_EXTENSIONS: &[&str] = &["wav", "mp3"];
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default)]
pub struct BatchPaths {
    pub images: PathBuf,
    /// Required for image-audio; optional for no-rag; ignored for image.
    pub audio: Option<PathBuf>,
    /// Required unless the mode is no-rag.
    pub index: Option<PathBuf>,
    /// Page images whose embedded text becomes evidence excerpts.
    pub corpus: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemOutcome {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub kind: String,
    pub audio_id: Option<String>,
    pub outcome: ItemOutcome,
    pub stage: Option<String>,
    pub error: Option<String>,
    /// Report JSON file name, relative to the output directory.
    pub report: Option<String>,
    pub citations: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub images: usize,
    pub reports: usize,
    pub failed_images: usize,
    pub failed_audio: usize,
}

/// Wall-clock data; the only part of a manifest that varies between reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_at: String,
    pub total_ms: u64,
    /// Per-image processing time.
    pub items_ms: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: RunStatus,
    pub mode: RetrievalMode,
    pub config_snapshot: ConfigSnapshot,
    pub matches: Option<MatchResult>,
    /// Images by id, then failed audio by id.
    pub items: Vec<ItemRecord>,
    pub summary: RunSummary,
    pub timing: Timing,
}

impl RunManifest {
    pub fn report_path(output: &Path, image_id: &str) -> PathBuf {
        output.join(format!("{image_id}.report.json"))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `(stem, path)` pairs for files with one of `exts`, sorted by stem.
pub fn list_media(dir: &Path, exts: &[&str]) -> Result<Vec<(String, PathBuf)>, PipelineError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if !path.is_file() {
            continue;
        }
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if stem.starts_with('.') || !ext.is_some_and(|e| exts.contains(&e.as_str())) {
            continue;
        }
        out.push((stem.to_string(), path));
    }
    out.sort();
    if let Some(w) = out.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(PipelineError::Config(format!(
            "{} and {} share the id {:?}",
            w[0].1.display(),
            w[1].1.display(),
            w[0].0
        )));
    }
    Ok(out)
}

/// Embedded text of each corpus page, keyed by page id. Pages without
/// readable text are skipped.
pub fn load_excerpts(corpus: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut out = BTreeMap::new();
    for (id, path) in list_media(corpus, IMAGE_EXTENSIONS)? {
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        match decode_image(&bytes) {
            Ok(img) => {
                if let Some(t) = img.text {
                    out.insert(id, t.split_whitespace().collect::<Vec<_>>().join(" "));
                }
            }
            Err(e) => warn!(page = %id, error = %e, "corpus page unreadable; passing id only"),
        }
    }
    Ok(out)
}

fn require_dir(label: &str, p: &Path) -> Result<(), PipelineError> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(PipelineError::Config(format!(
            "{label} directory {} does not exist",
            p.display()
        )))
    }
}

/// Checks paths against the mode without touching providers.
pub fn validate_paths(paths: &BatchPaths, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    cfg.validate()?;
    require_dir("images", &paths.images)?;
    match (cfg.mode, &paths.audio) {
        (RetrievalMode::ImageAudio, None) => {
            return Err(PipelineError::Config(
                "image-audio mode needs an audio directory".into(),
            ))
        }
        (RetrievalMode::Image, _) => {}
        (_, Some(a)) => require_dir("audio", a)?,
        (_, None) => {}
    }
    if cfg.mode.uses_index() {
        match &paths.index {
            None => {
                return Err(PipelineError::Config(format!(
                    "{} mode needs an index path",
                    cfg.mode
                )))
            }
            Some(p) if !p.is_file() => {
                return Err(PipelineError::Config(format!(
                    "index file {} does not exist",
                    p.display()
                )))
            }
            _ => {}
        }
    }
    if let Some(c) = &paths.corpus {
        require_dir("corpus", c)?;
    }
    if paths.output.exists() && !paths.output.is_dir() {
        return Err(PipelineError::Config(format!(
            "output path {} is not a directory",
            paths.output.display()
        )));
    }
    Ok(())
}

fn text_or_error(
    path: &Path,
    f: impl FnOnce(&[u8]) -> Result<String, crate::provider::ProviderError>,
    stage: &'static str,
    id: &str,
) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure {
        stage: "read",
        message: format!("{id}: reading {}: {e}", path.display()),
    })?;
    f(&bytes).map_err(|source| {
        PipelineError::Provider {
            item: id.to_string(),
            stage,
            source,
        }
        .into()
    })
}

/// Runs matching, observation, retrieval and generation over a directory of
/// site images, writing `<image_id>.report.{txt,json}` and `manifest.json`
/// into the output directory.
///
/// Item failures are recorded and never stop the batch; only configuration,
/// index and output-directory problems are returned as errors.
pub fn run_batch(
    paths: &BatchPaths,
    cfg: &PipelineConfig,
    providers: &Providers,
) -> Result<RunManifest, PipelineError> {
    validate_paths(paths, cfg)?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let t0 = Instant::now();

    let index: Option<PatchIndex> = match (&paths.index, cfg.mode.uses_index()) {
        (Some(p), true) => Some(load_index(p).map_err(|source| PipelineError::IndexLoad {
            path: p.clone(),
            source,
        })?),
        _ => None,
    };
    let excerpts = match &paths.corpus {
        Some(c) if index.is_some() => load_excerpts(c)?,
        _ => BTreeMap::new(),
    };
    let images = list_media(&paths.images, IMAGE_EXTENSIONS)?;
    let audio = match (cfg.mode, &paths.audio) {
        (RetrievalMode::Image, _) | (_, None) => Vec::new(),
        (_, Some(dir)) => list_media(dir, AUDIO_EXTENSIONS)?,
    };
    let use_audio = cfg.mode != RetrievalMode::Image && paths.audio.is_some();
    std::fs::create_dir_all(&paths.output).map_err(io_err(&paths.output))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;

    let (captions, transcripts) = pool.install(|| extract_texts(&images, &audio, providers));
    let matches = use_audio.then(|| {
        match_texts(
            &images,
            &captions,
            &audio,
            &transcripts,
            &cfg.match_cfg,
            providers,
        )
    });
    let transcript_of: BTreeMap<&str, &str> = audio
        .iter()
        .zip(&transcripts)
        .filter_map(|((id, _), t)| t.as_ref().ok().map(|t| (id.as_str(), t.as_str())))
        .collect();

    let snapshot = ConfigSnapshot::new(cfg, providers, index.as_ref());
    let results: Vec<(ItemRecord, u64)> = pool.install(|| {
        images
            .par_iter()
            .zip(&captions)
            .map(|((id, _), caption)| {
                let start = Instant::now();
                let audio_id = matches
                    .as_ref()
                    .and_then(|m| m.audio_for(id))
                    .map(|p| p.audio.clone());
                let outcome = caption.clone().and_then(|caption| {
                    let audio = audio_id.as_ref().map(|a| {
                        (a.clone(), transcript_of.get(a.as_str()).copied().unwrap_or("").to_string())
                    });
                    process_item(id, &caption, audio, index.as_ref(), &excerpts, cfg, providers, &snapshot, &paths.output)
                        .map_err(Failure::from)
                });
                let ms = start.elapsed().as_millis() as u64;
                let record = match outcome {
                    Ok(report) => {
                        info!(item = %id, stage = "report", duration_ms = ms, outcome = "ok", citations = report.citations.len(), "item done");
                        ItemRecord {
                            id: id.clone(),
                            kind: "image".into(),
                            audio_id,
                            outcome: ItemOutcome::Ok,
                            stage: None,
                            error: None,
                            report: Some(format!("{id}.report.json")),
                            citations: report.citations,
                        }
                    }
                    Err(e) => {
                        warn!(item = %id, stage = e.stage, duration_ms = ms, outcome = "failed", error = %e.message, "item failed");
                        ItemRecord {
                            id: id.clone(),
                            kind: "image".into(),
                            audio_id,
                            outcome: ItemOutcome::Failed,
                            stage: Some(e.stage.to_string()),
                            error: Some(e.message),
                            report: None,
                            citations: Vec::new(),
                        }
                    }
                };
                (record, ms)
            })
            .collect()
    });

    let mut items = Vec::with_capacity(results.len());
    let mut items_ms = BTreeMap::new();
    for (r, ms) in results {
        items_ms.insert(r.id.clone(), ms);
        items.push(r);
    }
    let audio_failures = failure_records(&audio, &transcripts, "audio");
    let failed_audio = audio_failures.len();
    items.extend(audio_failures);
    let failed_images = items
        .iter()
        .filter(|r| r.kind == "image" && r.outcome == ItemOutcome::Failed)
        .count();
    let summary = RunSummary {
        images: images.len(),
        reports: images.len() - failed_images,
        failed_images,
        failed_audio,
    };
    let status = if failed_images + failed_audio == 0 {
        RunStatus::Complete
    } else {
        RunStatus::Partial
    };
    let manifest = RunManifest {
        status,
        mode: cfg.mode,
        config_snapshot: snapshot,
        matches,
        items,
        summary,
        timing: Timing {
            started_at,
            total_ms: t0.elapsed().as_millis() as u64,
            items_ms,
        },
    };
    let manifest_path = paths.output.join(MANIFEST_FILE);
    write_atomic(&manifest_path, &to_json_bytes(&manifest)).map_err(io_err(&manifest_path))?;
    info!(
        images = summary.images,
        reports = summary.reports,
        failed = failed_images + failed_audio,
        total_ms = manifest.timing.total_ms,
        "batch finished"
    );
    Ok(manifest)
}

type Texts = Vec<Result<String, Failure>>;

fn extract_texts(
    images: &[(String, PathBuf)],
    audio: &[(String, PathBuf)],
    providers: &Providers,
) -> (Texts, Texts) {
    let captions = images
        .par_iter()
        .map(|(id, p)| text_or_error(p, |b| providers.caption.caption_image(b), "caption", id))
        .collect();
    let transcripts = audio
        .par_iter()
        .map(|(id, p)| {
            text_or_error(
                p,
                |b| providers.transcribe.transcribe_audio(b),
                "transcribe",
                id,
            )
        })
        .collect();
    (captions, transcripts)
}

fn annotate(items: &[(String, PathBuf)], texts: &Texts) -> Vec<Annotated> {
    items
        .iter()
        .zip(texts)
        .map(|((id, _), t)| match t {
            Ok(t) => Annotated::from_text(id, t),
            Err(_) => Annotated::new(id, None),
        })
        .collect()
}

fn match_texts(
    images: &[(String, PathBuf)],
    captions: &Texts,
    audio: &[(String, PathBuf)],
    transcripts: &Texts,
    cfg: &MatchConfig,
    providers: &Providers,
) -> MatchResult {
    match_pairs(
        &annotate(images, captions),
        &annotate(audio, transcripts),
        cfg,
        &*providers.text_embed,
    )
}

fn failure_records(items: &[(String, PathBuf)], texts: &Texts, kind: &str) -> Vec<ItemRecord> {
    items
        .iter()
        .zip(texts)
        .filter_map(|((id, _), t)| {
            let e = t.as_ref().err()?;
            warn!(item = %id, stage = e.stage, outcome = "failed", error = %e.message, "{kind} failed");
            Some(ItemRecord {
                id: id.clone(),
                kind: kind.to_string(),
                audio_id: None,
                outcome: ItemOutcome::Failed,
                stage: Some(e.stage.to_string()),
                error: Some(e.message.clone()),
                report: None,
                citations: Vec::new(),
            })
        })
        .collect()
}

/// Result of matching two media directories.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectoryMatch {
    pub result: MatchResult,
    /// Items whose caption or transcript could not be produced; they appear
    /// in the match result as `header-missing`.
    pub failures: Vec<ItemRecord>,
}

/// Captions every image, transcribes every audio note and pairs them.
pub fn match_directories(
    images_dir: &Path,
    audio_dir: &Path,
    cfg: &MatchConfig,
    providers: &Providers,
    parallelism: usize,
) -> Result<DirectoryMatch, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    require_dir("images", images_dir)?;
    require_dir("audio", audio_dir)?;
    let images = list_media(images_dir, IMAGE_EXTENSIONS)?;
    let audio = list_media(audio_dir, AUDIO_EXTENSIONS)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    let (captions, transcripts) = pool.install(|| extract_texts(&images, &audio, providers));
    let result = match_texts(&images, &captions, &audio, &transcripts, cfg, providers);
    let mut failures = failure_records(&images, &captions, "image");
    failures.extend(failure_records(&audio, &transcripts, "audio"));
    Ok(DirectoryMatch { result, failures })
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable value");
    out.push(b'\n');
    out
}

/// Stage and message of an item-level failure.
#[derive(Debug, Clone)]
struct Failure {
    stage: &'static str,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            stage: e.stage(),
            message: e.to_string(),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn process_item(
    id: &str,
    caption: &str,
    audio: Option<(String, String)>,
    index: Option<&PatchIndex>,
    excerpts: &BTreeMap<String, String>,
    cfg: &PipelineConfig,
    providers: &Providers,
    snapshot: &ConfigSnapshot,
    output: &Path,
) -> Result<SafetyReport, PipelineError> {
    let obs = SiteObservation::from_texts(id, caption, audio)?;
    let evidence = match index {
        Some(ix) => retrieve_evidence(&obs, ix, cfg.k, cfg.query_source, &*providers.retrieval)?,
        None => Vec::new(),
    };
    let report = generate_inspection_report(
        &obs,
        &evidence,
        excerpts,
        &*providers.generate,
        snapshot.clone(),
    )?;
    let txt = output.join(format!("{id}.report.txt"));
    write_atomic(&txt, report.report_text.as_bytes()).map_err(io_err(&txt))?;
    let json = RunManifest::report_path(output, id);
    write_atomic(&json, &to_json_bytes(&report)).map_err(io_err(&json))?;
    Ok(report)
}
