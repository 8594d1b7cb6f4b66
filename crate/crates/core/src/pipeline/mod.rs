//! Observation → evidence → report flow, single item and batch.

mod batch;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::extract_citations;
use crate::index::{IndexError, PatchIndex, RankedPage, DEFAULT_TOP_K};
use crate::matcher::{format_timestamp, parse_annotation_lenient, AnnotationHeader, MatchConfig};
use crate::provider::{
    Capability, EvidenceExcerpt, Provider, ProviderError, Providers, ReportPrompt,
};

pub use batch::{
    list_media, load_excerpts, match_directories, run_batch, to_json_bytes, validate_paths,
    BatchPaths, DirectoryMatch, ItemOutcome, ItemRecord, RunManifest, RunStatus, RunSummary,
    Timing, AUDIO_EXTENSIONS, IMAGE_EXTENSIONS, MANIFEST_FILE,
};

/// Prompt template shipped with the crate; its hash is recorded with every report.
pub const PROMPT_TEMPLATE: &str = include_str!("../../assets/report_prompt_v1.txt");
pub const PROMPT_TEMPLATE_NAME: &str = "report_prompt_v1";

pub fn prompt_template_sha256() -> String {
    hex::encode(Sha256::digest(PROMPT_TEMPLATE.as_bytes()))
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("loading index {path}: {source}")]
    IndexLoad {
        path: PathBuf,
        #[source]
        source: IndexError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{item}: {stage} failed: {source}")]
    Provider {
        item: String,
        stage: &'static str,
        #[source]
        source: ProviderError,
    },
    #[error("{item}: retrieval failed: {source}")]
    Retrieval {
        item: String,
        #[source]
        source: IndexError,
    },
    #[error("{item}: report generation failed: {source}")]
    Generation {
        item: String,
        #[source]
        source: ProviderError,
    },
    #[error("{item}: {message}")]
    Item { item: String, message: String },
}

impl PipelineError {
    /// Pipeline stage an item-level error belongs to.
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Provider { stage, .. } => stage,
            PipelineError::Retrieval { .. } => "retrieve",
            PipelineError::Generation { .. } => "generate",
            PipelineError::Io { .. } => "io",
            PipelineError::Item { .. } => "observe",
            PipelineError::Config(_) => "config",
            PipelineError::IndexLoad { .. } => "index",
        }
    }
}

/// Experiment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalMode {
    /// No retrieval; image plus matched audio (when given) go straight to the generator.
    NoRag,
    /// Retrieval over image captions only; audio is not used.
    Image,
    /// Captions fused with matched transcripts, then retrieval.
    #[default]
    ImageAudio,
}

impl RetrievalMode {
    pub fn uses_index(self) -> bool {
        self != RetrievalMode::NoRag
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RetrievalMode::NoRag => "no-rag",
            RetrievalMode::Image => "image",
            RetrievalMode::ImageAudio => "image-audio",
        }
    }
}

impl fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RetrievalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "no-rag" => Ok(RetrievalMode::NoRag),
            "image" => Ok(RetrievalMode::Image),
            "image-audio" => Ok(RetrievalMode::ImageAudio),
            other => Err(format!(
                "unknown retrieval mode {other:?} (expected no-rag|image|image-audio)"
            )),
        }
    }
}

/// Text used as the retrieval query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QuerySource {
    /// Header, caption and transcript.
    #[default]
    Fused,
    /// Caption only, even when a transcript is matched.
    Caption,
}

impl std::str::FromStr for QuerySource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fused" => Ok(QuerySource::Fused),
            "caption" => Ok(QuerySource::Caption),
            other => Err(format!(
                "unknown query source {other:?} (expected fused|caption)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: RetrievalMode,
    pub k: usize,
    pub query_source: QuerySource,
    #[serde(rename = "match")]
    pub match_cfg: MatchConfig,
    /// Items processed concurrently.
    pub parallelism: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: RetrievalMode::default(),
            k: DEFAULT_TOP_K,
            query_source: QuerySource::default(),
            match_cfg: MatchConfig::default(),
            parallelism: 4,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k == 0 {
            return Err(PipelineError::Config(
                "retrieval k must be at least 1".into(),
            ));
        }
        if self.parallelism == 0 {
            return Err(PipelineError::Config(
                "parallelism must be at least 1".into(),
            ));
        }
        self.match_cfg.validate().map_err(PipelineError::Config)
    }
}

/// One inspection unit: an image, its caption, and optionally a matched audio note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteObservation {
    pub image_id: String,
    pub audio_id: Option<String>,
    /// Parsed from the caption, falling back to the transcript.
    pub header: Option<AnnotationHeader>,
    pub caption: String,
    pub transcript: Option<String>,
    pub fused_text: String,
}

impl SiteObservation {
    /// Assembles an observation from already-extracted texts.
    pub fn from_texts(
        image_id: impl Into<String>,
        caption: impl Into<String>,
        audio: Option<(String, String)>,
    ) -> Result<Self, PipelineError> {
        let image_id = image_id.into();
        let caption = caption.into();
        if caption.trim().is_empty() {
            return Err(PipelineError::Item {
                item: image_id,
                message: "empty caption".into(),
            });
        }
        let (audio_id, transcript) = match audio {
            Some((id, t)) if !t.trim().is_empty() => (Some(id), Some(t)),
            Some((id, _)) => {
                return Err(PipelineError::Item {
                    item: image_id,
                    message: format!("empty transcript for audio {id}"),
                })
            }
            None => (None, None),
        };
        let header = parse_annotation_lenient(&caption).ok().or_else(|| {
            transcript
                .as_deref()
                .and_then(|t| parse_annotation_lenient(t).ok())
        });

        let mut fused = String::new();
        if let Some(h) = &header {
            fused.push_str(&format!(
                "Time: {}\nLocation: {}\n\n",
                header_time(h).unwrap_or_else(|| "not recorded".into()),
                h.location_text
            ));
        }
        fused.push_str("[Image description]\n");
        fused.push_str(caption.trim());
        fused.push('\n');
        if let Some(t) = &transcript {
            fused.push_str("\n[Audio transcript]\n");
            fused.push_str(t.trim());
            fused.push('\n');
        }
        Ok(Self {
            image_id,
            audio_id,
            header,
            caption,
            transcript,
            fused_text: fused,
        })
    }

    /// Caption and transcript bodies without their headers.
    pub fn body_text(&self) -> String {
        let body = |t: &str| {
            parse_annotation_lenient(t)
                .map(|h| h.body)
                .ok()
                .filter(|b| !b.trim().is_empty())
                .unwrap_or_else(|| t.trim().to_string())
        };
        let mut out = body(&self.caption);
        if let Some(t) = &self.transcript {
            out.push('\n');
            out.push_str(&body(t));
        }
        out
    }

    pub fn query_text(&self, source: QuerySource) -> &str {
        match source {
            QuerySource::Fused => &self.fused_text,
            QuerySource::Caption => &self.caption,
        }
    }
}

fn header_time(h: &AnnotationHeader) -> Option<String> {
    h.timestamp.as_ref().map(format_timestamp)
}

/// Captions the image, transcribes the audio, and fuses both.
pub fn observe(
    image_id: &str,
    image: &[u8],
    audio: Option<(&str, &[u8])>,
    providers: &Providers,
) -> Result<SiteObservation, PipelineError> {
    let caption =
        providers
            .caption
            .caption_image(image)
            .map_err(|source| PipelineError::Provider {
                item: image_id.to_string(),
                stage: "caption",
                source,
            })?;
    let audio = match audio {
        Some((aid, bytes)) => {
            let t = providers
                .transcribe
                .transcribe_audio(bytes)
                .map_err(|source| PipelineError::Provider {
                    item: image_id.to_string(),
                    stage: "transcribe",
                    source,
                })?;
            Some((aid.to_string(), t))
        }
        None => None,
    };
    SiteObservation::from_texts(image_id, caption, audio)
}

/// Top-`k` regulation pages for an observation.
pub fn retrieve_evidence(
    obs: &SiteObservation,
    index: &PatchIndex,
    k: usize,
    source: QuerySource,
    provider: &dyn Provider,
) -> Result<Vec<RankedPage>, PipelineError> {
    index
        .search(obs.query_text(source), k, provider)
        .map_err(|source| PipelineError::Retrieval {
            item: obs.image_id.clone(),
            source,
        })
}

/// Everything needed to re-run one report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub mode: RetrievalMode,
    pub k: usize,
    pub query_source: QuerySource,
    pub time_window_min: u32,
    pub location_threshold: f64,
    pub prompt_template: String,
    pub prompt_sha256: String,
    /// Hex SHA-256 of the index inputs; absent without retrieval.
    pub index_fingerprint: Option<String>,
    /// Capability → model id.
    pub models: BTreeMap<String, String>,
}

impl ConfigSnapshot {
    pub fn new(cfg: &PipelineConfig, providers: &Providers, index: Option<&PatchIndex>) -> Self {
        Self {
            mode: cfg.mode,
            k: cfg.k,
            query_source: cfg.query_source,
            time_window_min: cfg.match_cfg.time_window_min,
            location_threshold: cfg.match_cfg.location_threshold,
            prompt_template: PROMPT_TEMPLATE_NAME.to_string(),
            prompt_sha256: prompt_template_sha256(),
            index_fingerprint: index.map(PatchIndex::fingerprint_hex),
            models: Capability::ALL
                .iter()
                .map(|c| {
                    (
                        c.as_str().to_string(),
                        providers.get(*c).model_id().to_string(),
                    )
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub time: Option<String>,
    pub location: Option<String>,
}

/// A generated report plus the context it was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub image_id: String,
    pub audio_id: Option<String>,
    pub header: ReportHeader,
    pub report_text: String,
    /// Page numbers cited in `report_text`, ascending.
    pub citations: Vec<u32>,
    pub evidence: Vec<RankedPage>,
    pub config_snapshot: ConfigSnapshot,
}

/// Fills the prompt template.
pub fn render_prompt(obs: &SiteObservation, evidence: &[EvidenceExcerpt]) -> String {
    let ev = if evidence.is_empty() {
        "(none)".to_string()
    } else {
        evidence
            .iter()
            .map(|e| {
                format!(
                    "[page {}] {}",
                    e.page_id,
                    e.excerpt.as_deref().unwrap_or(&e.page_id)
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    PROMPT_TEMPLATE
        .replace("{observation}", obs.fused_text.trim_end())
        .replace("{evidence}", &ev)
}

/// Generates the report and extracts its citations.
///
/// `excerpts` maps page ids to their text; pages without text are passed by id.
pub fn generate_inspection_report(
    obs: &SiteObservation,
    evidence: &[RankedPage],
    excerpts: &BTreeMap<String, String>,
    generator: &dyn Provider,
    snapshot: ConfigSnapshot,
) -> Result<SafetyReport, PipelineError> {
    let blocks: Vec<EvidenceExcerpt> = evidence
        .iter()
        .map(|r| EvidenceExcerpt {
            page_id: r.page_id.clone(),
            excerpt: excerpts.get(&r.page_id).cloned(),
        })
        .collect();
    let time = obs.header.as_ref().and_then(header_time);
    let location = obs.header.as_ref().map(|h| h.location_text.clone());
    let prompt = ReportPrompt {
        rendered: render_prompt(obs, &blocks),
        time: time.clone(),
        location: location.clone(),
        observation: obs.body_text(),
        evidence: blocks,
    };
    let report_text =
        generator
            .generate_report(&prompt)
            .map_err(|source| PipelineError::Generation {
                item: obs.image_id.clone(),
                source,
            })?;
    let citations = extract_citations(&report_text).into_iter().collect();
    Ok(SafetyReport {
        image_id: obs.image_id.clone(),
        audio_id: obs.audio_id.clone(),
        header: ReportHeader { time, location },
        report_text,
        citations,
        evidence: evidence.to_vec(),
        config_snapshot: snapshot,
    })
}
