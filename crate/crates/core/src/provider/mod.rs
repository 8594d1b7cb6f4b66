//! Uniform gateway to the external model capabilities the engine relies on.
//!
//! Every capability (captioning, transcription, location-text embedding,
//! page-patch embedding, query-token embedding, report generation) goes
//! through the [`Provider`] trait. Two implementations ship with the crate:
//!
//! - [`StubProvider`]: deterministic, offline, pure function of its inputs.
//! - [`HttpProvider`]: JSON-over-HTTP client with bounded concurrency and
//!   retry with exponential backoff (see `docs/provider_contract.md`).
//!
//! All embeddings leaving this module are unit-normalized.

mod http;
pub mod media;
mod stub;
pub mod tokenize;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{
    FaultKind, HttpProvider, RetryPolicy, Transport, TransportError, TransportResponse,
    UreqTransport,
};
pub use stub::StubProvider;

/// Dimension of page-patch and query-token embeddings.
pub const PATCH_DIM: usize = 128;

/// Side length in pixels of one page patch cell.
pub const PATCH_CELL: u32 = 16;

/// Tolerance of the unit-norm contract.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("decode error: {0}")]
    Decode(String),
    #[error("provider returned HTTP {status} after {attempts} attempt(s)")]
    Http { status: u16, attempts: u32 },
    #[error("provider timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("empty input")]
    EmptyInput,
    #[error("degenerate vector (zero norm or non-finite values)")]
    DegenerateVector,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("malformed provider response: {0}")]
    Protocol(String),
    #[error("provider returned an empty output")]
    EmptyOutput,
    #[error("environment variable `{0}` holding the API key is not set")]
    MissingCredential(String),
    #[error("invalid provider config: {0}")]
    Config(String),
}

/// Connection settings for a remote provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_ref: String,
    pub model_id: String,
    /// Per-request timeout in seconds.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent_requests: usize,
}

fn default_timeout() -> f64 {
    60.0
}

fn default_max_retries() -> u32 {
    3
}

fn default_max_concurrent() -> usize {
    4
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return Err(ProviderError::Config(format!(
                "timeout must be positive, got {}",
                self.timeout
            )));
        }
        if self.max_concurrent_requests == 0 {
            return Err(ProviderError::Config(
                "max_concurrent_requests must be at least 1".into(),
            ));
        }
        if !is_env_var_name(&self.api_key_ref) {
            return Err(ProviderError::Config(format!(
                "api_key_ref must name an environment variable, got {:?}",
                self.api_key_ref
            )));
        }
        if !(self.endpoint_url.starts_with("http://") || self.endpoint_url.starts_with("https://"))
        {
            return Err(ProviderError::Config(format!(
                "endpoint_url must be an http(s) URL, got {:?}",
                self.endpoint_url
            )));
        }
        if self.model_id.trim().is_empty() {
            return Err(ProviderError::Config("model_id must not be empty".into()));
        }
        Ok(())
    }
}

fn is_env_var_name(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// A unit-normalized embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    /// Normalizes `values` to unit L2 norm.
    pub fn normalized(values: Vec<f32>) -> Result<Self, ProviderError> {
        if values.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::DegenerateVector);
        }
        let norm = values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(ProviderError::DegenerateVector);
        }
        let values = values
            .into_iter()
            .map(|v| (f64::from(v) / norm) as f32)
            .collect();
        Ok(Self { values })
    }

    /// Wraps values that are already unit-norm, checking the contract.
    pub fn from_unit(values: Vec<f32>) -> Result<Self, ProviderError> {
        if values.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::DegenerateVector);
        }
        let e = Self { values };
        if (e.norm() - 1.0).abs() > UNIT_NORM_TOL {
            return Err(ProviderError::DegenerateVector);
        }
        Ok(e)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

/// Patch embeddings of one regulation page, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    page_id: String,
    dim: usize,
    data: Vec<f32>,
}

impl PatchMatrix {
    pub fn new(page_id: impl Into<String>, patches: Vec<Embedding>) -> Result<Self, ProviderError> {
        let first = patches.first().ok_or(ProviderError::EmptyInput)?;
        let dim = first.dim();
        let mut data = Vec::with_capacity(dim * patches.len());
        for p in &patches {
            if p.dim() != dim {
                return Err(ProviderError::DimMismatch {
                    expected: dim,
                    actual: p.dim(),
                });
            }
            data.extend_from_slice(p.values());
        }
        Ok(Self {
            page_id: page_id.into(),
            dim,
            data,
        })
    }

    /// Builds a matrix from raw row-major storage, checking every row is unit-norm.
    pub fn from_rows(
        page_id: impl Into<String>,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self, ProviderError> {
        if dim == 0 || data.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(ProviderError::DimMismatch {
                expected: dim,
                actual: data.len() % dim,
            });
        }
        for row in data.chunks_exact(dim) {
            if row.iter().any(|v| !v.is_finite()) || (l2_norm(row) - 1.0).abs() > UNIT_NORM_TOL {
                return Err(ProviderError::DegenerateVector);
            }
        }
        Ok(Self {
            page_id: page_id.into(),
            dim,
            data,
        })
    }

    pub fn page_id(&self) -> &str {
        &self.page_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn patch_count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Appends one patch row.
    pub fn push(&mut self, patch: &Embedding) -> Result<(), ProviderError> {
        if patch.dim() != self.dim {
            return Err(ProviderError::DimMismatch {
                expected: self.dim,
                actual: patch.dim(),
            });
        }
        self.data.extend_from_slice(patch.values());
        Ok(())
    }
}

/// One evidence block handed to the report generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceExcerpt {
    pub page_id: String,
    pub excerpt: Option<String>,
}

/// Structured context for report generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportPrompt {
    /// Fully rendered prompt text (template + observation + evidence).
    pub rendered: String,
    pub time: Option<String>,
    pub location: Option<String>,
    /// Observation text the report is about.
    pub observation: String,
    pub evidence: Vec<EvidenceExcerpt>,
}

/// A model capability endpoint.
///
/// Implementations must be shareable across threads; every returned
/// embedding is unit-normalized and no method returns an empty string as
/// success.
pub trait Provider: Send + Sync {
    fn model_id(&self) -> &str;

    fn caption_image(&self, image: &[u8]) -> Result<String, ProviderError>;

    fn transcribe_audio(&self, audio: &[u8]) -> Result<String, ProviderError>;

    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError>;

    fn embed_page(&self, page_id: &str, image: &[u8]) -> Result<PatchMatrix, ProviderError>;

    fn embed_query_tokens(&self, text: &str) -> Result<Vec<Embedding>, ProviderError>;

    fn generate_report(&self, prompt: &ReportPrompt) -> Result<String, ProviderError>;
}

/// Capability names used in configuration and snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Caption,
    Transcribe,
    /// Location-text embedding used by the matcher.
    TextEmbed,
    /// Page-patch and query-token embedding (shared vector space).
    Retrieval,
    Generate,
}

impl Capability {
    pub const ALL: [Capability; 5] = [
        Capability::Caption,
        Capability::Transcribe,
        Capability::TextEmbed,
        Capability::Retrieval,
        Capability::Generate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Capability::Caption => "caption",
            Capability::Transcribe => "transcribe",
            Capability::TextEmbed => "text_embed",
            Capability::Retrieval => "retrieval",
            Capability::Generate => "generate",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-capability routing table.
#[derive(Clone)]
pub struct Providers {
    pub caption: Arc<dyn Provider>,
    pub transcribe: Arc<dyn Provider>,
    pub text_embed: Arc<dyn Provider>,
    pub retrieval: Arc<dyn Provider>,
    pub generate: Arc<dyn Provider>,
}

impl Providers {
    /// Routes every capability to the same provider.
    pub fn uniform(p: Arc<dyn Provider>) -> Self {
        Self {
            caption: p.clone(),
            transcribe: p.clone(),
            text_embed: p.clone(),
            retrieval: p.clone(),
            generate: p,
        }
    }

    pub fn stub() -> Self {
        Self::uniform(Arc::new(StubProvider::default()))
    }

    pub fn get(&self, cap: Capability) -> &Arc<dyn Provider> {
        match cap {
            Capability::Caption => &self.caption,
            Capability::Transcribe => &self.transcribe,
            Capability::TextEmbed => &self.text_embed,
            Capability::Retrieval => &self.retrieval,
            Capability::Generate => &self.generate,
        }
    }
}

impl fmt::Debug for Providers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut m = f.debug_map();
        for cap in Capability::ALL {
            m.entry(&cap.as_str(), &self.get(cap).model_id());
        }
        m.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ProviderConfig {
        ProviderConfig {
            endpoint_url: "https://models.example/v1".into(),
            api_key_ref: "SITE_API_KEY".into(),
            model_id: "vision-large".into(),
            timeout: 30.0,
            max_retries: 2,
            max_concurrent_requests: 4,
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let mut c = cfg();
        c.timeout = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.max_concurrent_requests = 0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.api_key_ref = "sk-live abc123".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn normalization() {
        let e = Embedding::normalized(vec![3.0, 4.0]).unwrap();
        assert!((e.norm() - 1.0).abs() < UNIT_NORM_TOL);
        assert!((e.values()[0] - 0.6).abs() < 1e-7);
        assert!(matches!(
            Embedding::normalized(vec![0.0, 0.0]),
            Err(ProviderError::DegenerateVector)
        ));
        assert!(matches!(
            Embedding::normalized(vec![f32::NAN, 1.0]),
            Err(ProviderError::DegenerateVector)
        ));
        assert!(Embedding::from_unit(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn patch_matrix_rejects_mixed_dims() {
        let a = Embedding::normalized(vec![1.0, 0.0]).unwrap();
        let b = Embedding::normalized(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            PatchMatrix::new("p", vec![a, b]),
            Err(ProviderError::DimMismatch { .. })
        ));
        assert!(PatchMatrix::new("p", vec![]).is_err());
    }
}
