//! Declarative run configuration (TOML).
//!
//! ```toml
//! parallelism = 4
//!
//! [providers]
//! default = "stub"                 # used for capabilities not listed
//! generate = { endpoint_url = "https://llm.example/v1", api_key_ref = "LLM_KEY", model_id = "gen-1" }
//!
//! [match]
//! time_window_min = 15
//! location_threshold = 0.75
//!
//! [retrieval]
//! k = 5
//! mode = "image-audio"            # no-rag | image | image-audio
//! query_source = "fused"          # fused | caption
//!
//! [paths]                         # relative to this file
//! corpus = "corpus"
//! index = "corpus.ssix"
//! images = "images"
//! audio = "audio"
//! output = "out"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use siteinspect::index::DEFAULT_TOP_K;
use siteinspect::matcher::MatchConfig;
use siteinspect::pipeline::{PipelineConfig, QuerySource, RetrievalMode};
use siteinspect::provider::{
    Capability, HttpProvider, Provider, ProviderConfig, Providers, StubProvider,
};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ProviderSpec {
    /// Only `"stub"` is accepted.
    Named(String),
    Remote(ProviderConfig),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvidersSection {
    pub default: Option<ProviderSpec>,
    pub caption: Option<ProviderSpec>,
    pub transcribe: Option<ProviderSpec>,
    pub text_embed: Option<ProviderSpec>,
    pub retrieval: Option<ProviderSpec>,
    pub generate: Option<ProviderSpec>,
}

impl ProvidersSection {
    fn spec(&self, cap: Capability) -> Option<&ProviderSpec> {
        let own = match cap {
            Capability::Caption => &self.caption,
            Capability::Transcribe => &self.transcribe,
            Capability::TextEmbed => &self.text_embed,
            Capability::Retrieval => &self.retrieval,
            Capability::Generate => &self.generate,
        };
        own.as_ref().or(self.default.as_ref())
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSection {
    pub k: Option<usize>,
    pub mode: Option<RetrievalMode>,
    pub query_source: Option<QuerySource>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub audio: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub providers: ProvidersSection,
    #[serde(default, rename = "match")]
    pub match_cfg: MatchConfig,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub paths: PathsSection,
    pub parallelism: Option<usize>,
}

impl RunConfig {
    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("reading config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        for slot in [
            &mut p.corpus,
            &mut p.index,
            &mut p.images,
            &mut p.audio,
            &mut p.output,
        ] {
            if let Some(v) = slot.as_mut() {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        }
        Ok(cfg)
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            mode: self.retrieval.mode.unwrap_or_default(),
            k: self.retrieval.k.unwrap_or(DEFAULT_TOP_K),
            query_source: self.retrieval.query_source.unwrap_or_default(),
            match_cfg: self.match_cfg,
            parallelism: self.parallelism.unwrap_or(4),
        }
    }

    /// Builds the provider table, checking every remote config and the
    /// presence of its credential without making any request.
    pub fn providers(&self) -> Result<Providers, CliError> {
        let stub: Arc<dyn Provider> = Arc::new(StubProvider::new());
        let mut built: BTreeMap<Capability, Arc<dyn Provider>> = BTreeMap::new();
        for cap in Capability::ALL {
            let p: Arc<dyn Provider> = match self.providers.spec(cap) {
                None => stub.clone(),
                Some(ProviderSpec::Named(name)) if name == "stub" => stub.clone(),
                Some(ProviderSpec::Named(other)) => {
                    return Err(CliError::Usage(format!(
                        "providers.{cap}: unknown provider {other:?} (use \"stub\" or a table)"
                    )))
                }
                Some(ProviderSpec::Remote(rc)) => {
                    if std::env::var_os(&rc.api_key_ref).is_none() {
                        return Err(CliError::Usage(format!(
                            "providers.{cap}: environment variable {} is not set",
                            rc.api_key_ref
                        )));
                    }
                    let http = HttpProvider::new(rc.clone())
                        .map_err(|e| CliError::Usage(format!("providers.{cap}: {e}")))?;
                    Arc::new(http)
                }
            };
            built.insert(cap, p);
        }
        let mut take = |c| built.remove(&c).expect("every capability built");
        Ok(Providers {
            caption: take(Capability::Caption),
            transcribe: take(Capability::Transcribe),
            text_embed: take(Capability::TextEmbed),
            retrieval: take(Capability::Retrieval),
            generate: take(Capability::Generate),
        })
    }
}
