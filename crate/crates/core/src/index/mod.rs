//! Late-interaction page index.
//!
//! Each regulation page is stored as a matrix of unit patch embeddings.
//! A query is split into token embeddings; a page's score is the sum over
//! query tokens of the best cosine against any of its patches. Scoring is
//! exhaustive over pages, which is exact and fast enough for desk-scale
//! corpora of a few thousand pages.

mod format;
pub mod kernel;

use std::collections::HashMap;
use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use format::{decode, encode, load_index, save_index, MAGIC, VERSION};
pub use kernel::{cosine, cosine_slices, maxsim_score, KernelError, PreparedQuery};

use crate::provider::{Embedding, PatchMatrix, Provider, ProviderError};

/// Number of pages retrieved when none is configured.
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate page id {0:?}")]
    DuplicatePage(String),
    #[error("page {page_id:?} has dim {actual}, index dim is {expected}")]
    DimMismatch {
        page_id: String,
        expected: usize,
        actual: usize,
    },
    #[error("index has no pages")]
    EmptyIndex,
    #[error("query is empty")]
    EmptyQuery,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("embedding page {page_id:?}: {source}")]
    PageEmbedding {
        page_id: String,
        #[source]
        source: ProviderError,
    },
    #[error("embedding query: {0}")]
    QueryEmbedding(#[source] ProviderError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("index format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One scored page in a ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPage {
    pub page_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Immutable multi-vector index over regulation pages.
#[derive(Debug, Clone)]
pub struct PatchIndex {
    dim: usize,
    pages: Vec<PatchMatrix>,
    norms: Vec<Vec<f64>>,
    page_order: HashMap<String, usize>,
    fingerprint: [u8; 32],
}

impl PartialEq for PatchIndex {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.fingerprint == other.fingerprint && self.pages == other.pages
    }
}

impl PatchIndex {
    /// Builds an index from already-embedded pages; the fingerprint hashes their content.
    pub fn from_pages(pages: Vec<PatchMatrix>) -> Result<Self, IndexError> {
        let mut h = Sha256::new();
        for p in &pages {
            h.update((p.page_id().len() as u64).to_le_bytes());
            h.update(p.page_id().as_bytes());
            h.update((p.patch_count() as u64).to_le_bytes());
            for v in p.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        Self::with_fingerprint(pages, h.finalize().into())
    }

    pub fn with_fingerprint(
        pages: Vec<PatchMatrix>,
        fingerprint: [u8; 32],
    ) -> Result<Self, IndexError> {
        let first = pages.first().ok_or(IndexError::EmptyIndex)?;
        let dim = first.dim();
        let mut page_order = HashMap::with_capacity(pages.len());
        for (i, p) in pages.iter().enumerate() {
            if p.dim() != dim {
                return Err(IndexError::DimMismatch {
                    page_id: p.page_id().to_string(),
                    expected: dim,
                    actual: p.dim(),
                });
            }
            if page_order.insert(p.page_id().to_string(), i).is_some() {
                return Err(IndexError::DuplicatePage(p.page_id().to_string()));
            }
        }
        let norms = pages.iter().map(kernel::patch_norms).collect();
        Ok(Self {
            dim,
            pages,
            norms,
            page_order,
            fingerprint,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn pages(&self) -> &[PatchMatrix] {
        &self.pages
    }

    pub fn total_patches(&self) -> usize {
        self.pages.iter().map(PatchMatrix::patch_count).sum()
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn fingerprint_hex(&self) -> String {
        hex::encode(self.fingerprint)
    }

    pub fn ordinal(&self, page_id: &str) -> Option<usize> {
        self.page_order.get(page_id).copied()
    }

    pub fn page(&self, page_id: &str) -> Option<&PatchMatrix> {
        self.ordinal(page_id).map(|i| &self.pages[i])
    }

    /// Scores every page against pre-embedded query tokens.
    pub fn score_all(&self, tokens: &[Embedding]) -> Result<Vec<f64>, IndexError> {
        if tokens.is_empty() {
            return Err(IndexError::EmptyQuery);
        }
        let query = PreparedQuery::new(tokens)?;
        self.pages
            .par_iter()
            .zip(self.norms.par_iter())
            .map(|(p, n)| kernel::maxsim_prepared(&query, p, n).map_err(IndexError::from))
            .collect()
    }

    /// Top-`k` pages for pre-embedded query tokens.
    pub fn search_tokens(
        &self,
        tokens: &[Embedding],
        k: usize,
    ) -> Result<Vec<RankedPage>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let scores = self.score_all(tokens)?;
        Ok(rank(&self.pages, &scores, k))
    }

    /// Embeds `query_text` into tokens with `provider` and ranks the pages.
    pub fn search(
        &self,
        query_text: &str,
        k: usize,
        provider: &dyn Provider,
    ) -> Result<Vec<RankedPage>, IndexError> {
        if query_text.trim().is_empty() {
            return Err(IndexError::EmptyQuery);
        }
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let tokens = provider
            .embed_query_tokens(query_text)
            .map_err(|e| match e {
                ProviderError::EmptyInput => IndexError::EmptyQuery,
                other => IndexError::QueryEmbedding(other),
            })?;
        self.search_tokens(&tokens, k)
    }
}

/// Orders by descending score, ties by ascending page ordinal.
fn rank(pages: &[PatchMatrix], scores: &[f64], k: usize) -> Vec<RankedPage> {
    let mut order: Vec<usize> = (0..pages.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, ord)| RankedPage {
            page_id: pages[ord].page_id().to_string(),
            score: scores[ord],
            rank: i + 1,
        })
        .collect()
}

/// Embeds every page image and assembles an index in input order.
///
/// The fingerprint is a SHA-256 over the page ids and raw image bytes.
pub fn build_index(
    pages: &[(String, Vec<u8>)],
    provider: &dyn Provider,
) -> Result<PatchIndex, IndexError> {
    if pages.is_empty() {
        return Err(IndexError::EmptyIndex);
    }
    let mut seen = std::collections::HashSet::new();
    for (id, _) in pages {
        if !seen.insert(id.as_str()) {
            return Err(IndexError::DuplicatePage(id.clone()));
        }
    }
    let mut h = Sha256::new();
    for (id, bytes) in pages {
        h.update((id.len() as u64).to_le_bytes());
        h.update(id.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    let matrices = pages
        .par_iter()
        .map(|(id, bytes)| {
            provider
                .embed_page(id, bytes)
                .map_err(|source| IndexError::PageEmbedding {
                    page_id: id.clone(),
                    source,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    PatchIndex::with_fingerprint(matrices, h.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::media::encode_png;
    use crate::provider::StubProvider;

    fn e(v: &[f32]) -> Embedding {
        Embedding::normalized(v.to_vec()).unwrap()
    }

    fn page(id: &str, rows: &[&[f32]]) -> PatchMatrix {
        PatchMatrix::new(id, rows.iter().map(|r| e(r)).collect()).unwrap()
    }

    fn small_index() -> PatchIndex {
        PatchIndex::from_pages(vec![
            page("10", &[&[1.0, 0.0, 0.0]]),
            page("11", &[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]),
            page("12", &[&[1.0, 1.0, 0.0]]),
        ])
        .unwrap()
    }

    #[test]
    fn ranking_and_truncation() {
        let idx = small_index();
        let q = [e(&[1.0, 0.0, 0.0])];
        let all = idx.search_tokens(&q, 10).unwrap();
        assert_eq!(all.len(), 3);
        let ids: Vec<_> = all.iter().map(|r| r.page_id.as_str()).collect();
        assert_eq!(ids, ["10", "12", "11"]);
        assert_eq!(all.iter().map(|r| r.rank).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(idx.search_tokens(&q, 1).unwrap().len(), 1);
        assert!(matches!(idx.search_tokens(&q, 0), Err(IndexError::ZeroK)));
        assert!(matches!(
            idx.search_tokens(&[], 3),
            Err(IndexError::EmptyQuery)
        ));
    }

    #[test]
    fn identical_pages_tie_by_ordinal() {
        let idx =
            PatchIndex::from_pages(vec![page("b", &[&[0.2, 0.9]]), page("a", &[&[0.2, 0.9]])])
                .unwrap();
        let r = idx.search_tokens(&[e(&[1.0, 0.3])], 5).unwrap();
        assert_eq!(r[0].score.to_bits(), r[1].score.to_bits());
        assert_eq!((r[0].page_id.as_str(), r[1].page_id.as_str()), ("b", "a"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = PatchIndex::from_pages(vec![page("5", &[&[1.0]]), page("5", &[&[1.0]])]);
        assert!(matches!(err, Err(IndexError::DuplicatePage(id)) if id == "5"));
        let stub = StubProvider::new();
        let img = encode_png(16, 16, &[3; 256], None).unwrap();
        let err = build_index(&[("1".into(), img.clone()), ("1".into(), img)], &stub);
        assert!(matches!(err, Err(IndexError::DuplicatePage(id)) if id == "1"));
    }

    #[test]
    fn build_preserves_input_order() {
        let stub = StubProvider::new();
        let pages: Vec<(String, Vec<u8>)> = ["30", "10", "20"]
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let px = vec![(i * 40) as u8; 32 * 16];
                (id.to_string(), encode_png(32, 16, &px, None).unwrap())
            })
            .collect();
        let idx = build_index(&pages, &stub).unwrap();
        let ids: Vec<_> = idx.pages().iter().map(|p| p.page_id()).collect();
        assert_eq!(ids, ["30", "10", "20"]);
        assert_eq!(idx.total_patches(), 6);
        assert_eq!(idx.ordinal("20"), Some(2));
        let err = build_index(&[("9".into(), b"junk".to_vec())], &stub);
        assert!(matches!(err, Err(IndexError::PageEmbedding { page_id, .. }) if page_id == "9"));
    }

    #[test]
    fn search_embeds_query_text() {
        let stub = StubProvider::new();
        let tokens = stub.embed_query_tokens("guardrail harness").unwrap();
        let idx = PatchIndex::from_pages(vec![
            page("1", &[&[1.0; 128]]),
            PatchMatrix::new("2", tokens).unwrap(),
        ])
        .unwrap();
        let r = idx.search("Guardrail, harness!", 1, &stub).unwrap();
        assert_eq!(r[0].page_id, "2");
        assert!((r[0].score - 2.0).abs() < 1e-9);
        assert!(matches!(
            idx.search("  ", 1, &stub),
            Err(IndexError::EmptyQuery)
        ));
    }

    #[test]
    fn format_errors() {
        let idx = small_index();
        let bytes = encode(&idx).unwrap();
        assert_eq!(decode(&bytes).unwrap(), idx);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode(&bad),
            Err(IndexError::Format { offset: 0, .. })
        ));

        let mut bad = bytes.clone();
        bad[4] = 2;
        match decode(&bad) {
            Err(IndexError::Format { offset, message }) => {
                assert_eq!(offset, 4);
                assert!(message.contains("unsupported version"));
            }
            other => panic!("{other:?}"),
        }

        assert!(matches!(
            decode(&bytes[..bytes.len() - 7]),
            Err(IndexError::Format { message, .. }) if message.contains("truncated")
        ));

        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 1] ^= 0xFF;
        assert!(matches!(
            decode(&bad),
            Err(IndexError::Format { message, .. }) if message.contains("checksum")
        ));
    }
}
