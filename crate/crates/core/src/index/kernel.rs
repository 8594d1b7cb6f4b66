//! Similarity kernels: cosine and summed MaxSim.
//!
//! Dot products accumulate in f64 over f32 storage. Stored patches are
//! unit-normalized, but f32 rounding leaves their norms a few ulps away from
//! one, so the kernel divides by cached f64 norms instead of trusting them.
//! That keeps the fast path bit-identical to a plain cosine double loop.

use thiserror::Error;

use crate::provider::{l2_norm, Embedding, PatchMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("dimension mismatch: query {query}, document {document}")]
    DimMismatch { query: usize, document: usize },
    #[error("degenerate vector (zero norm)")]
    DegenerateVector,
    #[error("query has no tokens")]
    EmptyQuery,
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Cosine similarity of two raw vectors, clamped to [-1, 1].
pub fn cosine_slices(q: &[f32], d: &[f32]) -> Result<f64, KernelError> {
    if q.len() != d.len() {
        return Err(KernelError::DimMismatch {
            query: q.len(),
            document: d.len(),
        });
    }
    let (nq, nd) = (l2_norm(q), l2_norm(d));
    if nq == 0.0 || nd == 0.0 {
        return Err(KernelError::DegenerateVector);
    }
    Ok((dot(q, d) / (nq * nd)).clamp(-1.0, 1.0))
}

pub fn cosine(q: &Embedding, d: &Embedding) -> Result<f64, KernelError> {
    cosine_slices(q.values(), d.values())
}

/// Query tokens prepared for repeated scoring (norms cached).
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    dim: usize,
    tokens: Vec<f32>,
    norms: Vec<f64>,
}

impl PreparedQuery {
    pub fn new(tokens: &[Embedding]) -> Result<Self, KernelError> {
        let first = tokens.first().ok_or(KernelError::EmptyQuery)?;
        let dim = first.dim();
        let mut flat = Vec::with_capacity(dim * tokens.len());
        let mut norms = Vec::with_capacity(tokens.len());
        for t in tokens {
            if t.dim() != dim {
                return Err(KernelError::DimMismatch {
                    query: t.dim(),
                    document: dim,
                });
            }
            let n = t.norm();
            if n == 0.0 {
                return Err(KernelError::DegenerateVector);
            }
            flat.extend_from_slice(t.values());
            norms.push(n);
        }
        Ok(Self {
            dim,
            tokens: flat,
            norms,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token_count(&self) -> usize {
        self.norms.len()
    }
}

/// Computes the per-row norms of a page; used once per page at index time.
pub fn patch_norms(page: &PatchMatrix) -> Vec<f64> {
    page.rows().map(l2_norm).collect()
}

/// Summed MaxSim against a page with precomputed patch norms.
pub fn maxsim_prepared(
    query: &PreparedQuery,
    page: &PatchMatrix,
    page_norms: &[f64],
) -> Result<f64, KernelError> {
    if query.dim != page.dim() {
        return Err(KernelError::DimMismatch {
            query: query.dim,
            document: page.dim(),
        });
    }
    let mut total = 0.0;
    for (q, &nq) in query.tokens.chunks_exact(query.dim).zip(&query.norms) {
        let mut best = f64::NEG_INFINITY;
        for (d, &nd) in page.rows().zip(page_norms) {
            let c = (dot(q, d) / (nq * nd)).clamp(-1.0, 1.0);
            if c > best {
                best = c;
            }
        }
        total += best;
    }
    Ok(total)
}

/// Sum over query tokens of the best cosine against any page patch.
pub fn maxsim_score(query: &[Embedding], page: &PatchMatrix) -> Result<f64, KernelError> {
    let prepared = PreparedQuery::new(query)?;
    maxsim_prepared(&prepared, page, &patch_norms(page))
}
