use std::sync::LazyLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::media::{decode_audio, decode_image, DecodedImage};
use super::tokenize::tokenize;
use super::{Embedding, PatchMatrix, Provider, ProviderError, ReportPrompt, PATCH_CELL, PATCH_DIM};

const TOKEN_SEED: u64 = 0x5173_5e1d_c0de_0001;
const PROJECTION_SEED: u64 = 0x5173_5e1d_c0de_0002;
const CELL_PIXELS: usize = (PATCH_CELL * PATCH_CELL) as usize;
/// Weight of the pixel component when a page carries embedded text.
const PIXEL_WEIGHT: f64 = 0.2;

/// Deterministic offline provider.
///
/// Every output is a pure function of the input bytes:
/// - captions and transcripts are the text embedded in the media container
/// - text embeddings are normalized sums of per-token pseudo-random vectors
/// - page patches come from a fixed random projection of each 16x16 cell,
///   blended with token vectors of the page's embedded text when present
#[derive(Debug, Clone)]
pub struct StubProvider {
    model_id: String,
    text_dim: usize,
    stop_words: Vec<String>,
}

impl Default for StubProvider {
    fn default() -> Self {
        Self {
            model_id: "stub".to_string(),
            text_dim: PATCH_DIM,
            stop_words: Vec::new(),
        }
    }
}

impl StubProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_text_dim(mut self, dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        self.text_dim = dim;
        self
    }

    pub fn with_stop_words(mut self, words: Vec<String>) -> Self {
        self.stop_words = words;
        self
    }

    fn tokens(&self, text: &str) -> Result<Vec<String>, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let toks = tokenize(text, &self.stop_words);
        if toks.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        Ok(toks)
    }
}

/// Stable 64-bit hash of a token (first 8 bytes of its SHA-256, little-endian).
pub fn token_hash(token: &str) -> u64 {
    let digest = Sha256::digest(token.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

/// Unit-norm pseudo-random vector assigned to `token`.
pub fn token_vector(token: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(token_hash(token) ^ TOKEN_SEED);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn to_embedding(v: &[f64]) -> Result<Embedding, ProviderError> {
    Embedding::normalized(v.iter().map(|&x| x as f32).collect())
}

struct CellProjection {
    /// PATCH_DIM rows of CELL_PIXELS weights.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

static PROJECTION: LazyLock<CellProjection> = LazyLock::new(|| {
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    let scale = 1.0 / (CELL_PIXELS as f64).sqrt();
    let weights = (0..PATCH_DIM * CELL_PIXELS)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect();
    let bias = (0..PATCH_DIM)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5)
        .collect();
    CellProjection { weights, bias }
});

fn cell_vector(img: &DecodedImage, cx: u32, cy: u32) -> Vec<f64> {
    let mut cell = [0f64; CELL_PIXELS];
    for dy in 0..PATCH_CELL {
        for dx in 0..PATCH_CELL {
            let (x, y) = (cx * PATCH_CELL + dx, cy * PATCH_CELL + dy);
            if x < img.width && y < img.height {
                cell[(dy * PATCH_CELL + dx) as usize] = f64::from(img.pixel(x, y)) / 255.0 - 0.5;
            }
        }
    }
    let proj = &*PROJECTION;
    let mut v: Vec<f64> = proj
        .weights
        .chunks_exact(CELL_PIXELS)
        .zip(&proj.bias)
        .map(|(w, b)| b + w.iter().zip(&cell).map(|(a, c)| a * c).sum::<f64>())
        .collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.clone_from(&proj.bias);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
    } else {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

struct HazardRule {
    keywords: &'static [&'static str],
    hazard: &'static str,
    action: &'static str,
}

const HAZARD_RULES: &[HazardRule] = &[
    HazardRule {
        keywords: &[
            "harness",
            "fall-arrest",
            "fall arrest",
            "at height",
            "falling from height",
        ],
        hazard: "fall from height",
        action: "fit every worker at height with an anchored fall-arrest system",
    },
    HazardRule {
        keywords: &["vest", "high-visibility", "hi-vis", "reflective"],
        hazard: "missing high-visibility clothing",
        action: "require high-visibility clothing for all workers on site",
    },
    HazardRule {
        keywords: &["guardrail", "toe board", "open edge", "platform edge"],
        hazard: "unprotected edges",
        action: "install guardrails and toe boards on open edges",
    },
    HazardRule {
        keywords: &["hard hat", "helmet"],
        hazard: "head protection",
        action: "confirm head protection is worn in all work zones",
    },
    HazardRule {
        keywords: &["scaffold"],
        hazard: "scaffold integrity",
        action: "have the scaffold inspected and tagged by a competent person",
    },
    HazardRule {
        keywords: &["stack", "falling object", "debris"],
        hazard: "falling or unstable materials",
        action: "secure stacked materials and keep exclusion zones below work areas",
    },
    HazardRule {
        keywords: &["manual handling", "lifting", "overreach"],
        hazard: "manual handling",
        action: "provide mechanical lifting aids for heavy loads",
    },
    HazardRule {
        keywords: &["excavat", "trench"],
        hazard: "excavation collapse",
        action: "shore or bench excavations deeper than 1.5 m",
    },
    HazardRule {
        keywords: &["electric", "cable"],
        hazard: "electrical exposure",
        action: "tag and test leads and keep cables off walkways",
    },
];

/// Renders the stub report template.
pub(crate) fn render_stub_report(prompt: &ReportPrompt) -> String {
    let observation = prompt
        .observation
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    let lower = observation.to_lowercase();
    let hits: Vec<&HazardRule> = HAZARD_RULES
        .iter()
        .filter(|r| r.keywords.iter().any(|k| lower.contains(k)))
        .collect();
    let hazards = if hits.is_empty() {
        "no specific hazard identified from the observation".to_string()
    } else {
        hits.iter().map(|r| r.hazard).collect::<Vec<_>>().join("; ")
    };
    let citations = if prompt.evidence.is_empty() {
        "None".to_string()
    } else {
        prompt
            .evidence
            .iter()
            .map(|e| format!("page {}", e.page_id))
            .collect::<Vec<_>>()
            .join("; ")
    };
    let mut recs: Vec<String> = hits.iter().map(|r| r.action.to_string()).collect();
    if recs.is_empty() {
        recs.push("continue routine inspection".to_string());
    }
    let mut out = String::new();
    out.push_str(&format!(
        "Time: {}\n",
        prompt.time.as_deref().unwrap_or("not recorded")
    ));
    out.push_str(&format!(
        "Location: {}\n",
        prompt.location.as_deref().unwrap_or("not recorded")
    ));
    out.push_str(&format!(
        "Construction site: {}\n",
        if observation.is_empty() {
            "no description available"
        } else {
            &observation
        }
    ));
    out.push_str(&format!("Safety Hazards: {hazards}\n"));
    out.push_str(&format!("Regulatory support: {citations}\n"));
    out.push_str("Recommendations:\n");
    for r in recs {
        out.push_str(&format!("- {r}\n"));
    }
    out
}

impl Provider for StubProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn caption_image(&self, image: &[u8]) -> Result<String, ProviderError> {
        let img = decode_image(image)?;
        if let Some(text) = img.text {
            return Ok(text);
        }
        let mean = img.luma.iter().map(|&p| f64::from(p)).sum::<f64>() / img.luma.len() as f64;
        Ok(format!(
            "Site photograph, {}x{} pixels, mean luminance {:.1}; no embedded annotation.",
            img.width, img.height, mean
        ))
    }

    fn transcribe_audio(&self, audio: &[u8]) -> Result<String, ProviderError> {
        decode_audio(audio)?.transcript.ok_or_else(|| {
            ProviderError::Decode("audio carries no embedded transcript".to_string())
        })
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        let mut sum = vec![0f64; self.text_dim];
        for tok in self.tokens(text)? {
            for (s, v) in sum.iter_mut().zip(token_vector(&tok, self.text_dim)) {
                *s += v;
            }
        }
        to_embedding(&sum)
    }

    fn embed_page(&self, page_id: &str, image: &[u8]) -> Result<PatchMatrix, ProviderError> {
        let img = decode_image(image)?;
        let cols = img.width.div_ceil(PATCH_CELL);
        let rows = img.height.div_ceil(PATCH_CELL);
        let text_vecs: Vec<Vec<f64>> = img
            .text
            .as_deref()
            .map(|t| tokenize(t, &self.stop_words))
            .unwrap_or_default()
            .iter()
            .map(|t| token_vector(t, PATCH_DIM))
            .collect();
        let mut patches = Vec::with_capacity((cols * rows) as usize);
        for cy in 0..rows {
            for cx in 0..cols {
                let mut v = cell_vector(&img, cx, cy);
                if !text_vecs.is_empty() {
                    let j = (cy * cols + cx) as usize % text_vecs.len();
                    for (a, t) in v.iter_mut().zip(&text_vecs[j]) {
                        *a = PIXEL_WEIGHT * *a + t;
                    }
                }
                patches.push(to_embedding(&v)?);
            }
        }
        PatchMatrix::new(page_id, patches)
    }

    fn embed_query_tokens(&self, text: &str) -> Result<Vec<Embedding>, ProviderError> {
        self.tokens(text)?
            .iter()
            .map(|t| to_embedding(&token_vector(t, PATCH_DIM)))
            .collect()
    }

    fn generate_report(&self, prompt: &ReportPrompt) -> Result<String, ProviderError> {
        Ok(render_stub_report(prompt))
    }
}
