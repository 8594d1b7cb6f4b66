//! On-disk index layout (little-endian):
//!
//! ```text
//! magic        4  "SSIX"
//! version      u32 (= 1)
//! dim          u32
//! page_count   u32
//! fingerprint  32 bytes
//! per page:
//!   id_len       u16
//!   id           id_len bytes, UTF-8
//!   patch_count  u32
//!   patches      patch_count * dim f32, row-major
//! crc32        u32 over every preceding byte
//! ```

use std::path::Path;

use super::{IndexError, PatchIndex};
use crate::fsutil::write_atomic;
use crate::provider::PatchMatrix;

pub const MAGIC: &[u8; 4] = b"SSIX";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 32;

fn format_err(offset: usize, message: impl Into<String>) -> IndexError {
    IndexError::Format {
        offset,
        message: message.into(),
    }
}

/// Serializes an index to bytes.
pub fn encode(index: &PatchIndex) -> Result<Vec<u8>, IndexError> {
    let dim = u32::try_from(index.dim()).map_err(|_| format_err(8, "dim exceeds u32"))?;
    let count = u32::try_from(index.len()).map_err(|_| format_err(12, "page count exceeds u32"))?;
    let payload: usize = index
        .pages()
        .iter()
        .map(|p| 2 + p.page_id().len() + 4 + p.as_slice().len() * 4)
        .sum();
    let mut out = Vec::with_capacity(HEADER_LEN + payload + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(index.fingerprint());
    for page in index.pages() {
        let id = page.page_id().as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| {
            format_err(
                out.len(),
                format!("page id {:?} longer than 65535 bytes", page.page_id()),
            )
        })?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        let n = u32::try_from(page.patch_count())
            .map_err(|_| format_err(out.len(), "patch count exceeds u32"))?;
        out.extend_from_slice(&n.to_le_bytes());
        for v in page.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                format_err(
                    self.pos,
                    format!(
                        "truncated: need {n} bytes for {what}, {} left",
                        self.buf.len() - self.pos
                    ),
                )
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, IndexError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, IndexError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses and validates index bytes.
pub fn decode(bytes: &[u8]) -> Result<PatchIndex, IndexError> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(format_err(0, "bad magic (expected \"SSIX\")"));
    }
    if bytes.len() < 8 {
        return Err(format_err(4, "truncated: missing version"));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(format_err(bytes.len().min(8), "truncated header"));
    }
    let body_len = bytes.len() - 4;
    let mut r = Reader {
        buf: &bytes[..body_len],
        pos: 8,
    };
    let dim = r.u32("dim")? as usize;
    if dim == 0 {
        return Err(format_err(8, "dim must be positive"));
    }
    let page_count = r.u32("page count")? as usize;
    let mut fingerprint = [0u8; 32];
    fingerprint.copy_from_slice(r.take(32, "fingerprint")?);

    let mut pages = Vec::with_capacity(page_count.min(1 << 16));
    let mut seen = std::collections::HashSet::new();
    for _ in 0..page_count {
        let at = r.pos;
        let id_len = r.u16("page id length")? as usize;
        let id = std::str::from_utf8(r.take(id_len, "page id")?)
            .map_err(|_| format_err(at + 2, "page id is not UTF-8"))?
            .to_string();
        if !seen.insert(id.clone()) {
            return Err(format_err(at, format!("duplicate page id {id:?}")));
        }
        let n_at = r.pos;
        let n = r.u32("patch count")? as usize;
        if n == 0 {
            return Err(format_err(n_at, format!("page {id:?} has no patches")));
        }
        let floats = n
            .checked_mul(dim)
            .and_then(|f| f.checked_mul(4))
            .ok_or_else(|| format_err(n_at, "patch count overflow"))?;
        let data_at = r.pos;
        let raw = r.take(floats, "patch data")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let page = PatchMatrix::from_rows(id.clone(), dim, data)
            .map_err(|e| format_err(data_at, format!("invalid patches for page {id:?}: {e}")))?;
        pages.push(page);
    }
    if r.pos != body_len {
        return Err(format_err(r.pos, "trailing bytes before checksum"));
    }
    let stored = u32::from_le_bytes([
        bytes[body_len],
        bytes[body_len + 1],
        bytes[body_len + 2],
        bytes[body_len + 3],
    ]);
    let actual = crc32fast::hash(&bytes[..body_len]);
    if stored != actual {
        return Err(format_err(
            body_len,
            format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}"),
        ));
    }
    PatchIndex::with_fingerprint(pages, fingerprint)
}

pub fn save_index(index: &PatchIndex, path: &Path) -> Result<(), IndexError> {
    let bytes = encode(index)?;
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<PatchIndex, IndexError> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}
