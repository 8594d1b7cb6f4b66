//! Container sniffing and decoding for images (PNG, JPEG) and audio (WAV, MP3).
//!
//! Decoding here is deliberately shallow: it validates the container, pulls
//! out what the stub provider needs (grayscale pixels, embedded description
//! text, embedded transcript) and leaves real perception to remote models.
//!
//! Embedded text locations:
//! - PNG: `tEXt`/`iTXt` chunk with keyword `Description`
//! - JPEG: first `COM` segment
//! - WAV: `LIST`/`INFO`/`ICMT` sub-chunk
//! - MP3: ID3v2 `COMM` frame

use std::io::Cursor;

use super::ProviderError;

/// PNG keyword carrying an embedded description.
pub const PNG_TEXT_KEY: &str = "Description";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Jpeg,
}

#[derive(Debug, Clone)]
pub struct DecodedImage {
    pub format: ImageFormat,
    pub width: u32,
    pub height: u32,
    /// Row-major 8-bit luma.
    pub luma: Vec<u8>,
    pub text: Option<String>,
}

impl DecodedImage {
    pub fn pixel(&self, x: u32, y: u32) -> u8 {
        self.luma[(y * self.width + x) as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AudioFormat {
    Wav,
    Mp3,
}

#[derive(Debug, Clone)]
pub struct DecodedAudio {
    pub format: AudioFormat,
    /// Known for WAV only.
    pub duration_secs: Option<f64>,
    pub transcript: Option<String>,
}

fn decode_err(msg: impl Into<String>) -> ProviderError {
    ProviderError::Decode(msg.into())
}

pub fn sniff_image(bytes: &[u8]) -> Option<ImageFormat> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Some(ImageFormat::Png)
    } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        Some(ImageFormat::Jpeg)
    } else {
        None
    }
}

pub fn decode_image(bytes: &[u8]) -> Result<DecodedImage, ProviderError> {
    if bytes.is_empty() {
        return Err(decode_err("empty image"));
    }
    let format = sniff_image(bytes).ok_or_else(|| decode_err("not a PNG or JPEG image"))?;
    let img_format = match format {
        ImageFormat::Png => image::ImageFormat::Png,
        ImageFormat::Jpeg => image::ImageFormat::Jpeg,
    };
    let img = image::load_from_memory_with_format(bytes, img_format)
        .map_err(|e| decode_err(format!("image decode failed: {e}")))?;
    let luma = img.to_luma8();
    let (width, height) = luma.dimensions();
    if width == 0 || height == 0 {
        return Err(decode_err("image has zero area"));
    }
    let text = match format {
        ImageFormat::Png => png_text(bytes)?,
        ImageFormat::Jpeg => jpeg_comment(bytes),
    };
    Ok(DecodedImage {
        format,
        width,
        height,
        luma: luma.into_raw(),
        text,
    })
}

fn png_text(bytes: &[u8]) -> Result<Option<String>, ProviderError> {
    let reader = png::Decoder::new(Cursor::new(bytes))
        .read_info()
        .map_err(|e| decode_err(format!("png header: {e}")))?;
    let info = reader.info();
    for chunk in &info.utf8_text {
        if chunk.keyword.eq_ignore_ascii_case(PNG_TEXT_KEY) {
            let text = chunk
                .get_text()
                .map_err(|e| decode_err(format!("png iTXt: {e}")))?;
            return Ok(non_blank(text));
        }
    }
    for chunk in &info.uncompressed_latin1_text {
        if chunk.keyword.eq_ignore_ascii_case(PNG_TEXT_KEY) {
            return Ok(non_blank(chunk.text.clone()));
        }
    }
    Ok(None)
}

fn jpeg_comment(bytes: &[u8]) -> Option<String> {
    let mut pos = 2;
    while pos + 4 <= bytes.len() {
        if bytes[pos] != 0xFF {
            return None;
        }
        let marker = bytes[pos + 1];
        // start of scan: no more header segments
        if marker == 0xDA {
            return None;
        }
        let len = u16::from_be_bytes([bytes[pos + 2], bytes[pos + 3]]) as usize;
        if len < 2 || pos + 2 + len > bytes.len() {
            return None;
        }
        if marker == 0xFE {
            let body = &bytes[pos + 4..pos + 2 + len];
            return non_blank(String::from_utf8_lossy(body).into_owned());
        }
        pos += 2 + len;
    }
    None
}

fn non_blank(s: String) -> Option<String> {
    let t = s.trim_matches(char::from(0)).trim();
    if t.is_empty() {
        None
    } else {
        Some(t.to_string())
    }
}

pub fn decode_audio(bytes: &[u8]) -> Result<DecodedAudio, ProviderError> {
    if bytes.is_empty() {
        return Err(decode_err("empty audio"));
    }
    if bytes.starts_with(b"RIFF") {
        decode_wav(bytes)
    } else if bytes.starts_with(b"ID3") || is_mpeg_frame_sync(bytes) {
        decode_mp3(bytes)
    } else {
        Err(decode_err("not a WAV or MP3 container"))
    }
}

fn is_mpeg_frame_sync(b: &[u8]) -> bool {
    b.len() >= 4 && b[0] == 0xFF && (b[1] & 0xE0) == 0xE0 && (b[1] & 0x06) != 0
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn decode_wav(bytes: &[u8]) -> Result<DecodedAudio, ProviderError> {
    if bytes.len() < 12 || &bytes[8..12] != b"WAVE" {
        return Err(decode_err("RIFF container is not WAVE"));
    }
    let riff_len = le_u32(bytes, 4) as usize;
    if riff_len + 8 > bytes.len() {
        return Err(decode_err(format!(
            "truncated RIFF: header declares {} bytes, have {}",
            riff_len + 8,
            bytes.len()
        )));
    }
    let end = riff_len + 8;
    let mut pos = 12;
    let mut byte_rate = None;
    let mut data_len = None;
    let mut transcript = None;
    while pos + 8 <= end {
        let id = &bytes[pos..pos + 4];
        let len = le_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(len)
            .filter(|&e| e <= end)
            .ok_or_else(|| decode_err(format!("truncated chunk {:?} at byte {pos}", ascii(id))))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(decode_err("fmt chunk too short"));
                }
                byte_rate = Some(le_u32(body, 8));
            }
            b"data" => data_len = Some(len),
            b"LIST" if body.len() >= 4 && &body[..4] == b"INFO" => {
                transcript = info_comment(&body[4..]).or(transcript);
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (len & 1);
    }
    let byte_rate = byte_rate.ok_or_else(|| decode_err("WAV without fmt chunk"))?;
    let data_len = data_len.ok_or_else(|| decode_err("WAV without data chunk"))?;
    let duration_secs = (byte_rate > 0).then(|| data_len as f64 / f64::from(byte_rate));
    Ok(DecodedAudio {
        format: AudioFormat::Wav,
        duration_secs,
        transcript,
    })
}

fn info_comment(mut b: &[u8]) -> Option<String> {
    while b.len() >= 8 {
        let id = &b[..4];
        let len = le_u32(b, 4) as usize;
        let body = b.get(8..8 + len)?;
        if id == b"ICMT" {
            return non_blank(String::from_utf8_lossy(body).into_owned());
        }
        let next = 8 + len + (len & 1);
        b = b.get(next..)?;
    }
    None
}

fn ascii(id: &[u8]) -> String {
    String::from_utf8_lossy(id).into_owned()
}

fn syncsafe(b: &[u8]) -> usize {
    b.iter()
        .fold(0usize, |acc, &x| (acc << 7) | usize::from(x & 0x7F))
}

fn decode_mp3(bytes: &[u8]) -> Result<DecodedAudio, ProviderError> {
    let mut transcript = None;
    let mut audio_start = 0;
    if bytes.starts_with(b"ID3") {
        if bytes.len() < 10 {
            return Err(decode_err("truncated ID3 header"));
        }
        let major = bytes[3];
        let tag_len = syncsafe(&bytes[6..10]);
        let tag_end = 10 + tag_len;
        if tag_end > bytes.len() {
            return Err(decode_err("truncated ID3 tag"));
        }
        let mut pos = 10;
        while pos + 10 <= tag_end && bytes[pos] != 0 {
            let id = &bytes[pos..pos + 4];
            let size = if major >= 4 {
                syncsafe(&bytes[pos + 4..pos + 8])
            } else {
                u32::from_be_bytes([
                    bytes[pos + 4],
                    bytes[pos + 5],
                    bytes[pos + 6],
                    bytes[pos + 7],
                ]) as usize
            };
            let body = bytes
                .get(pos + 10..pos + 10 + size)
                .filter(|_| pos + 10 + size <= tag_end)
                .ok_or_else(|| decode_err(format!("truncated ID3 frame at byte {pos}")))?;
            if id == b"COMM" && transcript.is_none() {
                transcript = id3_comment(body);
            }
            pos += 10 + size;
        }
        audio_start = tag_end;
    }
    if !is_mpeg_frame_sync(&bytes[audio_start..]) {
        return Err(decode_err("no MPEG audio frame after header"));
    }
    Ok(DecodedAudio {
        format: AudioFormat::Mp3,
        duration_secs: None,
        transcript,
    })
}

fn id3_comment(body: &[u8]) -> Option<String> {
    // encoding(1) language(3) description\0 text
    let (&enc, rest) = body.split_first()?;
    let rest = rest.get(3..)?;
    match enc {
        0 | 3 => {
            let nul = rest.iter().position(|&b| b == 0)?;
            let text = &rest[nul + 1..];
            let s = if enc == 3 {
                String::from_utf8_lossy(text).into_owned()
            } else {
                text.iter().map(|&b| char::from(b)).collect()
            };
            non_blank(s)
        }
        // UTF-16 variants are not produced by our tooling
        _ => None,
    }
}

/// Encodes an 8-bit grayscale PNG, optionally with an embedded description.
pub fn encode_png(
    width: u32,
    height: u32,
    luma: &[u8],
    text: Option<&str>,
) -> Result<Vec<u8>, ProviderError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        if let Some(t) = text {
            enc.add_itxt_chunk(PNG_TEXT_KEY.to_string(), t.to_string())
                .map_err(|e| decode_err(format!("png text: {e}")))?;
        }
        let mut w = enc
            .write_header()
            .map_err(|e| decode_err(format!("png header: {e}")))?;
        w.write_image_data(luma)
            .map_err(|e| decode_err(format!("png data: {e}")))?;
    }
    Ok(out)
}

/// Encodes a 16-bit mono PCM WAV, optionally with a transcript in `LIST/INFO/ICMT`.
pub fn encode_wav(samples: &[i16], sample_rate: u32, transcript: Option<&str>) -> Vec<u8> {
    let mut fmt = Vec::with_capacity(16);
    fmt.extend_from_slice(&1u16.to_le_bytes()); // PCM
    fmt.extend_from_slice(&1u16.to_le_bytes()); // mono
    fmt.extend_from_slice(&sample_rate.to_le_bytes());
    fmt.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    fmt.extend_from_slice(&2u16.to_le_bytes());
    fmt.extend_from_slice(&16u16.to_le_bytes());

    let data: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();

    let mut chunks = Vec::new();
    push_chunk(&mut chunks, b"fmt ", &fmt);
    if let Some(t) = transcript {
        let mut text = t.as_bytes().to_vec();
        text.push(0);
        let mut info = b"INFO".to_vec();
        push_chunk(&mut info, b"ICMT", &text);
        push_chunk(&mut chunks, b"LIST", &info);
    }
    push_chunk(&mut chunks, b"data", &data);

    let mut out = Vec::with_capacity(12 + chunks.len());
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((4 + chunks.len()) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(&chunks);
    out
}

fn push_chunk(out: &mut Vec<u8>, id: &[u8; 4], body: &[u8]) {
    out.extend_from_slice(id);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(body);
    if body.len() % 2 == 1 {
        out.push(0);
    }
}
