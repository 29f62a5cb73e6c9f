//! Template serialization.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FPT1"
//! 4       1     version (1)
//! 5       4     d_g            u32
//! 9       4     d_m            u32
//! 13      4     minutiae count u32
//! 17      4     image height   u32
//! 21      4     image width    u32
//! 25      4     source id len  u32
//! 29      n     source id      utf-8
//! ..      4*d_g global embedding f32
//! ..            per minutia: x, y, theta f32, then d_m f32 embedding
//! ```
//!
//! The JSON mirror carries `{global, minutiae: [{x, y, theta, emb}],
//! image_size: [h, w], source_id, d_m}`.

use crate::error::{DecodeError, DecodeErrorKind, Result};
use crate::template::{ImageSize, Minutia, Template};

pub const MAGIC: &[u8; 4] = b"FPT1";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 29;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Binary,
    Json,
}

pub fn write_template(t: &Template, format: Format) -> Vec<u8> {
    match format {
        Format::Binary => encode_binary(t),
        Format::Json => serde_json::to_vec(t).expect("template serialization is infallible"),
    }
}

/// Decodes a template, sniffing the format from the leading bytes, and
/// routes it through [`Template::ingest`].
pub fn read_template(bytes: &[u8]) -> Result<Template> {
    let raw = if looks_like_json(bytes) {
        decode_json(bytes)?
    } else {
        decode_binary(bytes)?
    };
    raw.ingest()
}

fn looks_like_json(bytes: &[u8]) -> bool {
    bytes
        .iter()
        .find(|b| !b.is_ascii_whitespace())
        .is_some_and(|&b| b == b'{')
}

pub fn encode_binary(t: &Template) -> Vec<u8> {
    let d_m = t.local_dim;
    let mut out = Vec::with_capacity(
        HEADER_LEN + t.source_id.len() + 4 * (t.global.len() + t.minutiae.len() * (3 + d_m)),
    );
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    for n in [
        t.global.len(),
        d_m,
        t.minutiae.len(),
        t.image_size.height as usize,
        t.image_size.width as usize,
        t.source_id.len(),
    ] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    out.extend_from_slice(t.source_id.as_bytes());
    for v in &t.global {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for m in &t.minutiae {
        for v in [m.x, m.y, m.theta].iter().chain(&m.embedding) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, kind: DecodeErrorKind) -> DecodeError {
        DecodeError {
            offset: self.pos,
            kind,
        }
    }

    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], DecodeError> {
        let remaining = self.buf.len() - self.pos;
        if remaining < n {
            return Err(self.err(DecodeErrorKind::Truncated {
                needed: n - remaining,
            }));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f32>, DecodeError> {
        let bytes = self.take(n.saturating_mul(4))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }
}

/// Decodes the binary layout without ingest normalization.
pub fn decode_binary(bytes: &[u8]) -> std::result::Result<Template, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(DecodeError {
            offset: 0,
            kind: DecodeErrorKind::BadMagic,
        });
    }
    let version = r.take(1)?[0];
    if version != FORMAT_VERSION {
        return Err(DecodeError {
            offset: 4,
            kind: DecodeErrorKind::UnsupportedVersion(version),
        });
    }
    let d_g = r.u32()? as usize;
    let d_m = r.u32()? as usize;
    let count = r.u32()? as usize;
    let height = r.u32()?;
    let width = r.u32()?;
    let id_len = r.u32()? as usize;
    let id_start = r.pos;
    let source_id = std::str::from_utf8(r.take(id_len)?)
        .map_err(|_| DecodeError {
            offset: id_start,
            kind: DecodeErrorKind::InvalidUtf8,
        })?
        .to_owned();
    let global = r.f32s(d_g)?;
    // Check the full minutiae block length up front so a corrupt count
    // cannot trigger a huge allocation.
    let per = 3usize.saturating_add(d_m).saturating_mul(4);
    let remaining = bytes.len() - r.pos;
    if per.saturating_mul(count) > remaining {
        return Err(r.err(DecodeErrorKind::Truncated {
            needed: per.saturating_mul(count) - remaining,
        }));
    }
    let mut minutiae = Vec::with_capacity(count);
    for _ in 0..count {
        let head = r.f32s(3)?;
        let embedding = r.f32s(d_m)?;
        minutiae.push(Minutia::new(head[0], head[1], head[2], embedding));
    }
    if r.pos != bytes.len() {
        return Err(r.err(DecodeErrorKind::TrailingBytes(bytes.len() - r.pos)));
    }
    Ok(Template {
        global,
        minutiae,
        image_size: ImageSize::new(height, width),
        source_id,
        local_dim: d_m,
    })
}

/// Decodes the JSON mirror without ingest normalization. A missing `d_m`
/// is inferred from the first minutia.
pub fn decode_json(bytes: &[u8]) -> std::result::Result<Template, DecodeError> {
    #[derive(serde::Deserialize)]
    struct Wire {
        global: Vec<f32>,
        minutiae: Vec<Minutia>,
        image_size: ImageSize,
        source_id: String,
        d_m: Option<usize>,
    }
    let w: Wire = serde_json::from_slice(bytes).map_err(|e| DecodeError {
        offset: json_offset(bytes, &e),
        kind: DecodeErrorKind::Json(e.to_string()),
    })?;
    let local_dim = w
        .d_m
        .or_else(|| w.minutiae.first().map(|m| m.embedding.len()))
        .unwrap_or(0);
    Ok(Template {
        global: w.global,
        minutiae: w.minutiae,
        image_size: w.image_size,
        source_id: w.source_id,
        local_dim,
    })
}

fn json_offset(bytes: &[u8], e: &serde_json::Error) -> usize {
    let (line, col) = (e.line(), e.column());
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in bytes.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return offset + col.saturating_sub(1).min(l.len());
        }
        offset += l.len() + 1;
    }
    bytes.len()
}
