//! QR payload grammar and the PNG read/write path.
//!
//! Wire form: `HT1|MER-XXXXXXXX|tttttttt`, where the tag is the first 8 hex
//! chars of SHA-256(`QR1|<trace_id>|<committing_block_hash>`). The tag only
//! deters casual label swapping; it is 32 bits and not a signature.

use std::fmt;
use std::io::Cursor;

use chrono::NaiveDate;
use image::{DynamicImage, ImageFormat, Luma};
use qrcode::bits::Bits;
use qrcode::{EcLevel, QrCode, Version};

use crate::canonical::sha256_hex;
use crate::records::{RecordIndex, Stage, TraceabilityId};
use crate::trace::{trace, ProvenanceReport, TraceError};

pub const PAYLOAD_VERSION: &str = "HT1";
pub const MAX_QR_INPUT_BYTES: usize = 128;
/// Pixels per module in rendered PNGs.
pub const MODULE_PIXELS: u32 = 8;
pub const QUIET_ZONE_MODULES: u32 = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QrError {
    #[error("malformed QR payload: {0}")]
    MalformedPayload(String),
    #[error("unsupported QR payload version `{0}`")]
    UnsupportedVersion(String),
    #[error("QR input is {0} bytes; the limit is 128")]
    PayloadTooLong(usize),
    #[error("no QR symbol found in image")]
    NoQrFound,
    #[error("QR decode failed: {0}")]
    DecodeFailed(String),
    #[error("integrity tag does not match the chain")]
    IntegrityMismatch,
    #[error("unknown trace id `{0}`")]
    UnknownTraceId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QrPayload {
    trace_id: TraceabilityId,
    integrity_tag: String,
}

impl QrPayload {
    /// `trace_id` must be a merchant id and `integrity_tag` 8 lowercase hex chars.
    pub fn new(trace_id: TraceabilityId, integrity_tag: String) -> Self {
        assert_eq!(trace_id.stage(), Stage::Merchant, "QR payloads name merchant records");
        assert!(is_tag(&integrity_tag), "integrity tag must be 8 lowercase hex chars");
        QrPayload { trace_id, integrity_tag }
    }

    pub fn trace_id(&self) -> TraceabilityId {
        self.trace_id
    }

    pub fn integrity_tag(&self) -> &str {
        &self.integrity_tag
    }
}

impl fmt::Display for QrPayload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&encode_payload(self))
    }
}

fn is_tag(s: &str) -> bool {
    s.len() == 8 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

pub fn integrity_tag(trace_id: &TraceabilityId, committing_block_hash: &str) -> String {
    sha256_hex(format!("QR1|{trace_id}|{committing_block_hash}"))[..8].to_string()
}

pub fn encode_payload(payload: &QrPayload) -> String {
    format!("{PAYLOAD_VERSION}|{}|{}", payload.trace_id, payload.integrity_tag)
}

/// Strict parse of the wire form; no whitespace or case leniency.
pub fn parse_payload(text: &str) -> Result<QrPayload, QrError> {
    let malformed = |why: &str| QrError::MalformedPayload(why.to_string());
    let mut parts = text.split('|');
    let version = parts.next().unwrap_or_default();
    if version != PAYLOAD_VERSION {
        let looks_versioned = version.len() > 2
            && version.starts_with("HT")
            && version[2..].bytes().all(|b| b.is_ascii_digit());
        return Err(if looks_versioned {
            QrError::UnsupportedVersion(version.to_string())
        } else {
            malformed("missing HT1 prefix")
        });
    }
    let (Some(id), Some(tag), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(malformed("expected exactly three `|`-separated fields"));
    };
    let trace_id: TraceabilityId = id.parse().map_err(|_| malformed("bad trace id"))?;
    if trace_id.stage() != Stage::Merchant {
        return Err(malformed("trace id must be a MER id"));
    }
    if !is_tag(tag) {
        return Err(malformed("integrity tag must be 8 lowercase hex chars"));
    }
    Ok(QrPayload { trace_id, integrity_tag: tag.to_string() })
}

fn build_code(text: &str) -> Result<QrCode, QrError> {
    if text.len() > MAX_QR_INPUT_BYTES {
        return Err(QrError::PayloadTooLong(text.len()));
    }
    // byte mode only and the smallest version that fits
    (1..=40)
        .find_map(|v| {
            let mut bits = Bits::new(Version::Normal(v));
            bits.push_byte_data(text.as_bytes()).ok()?;
            bits.push_terminator(EcLevel::M).ok()?;
            QrCode::with_bits(bits, EcLevel::M).ok()
        })
        .ok_or(QrError::PayloadTooLong(text.len()))
}

/// Dark-module matrix (row-major, without quiet zone).
pub fn qr_modules(text: &str) -> Result<Vec<Vec<bool>>, QrError> {
    let code = build_code(text)?;
    let width = code.width();
    let colors = code.to_colors();
    Ok(colors
        .chunks(width)
        .map(|row| row.iter().map(|c| *c == qrcode::Color::Dark).collect())
        .collect())
}

/// Renders `text` as a level-M QR symbol: 8 px modules, 4-module quiet zone, PNG.
pub fn render_qr(text: &str) -> Result<Vec<u8>, QrError> {
    let code = build_code(text)?;
    let img = code
        .render::<Luma<u8>>()
        .quiet_zone(true)
        .module_dimensions(MODULE_PIXELS, MODULE_PIXELS)
        .build();
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageLuma8(img)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| QrError::DecodeFailed(format!("png encode: {e}")))?;
    Ok(out.into_inner())
}

/// Finds and decodes the first QR symbol in an image.
pub fn decode_qr(image_bytes: &[u8]) -> Result<String, QrError> {
    let img = image::load_from_memory(image_bytes)
        .map_err(|e| QrError::DecodeFailed(format!("unreadable image: {e}")))?
        .to_luma8();
    let mut prepared = rqrr::PreparedImage::prepare(img);
    let grids = prepared.detect_grids();
    let grid = grids.first().ok_or(QrError::NoQrFound)?;
    let (_meta, content) = grid.decode().map_err(|e| QrError::DecodeFailed(e.to_string()))?;
    Ok(content)
}

/// Checks a scanned payload against the chain and returns the provenance report.
/// A tag mismatch is rejected before any trace data is produced.
pub fn verify_scanned(index: &RecordIndex, payload: &QrPayload, as_of: NaiveDate) -> Result<ProvenanceReport, QrError> {
    let id = payload.trace_id();
    let record = index.get(&id).ok_or_else(|| QrError::UnknownTraceId(id.to_string()))?;
    let block_hash = index
        .block_hash(record.block_height)
        .ok_or_else(|| QrError::UnknownTraceId(id.to_string()))?;
    if integrity_tag(&id, block_hash) != payload.integrity_tag {
        return Err(QrError::IntegrityMismatch);
    }
    trace(index, &id.to_string(), as_of).map_err(|e| match e {
        TraceError::UnknownTraceId(s) | TraceError::MalformedId(s) => QrError::UnknownTraceId(s),
        other => QrError::DecodeFailed(other.to_string()),
    })
}
