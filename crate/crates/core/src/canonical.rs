//! Canonical JSON and digest helpers.
//!
//! Canonical form: object keys sorted bytewise, no insignificant whitespace,
//! integers in shortest decimal form. Every hashed or signed structure goes
//! through [`to_canonical_string`] so that two implementations agree byte for
//! byte.

use serde::{de::DeserializeOwned, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// 64 lowercase hex zeros.
pub const ZERO_DIGEST: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, thiserror::Error)]
pub enum CanonicalError {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("input is not in canonical form")]
    NotCanonical,
}

/// Serializes `value` to canonical JSON text.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String, serde_json::Error> {
    let tree = serde_json::to_value(value)?;
    Ok(value_to_canonical(&tree))
}

/// Canonical bytes of an already-built JSON tree.
pub fn value_to_canonical(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value);
    out
}

fn write_value(out: &mut String, value: &Value) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => out.push_str(&n.to_string()),
        Value::String(s) => write_str(out, s),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, item);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort_unstable();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_str(out, key);
                out.push(':');
                write_value(out, &map[key]);
            }
            out.push('}');
        }
    }
}

fn write_str(out: &mut String, s: &str) {
    // serde_json's string escaper is already minimal and deterministic.
    out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"));
}

/// Parses `text` and rejects it unless it is byte-identical to the canonical
/// re-encoding of the parsed value.
pub fn from_canonical_str<T: DeserializeOwned + Serialize>(text: &str) -> Result<T, CanonicalError> {
    let parsed: T = serde_json::from_str(text)?;
    if to_canonical_string(&parsed)? != text {
        return Err(CanonicalError::NotCanonical);
    }
    Ok(parsed)
}

/// SHA-256 of `bytes` as 64 lowercase hex chars.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

pub fn sha256(bytes: impl AsRef<[u8]>) -> [u8; 32] {
    Sha256::digest(bytes.as_ref()).into()
}

/// True for exactly 64 lowercase hex characters.
pub fn is_digest_hex(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}
