use std::fmt;
use std::str::FromStr;

use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Crockford base32 alphabet (no I, L, O, U).
pub const CROCKFORD: &[u8; 32] = b"0123456789ABCDEFGHJKMNPQRSTVWXYZ";

const SUFFIX_LEN: usize = 8;

/// Supply-chain stage, in upstream-to-downstream order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Cultivator,
    Maker,
    Merchant,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Cultivator, Stage::Maker, Stage::Merchant];

    pub fn prefix(self) -> &'static str {
        match self {
            Stage::Cultivator => "CUL",
            Stage::Maker => "MAK",
            Stage::Merchant => "MER",
        }
    }

    pub fn from_prefix(prefix: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.prefix() == prefix)
    }

    pub fn downstream(self) -> Option<Stage> {
        match self {
            Stage::Cultivator => Some(Stage::Maker),
            Stage::Maker => Some(Stage::Merchant),
            Stage::Merchant => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Cultivator => "cultivator",
            Stage::Maker => "maker",
            Stage::Merchant => "merchant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceIdError {
    #[error("trace id must look like CUL-XXXXXXXX, MAK-XXXXXXXX or MER-XXXXXXXX")]
    Malformed,
    #[error("unknown stage prefix")]
    UnknownPrefix,
}

/// Stage-prefixed identifier `^(CUL|MAK|MER)-[0-9A-HJKMNP-TV-Z]{8}$`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TraceabilityId {
    stage: Stage,
    suffix: [u8; SUFFIX_LEN],
}

impl TraceabilityId {
    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn suffix(&self) -> &str {
        std::str::from_utf8(&self.suffix).expect("suffix is ascii")
    }

    /// Draws a random id for `stage`, redrawing while `taken` reports a clash.
    pub fn generate<R: Rng + ?Sized>(stage: Stage, rng: &mut R, mut taken: impl FnMut(&TraceabilityId) -> bool) -> Self {
        loop {
            let mut suffix = [0u8; SUFFIX_LEN];
            for c in suffix.iter_mut() {
                *c = CROCKFORD[rng.random_range(0..CROCKFORD.len())];
            }
            let id = TraceabilityId { stage, suffix };
            if !taken(&id) {
                return id;
            }
        }
    }
}

impl fmt::Display for TraceabilityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.stage.prefix(), self.suffix())
    }
}

impl fmt::Debug for TraceabilityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for TraceabilityId {
    type Err = TraceIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let b = s.as_bytes();
        if b.len() != 3 + 1 + SUFFIX_LEN || b[3] != b'-' {
            return Err(TraceIdError::Malformed);
        }
        let stage = Stage::from_prefix(&s[..3]).ok_or_else(|| {
            if b[..3].iter().all(u8::is_ascii_uppercase) {
                TraceIdError::UnknownPrefix
            } else {
                TraceIdError::Malformed
            }
        })?;
        let mut suffix = [0u8; SUFFIX_LEN];
        for (dst, &c) in suffix.iter_mut().zip(&b[4..]) {
            if !CROCKFORD.contains(&c) {
                return Err(TraceIdError::Malformed);
            }
            *dst = c;
        }
        Ok(TraceabilityId { stage, suffix })
    }
}

impl Serialize for TraceabilityId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TraceabilityId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl JsonSchema for TraceabilityId {
    fn schema_name() -> std::borrow::Cow<'static, str> {
        "TraceabilityId".into()
    }

    fn json_schema(_: &mut schemars::SchemaGenerator) -> schemars::Schema {
        schemars::json_schema!({
            "type": "string",
            "pattern": "^(CUL|MAK|MER)-[0-9A-HJKMNP-TV-Z]{8}$"
        })
    }
}
