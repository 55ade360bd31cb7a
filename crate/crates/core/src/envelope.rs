//! Signed submission envelopes and the committed ledger entries that wrap them.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::{sha256_hex, value_to_canonical};
use crate::crypto::{PublicKey, SecretKey, Signature};
use crate::records::TraceabilityId;

/// The `type` field of an envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    CultivatorRecord,
    MakerRecord,
    MerchantRecord,
    Confirmation,
    QrIssuance,
    StakeholderRegistration,
    /// Opaque payload used by the consensus simulator.
    SimulatedRecord,
}

/// Wire form `{type, body, stakeholder_id, signature}`. The signature covers
/// the canonical bytes of `body` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: EntryKind,
    pub body: Value,
    pub stakeholder_id: String,
    /// Lowercase hex Ed25519 signature; empty when unsigned.
    pub signature: String,
}

impl Envelope {
    pub fn signed(kind: EntryKind, body: Value, stakeholder_id: impl Into<String>, key: &SecretKey) -> Self {
        let signature = key.sign(value_to_canonical(&body).as_bytes()).to_hex();
        Envelope { kind, body, stakeholder_id: stakeholder_id.into(), signature }
    }

    pub fn unsigned(kind: EntryKind, body: Value, stakeholder_id: impl Into<String>) -> Self {
        Envelope { kind, body, stakeholder_id: stakeholder_id.into(), signature: String::new() }
    }

    pub fn body_bytes(&self) -> String {
        value_to_canonical(&self.body)
    }

    /// Digest of the canonical body, used for idempotency and deduplication.
    pub fn body_digest(&self) -> String {
        sha256_hex(self.body_bytes())
    }

    /// True iff `signature` parses and verifies over the canonical body under `key`.
    pub fn signature_valid(&self, key: &PublicKey) -> bool {
        match self.signature.parse::<Signature>() {
            Ok(sig) => key.verify(self.body_bytes().as_bytes(), &sig),
            Err(_) => false,
        }
    }
}

/// One element of a block payload: the submitted envelope plus the trace id
/// the node assigned to it (record kinds only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LedgerEntry {
    pub envelope: Envelope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_id: Option<TraceabilityId>,
}

impl LedgerEntry {
    pub fn new(envelope: Envelope, trace_id: Option<TraceabilityId>) -> Self {
        LedgerEntry { envelope, trace_id }
    }
}
