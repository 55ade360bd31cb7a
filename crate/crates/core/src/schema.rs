//! JSON schemas of every document the HTTP API accepts or returns.

use std::collections::BTreeMap;

use schemars::{schema_for, JsonSchema, Schema};
use serde_json::Value;

use crate::consensus::{SimulationConfig, SimulationReport};
use crate::envelope::Envelope;
use crate::ledger::Block;
use crate::records::{ConfirmationBody, CultivatorRecord, MakerRecord, MerchantRecord, QrIssuanceBody};
use crate::registry::StakeholderIdentity;
use crate::trace::ProvenanceReport;

/// The `HT1` QR payload string.
pub struct QrPayloadString;

impl JsonSchema for QrPayloadString {
    fn schema_name() -> std::borrow::Cow<'static, str> {
        "QrPayload".into()
    }

    fn json_schema(_: &mut schemars::SchemaGenerator) -> Schema {
        schemars::json_schema!({
            "type": "string",
            "pattern": "^HT1\\|MER-[0-9A-HJKMNP-TV-Z]{8}\\|[0-9a-f]{8}$"
        })
    }
}

/// Schema documents by name, as served under `/api/v1/schemas/{name}`.
pub fn published() -> BTreeMap<&'static str, Value> {
    fn doc(s: Schema) -> Value {
        s.to_value()
    }
    BTreeMap::from([
        ("envelope", doc(schema_for!(Envelope))),
        ("cultivator_record", doc(schema_for!(CultivatorRecord))),
        ("maker_record", doc(schema_for!(MakerRecord))),
        ("merchant_record", doc(schema_for!(MerchantRecord))),
        ("confirmation_body", doc(schema_for!(ConfirmationBody))),
        ("qr_issuance_body", doc(schema_for!(QrIssuanceBody))),
        ("stakeholder_identity", doc(schema_for!(StakeholderIdentity))),
        ("block", doc(schema_for!(Block))),
        ("provenance_report", doc(schema_for!(ProvenanceReport))),
        ("qr_payload", doc(schema_for!(QrPayloadString))),
        ("simulation_config", doc(schema_for!(SimulationConfig))),
        ("simulation_report", doc(schema_for!(SimulationReport))),
    ])
}
