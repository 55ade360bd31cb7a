use chrono::NaiveDate;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{Stage, TraceabilityId};

/// Cap on free-text fields, in bytes.
pub const MAX_TEXT_BYTES: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{field}: {detail}")]
pub struct FieldError {
    pub field: String,
    pub detail: String,
}

impl FieldError {
    pub fn new(field: &str, detail: impl Into<String>) -> Self {
        FieldError { field: field.to_string(), detail: detail.into() }
    }
}

fn text(field: &str, value: &str, required: bool) -> Result<(), FieldError> {
    if required && value.trim().is_empty() {
        return Err(FieldError::new(field, "must not be empty"));
    }
    if value.len() > MAX_TEXT_BYTES {
        return Err(FieldError::new(field, format!("exceeds {MAX_TEXT_BYTES} bytes")));
    }
    Ok(())
}

/// Parses a reference and checks its stage prefix.
pub fn parse_ref(field: &str, value: &str, expected: Stage) -> Result<TraceabilityId, FieldError> {
    let id: TraceabilityId = value
        .parse()
        .map_err(|e| FieldError::new(field, format!("`{value}`: {e}")))?;
    if id.stage() != expected {
        return Err(FieldError::new("stage_prefix", format!("`{value}` must be a {} id", expected.prefix())));
    }
    Ok(id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct HalalCertification {
    pub cert_number: String,
    pub issuing_body: String,
    pub valid_from: NaiveDate,
    pub valid_to: NaiveDate,
}

impl HalalCertification {
    pub fn validate(&self) -> Result<(), FieldError> {
        text("cert_number", &self.cert_number, true)?;
        text("issuing_body", &self.issuing_body, false)?;
        if self.valid_from > self.valid_to {
            return Err(FieldError::new("valid_from", "must not be after valid_to"));
        }
        Ok(())
    }

    pub fn valid_on(&self, date: NaiveDate) -> bool {
        !self.cert_number.trim().is_empty() && self.valid_from <= date && date <= self.valid_to
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Facility {
    pub name: String,
    /// Signed decimal degrees.
    pub latitude: f64,
    pub longitude: f64,
    pub manager_contact: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum MaterialCategory {
    Animal,
    Plant,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RawMaterial {
    pub category: MaterialCategory,
    /// e.g. "broiler chicken", "durum wheat"
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CultivatorRecord {
    pub facility: Facility,
    pub raw_material_type: RawMaterial,
    pub husbandry_practices: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slaughter_method: Option<String>,
    pub harvest_processing_description: String,
    pub certification: HalalCertification,
    pub batch_lot: String,
    pub recorded_at: u64,
}

impl CultivatorRecord {
    pub fn validate(&self) -> Result<(), FieldError> {
        let f = &self.facility;
        text("name", &f.name, true)?;
        if !(-90.0..=90.0).contains(&f.latitude) {
            return Err(FieldError::new("latitude", "must lie in [-90, 90]"));
        }
        if !(-180.0..=180.0).contains(&f.longitude) {
            return Err(FieldError::new("longitude", "must lie in [-180, 180]"));
        }
        text("manager_contact", &f.manager_contact, false)?;
        text("raw_material_type", &self.raw_material_type.name, true)?;
        text("husbandry_practices", &self.husbandry_practices, false)?;
        text("harvest_processing_description", &self.harvest_processing_description, false)?;
        let is_animal = self.raw_material_type.category == MaterialCategory::Animal;
        match (&self.slaughter_method, is_animal) {
            (None, true) => return Err(FieldError::new("slaughter_method", "required for animal raw material")),
            (Some(m), true) => text("slaughter_method", m, true)?,
            (Some(_), false) => return Err(FieldError::new("slaughter_method", "only allowed for animal raw material")),
            (None, false) => {}
        }
        self.certification.validate()?;
        text("batch_lot", &self.batch_lot, true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Ingredient {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cultivator_trace_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct QualityControl {
    pub notes: String,
    pub staff_halal_trained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MakerRecord {
    pub ingredients: Vec<Ingredient>,
    pub production_process_description: String,
    pub certification: HalalCertification,
    pub packaging_description: String,
    pub cultivator_refs: Vec<String>,
    pub production_date: NaiveDate,
    pub batch_number: String,
    pub quality_control: QualityControl,
    pub recorded_at: u64,
}

impl MakerRecord {
    /// Field-level checks; returns the parsed cultivator references.
    pub fn validate(&self) -> Result<Vec<TraceabilityId>, FieldError> {
        if self.cultivator_refs.is_empty() {
            return Err(FieldError::new("cultivator_refs", "at least one cultivator reference is required"));
        }
        let mut refs = Vec::with_capacity(self.cultivator_refs.len());
        for r in &self.cultivator_refs {
            let id = parse_ref("cultivator_refs", r, Stage::Cultivator)?;
            if refs.contains(&id) {
                return Err(FieldError::new("cultivator_refs", format!("`{r}` listed twice")));
            }
            refs.push(id);
        }
        if self.ingredients.is_empty() {
            return Err(FieldError::new("ingredients", "at least one ingredient is required"));
        }
        for ing in &self.ingredients {
            text("ingredients", &ing.name, true)?;
            if let Some(r) = &ing.cultivator_trace_ref {
                let id = parse_ref("cultivator_trace_ref", r, Stage::Cultivator)?;
                if !refs.contains(&id) {
                    return Err(FieldError::new("cultivator_trace_ref", format!("`{r}` is not in cultivator_refs")));
                }
            }
        }
        text("production_process_description", &self.production_process_description, false)?;
        text("packaging_description", &self.packaging_description, false)?;
        text("batch_number", &self.batch_number, true)?;
        text("quality_control", &self.quality_control.notes, false)?;
        self.certification.validate()?;
        Ok(refs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MerchantRecord {
    pub purchase_date: NaiveDate,
    pub invoice_number: String,
    pub supplier_contact: String,
    pub storage_conditions: String,
    pub storage_locations: Vec<String>,
    pub handling_procedures: String,
    pub certification: HalalCertification,
    pub maker_ref: String,
    pub recorded_at: u64,
}

impl MerchantRecord {
    pub fn validate(&self) -> Result<TraceabilityId, FieldError> {
        let maker = parse_ref("maker_ref", &self.maker_ref, Stage::Maker)?;
        text("invoice_number", &self.invoice_number, true)?;
        text("supplier_contact", &self.supplier_contact, false)?;
        text("storage_conditions", &self.storage_conditions, false)?;
        for loc in &self.storage_locations {
            text("storage_locations", loc, true)?;
        }
        text("handling_procedures", &self.handling_procedures, false)?;
        self.certification.validate()?;
        Ok(maker)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ConfirmationVerdict {
    Confirmed,
}

/// Envelope body of a downstream confirmation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ConfirmationBody {
    pub subject_trace_id: String,
    pub verdict: ConfirmationVerdict,
    pub recorded_at: u64,
}

/// A downstream stakeholder's attestation of an upstream record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Confirmation {
    pub subject_trace_id: TraceabilityId,
    pub confirmer_id: String,
    pub verdict: ConfirmationVerdict,
    pub recorded_at: u64,
}

/// Envelope body of a QR issuance event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct QrIssuanceBody {
    pub trace_id: String,
    pub requested_at: u64,
}

/// Parsed body of any stage record.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum RecordBody {
    Cultivator(CultivatorRecord),
    Maker(MakerRecord),
    Merchant(MerchantRecord),
}

impl RecordBody {
    pub fn stage(&self) -> Stage {
        match self {
            RecordBody::Cultivator(_) => Stage::Cultivator,
            RecordBody::Maker(_) => Stage::Maker,
            RecordBody::Merchant(_) => Stage::Merchant,
        }
    }

    pub fn recorded_at(&self) -> u64 {
        match self {
            RecordBody::Cultivator(r) => r.recorded_at,
            RecordBody::Maker(r) => r.recorded_at,
            RecordBody::Merchant(r) => r.recorded_at,
        }
    }

    pub fn certification(&self) -> &HalalCertification {
        match self {
            RecordBody::Cultivator(r) => &r.certification,
            RecordBody::Maker(r) => &r.certification,
            RecordBody::Merchant(r) => &r.certification,
        }
    }

    /// Raw upstream reference strings, as committed.
    pub fn upstream_refs(&self) -> Vec<&str> {
        match self {
            RecordBody::Cultivator(_) => Vec::new(),
            RecordBody::Maker(r) => r.cultivator_refs.iter().map(String::as_str).collect(),
            RecordBody::Merchant(r) => vec![r.maker_ref.as_str()],
        }
    }

    pub fn parse(stage: Stage, body: &serde_json::Value) -> Result<RecordBody, FieldError> {
        let err = |e: serde_json::Error| FieldError::new("body", e.to_string());
        Ok(match stage {
            Stage::Cultivator => RecordBody::Cultivator(serde_json::from_value(body.clone()).map_err(err)?),
            Stage::Maker => RecordBody::Maker(serde_json::from_value(body.clone()).map_err(err)?),
            Stage::Merchant => RecordBody::Merchant(serde_json::from_value(body.clone()).map_err(err)?),
        })
    }
}
