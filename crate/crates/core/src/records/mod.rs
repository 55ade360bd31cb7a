//! Staged supply-chain records (cultivator → maker → merchant), their
//! validation against the committed chain, and downstream confirmations.

mod id;
mod index;
mod types;

pub mod fixtures;

pub use id::{Stage, TraceIdError, TraceabilityId, CROCKFORD};
pub use index::{CommittedConfirmation, CommittedRecord, RecordIndex};
pub use types::*;

use chrono::{DateTime, NaiveDate};
use rand::Rng;

use crate::envelope::{EntryKind, Envelope, LedgerEntry};
use crate::pool::PendingPool;
use crate::registry::{Action, StakeholderRegistry};

pub(crate) use index::stage_kind;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("envelope signature missing or invalid")]
    BadSignature,
    #[error("validation failed on `{field}`: {detail}")]
    ValidationFailed { field: String, detail: String },
    #[error("an identical body was already submitted by another stakeholder")]
    DuplicateSubmission,
    #[error("reference `{0}` does not resolve to a committed record")]
    UnresolvedReference(String),
    #[error("unknown subject `{0}`")]
    UnknownSubject(String),
    #[error("caller's role does not confirm records of this stage")]
    WrongStage,
    #[error("record already confirmed by this stakeholder")]
    AlreadyConfirmed,
}

impl From<FieldError> for RecordError {
    fn from(e: FieldError) -> Self {
        RecordError::ValidationFailed { field: e.field, detail: e.detail }
    }
}

fn failed(field: &str, detail: impl Into<String>) -> RecordError {
    RecordError::ValidationFailed { field: field.to_string(), detail: detail.into() }
}

/// UTC calendar date of a Unix timestamp.
pub fn utc_date(unix_seconds: u64) -> NaiveDate {
    DateTime::from_timestamp(unix_seconds.min(i64::MAX as u64) as i64, 0)
        .map(|dt| dt.date_naive())
        .unwrap_or(NaiveDate::MAX)
}

/// Read-only state an admission decision depends on.
#[derive(Clone, Copy)]
pub struct AdmissionContext<'a> {
    pub registry: &'a StakeholderRegistry,
    pub index: &'a RecordIndex,
    pub pool: &'a PendingPool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Admitted {
    /// New entry with a fresh trace id, ready for the pending pool.
    New(LedgerEntry),
    /// Byte-identical resubmission: the id already assigned.
    Existing(TraceabilityId),
}

impl Admitted {
    pub fn trace_id(&self) -> TraceabilityId {
        match self {
            Admitted::New(e) => e.trace_id.expect("record entries carry a trace id"),
            Admitted::Existing(id) => *id,
        }
    }
}

fn check_caller(ctx: &AdmissionContext<'_>, envelope: &Envelope, action: Action) -> Result<(), RecordError> {
    if let crate::registry::Decision::Deny { reason } = ctx.registry.authorize(Some(&envelope.stakeholder_id), action) {
        return Err(RecordError::Unauthorized(reason));
    }
    match ctx.registry.verify_envelope_signature(envelope) {
        Ok(true) => Ok(()),
        _ => Err(RecordError::BadSignature),
    }
}

/// Validates a stage-record envelope against the committed chain and pending
/// pool. The caller pushes `Admitted::New` entries into the pool.
///
/// Check order: envelope type, permission, signature, resubmission,
/// field rules, reference resolution, temporal ordering.
pub fn admit_record<R: Rng + ?Sized>(
    ctx: &AdmissionContext<'_>,
    stage: Stage,
    envelope: Envelope,
    rng: &mut R,
) -> Result<Admitted, RecordError> {
    let kind = stage_kind(stage);
    if envelope.kind != kind {
        return Err(failed("type", format!("expected {kind:?} envelope")));
    }
    check_caller(ctx, &envelope, Action::submit_for(stage))?;

    let digest = envelope.body_digest();
    if let Some(existing) = ctx.index.trace_id_for_digest(&digest).filter(|id| id.stage() == stage) {
        let submitter = &ctx.index.get(&existing).expect("digest maps to committed record").submitted_by;
        return if *submitter == envelope.stakeholder_id {
            Ok(Admitted::Existing(existing))
        } else {
            Err(RecordError::DuplicateSubmission)
        };
    }
    if let Some(pending) = ctx.pool.lookup(kind, &digest) {
        return match pending.trace_id {
            Some(id) if pending.submitter == envelope.stakeholder_id => Ok(Admitted::Existing(id)),
            _ => Err(RecordError::DuplicateSubmission),
        };
    }

    match RecordBody::parse(stage, &envelope.body)? {
        RecordBody::Cultivator(rec) => rec.validate()?,
        RecordBody::Maker(rec) => {
            let refs = rec.validate()?;
            for r in &refs {
                let parent = ctx.index.get(r).ok_or_else(|| RecordError::UnresolvedReference(r.to_string()))?;
                let parent_at = parent.body.recorded_at();
                if rec.production_date < utc_date(parent_at) {
                    return Err(failed("production_date", format!("precedes {r} recorded date")));
                }
                if rec.recorded_at < parent_at {
                    return Err(failed("recorded_at", format!("precedes {r} recorded_at")));
                }
            }
        }
        RecordBody::Merchant(rec) => {
            let maker_ref = rec.validate()?;
            let parent = ctx
                .index
                .get(&maker_ref)
                .ok_or_else(|| RecordError::UnresolvedReference(maker_ref.to_string()))?;
            let RecordBody::Maker(maker) = &parent.body else {
                return Err(failed("maker_ref", "does not name a maker record"));
            };
            if rec.purchase_date < maker.production_date {
                return Err(failed("purchase_date", "precedes the maker's production_date"));
            }
            if rec.recorded_at < maker.recorded_at {
                return Err(failed("recorded_at", "precedes the maker's recorded_at"));
            }
        }
    }

    let trace_id = TraceabilityId::generate(stage, rng, |id| ctx.index.contains(id) || ctx.pool.holds_id(id));
    Ok(Admitted::New(LedgerEntry::new(envelope, Some(trace_id))))
}

/// Validates a confirmation envelope. `subject` is the id the caller
/// addressed (e.g. the URL path); it must match the body.
pub fn admit_confirmation(
    ctx: &AdmissionContext<'_>,
    subject: Option<&TraceabilityId>,
    envelope: Envelope,
) -> Result<(LedgerEntry, Confirmation), RecordError> {
    if envelope.kind != EntryKind::Confirmation {
        return Err(failed("type", "expected Confirmation envelope"));
    }
    let body: ConfirmationBody =
        serde_json::from_value(envelope.body.clone()).map_err(|e| failed("body", e.to_string()))?;
    let subject_id: TraceabilityId = body
        .subject_trace_id
        .parse()
        .map_err(|e: TraceIdError| failed("subject_trace_id", e.to_string()))?;
    if subject.is_some_and(|s| *s != subject_id) {
        return Err(failed("subject_trace_id", "does not match the addressed record"));
    }
    if !ctx.index.contains(&subject_id) {
        return Err(RecordError::UnknownSubject(subject_id.to_string()));
    }

    let caller = &envelope.stakeholder_id;
    let action = Action::ConfirmRecord(subject_id.stage());
    if let crate::registry::Decision::Deny { reason } = ctx.registry.authorize(Some(caller), action) {
        let confirms_something = [crate::records::Stage::Cultivator, Stage::Maker]
            .into_iter()
            .any(|s| ctx.registry.authorize(Some(caller), Action::ConfirmRecord(s)).is_allow());
        return Err(if confirms_something { RecordError::WrongStage } else { RecordError::Unauthorized(reason) });
    }
    if !matches!(ctx.registry.verify_envelope_signature(&envelope), Ok(true)) {
        return Err(RecordError::BadSignature);
    }
    if ctx.index.is_confirmed_by(&subject_id, caller) || ctx.pool.has_confirmation(&subject_id, caller) {
        return Err(RecordError::AlreadyConfirmed);
    }

    let confirmation = Confirmation {
        subject_trace_id: subject_id,
        confirmer_id: caller.clone(),
        verdict: body.verdict,
        recorded_at: body.recorded_at,
    };
    Ok((LedgerEntry::new(envelope, None), confirmation))
}
