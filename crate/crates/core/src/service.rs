//! Single-writer facade over chain, index, registry and pending pool.
//!
//! Every mutation goes through `&mut self`; the node wraps one instance in a
//! lock so readers only ever see whole committed blocks.

use std::collections::{BTreeMap, HashSet};

use chrono::NaiveDate;
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde_json::json;

use crate::consensus::{ConsensusError, ProposalFault, RoundHarness, RoundOutcome, StakeRegistry};
use crate::crypto::{PublicKey, SecretKey};
use crate::envelope::{EntryKind, Envelope, LedgerEntry};
use crate::ledger::{Block, BlockFault, Chain, ValidationResult};
use crate::pool::PendingPool;
use crate::qr::{self, QrError, QrPayload};
use crate::records::{
    admit_confirmation, admit_record, stage_kind, AdmissionContext, Admitted, Confirmation, ConfirmationBody,
    QrIssuanceBody, RecordBody, RecordError, RecordIndex, Stage, TraceabilityId,
};
use crate::registry::{Action, Decision, RegistryError, StakeholderIdentity, StakeholderRegistry};
use crate::trace::{self, ProvenanceReport, TraceError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Qr(#[from] QrError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error("bad request on `{field}`: {detail}")]
    BadRequest { field: String, detail: String },
}

fn bad_request(field: &str, detail: impl Into<String>) -> ServiceError {
    ServiceError::BadRequest { field: field.to_string(), detail: detail.into() }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub admin_id: String,
    pub admin_key: PublicKey,
    pub stakes: StakeRegistry,
    /// Signing keys of the validators this process simulates.
    pub validator_keys: BTreeMap<String, SecretKey>,
    pub batch_size: usize,
    /// Fixed seed for trace-id generation; OS entropy when absent.
    pub rng_seed: Option<u64>,
}

pub struct TraceabilityService {
    chain: Chain,
    index: RecordIndex,
    registry: StakeholderRegistry,
    pool: PendingPool,
    harness: RoundHarness,
    rng: StdRng,
    next_round: u64,
    admin_id: String,
    admin_key: PublicKey,
}

/// Registry state implied by the committed chain: the bootstrap admin plus
/// every committed registration that was valid when applied.
pub fn rebuild_registry(index: &RecordIndex, admin_id: &str, admin_key: PublicKey) -> StakeholderRegistry {
    let mut registry = StakeholderRegistry::bootstrap(admin_id, admin_key);
    for (caller, identity) in index.registrations() {
        let _ = registry.register_stakeholder(caller, identity.clone());
    }
    registry
}

/// Independent re-validation of a proposed batch against the committed state,
/// as every honest validator performs it.
pub fn recheck_batch(registry: &StakeholderRegistry, index: &RecordIndex, entries: &[LedgerEntry]) -> Result<(), String> {
    let mut batch_ids = HashSet::new();
    for (i, entry) in entries.iter().enumerate() {
        let env = &entry.envelope;
        let fail = |why: &str| Err(format!("entry {i}: {why}"));
        if env.kind == EntryKind::SimulatedRecord {
            continue;
        }
        if !matches!(registry.verify_envelope_signature(env), Ok(true)) {
            return fail("signature does not verify");
        }
        match env.kind {
            EntryKind::CultivatorRecord | EntryKind::MakerRecord | EntryKind::MerchantRecord => {
                let Some(id) = entry.trace_id else { return fail("record without trace id") };
                if stage_kind(id.stage()) != env.kind {
                    return fail("trace id prefix does not match record type");
                }
                if index.contains(&id) || !batch_ids.insert(id) {
                    return fail("trace id already used");
                }
                if !registry.authorize(Some(&env.stakeholder_id), Action::submit_for(id.stage())).is_allow() {
                    return fail("submitter lacks permission");
                }
                let body = match RecordBody::parse(id.stage(), &env.body) {
                    Ok(b) => b,
                    Err(e) => return fail(&e.to_string()),
                };
                let refs_ok = body
                    .upstream_refs()
                    .iter()
                    .all(|r| r.parse::<TraceabilityId>().is_ok_and(|r| index.contains(&r)));
                if !refs_ok {
                    return fail("unresolved reference");
                }
            }
            EntryKind::Confirmation => {
                let Ok(body) = serde_json::from_value::<ConfirmationBody>(env.body.clone()) else {
                    return fail("malformed confirmation");
                };
                let Ok(subject) = body.subject_trace_id.parse::<TraceabilityId>() else {
                    return fail("malformed subject");
                };
                if !index.contains(&subject)
                    || !registry.authorize(Some(&env.stakeholder_id), Action::ConfirmRecord(subject.stage())).is_allow()
                {
                    return fail("confirmation not admissible");
                }
            }
            EntryKind::QrIssuance => {
                if !registry.authorize(Some(&env.stakeholder_id), Action::IssueQr).is_allow() {
                    return fail("issuer lacks permission");
                }
            }
            EntryKind::StakeholderRegistration => {
                if !registry.authorize(Some(&env.stakeholder_id), Action::RegisterStakeholder).is_allow() {
                    return fail("registrar lacks permission");
                }
            }
            EntryKind::SimulatedRecord => unreachable!(),
        }
    }
    Ok(())
}

impl TraceabilityService {
    pub fn new(config: ServiceConfig) -> Self {
        Self::from_chain(Chain::new(), config)
    }

    /// Resumes from an already validated chain.
    pub fn from_chain(chain: Chain, config: ServiceConfig) -> Self {
        let index = RecordIndex::from_chain(&chain);
        let registry = rebuild_registry(&index, &config.admin_id, config.admin_key);
        let rng = match config.rng_seed {
            Some(seed) => StdRng::seed_from_u64(seed),
            None => StdRng::from_os_rng(),
        };
        let next_round = chain.tip_height() + 1;
        TraceabilityService {
            chain,
            index,
            registry,
            pool: PendingPool::new(),
            harness: RoundHarness::new(config.stakes, config.validator_keys, config.batch_size),
            rng,
            next_round,
            admin_id: config.admin_id,
            admin_key: config.admin_key,
        }
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn index(&self) -> &RecordIndex {
        &self.index
    }

    pub fn registry(&self) -> &StakeholderRegistry {
        &self.registry
    }

    pub fn stakes(&self) -> &StakeRegistry {
        &self.harness.registry
    }

    pub fn pending_len(&self) -> usize {
        self.pool.len()
    }

    pub fn batch_size(&self) -> usize {
        self.harness.batch_size
    }

    pub fn next_round(&self) -> u64 {
        self.next_round
    }

    pub fn admin_id(&self) -> &str {
        &self.admin_id
    }

    pub fn admin_key(&self) -> PublicKey {
        self.admin_key
    }

    fn ctx(&self) -> AdmissionContext<'_> {
        AdmissionContext { registry: &self.registry, index: &self.index, pool: &self.pool }
    }

    /// Admits a stage record into the pending pool and returns its trace id.
    /// Resubmitting an identical body returns the id already assigned.
    pub fn submit_record(&mut self, stage: Stage, envelope: Envelope) -> Result<TraceabilityId, ServiceError> {
        let ctx = AdmissionContext { registry: &self.registry, index: &self.index, pool: &self.pool };
        match admit_record(&ctx, stage, envelope, &mut self.rng)? {
            Admitted::Existing(id) => Ok(id),
            Admitted::New(entry) => {
                let id = entry.trace_id.expect("admitted records carry a trace id");
                self.pool.push(entry).expect("admission rules out pending duplicates");
                Ok(id)
            }
        }
    }

    pub fn confirm_record(
        &mut self,
        subject: Option<&TraceabilityId>,
        envelope: Envelope,
    ) -> Result<Confirmation, ServiceError> {
        let (entry, confirmation) = admit_confirmation(&self.ctx(), subject, envelope)?;
        self.pool.push(entry).map_err(|_| RecordError::AlreadyConfirmed)?;
        Ok(confirmation)
    }

    /// Registers a stakeholder from an admin-signed `stakeholder_registration`
    /// envelope whose body is the identity. The registry changes immediately;
    /// the envelope is committed by a later round.
    pub fn register_stakeholder(&mut self, envelope: Envelope) -> Result<String, ServiceError> {
        if envelope.kind != EntryKind::StakeholderRegistration {
            return Err(bad_request("type", "expected stakeholder_registration envelope"));
        }
        let caller = envelope.stakeholder_id.clone();
        if let Decision::Deny { reason } = self.registry.authorize(Some(&caller), Action::RegisterStakeholder) {
            return Err(RecordError::Unauthorized(reason).into());
        }
        if !matches!(self.registry.verify_envelope_signature(&envelope), Ok(true)) {
            return Err(RecordError::BadSignature.into());
        }
        let identity: StakeholderIdentity =
            serde_json::from_value(envelope.body.clone()).map_err(|e| bad_request("body", e.to_string()))?;
        self.registry.check_registration(&caller, &identity)?;
        let id = self.registry.register_stakeholder(&caller, identity)?;
        self.pool
            .push(LedgerEntry::new(envelope, None))
            .expect("a fresh id cannot collide with a pending registration");
        Ok(id)
    }

    /// Issues the QR payload for a complete merchant record and enqueues the
    /// caller-signed issuance event. `envelope.body.trace_id` must name the
    /// same record.
    pub fn issue_qr(&mut self, merchant_id: &str, envelope: Envelope, as_of: NaiveDate) -> Result<QrPayload, ServiceError> {
        if envelope.kind != EntryKind::QrIssuance {
            return Err(bad_request("type", "expected qr_issuance envelope"));
        }
        let caller = envelope.stakeholder_id.clone();
        if let Decision::Deny { reason } = self.registry.authorize(Some(&caller), Action::IssueQr) {
            return Err(TraceError::Unauthorized(reason).into());
        }
        if !matches!(self.registry.verify_envelope_signature(&envelope), Ok(true)) {
            return Err(RecordError::BadSignature.into());
        }
        let body: QrIssuanceBody =
            serde_json::from_value(envelope.body.clone()).map_err(|e| bad_request("body", e.to_string()))?;
        if body.trace_id != merchant_id {
            return Err(bad_request("trace_id", "does not match the addressed product"));
        }
        let payload = trace::issue_qr(&self.index, &self.registry, merchant_id, Some(&caller), as_of)?;
        // an identical pending issuance already records this event
        let _ = self.pool.push(LedgerEntry::new(envelope, None));
        Ok(payload)
    }

    pub fn trace(&self, trace_id: &str, as_of: NaiveDate) -> Result<ProvenanceReport, ServiceError> {
        Ok(trace::trace(&self.index, trace_id, as_of)?)
    }

    pub fn verify_payload(&self, text: &str, as_of: NaiveDate) -> Result<ProvenanceReport, ServiceError> {
        let payload = qr::parse_payload(text)?;
        Ok(qr::verify_scanned(&self.index, &payload, as_of)?)
    }

    pub fn verify_image(&self, png: &[u8], as_of: NaiveDate) -> Result<ProvenanceReport, ServiceError> {
        let text = qr::decode_qr(png)?;
        self.verify_payload(&text, as_of)
    }

    pub fn validate(&self) -> ValidationResult {
        self.chain.validate(&self.harness.registry)
    }

    /// Selects, proposes and votes on the next block without mutating state.
    /// Returns `None` when nothing is pending.
    pub fn propose_round(&self, now: u64) -> Result<Option<RoundOutcome>, ServiceError> {
        self.propose_round_with(now, ProposalFault::None)
    }

    pub fn propose_round_with(&self, now: u64, fault: ProposalFault) -> Result<Option<RoundOutcome>, ServiceError> {
        if self.pool.is_empty() {
            return Ok(None);
        }
        let pending = self.pool.peek_batch(self.harness.batch_size);
        let check = |entries: &[LedgerEntry]| recheck_batch(&self.registry, &self.index, entries);
        let outcome = self.harness.decide_round(&self.chain, &pending, self.next_round, now, &check, fault)?;
        Ok(Some(outcome))
    }

    /// Appends a block accepted by `propose_round`, indexes it and drains the
    /// committed entries from the pool.
    pub fn commit_block(&mut self, block: Block) -> Result<(), BlockFault> {
        let n = block.payload.len();
        let block = self.chain.append_block(block, &self.harness.registry)?.clone();
        self.index.apply_block(&block);
        self.pool.remove_front(n);
        self.next_round += 1;
        Ok(())
    }

    /// Records a rejected round so the next attempt uses a fresh seed.
    pub fn skip_round(&mut self) {
        self.next_round += 1;
    }

    /// Propose and, on acceptance, commit. For callers without a durability step.
    pub fn run_round(&mut self, now: u64) -> Result<Option<RoundOutcome>, ServiceError> {
        let Some(outcome) = self.propose_round(now)? else { return Ok(None) };
        match &outcome.block {
            Some(block) if outcome.is_committed() => {
                self.commit_block(block.clone()).expect("accepted proposals extend the tip");
            }
            _ => self.skip_round(),
        }
        Ok(Some(outcome))
    }

    /// Runs rounds until the pool is empty or a round is rejected.
    pub fn drain(&mut self, now: u64) -> Result<usize, ServiceError> {
        let mut committed = 0;
        while let Some(outcome) = self.run_round(now)? {
            if !outcome.is_committed() {
                break;
            }
            committed += 1;
        }
        Ok(committed)
    }
}

/// Builds a `qr_issuance` envelope body.
pub fn qr_issuance_body(trace_id: &str, requested_at: u64) -> serde_json::Value {
    json!({ "trace_id": trace_id, "requested_at": requested_at })
}

/// Builds a `confirmation` envelope body.
pub fn confirmation_body(subject: &str, recorded_at: u64) -> serde_json::Value {
    json!({ "subject_trace_id": subject, "verdict": "confirmed", "recorded_at": recorded_at })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::{RejectReason, RoundStatus, Validator};
    use crate::records::fixtures;
    use crate::registry::Role;
    use crate::trace::Verdict;

    const T0: u64 = 1_709_251_200;

    struct Fixture {
        svc: TraceabilityService,
        admin: SecretKey,
    }

    fn fixture() -> Fixture {
        let admin = SecretKey::from_label("admin");
        let validator_keys: BTreeMap<String, SecretKey> =
            ["v1", "v2", "v3"].iter().map(|id| (id.to_string(), SecretKey::from_label(id))).collect();
        let stakes = StakeRegistry::new(validator_keys.iter().enumerate().map(|(i, (id, k))| Validator {
            validator_id: id.clone(),
            public_key: k.public_key(),
            stake: i as u64 + 1,
        }))
        .unwrap();
        let svc = TraceabilityService::new(ServiceConfig {
            admin_id: "admin".into(),
            admin_key: admin.public_key(),
            stakes,
            validator_keys,
            batch_size: 10,
            rng_seed: Some(7),
        });
        Fixture { svc, admin }
    }

    impl Fixture {
        fn register(&mut self, id: &str, role: Role) -> SecretKey {
            let key = SecretKey::from_label(id);
            let identity = StakeholderIdentity {
                stakeholder_id: id.into(),
                role,
                public_key: key.public_key(),
                display_name: id.into(),
                contact: format!("{id}@example.org"),
            };
            let env = Envelope::signed(
                EntryKind::StakeholderRegistration,
                serde_json::to_value(identity).unwrap(),
                "admin",
                &self.admin,
            );
            self.svc.register_stakeholder(env).unwrap();
            key
        }
    }

    fn signed<T: serde::Serialize>(kind: EntryKind, body: &T, who: &str, key: &SecretKey) -> Envelope {
        Envelope::signed(kind, serde_json::to_value(body).unwrap(), who, key)
    }

    fn today() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 6, 1).unwrap()
    }

    #[test]
    fn fixture_flow_end_to_end() {
        let mut f = fixture();
        let farm = f.register("farm", Role::Cultivator);
        let plant = f.register("plant", Role::Maker);
        let shop = f.register("shop", Role::Merchant);

        let cul = f
            .svc
            .submit_record(Stage::Cultivator, signed(EntryKind::CultivatorRecord, &fixtures::poultry_farm(T0), "farm", &farm))
            .unwrap();
        assert_eq!(f.svc.drain(T0).unwrap(), 1);
        let d = NaiveDate::from_ymd_opt(2024, 3, 2).unwrap();
        let mak = f
            .svc
            .submit_record(Stage::Maker, signed(EntryKind::MakerRecord, &fixtures::maker(&[cul], d, T0 + 60), "plant", &plant))
            .unwrap();
        f.svc
            .confirm_record(Some(&cul), Envelope::signed(EntryKind::Confirmation, confirmation_body(&cul.to_string(), T0 + 60), "plant", &plant))
            .unwrap();
        f.svc.drain(T0 + 60).unwrap();
        let mer = f
            .svc
            .submit_record(Stage::Merchant, signed(EntryKind::MerchantRecord, &fixtures::merchant(mak, d, T0 + 120), "shop", &shop))
            .unwrap();
        f.svc
            .confirm_record(Some(&mak), Envelope::signed(EntryKind::Confirmation, confirmation_body(&mak.to_string(), T0 + 120), "shop", &shop))
            .unwrap();
        f.svc.drain(T0 + 120).unwrap();

        let qr_env = Envelope::signed(EntryKind::QrIssuance, qr_issuance_body(&mer.to_string(), T0 + 180), "shop", &shop);
        let payload = f.svc.issue_qr(&mer.to_string(), qr_env, today()).unwrap();
        f.svc.drain(T0 + 180).unwrap();
        assert_eq!(f.svc.index().qr_issued_at(&mer), Some(f.svc.chain().tip_height()));

        let png = qr::render_qr(&payload.to_string()).unwrap();
        let report = f.svc.verify_image(&png, today()).unwrap();
        assert_eq!(report.verdict, Verdict::Verified);
        assert_eq!(report.stages.len(), 3);
        assert_eq!(report.confirmations.len(), 2);
        assert!(f.svc.validate().is_ok());

        // the registry is reproducible from the committed chain alone
        let rebuilt = rebuild_registry(f.svc.index(), "admin", f.admin.public_key());
        assert_eq!(rebuilt.len(), f.svc.registry().len());
    }

    #[test]
    fn only_admin_registers() {
        let mut f = fixture();
        let shop = f.register("shop", Role::Merchant);
        let identity = json!({
            "stakeholder_id": "mallory", "role": "cultivator",
            "public_key": SecretKey::from_label("mallory").public_key().to_hex(),
            "display_name": "m", "contact": ""
        });
        let env = Envelope::signed(EntryKind::StakeholderRegistration, identity.clone(), "shop", &shop);
        assert!(matches!(f.svc.register_stakeholder(env), Err(ServiceError::Record(RecordError::Unauthorized(_)))));
        let forged = Envelope::signed(EntryKind::StakeholderRegistration, identity.clone(), "admin", &shop);
        assert_eq!(f.svc.register_stakeholder(forged), Err(RecordError::BadSignature.into()));
        f.register("mallory", Role::Cultivator);
        let again = Envelope::signed(EntryKind::StakeholderRegistration, identity, "admin", &f.admin);
        assert_eq!(f.svc.register_stakeholder(again), Err(RegistryError::DuplicateId("mallory".into()).into()));
    }

    #[test]
    fn issue_qr_requires_complete_merchant_record() {
        let mut f = fixture();
        let shop = f.register("shop", Role::Merchant);
        let consumer = f.register("eve", Role::Consumer);
        let env = Envelope::signed(EntryKind::QrIssuance, qr_issuance_body("MER-00000000", T0), "eve", &consumer);
        assert!(matches!(f.svc.issue_qr("MER-00000000", env, today()), Err(ServiceError::Trace(TraceError::Unauthorized(_)))));
        let env = Envelope::signed(EntryKind::QrIssuance, qr_issuance_body("MER-00000000", T0), "shop", &shop);
        assert!(matches!(f.svc.issue_qr("MER-00000000", env, today()), Err(ServiceError::Trace(TraceError::UnknownTraceId(_)))));
    }

    #[test]
    fn rejected_round_leaves_state_untouched() {
        let mut f = fixture();
        let farm = f.register("farm", Role::Cultivator);
        f.svc
            .submit_record(Stage::Cultivator, signed(EntryKind::CultivatorRecord, &fixtures::poultry_farm(T0), "farm", &farm))
            .unwrap();
        let pending = f.svc.pending_len();
        let out = f.svc.propose_round_with(T0, ProposalFault::WrongKey).unwrap().unwrap();
        assert_eq!(out.status, RoundStatus::Rejected { reason: RejectReason::BadSignature });
        assert_eq!(f.svc.chain().len(), 1);
        assert_eq!(f.svc.pending_len(), pending);
        assert_eq!(f.svc.propose_round(T0).unwrap().unwrap().status, RoundStatus::Committed);
    }

    #[test]
    fn recheck_rejects_forged_entries() {
        let mut f = fixture();
        let farm = f.register("farm", Role::Cultivator);
        f.svc.drain(T0).unwrap();
        let env = signed(EntryKind::CultivatorRecord, &fixtures::poultry_farm(T0), "farm", &farm);
        let id: TraceabilityId = "CUL-00000001".parse().unwrap();
        let ok = LedgerEntry::new(env.clone(), Some(id));
        assert!(recheck_batch(f.svc.registry(), f.svc.index(), std::slice::from_ref(&ok)).is_ok());
        assert!(recheck_batch(f.svc.registry(), f.svc.index(), &[ok.clone(), ok.clone()]).is_err());

        let mut tampered = ok.clone();
        tampered.envelope.body["batch_lot"] = json!("other");
        assert!(recheck_batch(f.svc.registry(), f.svc.index(), &[tampered]).is_err());

        let wrong_prefix = LedgerEntry::new(env, Some("MAK-00000001".parse().unwrap()));
        assert!(recheck_batch(f.svc.registry(), f.svc.index(), &[wrong_prefix]).is_err());
    }

    #[test]
    fn resumes_from_chain() {
        let mut f = fixture();
        let farm = f.register("farm", Role::Cultivator);
        let cul = f
            .svc
            .submit_record(Stage::Cultivator, signed(EntryKind::CultivatorRecord, &fixtures::poultry_farm(T0), "farm", &farm))
            .unwrap();
        f.svc.drain(T0).unwrap();
        let f2 = fixture();
        let config = ServiceConfig {
            admin_id: "admin".into(),
            admin_key: f.admin.public_key(),
            stakes: f.svc.stakes().clone(),
            validator_keys: BTreeMap::new(),
            batch_size: 10,
            rng_seed: None,
        };
        drop(f2);
        let resumed = TraceabilityService::from_chain(f.svc.chain().clone(), config);
        assert_eq!(resumed.chain().latest_block().hash, f.svc.chain().latest_block().hash);
        assert_eq!(resumed.registry().role_of("farm"), Some(Role::Cultivator));
        assert!(resumed.index().contains(&cul));
    }
}
