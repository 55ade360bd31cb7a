//! Provenance assembly: from any trace id, collect every committed record
//! upstream (ancestors) and downstream (descendants), then run the
//! verification checks that decide the report verdict.

use std::collections::{BTreeSet, VecDeque};

use chrono::NaiveDate;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::par;
use crate::qr::{integrity_tag, QrPayload};
use crate::records::{utc_date, CommittedRecord, RecordBody, RecordIndex, Stage, TraceabilityId};
use crate::registry::{Action, Decision, StakeholderRegistry};

pub const REPORT_VERSION: u32 = 1;

pub const CHECK_STAGES: &str = "stages_complete";
pub const CHECK_CERTIFICATES: &str = "certifications_valid";
pub const CHECK_TEMPORAL: &str = "temporal_coherence";
pub const CHECK_REFERENCES: &str = "referential_integrity";
pub const CHECK_CONFIRMATIONS: &str = "confirmations_present";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Check {
    pub check_name: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Verified,
    Incomplete,
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct StageEntry {
    pub stage: Stage,
    pub trace_id: TraceabilityId,
    pub block_height: u64,
    pub submitted_by: String,
    pub record: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ConfirmationEntry {
    pub subject_trace_id: TraceabilityId,
    pub confirmer_id: String,
    pub recorded_at: u64,
    pub block_height: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ProvenanceReport {
    pub report_version: u32,
    pub query_id: TraceabilityId,
    /// Date certificate validity was evaluated against.
    pub as_of: NaiveDate,
    pub stages: Vec<StageEntry>,
    pub confirmations: Vec<ConfirmationEntry>,
    pub checks: Vec<Check>,
    pub verdict: Verdict,
}

impl ProvenanceReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.check_name == name)
    }

    pub fn trace_ids(&self) -> BTreeSet<TraceabilityId> {
        self.stages.iter().map(|s| s.trace_id).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("unknown trace id `{0}`")]
    UnknownTraceId(String),
    #[error("malformed trace id `{0}`")]
    MalformedId(String),
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("provenance of `{0}` is incomplete")]
    IncompleteProvenance(String),
}

fn parents(record: &CommittedRecord) -> impl Iterator<Item = TraceabilityId> + '_ {
    record.body.upstream_refs().into_iter().filter_map(|r| r.parse().ok())
}

/// Ancestors ∪ descendants ∪ {start}, restricted to committed records.
pub fn closure(index: &RecordIndex, start: TraceabilityId) -> BTreeSet<TraceabilityId> {
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(id) = queue.pop_front() {
        if let Some(rec) = index.get(&id) {
            for p in parents(rec) {
                if index.contains(&p) && seen.insert(p) {
                    queue.push_back(p);
                }
            }
        }
    }
    let mut queue = VecDeque::from([start]);
    while let Some(id) = queue.pop_front() {
        for &child in index.downstream_of(&id) {
            if seen.insert(child) {
                queue.push_back(child);
            }
        }
    }
    seen
}

/// Builds the provenance report for `trace_id` as of `as_of`.
pub fn trace(index: &RecordIndex, trace_id: &str, as_of: NaiveDate) -> Result<ProvenanceReport, TraceError> {
    let id: TraceabilityId = trace_id.parse().map_err(|_| TraceError::MalformedId(trace_id.to_string()))?;
    if !index.contains(&id) {
        return Err(TraceError::UnknownTraceId(trace_id.to_string()));
    }
    let members = closure(index, id);
    let mut records: Vec<&CommittedRecord> = members.iter().filter_map(|m| index.get(m)).collect();
    records.sort_by_key(|r| (r.trace_id.stage(), r.block_height, r.trace_id));

    let checks = vec![
        check_stages(index, &records),
        check_certificates(&records, as_of),
        check_temporal(index, &records),
        check_references(index, &records),
        check_confirmations(index, &records),
    ];
    let failed = |name: &str| checks.iter().any(|c| c.check_name == name && c.status == CheckStatus::Fail);
    let verdict = if failed(CHECK_CERTIFICATES) || failed(CHECK_TEMPORAL) || failed(CHECK_REFERENCES) {
        Verdict::Inconsistent
    } else if failed(CHECK_STAGES) {
        Verdict::Incomplete
    } else {
        Verdict::Verified
    };

    let mut confirmations: Vec<ConfirmationEntry> = records
        .iter()
        .flat_map(|r| index.confirmations_of(&r.trace_id))
        .map(|c| ConfirmationEntry {
            subject_trace_id: c.confirmation.subject_trace_id,
            confirmer_id: c.confirmation.confirmer_id.clone(),
            recorded_at: c.confirmation.recorded_at,
            block_height: c.block_height,
        })
        .collect();
    confirmations.sort_by(|a, b| {
        (a.block_height, a.subject_trace_id, &a.confirmer_id).cmp(&(b.block_height, b.subject_trace_id, &b.confirmer_id))
    });

    Ok(ProvenanceReport {
        report_version: REPORT_VERSION,
        query_id: id,
        as_of,
        stages: records
            .iter()
            .map(|r| StageEntry {
                stage: r.trace_id.stage(),
                trace_id: r.trace_id,
                block_height: r.block_height,
                submitted_by: r.submitted_by.clone(),
                record: serde_json::to_value(&r.body).expect("record bodies serialize"),
            })
            .collect(),
        confirmations,
        checks,
        verdict,
    })
}

/// Traces many ids against one index snapshot (in parallel with the
/// `parallel` feature). Output order follows `ids`.
pub fn trace_many(index: &RecordIndex, ids: &[String], as_of: NaiveDate) -> Vec<Result<ProvenanceReport, TraceError>> {
    par::map(ids, |id| trace(index, id, as_of))
}

fn check(name: &str, status: CheckStatus, detail: impl Into<String>) -> Check {
    Check { check_name: name.to_string(), status, detail: detail.into() }
}

fn check_stages(index: &RecordIndex, records: &[&CommittedRecord]) -> Check {
    let members: BTreeSet<TraceabilityId> = records.iter().map(|r| r.trace_id).collect();
    let path = records.iter().find_map(|mer| {
        let RecordBody::Merchant(m) = &mer.body else { return None };
        let mak_id: TraceabilityId = m.maker_ref.parse().ok()?;
        let mak = members.contains(&mak_id).then(|| index.get(&mak_id)).flatten()?;
        let cul_id = parents(mak).find(|c| c.stage() == Stage::Cultivator && members.contains(c))?;
        Some((cul_id, mak_id, mer.trace_id))
    });
    match path {
        Some((c, k, m)) => check(CHECK_STAGES, CheckStatus::Pass, format!("{c} -> {k} -> {m}")),
        None => {
            let missing: Vec<&str> = Stage::ALL
                .iter()
                .filter(|s| !records.iter().any(|r| r.trace_id.stage() == **s))
                .map(|s| s.prefix())
                .collect();
            let detail = if missing.is_empty() {
                "no connected cultivator -> maker -> merchant path".to_string()
            } else {
                format!("missing stages: {}", missing.join(", "))
            };
            check(CHECK_STAGES, CheckStatus::Fail, detail)
        }
    }
}

fn check_certificates(records: &[&CommittedRecord], as_of: NaiveDate) -> Check {
    let bad: Vec<String> = records
        .iter()
        .filter(|r| !r.body.certification().valid_on(as_of))
        .map(|r| r.trace_id.to_string())
        .collect();
    if bad.is_empty() {
        check(CHECK_CERTIFICATES, CheckStatus::Pass, format!("all certificates valid on {as_of}"))
    } else {
        check(CHECK_CERTIFICATES, CheckStatus::Fail, format!("invalid or expired on {as_of}: {}", bad.join(", ")))
    }
}

fn check_temporal(index: &RecordIndex, records: &[&CommittedRecord]) -> Check {
    let mut problems = Vec::new();
    for child in records {
        for pid in parents(child) {
            let Some(parent) = index.get(&pid) else { continue };
            if child.body.recorded_at() < parent.body.recorded_at() {
                problems.push(format!("{} recorded before {}", child.trace_id, pid));
            }
            match (&child.body, &parent.body) {
                (RecordBody::Maker(m), RecordBody::Cultivator(c)) if m.production_date < utc_date(c.recorded_at) => {
                    problems.push(format!("{} produced before {} was recorded", child.trace_id, pid));
                }
                (RecordBody::Merchant(m), RecordBody::Maker(k)) if m.purchase_date < k.production_date => {
                    problems.push(format!("{} purchased before {} was produced", child.trace_id, pid));
                }
                _ => {}
            }
        }
    }
    if problems.is_empty() {
        check(CHECK_TEMPORAL, CheckStatus::Pass, "dates non-decreasing along every path")
    } else {
        check(CHECK_TEMPORAL, CheckStatus::Fail, problems.join("; "))
    }
}

fn check_references(index: &RecordIndex, records: &[&CommittedRecord]) -> Check {
    let mut problems = Vec::new();
    for rec in records {
        let expected = match rec.trace_id.stage() {
            Stage::Cultivator => continue,
            Stage::Maker => Stage::Cultivator,
            Stage::Merchant => Stage::Maker,
        };
        for raw in rec.body.upstream_refs() {
            match raw.parse::<TraceabilityId>() {
                Ok(id) if id.stage() == expected && index.contains(&id) => {}
                Ok(id) if id.stage() != expected => problems.push(format!("{} references {raw} of wrong stage", rec.trace_id)),
                _ => problems.push(format!("{} references unresolved {raw}", rec.trace_id)),
            }
        }
    }
    if problems.is_empty() {
        check(CHECK_REFERENCES, CheckStatus::Pass, "every reference resolves")
    } else {
        check(CHECK_REFERENCES, CheckStatus::Fail, problems.join("; "))
    }
}

fn check_confirmations(index: &RecordIndex, records: &[&CommittedRecord]) -> Check {
    let unconfirmed: Vec<String> = records
        .iter()
        .filter(|r| r.trace_id.stage() != Stage::Merchant && index.confirmations_of(&r.trace_id).is_empty())
        .map(|r| r.trace_id.to_string())
        .collect();
    if unconfirmed.is_empty() {
        check(CHECK_CONFIRMATIONS, CheckStatus::Pass, "every upstream record confirmed downstream")
    } else {
        check(CHECK_CONFIRMATIONS, CheckStatus::Warn, format!("unconfirmed: {}", unconfirmed.join(", ")))
    }
}

/// Issues the QR payload for a merchant record whose provenance covers all
/// three stages.
pub fn issue_qr(
    index: &RecordIndex,
    registry: &StakeholderRegistry,
    merchant_trace_id: &str,
    caller: Option<&str>,
    as_of: NaiveDate,
) -> Result<QrPayload, TraceError> {
    if let Decision::Deny { reason } = registry.authorize(caller, Action::IssueQr) {
        return Err(TraceError::Unauthorized(reason));
    }
    let report = trace(index, merchant_trace_id, as_of)?;
    if report.query_id.stage() != Stage::Merchant {
        return Err(TraceError::UnknownTraceId(format!("{merchant_trace_id} is not a merchant record")));
    }
    if report.check(CHECK_STAGES).map(|c| c.status) != Some(CheckStatus::Pass) {
        return Err(TraceError::IncompleteProvenance(merchant_trace_id.to_string()));
    }
    let record = index.get(&report.query_id).expect("traced record is committed");
    let block_hash = index.block_hash(record.block_height).expect("committing block indexed");
    Ok(QrPayload::new(report.query_id, integrity_tag(&report.query_id, block_hash)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SecretKey;
    use crate::envelope::{EntryKind, Envelope, LedgerEntry};
    use crate::ledger::{Block, Chain};
    use crate::records::fixtures::{self, fixture_validator_key, random_supply_chain, FIXTURE_VALIDATOR};
    use crate::records::stage_kind;
    use crate::registry::{Role, StakeholderIdentity};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use serde_json::json;
    use std::collections::BTreeMap;

    const T0: u64 = 1_709_251_200;

    fn id(s: &str) -> TraceabilityId {
        s.parse().unwrap()
    }

    fn today() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 6, 1).unwrap()
    }

    fn record<T: serde::Serialize>(trace_id: &str, body: &T) -> LedgerEntry {
        let tid = id(trace_id);
        let env = Envelope::unsigned(stage_kind(tid.stage()), serde_json::to_value(body).unwrap(), "x");
        LedgerEntry::new(env, Some(tid))
    }

    fn confirmation(subject: &str, by: &str) -> LedgerEntry {
        let body = json!({"subject_trace_id": subject, "verdict": "confirmed", "recorded_at": T0 + 500});
        LedgerEntry::new(Envelope::unsigned(EntryKind::Confirmation, body, by), None)
    }

    fn index_of(blocks: Vec<Vec<LedgerEntry>>) -> RecordIndex {
        let key = fixture_validator_key();
        let mut chain = Chain::new();
        for (i, payload) in blocks.into_iter().enumerate() {
            let tip = chain.latest_block().clone();
            let block = Block::propose(&tip, T0 + i as u64, payload, FIXTURE_VALIDATOR, &key);
            chain.append_block(block, &BTreeMap::from([(FIXTURE_VALIDATOR.to_string(), key.public_key())])).unwrap();
        }
        RecordIndex::from_chain(&chain)
    }

    fn d(m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, m, day).unwrap()
    }

    /// CUL-0000000A <- MAK-0000000B <- MER-0000000C, confirmations on both upstream records.
    fn fixture_index() -> RecordIndex {
        index_of(vec![
            vec![record("CUL-0000000A", &fixtures::poultry_farm(T0))],
            vec![
                record("MAK-0000000B", &fixtures::maker(&[id("CUL-0000000A")], d(3, 2), T0 + 100)),
                confirmation("CUL-0000000A", "plant"),
            ],
            vec![
                record("MER-0000000C", &fixtures::merchant(id("MAK-0000000B"), d(3, 3), T0 + 200)),
                confirmation("MAK-0000000B", "shop"),
            ],
        ])
    }

    #[test]
    fn merchant_trace_is_verified() {
        let r = trace(&fixture_index(), "MER-0000000C", today()).unwrap();
        let ids: Vec<String> = r.stages.iter().map(|s| s.trace_id.to_string()).collect();
        assert_eq!(ids, ["CUL-0000000A", "MAK-0000000B", "MER-0000000C"]);
        assert_eq!(r.stages.iter().map(|s| s.block_height).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(r.verdict, Verdict::Verified);
        assert_eq!(r.confirmations.len(), 2);
        assert!(r.checks.iter().all(|c| c.status == CheckStatus::Pass), "{:?}", r.checks);
        assert_eq!(r.report_version, 1);
    }

    #[test]
    fn maker_trace_is_bidirectional() {
        let r = trace(&fixture_index(), "MAK-0000000B", today()).unwrap();
        assert_eq!(r.trace_ids(), [id("CUL-0000000A"), id("MAK-0000000B"), id("MER-0000000C")].into());
    }

    #[test]
    fn lone_cultivator_is_incomplete() {
        let idx = index_of(vec![vec![record("CUL-0000000A", &fixtures::poultry_farm(T0))]]);
        let r = trace(&idx, "CUL-0000000A", today()).unwrap();
        assert_eq!(r.verdict, Verdict::Incomplete);
        assert_eq!(r.check(CHECK_STAGES).unwrap().status, CheckStatus::Fail);
        assert_eq!(r.check(CHECK_CONFIRMATIONS).unwrap().status, CheckStatus::Warn);
    }

    #[test]
    fn expired_certificate_is_inconsistent() {
        let later = NaiveDate::from_ymd_opt(2031, 1, 1).unwrap();
        let r = trace(&fixture_index(), "MER-0000000C", later).unwrap();
        assert_eq!(r.check(CHECK_CERTIFICATES).unwrap().status, CheckStatus::Fail);
        assert_eq!(r.verdict, Verdict::Inconsistent);
    }

    #[test]
    fn temporal_violation_is_inconsistent() {
        // committed out of order (bypassing admission) to exercise the audit check
        let idx = index_of(vec![
            vec![record("CUL-0000000A", &fixtures::poultry_farm(T0 + 10 * 86_400))],
            vec![record("MAK-0000000B", &fixtures::maker(&[id("CUL-0000000A")], d(3, 2), T0 + 100))],
        ]);
        let r = trace(&idx, "MAK-0000000B", today()).unwrap();
        assert_eq!(r.check(CHECK_TEMPORAL).unwrap().status, CheckStatus::Fail);
        assert_eq!(r.verdict, Verdict::Inconsistent);
    }

    #[test]
    fn unresolved_reference_is_inconsistent() {
        let idx = index_of(vec![vec![record("MER-0000000C", &fixtures::merchant(id("MAK-0000000B"), d(3, 3), T0))]]);
        let r = trace(&idx, "MER-0000000C", today()).unwrap();
        assert_eq!(r.check(CHECK_REFERENCES).unwrap().status, CheckStatus::Fail);
        assert_eq!(r.verdict, Verdict::Inconsistent);
    }

    #[test]
    fn id_errors() {
        let idx = fixture_index();
        assert_eq!(trace(&idx, "CUL-ZZZZZZZZ", today()), Err(TraceError::UnknownTraceId("CUL-ZZZZZZZZ".into())));
        assert_eq!(trace(&idx, "cul-0000000a", today()), Err(TraceError::MalformedId("cul-0000000a".into())));
        assert_eq!(trace(&idx, "XYZ-0000000A", today()), Err(TraceError::MalformedId("XYZ-0000000A".into())));
    }

    #[test]
    fn sibling_merchants_are_not_in_each_others_closure() {
        let idx = index_of(vec![
            vec![record("CUL-0000000A", &fixtures::poultry_farm(T0))],
            vec![record("MAK-0000000B", &fixtures::maker(&[id("CUL-0000000A")], d(3, 2), T0 + 100))],
            vec![
                record("MER-0000000C", &fixtures::merchant(id("MAK-0000000B"), d(3, 3), T0 + 200)),
                record("MER-0000000D", &fixtures::merchant(id("MAK-0000000B"), d(3, 4), T0 + 300)),
            ],
        ]);
        assert!(!trace(&idx, "MER-0000000C", today()).unwrap().trace_ids().contains(&id("MER-0000000D")));
        let from_maker = trace(&idx, "MAK-0000000B", today()).unwrap();
        let tail: Vec<String> = from_maker.stages[2..].iter().map(|s| s.trace_id.to_string()).collect();
        assert_eq!(tail, ["MER-0000000C", "MER-0000000D"]);
    }

    fn registry() -> StakeholderRegistry {
        let mut reg = StakeholderRegistry::bootstrap("admin", SecretKey::from_label("admin").public_key());
        for (who, role) in [("shop", Role::Merchant), ("eater", Role::Consumer)] {
            reg.register_stakeholder(
                "admin",
                StakeholderIdentity {
                    stakeholder_id: who.into(),
                    role,
                    public_key: SecretKey::from_label(who).public_key(),
                    display_name: who.into(),
                    contact: String::new(),
                },
            )
            .unwrap();
        }
        reg
    }

    #[test]
    fn qr_issuance_gate() {
        let idx = fixture_index();
        let reg = registry();
        let p = issue_qr(&idx, &reg, "MER-0000000C", Some("shop"), today()).unwrap();
        assert_eq!(p.integrity_tag(), integrity_tag(&id("MER-0000000C"), idx.block_hash(3).unwrap()));
        assert!(matches!(issue_qr(&idx, &reg, "MER-0000000C", Some("eater"), today()), Err(TraceError::Unauthorized(_))));
        assert!(matches!(issue_qr(&idx, &reg, "MER-0000000C", None, today()), Err(TraceError::Unauthorized(_))));
        assert!(matches!(issue_qr(&idx, &reg, "MAK-0000000B", Some("shop"), today()), Err(TraceError::UnknownTraceId(_))));

        let orphan = index_of(vec![vec![record("MER-0000000C", &fixtures::merchant(id("MAK-0000000B"), d(3, 3), T0))]]);
        assert_eq!(
            issue_qr(&orphan, &reg, "MER-0000000C", Some("shop"), today()),
            Err(TraceError::IncompleteProvenance("MER-0000000C".into()))
        );
    }

    #[test]
    fn verdict_follows_checks_on_random_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let sc = random_supply_chain(&mut rng, 60);
            let idx = RecordIndex::from_chain(&sc.chain);
            for r in trace_many(&idx, &sc.ids.iter().map(ToString::to_string).collect::<Vec<_>>(), today()) {
                let r = r.unwrap();
                let hard_fail = r.checks.iter().any(|c| c.status == CheckStatus::Fail);
                assert_eq!(r.verdict == Verdict::Verified, !hard_fail);
            }
        }
    }

    #[test]
    fn report_is_pure_function_of_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sc = random_supply_chain(&mut rng, 40);
        let a = RecordIndex::from_chain(&sc.chain);
        let b = RecordIndex::from_blocks(sc.chain.blocks());
        for tid in &sc.ids {
            let x = crate::canonical::to_canonical_string(&trace(&a, &tid.to_string(), today()).unwrap()).unwrap();
            let y = crate::canonical::to_canonical_string(&trace(&b, &tid.to_string(), today()).unwrap()).unwrap();
            assert_eq!(x, y);
        }
    }
}
