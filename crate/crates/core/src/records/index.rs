use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::types::{Confirmation, ConfirmationBody, QrIssuanceBody, RecordBody};
use super::{Stage, TraceabilityId};
use crate::envelope::EntryKind;
use crate::ledger::{Block, Chain};
use crate::registry::StakeholderIdentity;

/// A stage record as committed on chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommittedRecord {
    pub trace_id: TraceabilityId,
    pub block_height: u64,
    pub submitted_by: String,
    pub body_digest: String,
    pub body: RecordBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommittedConfirmation {
    #[serde(flatten)]
    pub confirmation: Confirmation,
    pub block_height: u64,
}

/// Read model over a chain: every committed record, confirmation, QR
/// issuance and stakeholder registration, keyed for lookup.
///
/// Entries that cannot be interpreted are skipped; admission prevents them
/// from ever being committed through the node.
#[derive(Debug, Clone, Default)]
pub struct RecordIndex {
    records: HashMap<TraceabilityId, CommittedRecord>,
    by_digest: HashMap<String, TraceabilityId>,
    downstream: HashMap<TraceabilityId, Vec<TraceabilityId>>,
    confirmations: BTreeMap<TraceabilityId, Vec<CommittedConfirmation>>,
    qr_issuances: BTreeMap<TraceabilityId, u64>,
    registrations: Vec<(String, StakeholderIdentity)>,
    block_hashes: Vec<String>,
}

impl RecordIndex {
    pub fn from_chain(chain: &Chain) -> Self {
        Self::from_blocks(chain.blocks())
    }

    pub fn from_blocks(blocks: &[Block]) -> Self {
        let mut index = RecordIndex::default();
        for block in blocks {
            index.apply_block(block);
        }
        index
    }

    pub fn apply_block(&mut self, block: &Block) {
        debug_assert_eq!(block.height as usize, self.block_hashes.len());
        self.block_hashes.push(block.hash.clone());
        for entry in &block.payload {
            let env = &entry.envelope;
            match env.kind {
                EntryKind::CultivatorRecord | EntryKind::MakerRecord | EntryKind::MerchantRecord => {
                    let Some(trace_id) = entry.trace_id else { continue };
                    let Ok(body) = RecordBody::parse(trace_id.stage(), &env.body) else { continue };
                    if self.records.contains_key(&trace_id) || stage_kind(body.stage()) != env.kind {
                        continue;
                    }
                    for parent in body.upstream_refs() {
                        if let Ok(parent) = parent.parse::<TraceabilityId>() {
                            self.downstream.entry(parent).or_default().push(trace_id);
                        }
                    }
                    let digest = env.body_digest();
                    self.by_digest.entry(digest.clone()).or_insert(trace_id);
                    self.records.insert(
                        trace_id,
                        CommittedRecord {
                            trace_id,
                            block_height: block.height,
                            submitted_by: env.stakeholder_id.clone(),
                            body_digest: digest,
                            body,
                        },
                    );
                }
                EntryKind::Confirmation => {
                    let Ok(body) = serde_json::from_value::<ConfirmationBody>(env.body.clone()) else { continue };
                    let Ok(subject) = body.subject_trace_id.parse::<TraceabilityId>() else { continue };
                    let list = self.confirmations.entry(subject).or_default();
                    if list.iter().any(|c| c.confirmation.confirmer_id == env.stakeholder_id) {
                        continue;
                    }
                    list.push(CommittedConfirmation {
                        confirmation: Confirmation {
                            subject_trace_id: subject,
                            confirmer_id: env.stakeholder_id.clone(),
                            verdict: body.verdict,
                            recorded_at: body.recorded_at,
                        },
                        block_height: block.height,
                    });
                }
                EntryKind::QrIssuance => {
                    if let Ok(body) = serde_json::from_value::<QrIssuanceBody>(env.body.clone()) {
                        if let Ok(id) = body.trace_id.parse() {
                            self.qr_issuances.entry(id).or_insert(block.height);
                        }
                    }
                }
                EntryKind::StakeholderRegistration => {
                    if let Ok(identity) = serde_json::from_value::<StakeholderIdentity>(env.body.clone()) {
                        self.registrations.push((env.stakeholder_id.clone(), identity));
                    }
                }
                EntryKind::SimulatedRecord => {}
            }
        }
    }

    pub fn get(&self, id: &TraceabilityId) -> Option<&CommittedRecord> {
        self.records.get(id)
    }

    pub fn contains(&self, id: &TraceabilityId) -> bool {
        self.records.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &CommittedRecord> {
        self.records.values()
    }

    pub fn trace_id_for_digest(&self, digest: &str) -> Option<TraceabilityId> {
        self.by_digest.get(digest).copied()
    }

    /// Records that reference `id` as their upstream.
    pub fn downstream_of(&self, id: &TraceabilityId) -> &[TraceabilityId] {
        self.downstream.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn confirmations_of(&self, id: &TraceabilityId) -> &[CommittedConfirmation] {
        self.confirmations.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_confirmed_by(&self, id: &TraceabilityId, confirmer: &str) -> bool {
        self.confirmations_of(id).iter().any(|c| c.confirmation.confirmer_id == confirmer)
    }

    pub fn qr_issued_at(&self, id: &TraceabilityId) -> Option<u64> {
        self.qr_issuances.get(id).copied()
    }

    /// Committed registrations in chain order, as (registering admin, identity).
    pub fn registrations(&self) -> &[(String, StakeholderIdentity)] {
        &self.registrations
    }

    /// Hash of the block at `height`.
    pub fn block_hash(&self, height: u64) -> Option<&str> {
        self.block_hashes.get(height as usize).map(String::as_str)
    }
}

pub(crate) fn stage_kind(stage: Stage) -> EntryKind {
    match stage {
        Stage::Cultivator => EntryKind::CultivatorRecord,
        Stage::Maker => EntryKind::MakerRecord,
        Stage::Merchant => EntryKind::MerchantRecord,
    }
}
