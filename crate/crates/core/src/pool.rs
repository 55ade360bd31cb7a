//! FIFO queue of admitted entries awaiting a consensus round.

use std::collections::{HashMap, HashSet, VecDeque};

use crate::envelope::{EntryKind, LedgerEntry};
use crate::records::{ConfirmationBody, TraceabilityId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingInfo {
    pub trace_id: Option<TraceabilityId>,
    pub submitter: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("an entry with the same canonical body is already pending")]
pub struct DuplicatePending;

/// Invariant: no two queued entries share (kind, canonical body).
#[derive(Debug, Clone, Default)]
pub struct PendingPool {
    queue: VecDeque<LedgerEntry>,
    digests: HashMap<(EntryKind, String), PendingInfo>,
    ids: HashSet<TraceabilityId>,
    confirmations: HashSet<(TraceabilityId, String)>,
}

impl PendingPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn push(&mut self, entry: LedgerEntry) -> Result<(), DuplicatePending> {
        let key = (entry.envelope.kind, entry.envelope.body_digest());
        if self.digests.contains_key(&key) {
            return Err(DuplicatePending);
        }
        if let Some(id) = entry.trace_id {
            self.ids.insert(id);
        }
        if let Some(subject) = confirmation_subject(&entry) {
            self.confirmations.insert((subject, entry.envelope.stakeholder_id.clone()));
        }
        self.digests.insert(
            key,
            PendingInfo { trace_id: entry.trace_id, submitter: entry.envelope.stakeholder_id.clone() },
        );
        self.queue.push_back(entry);
        Ok(())
    }

    /// Up to `n` entries from the front, without removing them.
    pub fn peek_batch(&self, n: usize) -> Vec<LedgerEntry> {
        self.queue.iter().take(n).cloned().collect()
    }

    /// Drops the first `n` entries (after they were committed).
    pub fn remove_front(&mut self, n: usize) {
        for entry in self.queue.drain(..n.min(self.queue.len())) {
            self.digests.remove(&(entry.envelope.kind, entry.envelope.body_digest()));
            if let Some(id) = entry.trace_id {
                self.ids.remove(&id);
            }
            if let Some(subject) = confirmation_subject(&entry) {
                self.confirmations.remove(&(subject, entry.envelope.stakeholder_id.clone()));
            }
        }
    }

    pub fn lookup(&self, kind: EntryKind, body_digest: &str) -> Option<&PendingInfo> {
        self.digests.get(&(kind, body_digest.to_string()))
    }

    pub fn holds_id(&self, id: &TraceabilityId) -> bool {
        self.ids.contains(id)
    }

    pub fn has_confirmation(&self, subject: &TraceabilityId, confirmer: &str) -> bool {
        self.confirmations.contains(&(*subject, confirmer.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &LedgerEntry> {
        self.queue.iter()
    }
}

fn confirmation_subject(entry: &LedgerEntry) -> Option<TraceabilityId> {
    if entry.envelope.kind != EntryKind::Confirmation {
        return None;
    }
    serde_json::from_value::<ConfirmationBody>(entry.envelope.body.clone())
        .ok()
        .and_then(|b| b.subject_trace_id.parse().ok())
}
