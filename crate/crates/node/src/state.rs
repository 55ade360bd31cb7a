//! Node state shared by request handlers and the round driver.

use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use halaltrace_core::consensus::RoundOutcome;
use halaltrace_core::ledger::{validate_serialized, ValidationResult};
use halaltrace_core::service::{ServiceError, TraceabilityService};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use tokio::sync::{watch, Notify};

use crate::log::{ChainLog, LogError};

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Debug, thiserror::Error)]
pub enum RoundError {
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("accepted block failed to append: {0}")]
    Append(halaltrace_core::ledger::BlockFault),
}

/// Result of re-reading the persisted log and comparing it with memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub tip_height: u64,
    pub tip_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalid_height: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Stand-in for a per-transaction monetary cost, which a permissioned chain
/// does not have: storage per committed entry and CPU time per commit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub committed_entries: u64,
    /// Log bytes excluding the genesis line.
    pub log_bytes: u64,
    pub bytes_per_transaction: Option<f64>,
    /// Commits made by this process; CPU time is not recoverable across restarts.
    pub commits_since_start: u64,
    pub cpu_seconds_total: f64,
    pub cpu_seconds_per_commit: Option<f64>,
}

#[derive(Debug, Default)]
struct CommitCost {
    commits: u64,
    cpu: Duration,
}

pub struct Shared {
    pub service: RwLock<TraceabilityService>,
    // lock order: log, then service, then cost
    log: Mutex<ChainLog>,
    cost: Mutex<CommitCost>,
    started: Instant,
    wake: Notify,
    round_interval: Duration,
}

impl Shared {
    pub fn new(service: TraceabilityService, log: ChainLog, round_interval: Duration) -> Arc<Shared> {
        Arc::new(Shared {
            service: RwLock::new(service),
            log: Mutex::new(log),
            cost: Mutex::default(),
            started: Instant::now(),
            wake: Notify::new(),
            round_interval,
        })
    }

    pub fn uptime(&self) -> Duration {
        self.started.elapsed()
    }

    /// Tells the driver the pool changed.
    pub fn poke(&self) {
        self.wake.notify_one();
    }

    /// One consensus round: propose under a read lock, persist, then apply.
    /// A block is in memory only after its log line is synced.
    /// CPU time of committed rounds is charged to the commit.
    pub fn run_round(&self, now: u64) -> Result<Option<RoundOutcome>, RoundError> {
        let cpu = cpu_time::ThreadTime::now();
        let mut log = self.log.lock();
        let outcome = self.service.read().propose_round(now)?;
        let Some(outcome) = outcome else { return Ok(None) };
        match &outcome.block {
            Some(block) if outcome.is_committed() => {
                log.append(block)?;
                self.service.write().commit_block(block.clone()).map_err(RoundError::Append)?;
                let mut cost = self.cost.lock();
                cost.commits += 1;
                cost.cpu += cpu.elapsed();
                tracing::info!(height = block.height, entries = block.payload.len(), proposer = %block.proposer_id, "committed block");
            }
            _ => {
                self.service.write().skip_round();
                tracing::warn!(round = outcome.round, status = ?outcome.status, "round rejected");
            }
        }
        Ok(Some(outcome))
    }

    pub fn cost_report(&self) -> CostReport {
        let log = self.log.lock();
        let service = self.service.read();
        let blocks = service.chain().blocks();
        let genesis = blocks[0].to_canonical_line().len() as u64 + 1;
        let committed_entries: u64 = blocks.iter().map(|b| b.payload.len() as u64).sum();
        let log_bytes = log.byte_len().saturating_sub(genesis);
        let cost = self.cost.lock();
        let cpu_seconds_total = cost.cpu.as_secs_f64();
        CostReport {
            committed_entries,
            log_bytes,
            bytes_per_transaction: (committed_entries > 0).then(|| log_bytes as f64 / committed_entries as f64),
            commits_since_start: cost.commits,
            cpu_seconds_total,
            cpu_seconds_per_commit: (cost.commits > 0).then(|| cpu_seconds_total / cost.commits as f64),
        }
    }

    /// Validates the log as stored on disk and checks it equals the in-memory chain.
    pub fn validate_persisted(&self) -> Result<ValidationReport, LogError> {
        let log = self.log.lock();
        let lines = log.read_lines()?;
        let service = self.service.read();
        let chain = service.chain();
        let tip = chain.latest_block();
        let mut report = ValidationReport {
            valid: true,
            tip_height: tip.height,
            tip_hash: tip.hash.clone(),
            invalid_height: None,
            reason: None,
        };
        if let ValidationResult::Invalid { height, reason } = validate_serialized(&lines, service.stakes()) {
            report.valid = false;
            report.invalid_height = Some(height);
            report.reason = Some(reason.to_string());
        } else if let Some(h) = chain.blocks().iter().zip(&lines).position(|(b, l)| b.to_canonical_line() != *l) {
            report.valid = false;
            report.invalid_height = Some(h as u64);
            report.reason = Some("persisted block differs from committed state".into());
        } else if lines.len() != chain.len() {
            report.valid = false;
            report.invalid_height = Some(lines.len().min(chain.len()) as u64);
            report.reason = Some(format!("log holds {} blocks, memory holds {}", lines.len(), chain.len()));
        }
        Ok(report)
    }
}

/// Fires a round when the pool holds a full batch, or when it is non-empty
/// and the round timer has run since the last round (or since the pool
/// became non-empty). A rejected or failed round waits a full interval.
pub async fn drive(shared: Arc<Shared>, mut stop: watch::Receiver<bool>) {
    let interval = shared.round_interval;
    let mut since: Option<Instant> = None;
    let mut hold_until: Option<Instant> = None;
    loop {
        if *stop.borrow() {
            break;
        }
        let (pending, batch) = {
            let s = shared.service.read();
            (s.pending_len(), s.batch_size())
        };
        let now = Instant::now();
        let held = hold_until.is_some_and(|t| now < t);
        let wait = if pending == 0 {
            since = None;
            Duration::from_secs(3600)
        } else {
            let start = *since.get_or_insert(now);
            let due = !held && (pending >= batch || now.duration_since(start) >= interval);
            if due {
                let s = shared.clone();
                let result = tokio::task::spawn_blocking(move || s.run_round(now_unix())).await;
                since = Some(Instant::now());
                match result {
                    Ok(Ok(Some(outcome))) if outcome.is_committed() => hold_until = None,
                    Ok(Ok(None)) => {}
                    Ok(Ok(Some(_))) => hold_until = Some(Instant::now() + interval),
                    Ok(Err(e)) => {
                        tracing::error!(error = %e, "round failed");
                        hold_until = Some(Instant::now() + interval);
                    }
                    Err(e) => {
                        tracing::error!(error = %e, "round task panicked");
                        hold_until = Some(Instant::now() + interval);
                    }
                }
                continue;
            }
            match hold_until {
                Some(t) if held => t.saturating_duration_since(now),
                _ => (start + interval).saturating_duration_since(now),
            }
        };
        tokio::select! {
            _ = tokio::time::sleep(wait) => {}
            _ = shared.wake.notified() => {}
            _ = stop.changed() => {}
        }
    }
}
