//! Stake-weighted proposer selection and a simulated multi-validator round
//! harness.
//!
//! Selection: `seed = SHA-256("POS1|" + previous_hash + "|" + round)`,
//! `r = seed (big-endian) mod total_stake`, then walk validators in ascending
//! id order accumulating stake and pick the first whose running total
//! exceeds `r`. Over all residues each validator is picked exactly `stake`
//! times. Modulo bias is at most total_stake / 2^256.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::canonical::sha256;
use crate::crypto::{PublicKey, SecretKey};
use crate::envelope::{EntryKind, Envelope, LedgerEntry};
use crate::ledger::{Block, BlockFault, Chain, ProposerKeys};
use crate::par;
use crate::pool::PendingPool;

pub const DEFAULT_BATCH_SIZE: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsensusError {
    #[error("stake registry has no eligible stake")]
    EmptyRegistry,
    #[error("duplicate validator id `{0}`")]
    DuplicateValidator(String),
    #[error("total stake overflows")]
    StakeOverflow,
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validator {
    pub validator_id: String,
    pub public_key: PublicKey,
    pub stake: u64,
}

/// Static validator set, ordered by id.
#[derive(Debug, Clone, Default)]
pub struct StakeRegistry {
    validators: BTreeMap<String, Validator>,
    total_stake: u64,
}

impl StakeRegistry {
    pub fn new(validators: impl IntoIterator<Item = Validator>) -> Result<Self, ConsensusError> {
        let mut map = BTreeMap::new();
        let mut total: u64 = 0;
        for v in validators {
            total = total.checked_add(v.stake).ok_or(ConsensusError::StakeOverflow)?;
            if map.contains_key(&v.validator_id) {
                return Err(ConsensusError::DuplicateValidator(v.validator_id));
            }
            map.insert(v.validator_id.clone(), v);
        }
        Ok(StakeRegistry { validators: map, total_stake: total })
    }

    pub fn total_stake(&self) -> u64 {
        self.total_stake
    }

    pub fn get(&self, id: &str) -> Option<&Validator> {
        self.validators.get(id)
    }

    /// Validators in ascending id order.
    pub fn validators(&self) -> impl Iterator<Item = &Validator> {
        self.validators.values()
    }

    pub fn len(&self) -> usize {
        self.validators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.validators.is_empty()
    }

    /// The validator owning residue `r` (< total_stake) on the cumulative line.
    pub fn select_by_residue(&self, r: u64) -> Option<&Validator> {
        let mut cumulative: u64 = 0;
        for v in self.validators.values() {
            cumulative += v.stake;
            if cumulative > r {
                return Some(v);
            }
        }
        None
    }
}

impl ProposerKeys for StakeRegistry {
    fn proposer_key(&self, proposer_id: &str) -> Option<PublicKey> {
        self.validators.get(proposer_id).map(|v| v.public_key)
    }
}

pub fn proposer_seed(previous_hash: &str, round: u64) -> [u8; 32] {
    sha256(format!("POS1|{previous_hash}|{round}"))
}

/// Big-endian 256-bit integer reduced mod `modulus`.
fn reduce_be(bytes: &[u8; 32], modulus: u64) -> u64 {
    let m = modulus as u128;
    bytes.iter().fold(0u128, |acc, &b| ((acc << 8) | b as u128) % m) as u64
}

pub fn select_proposer<'a>(registry: &'a StakeRegistry, previous_hash: &str, round: u64) -> Result<&'a str, ConsensusError> {
    if registry.total_stake == 0 {
        return Err(ConsensusError::EmptyRegistry);
    }
    let r = reduce_be(&proposer_seed(previous_hash, round), registry.total_stake);
    let v = registry.select_by_residue(r).expect("r < total_stake always lands on a validator");
    Ok(&v.validator_id)
}

/// Counts how often each validator is selected over `rounds` with a fixed
/// predecessor hash.
pub fn proposer_histogram(
    registry: &StakeRegistry,
    previous_hash: &str,
    rounds: Range<u64>,
) -> Result<BTreeMap<String, u64>, ConsensusError> {
    if registry.total_stake == 0 {
        return Err(ConsensusError::EmptyRegistry);
    }
    let picks = par::map_range(rounds, |round| {
        select_proposer(registry, previous_hash, round).expect("registry checked non-empty")
    });
    let mut counts: BTreeMap<String, u64> = registry.validators().map(|v| (v.validator_id.clone(), 0)).collect();
    for id in picks {
        *counts.get_mut(id).expect("picked id is registered") += 1;
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum RejectReason {
    /// No pending records.
    Empty,
    /// Proposal lost (simulation) or the proposer's key is not held locally.
    Dropped,
    BadSignature,
    WrongProposer,
    InvalidRecord(String),
    InvalidBlock(BlockFault),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RoundStatus {
    Committed,
    Rejected { reason: RejectReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: u64,
    pub seed: String,
    pub proposer_id: String,
    pub block: Option<Block>,
    pub status: RoundStatus,
}

impl RoundOutcome {
    pub fn is_committed(&self) -> bool {
        self.status == RoundStatus::Committed
    }
}

/// Misbehaviour to inject into a proposal (testing only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProposalFault {
    #[default]
    None,
    /// The selected proposer signs with a key that is not its registered one.
    WrongKey,
    /// A validator other than the selected one proposes and signs.
    WrongProposer,
}

/// Re-validation of record entries, run independently by every validator.
pub trait RecordCheck: Sync {
    fn check(&self, entries: &[LedgerEntry]) -> Result<(), String>;
}

impl<F> RecordCheck for F
where
    F: Fn(&[LedgerEntry]) -> Result<(), String> + Sync,
{
    fn check(&self, entries: &[LedgerEntry]) -> Result<(), String> {
        self(entries)
    }
}

/// Accepts every entry.
pub fn accept_all(_: &[LedgerEntry]) -> Result<(), String> {
    Ok(())
}

/// What one honest validator checks before accepting a proposed block.
pub fn verify_proposal(
    registry: &StakeRegistry,
    parent: &Block,
    block: &Block,
    round: u64,
    records: &dyn RecordCheck,
) -> Result<(), RejectReason> {
    let expected = select_proposer(registry, &parent.hash, round).map_err(|_| RejectReason::WrongProposer)?;
    if block.proposer_id != expected {
        return Err(RejectReason::WrongProposer);
    }
    block.check_successor(parent, registry).map_err(|fault| match fault {
        BlockFault::BadSignature | BlockFault::UnknownProposer => RejectReason::BadSignature,
        other => RejectReason::InvalidBlock(other),
    })?;
    records.check(&block.payload).map_err(RejectReason::InvalidRecord)
}

/// The simulated validator set: public stakes plus the signing keys this
/// process holds.
#[derive(Debug, Clone)]
pub struct RoundHarness {
    pub registry: StakeRegistry,
    signers: BTreeMap<String, SecretKey>,
    pub batch_size: usize,
}

impl RoundHarness {
    pub fn new(registry: StakeRegistry, signers: BTreeMap<String, SecretKey>, batch_size: usize) -> Self {
        RoundHarness { registry, signers, batch_size: batch_size.max(1) }
    }

    /// Proposes and votes on a block without touching `chain`. The caller
    /// appends `outcome.block` when the status is committed.
    pub fn decide_round(
        &self,
        chain: &Chain,
        pending: &[LedgerEntry],
        round: u64,
        now: u64,
        records: &dyn RecordCheck,
        fault: ProposalFault,
    ) -> Result<RoundOutcome, ConsensusError> {
        let parent = chain.latest_block();
        let seed = hex::encode(proposer_seed(&parent.hash, round));
        let selected = select_proposer(&self.registry, &parent.hash, round)?.to_string();
        let rejected = |reason, block| RoundOutcome {
            round,
            seed: seed.clone(),
            proposer_id: selected.clone(),
            block,
            status: RoundStatus::Rejected { reason },
        };
        if pending.is_empty() {
            return Ok(rejected(RejectReason::Empty, None));
        }

        let proposer_id = match fault {
            ProposalFault::WrongProposer => self
                .registry
                .validators()
                .map(|v| v.validator_id.clone())
                .find(|id| *id != selected)
                .unwrap_or_else(|| format!("{selected}-impostor")),
            _ => selected.clone(),
        };
        let key = match fault {
            ProposalFault::WrongKey => SecretKey::from_label(&format!("not-{proposer_id}")),
            _ => match self.signers.get(&proposer_id) {
                Some(k) => k.clone(),
                None => return Ok(rejected(RejectReason::Dropped, None)),
            },
        };
        let batch: Vec<LedgerEntry> = pending.iter().take(self.batch_size).cloned().collect();
        let block = Block::propose(parent, now.max(parent.timestamp), batch, &proposer_id, &key);

        let validators: Vec<&Validator> = self.registry.validators().collect();
        let votes = par::map(&validators, |_v| verify_proposal(&self.registry, parent, &block, round, records));
        if let Some(Err(reason)) = votes.into_iter().find(Result::is_err) {
            return Ok(rejected(reason, Some(block)));
        }
        Ok(RoundOutcome {
            round,
            seed,
            proposer_id,
            block: Some(block),
            status: RoundStatus::Committed,
        })
    }

    /// One full round: select, propose up to `batch_size` FIFO entries, vote,
    /// and on unanimous acceptance append to `chain` and drain the pool.
    pub fn run_round(
        &self,
        chain: &mut Chain,
        pool: &mut PendingPool,
        round: u64,
        now: u64,
        records: &dyn RecordCheck,
    ) -> Result<RoundOutcome, ConsensusError> {
        let pending = pool.peek_batch(self.batch_size);
        let outcome = self.decide_round(chain, &pending, round, now, records, ProposalFault::None)?;
        if outcome.is_committed() {
            let block = outcome.block.clone().expect("committed outcome carries a block");
            let n = block.payload.len();
            chain
                .append_block(block, &self.registry)
                .expect("unanimously accepted block satisfies append preconditions");
            pool.remove_front(n);
        }
        Ok(outcome)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct SimValidator {
    pub id: String,
    pub stake: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub validators: Vec<SimValidator>,
    pub rounds: u64,
    pub records_per_round: usize,
    pub drop_rate: f64,
    pub rng_seed: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SimulationReport {
    pub rounds: u64,
    pub committed: u64,
    pub rejected: u64,
    pub rejected_by_reason: BTreeMap<String, u64>,
    /// How often each validator was selected as proposer.
    pub per_validator_counts: BTreeMap<String, u64>,
    /// Selection frequency per validator (counts / rounds).
    pub proposer_frequency: BTreeMap<String, f64>,
    pub final_height: u64,
    pub tip_hash: String,
    pub chain_valid: bool,
}

/// Simulation clock start (2023-11-14T22:13:20Z); each round advances 5 s.
const SIM_EPOCH: u64 = 1_700_000_000;

/// Deterministic multi-round simulation: identical config, identical report.
pub fn simulate(config: &SimulationConfig) -> Result<SimulationReport, ConsensusError> {
    if config.rounds == 0 {
        return Err(ConsensusError::InvalidConfig("rounds must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&config.drop_rate) {
        return Err(ConsensusError::InvalidConfig("drop_rate must lie in [0, 1]".into()));
    }
    if config.batch_size == 0 {
        return Err(ConsensusError::InvalidConfig("batch_size must be >= 1".into()));
    }
    let signers: BTreeMap<String, SecretKey> = config
        .validators
        .iter()
        .map(|v| (v.id.clone(), SecretKey::from_label(&format!("sim-validator|{}|{}", config.rng_seed, v.id))))
        .collect();
    let registry = StakeRegistry::new(config.validators.iter().map(|v| Validator {
        validator_id: v.id.clone(),
        public_key: signers[&v.id].public_key(),
        stake: v.stake,
    }))?;
    if registry.total_stake() == 0 {
        return Err(ConsensusError::EmptyRegistry);
    }
    let harness = RoundHarness::new(registry, signers, config.batch_size);

    let mut rng = ChaCha20Rng::seed_from_u64(config.rng_seed);
    let mut chain = Chain::new();
    let mut pool = PendingPool::new();
    let mut selections: BTreeMap<String, u64> =
        harness.registry.validators().map(|v| (v.validator_id.clone(), 0)).collect();
    let mut rejected_by_reason = BTreeMap::new();
    let (mut committed, mut rejected) = (0u64, 0u64);
    let mut next_record = 0u64;

    for round in 1..=config.rounds {
        let now = SIM_EPOCH + round * 5;
        for _ in 0..config.records_per_round {
            let env = Envelope::unsigned(EntryKind::SimulatedRecord, json!({ "seq": next_record }), "simulator");
            pool.push(LedgerEntry::new(env, None)).expect("sequence numbers are unique");
            next_record += 1;
        }
        let selected = select_proposer(&harness.registry, &chain.latest_block().hash, round)?.to_string();
        *selections.get_mut(&selected).expect("selected validator is registered") += 1;

        let status = if rng.random::<f64>() < config.drop_rate {
            RoundStatus::Rejected { reason: RejectReason::Dropped }
        } else {
            harness.run_round(&mut chain, &mut pool, round, now, &accept_all)?.status
        };
        match status {
            RoundStatus::Committed => committed += 1,
            RoundStatus::Rejected { reason } => {
                rejected += 1;
                let key = serde_json::to_value(&reason).expect("reason serializes")["reason"]
                    .as_str()
                    .unwrap_or("unknown")
                    .to_string();
                *rejected_by_reason.entry(key).or_insert(0) += 1;
            }
        }
    }

    let proposer_frequency = selections
        .iter()
        .map(|(id, n)| (id.clone(), *n as f64 / config.rounds as f64))
        .collect();
    Ok(SimulationReport {
        rounds: config.rounds,
        committed,
        rejected,
        rejected_by_reason,
        per_validator_counts: selections,
        proposer_frequency,
        final_height: chain.tip_height(),
        tip_hash: chain.latest_block().hash.clone(),
        chain_valid: chain.validate(&harness.registry).is_ok(),
    })
}
