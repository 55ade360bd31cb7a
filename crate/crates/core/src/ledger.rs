//! Append-only hash-chained ledger.
//!
//! Header digest preimage (UTF-8):
//!
//! ```text
//! HDR1|<height>|<timestamp>|<payload_digest>|<previous_hash>|<proposer_id>
//! ```
//!
//! `payload_digest` is SHA-256 over the canonical JSON of the payload list and
//! the proposer signs the ASCII bytes of the resulting `hash`. Blocks are
//! persisted as one canonical JSON object per line.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::canonical::{self, is_digest_hex, sha256_hex, CanonicalError, ZERO_DIGEST};
use crate::crypto::{PublicKey, SecretKey, Signature};
use crate::envelope::LedgerEntry;
use crate::par;

pub const GENESIS_PROPOSER: &str = "GENESIS";

/// Resolves a proposer id to the key its block signatures must verify under.
pub trait ProposerKeys {
    fn proposer_key(&self, proposer_id: &str) -> Option<PublicKey>;
}

impl ProposerKeys for BTreeMap<String, PublicKey> {
    fn proposer_key(&self, proposer_id: &str) -> Option<PublicKey> {
        self.get(proposer_id).copied()
    }
}

impl ProposerKeys for HashMap<String, PublicKey> {
    fn proposer_key(&self, proposer_id: &str) -> Option<PublicKey> {
        self.get(proposer_id).copied()
    }
}

/// The hashed subset of a block.
#[derive(Debug, Clone, Copy)]
pub struct BlockHeader<'a> {
    pub height: u64,
    pub timestamp: u64,
    pub payload_digest: &'a str,
    pub previous_hash: &'a str,
    pub proposer_id: &'a str,
}

impl BlockHeader<'_> {
    pub fn preimage(&self) -> String {
        format!(
            "HDR1|{}|{}|{}|{}|{}",
            self.height, self.timestamp, self.payload_digest, self.previous_hash, self.proposer_id
        )
    }
}

pub fn compute_block_hash(header: &BlockHeader<'_>) -> String {
    sha256_hex(header.preimage())
}

pub fn compute_payload_digest(payload: &[LedgerEntry]) -> String {
    sha256_hex(canonical::to_canonical_string(payload).expect("ledger entries serialize"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub height: u64,
    pub timestamp: u64,
    pub payload: Vec<LedgerEntry>,
    pub payload_digest: String,
    pub previous_hash: String,
    pub hash: String,
    pub proposer_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposer_signature: Option<Signature>,
}

impl Block {
    /// The fixed first block. Identical bytes on every call.
    pub fn genesis() -> Block {
        let payload = Vec::new();
        let payload_digest = compute_payload_digest(&payload);
        let hash = compute_block_hash(&BlockHeader {
            height: 0,
            timestamp: 0,
            payload_digest: &payload_digest,
            previous_hash: ZERO_DIGEST,
            proposer_id: GENESIS_PROPOSER,
        });
        Block {
            height: 0,
            timestamp: 0,
            payload,
            payload_digest,
            previous_hash: ZERO_DIGEST.to_string(),
            hash,
            proposer_id: GENESIS_PROPOSER.to_string(),
            proposer_signature: None,
        }
    }

    /// Builds and signs a block on top of `parent`.
    pub fn propose(
        parent: &Block,
        timestamp: u64,
        payload: Vec<LedgerEntry>,
        proposer_id: &str,
        key: &SecretKey,
    ) -> Block {
        let payload_digest = compute_payload_digest(&payload);
        let height = parent.height + 1;
        let hash = compute_block_hash(&BlockHeader {
            height,
            timestamp,
            payload_digest: &payload_digest,
            previous_hash: &parent.hash,
            proposer_id,
        });
        let proposer_signature = Some(key.sign(hash.as_bytes()));
        Block {
            height,
            timestamp,
            payload,
            payload_digest,
            previous_hash: parent.hash.clone(),
            hash,
            proposer_id: proposer_id.to_string(),
            proposer_signature,
        }
    }

    pub fn header(&self) -> BlockHeader<'_> {
        BlockHeader {
            height: self.height,
            timestamp: self.timestamp,
            payload_digest: &self.payload_digest,
            previous_hash: &self.previous_hash,
            proposer_id: &self.proposer_id,
        }
    }

    pub fn to_canonical_line(&self) -> String {
        canonical::to_canonical_string(self).expect("blocks serialize")
    }

    /// Strict parse: the line must be exactly the canonical encoding.
    pub fn from_canonical_line(line: &str) -> Result<Block, CanonicalError> {
        canonical::from_canonical_str(line)
    }

    /// Checks everything that does not depend on the predecessor.
    fn check_intrinsic<K: ProposerKeys + ?Sized>(&self, keys: &K) -> Result<(), BlockFault> {
        if compute_payload_digest(&self.payload) != self.payload_digest {
            return Err(BlockFault::PayloadDigestMismatch);
        }
        if !is_digest_hex(&self.hash) || compute_block_hash(&self.header()) != self.hash {
            return Err(BlockFault::BadHash);
        }
        let key = keys.proposer_key(&self.proposer_id).ok_or(BlockFault::UnknownProposer)?;
        match &self.proposer_signature {
            Some(sig) if key.verify(self.hash.as_bytes(), sig) => Ok(()),
            _ => Err(BlockFault::BadSignature),
        }
    }

    /// Full check of `self` as the successor of `parent`.
    pub fn check_successor<K: ProposerKeys + ?Sized>(&self, parent: &Block, keys: &K) -> Result<(), BlockFault> {
        if self.height != parent.height + 1 {
            return Err(BlockFault::BadHeight);
        }
        if self.previous_hash != parent.hash {
            return Err(BlockFault::BadLinkage);
        }
        if self.timestamp < parent.timestamp {
            return Err(BlockFault::BadTimestamp);
        }
        self.check_intrinsic(keys)
    }
}

/// Why a block is rejected or a chain is invalid.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum BlockFault {
    #[error("block 0 is not the canonical genesis block")]
    GenesisMismatch,
    #[error("height is not predecessor height + 1")]
    BadHeight,
    #[error("previous_hash does not match predecessor hash")]
    BadLinkage,
    #[error("timestamp precedes predecessor timestamp")]
    BadTimestamp,
    #[error("payload_digest mismatch")]
    PayloadDigestMismatch,
    #[error("stored hash does not match recomputed header digest")]
    BadHash,
    #[error("proposer signature missing or invalid")]
    BadSignature,
    #[error("proposer has no registered key")]
    UnknownProposer,
    #[error("malformed block encoding: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ValidationResult {
    Ok,
    Invalid { height: u64, reason: BlockFault },
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        matches!(self, ValidationResult::Ok)
    }
}

impl fmt::Display for ValidationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationResult::Ok => f.write_str("ok"),
            ValidationResult::Invalid { height, reason } => write!(f, "invalid at height {height}: {reason}"),
        }
    }
}

/// Validates an arbitrary block sequence; reports the lowest offending index.
///
/// Each block is checked against its stored predecessor only, so blocks are
/// verified independently (in parallel with the `parallel` feature).
pub fn validate_blocks<K: ProposerKeys + Sync + ?Sized>(blocks: &[Block], keys: &K) -> ValidationResult {
    let first = par::find_map_first(blocks, |i, block| {
        let verdict = if i == 0 {
            if *block == Block::genesis() {
                Ok(())
            } else {
                Err(BlockFault::GenesisMismatch)
            }
        } else {
            block.check_successor(&blocks[i - 1], keys)
        };
        verdict.err().map(|reason| (i as u64, reason))
    });
    match first {
        None => ValidationResult::Ok,
        Some((height, reason)) => ValidationResult::Invalid { height, reason },
    }
}

/// Validates the persisted line form. A line that does not strictly parse is
/// reported as `Malformed` at its index.
pub fn validate_serialized<K: ProposerKeys + Sync + ?Sized>(lines: &[String], keys: &K) -> ValidationResult {
    let mut blocks = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match Block::from_canonical_line(line) {
            Ok(block) => blocks.push(block),
            Err(e) => {
                // an earlier parsed block may already be invalid
                if let ValidationResult::Invalid { height, reason } = validate_blocks(&blocks, keys) {
                    return ValidationResult::Invalid { height, reason };
                }
                return ValidationResult::Invalid { height: i as u64, reason: BlockFault::Malformed(e.to_string()) };
            }
        }
    }
    validate_blocks(&blocks, keys)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockSelector {
    Height(u64),
    Hash(String),
}

/// A validated chain rooted at genesis. Only [`Chain::append_block`] extends it.
#[derive(Debug, Clone)]
pub struct Chain {
    blocks: Vec<Block>,
    by_hash: HashMap<String, u64>,
}

impl Default for Chain {
    fn default() -> Self {
        Self::new()
    }
}

impl Chain {
    pub fn new() -> Chain {
        let genesis = Block::genesis();
        let mut by_hash = HashMap::new();
        by_hash.insert(genesis.hash.clone(), 0);
        Chain { blocks: vec![genesis], by_hash }
    }

    /// Rebuilds a chain from blocks, rejecting anything `validate_blocks` rejects.
    pub fn from_blocks<K: ProposerKeys + Sync + ?Sized>(blocks: Vec<Block>, keys: &K) -> Result<Chain, (u64, BlockFault)> {
        if blocks.is_empty() {
            return Ok(Chain::new());
        }
        if let ValidationResult::Invalid { height, reason } = validate_blocks(&blocks, keys) {
            return Err((height, reason));
        }
        let by_hash = blocks.iter().map(|b| (b.hash.clone(), b.height)).collect();
        Ok(Chain { blocks, by_hash })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    /// Always false: a chain holds at least genesis.
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn latest_block(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn tip_height(&self) -> u64 {
        self.latest_block().height
    }

    pub fn get_block(&self, selector: &BlockSelector) -> Option<&Block> {
        match selector {
            BlockSelector::Height(h) => usize::try_from(*h).ok().and_then(|h| self.blocks.get(h)),
            BlockSelector::Hash(hash) => self.by_hash.get(hash).map(|&h| &self.blocks[h as usize]),
        }
    }

    /// Checks the append preconditions without mutating.
    pub fn check_append<K: ProposerKeys + ?Sized>(&self, block: &Block, keys: &K) -> Result<(), BlockFault> {
        block.check_successor(self.latest_block(), keys)
    }

    /// Appends `block` if every precondition holds; otherwise leaves the chain untouched.
    pub fn append_block<K: ProposerKeys + ?Sized>(&mut self, block: Block, keys: &K) -> Result<&Block, BlockFault> {
        self.check_append(&block, keys)?;
        self.by_hash.insert(block.hash.clone(), block.height);
        self.blocks.push(block);
        Ok(self.latest_block())
    }

    pub fn validate<K: ProposerKeys + Sync + ?Sized>(&self, keys: &K) -> ValidationResult {
        validate_blocks(&self.blocks, keys)
    }

    pub fn to_lines(&self) -> Vec<String> {
        self.blocks.iter().map(Block::to_canonical_line).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{EntryKind, Envelope};
    use serde_json::json;

    // Frozen with `printf '%s' 'HDR1|0|0|<digest of []>|<64 zeros>|GENESIS' | sha256sum`.
    const GENESIS_HASH: &str = "032283f223e69b0ea2ab13437a57230cc2ad3d6f59f6f7d214ccbf0c3c20e63f";

    fn keys() -> (SecretKey, BTreeMap<String, PublicKey>) {
        let key = SecretKey::from_label("validator-a");
        let mut map = BTreeMap::new();
        map.insert("validator-a".to_string(), key.public_key());
        (key, map)
    }

    fn entry(n: u64) -> LedgerEntry {
        LedgerEntry::new(Envelope::unsigned(EntryKind::SimulatedRecord, json!({"n": n}), "sim"), None)
    }

    fn build(n: usize) -> (Chain, SecretKey, BTreeMap<String, PublicKey>) {
        let (key, map) = keys();
        let mut chain = Chain::new();
        for i in 1..=n as u64 {
            let block = Block::propose(chain.latest_block(), 1_700_000_000 + i, vec![entry(i)], "validator-a", &key);
            chain.append_block(block, &map).unwrap();
        }
        (chain, key, map)
    }

    #[test]
    fn genesis_constants() {
        let g = Block::genesis();
        assert_eq!(g.height, 0);
        assert_eq!(g.timestamp, 0);
        assert_eq!(g.previous_hash, ZERO_DIGEST);
        assert_eq!(g.proposer_id, "GENESIS");
        assert!(g.payload.is_empty() && g.proposer_signature.is_none());
        assert_eq!(g.hash, GENESIS_HASH);
        assert_eq!(g.to_canonical_line(), Block::genesis().to_canonical_line());
    }

    #[test]
    fn header_hash_worked_example() {
        // sha256sum of the literal preimage below
        let h = BlockHeader {
            height: 1,
            timestamp: 1_700_000_000,
            payload_digest: "4f53cda18c2baa0c0354bb5f9a3ecbe5ed12ab4d8e11ba873c2f11161202b945",
            previous_hash: GENESIS_HASH,
            proposer_id: "validator-a",
        };
        assert_eq!(
            h.preimage(),
            "HDR1|1|1700000000|4f53cda18c2baa0c0354bb5f9a3ecbe5ed12ab4d8e11ba873c2f11161202b945|032283f223e69b0ea2ab13437a57230cc2ad3d6f59f6f7d214ccbf0c3c20e63f|validator-a"
        );
        assert_eq!(compute_block_hash(&h), "0e1c48c612fe3d29fe58a27ea6627dc1b893ce430c5ed591baf71475179eba15");
        assert_eq!(compute_block_hash(&h), compute_block_hash(&h));
        let later = BlockHeader { timestamp: 1_700_000_001, ..h };
        assert_ne!(compute_block_hash(&h), compute_block_hash(&later));
    }

    #[test]
    fn timestamp_100_vs_101() {
        let d = compute_payload_digest(&[]);
        let a = BlockHeader { height: 7, timestamp: 100, payload_digest: &d, previous_hash: ZERO_DIGEST, proposer_id: "v1" };
        let b = BlockHeader { timestamp: 101, ..a };
        assert_eq!(compute_block_hash(&a), "24ae46530408c486f031f803495c0aa7ce55316a0edd05601341a76b647526f0");
        assert_eq!(compute_block_hash(&b), "544ea9d9cccf27fdcba691f8f4af3c7848af68a32e139f41998f5a900610e873");
    }

    #[test]
    fn append_and_lookup() {
        let (chain, _, map) = build(10);
        assert_eq!(chain.len(), 11);
        assert!(chain.validate(&map).is_ok());
        assert_eq!(chain.get_block(&BlockSelector::Height(0)).unwrap(), &Block::genesis());
        let tip = chain.latest_block();
        assert_eq!(chain.get_block(&BlockSelector::Height(tip.height)), Some(tip));
        assert_eq!(chain.get_block(&BlockSelector::Hash(tip.hash.clone())), Some(tip));
        assert_eq!(chain.get_block(&BlockSelector::Hash(ZERO_DIGEST.into())), None);
        assert_eq!(chain.get_block(&BlockSelector::Height(99)), None);
    }

    #[test]
    fn genesis_only_chain_is_valid() {
        assert!(Chain::new().validate(&BTreeMap::new()).is_ok());
    }

    #[test]
    fn append_rejections_leave_chain_unchanged() {
        let (mut chain, key, map) = build(2);
        let before = chain.to_lines();
        let tip = chain.latest_block().clone();

        let mut bad = Block::propose(&tip, tip.timestamp, vec![], "validator-a", &key);
        bad.previous_hash = sha256_hex("random");
        assert_eq!(chain.append_block(bad, &map).unwrap_err(), BlockFault::BadLinkage);

        let mut bad = Block::propose(&tip, tip.timestamp, vec![], "validator-a", &key);
        bad.height += 1;
        assert_eq!(chain.append_block(bad, &map).unwrap_err(), BlockFault::BadHeight);

        let bad = Block::propose(&tip, tip.timestamp - 1, vec![], "validator-a", &key);
        assert_eq!(chain.append_block(bad, &map).unwrap_err(), BlockFault::BadTimestamp);

        let mut bad = Block::propose(&tip, tip.timestamp, vec![], "validator-a", &key);
        let flipped = if bad.hash.as_bytes()[10] == b'0' { '1' } else { '0' };
        bad.hash.replace_range(10..11, &flipped.to_string());
        assert_eq!(chain.append_block(bad, &map).unwrap_err(), BlockFault::BadHash);

        let bad = Block::propose(&tip, tip.timestamp, vec![], "validator-a", &SecretKey::from_label("mallory"));
        assert_eq!(chain.append_block(bad, &map).unwrap_err(), BlockFault::BadSignature);

        let mut bad = Block::propose(&tip, tip.timestamp, vec![], "validator-a", &key);
        bad.proposer_signature = None;
        assert_eq!(chain.append_block(bad, &map).unwrap_err(), BlockFault::BadSignature);

        let bad = Block::propose(&tip, tip.timestamp, vec![], "nobody", &key);
        assert_eq!(chain.append_block(bad, &map).unwrap_err(), BlockFault::UnknownProposer);

        assert_eq!(chain.to_lines(), before);
        // equal timestamps are allowed
        let ok = Block::propose(&tip, tip.timestamp, vec![], "validator-a", &key);
        chain.append_block(ok, &map).unwrap();
    }

    #[test]
    fn mutated_payload_reports_lowest_height() {
        let (chain, _, map) = build(10);
        let mut blocks = chain.blocks().to_vec();
        blocks[5].payload[0].envelope.body = json!({"n": 999});
        blocks[8].timestamp = 0;
        assert_eq!(
            validate_blocks(&blocks, &map),
            ValidationResult::Invalid { height: 5, reason: BlockFault::PayloadDigestMismatch }
        );
    }

    #[test]
    fn genesis_tamper_detected() {
        let (chain, _, map) = build(1);
        let mut blocks = chain.blocks().to_vec();
        blocks[0].timestamp = 1;
        assert_eq!(
            validate_blocks(&blocks, &map),
            ValidationResult::Invalid { height: 0, reason: BlockFault::GenesisMismatch }
        );
    }

    #[test]
    fn line_round_trip_is_byte_identical() {
        let (chain, _, map) = build(5);
        let lines = chain.to_lines();
        let reparsed: Vec<Block> = lines.iter().map(|l| Block::from_canonical_line(l).unwrap()).collect();
        let rebuilt = Chain::from_blocks(reparsed, &map).unwrap();
        assert_eq!(rebuilt.to_lines(), lines);
        assert!(validate_serialized(&lines, &map).is_ok());
    }

    #[test]
    fn from_blocks_rejects_bad_sequence() {
        let (chain, _, map) = build(3);
        let mut blocks = chain.blocks().to_vec();
        blocks.swap(1, 2);
        assert_eq!(Chain::from_blocks(blocks, &map).unwrap_err().0, 1);
    }
}
