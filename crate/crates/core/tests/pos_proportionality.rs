//! Stake-proportional proposer selection against independent oracles.

use std::collections::BTreeMap;

use halaltrace_core::consensus::{
    proposer_histogram, proposer_seed, select_proposer, simulate, SimValidator, SimulationConfig, StakeRegistry,
    Validator,
};
use halaltrace_core::crypto::SecretKey;
use halaltrace_core::ledger::Block;
use num_bigint::BigUint;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn registry(stakes: &[(&str, u64)]) -> StakeRegistry {
    StakeRegistry::new(stakes.iter().map(|(id, s)| Validator {
        validator_id: id.to_string(),
        public_key: SecretKey::from_label(id).public_key(),
        stake: *s,
    }))
    .unwrap()
}

fn counts(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

// Frozen from a Python reference: int.from_bytes(sha256(f"POS1|{h}|{n}"), "big") % total
// over n = 1..=10000 with h = the genesis hash, then the ascending cumulative walk.
#[test]
fn frozen_counts_a1_b3() {
    let hist = proposer_histogram(&registry(&[("A", 1), ("B", 3)]), &Block::genesis().hash, 1..10_001).unwrap();
    assert_eq!(hist, counts(&[("A", 2423), ("B", 7577)]));
}

#[test]
fn frozen_counts_a1_b1_c2() {
    let hist =
        proposer_histogram(&registry(&[("A", 1), ("B", 1), ("C", 2)]), &Block::genesis().hash, 1..10_001).unwrap();
    assert_eq!(hist, counts(&[("A", 2423), ("B", 2501), ("C", 5076)]));
}

#[test]
fn frozen_first_rounds() {
    let reg = registry(&[("A", 1), ("B", 3)]);
    let picks: Vec<&str> = (1..=8).map(|n| select_proposer(&reg, &Block::genesis().hash, n).unwrap()).collect();
    assert_eq!(picks, ["B", "A", "B", "B", "B", "B", "B", "B"]);
}

#[test]
fn frequencies_within_two_points_of_stake_share() {
    for stakes in [&[("A", 1), ("B", 3)][..], &[("A", 1), ("B", 1), ("C", 2)][..]] {
        let reg = registry(stakes);
        let total = reg.total_stake() as f64;
        let hist = proposer_histogram(&reg, &Block::genesis().hash, 1..10_001).unwrap();
        for (id, stake) in stakes {
            let observed = hist[*id] as f64 / 10_000.0;
            let share = *stake as f64 / total;
            assert!((observed - share).abs() <= 0.02, "{id}: {observed} vs {share}");
        }
    }
}

#[test]
fn simulator_frequency_for_c() {
    let cfg = SimulationConfig {
        validators: [("A", 1), ("B", 1), ("C", 2)].iter().map(|(id, s)| SimValidator { id: id.to_string(), stake: *s }).collect(),
        rounds: 10_000,
        records_per_round: 1,
        drop_rate: 0.0,
        rng_seed: 1,
        batch_size: 100,
    };
    let report = simulate(&cfg).unwrap();
    assert_eq!(report.committed, 10_000);
    assert!(report.chain_valid);
    assert!((report.proposer_frequency["C"] - 0.5).abs() <= 0.02, "{:?}", report.proposer_frequency);
}

/// Reference selection with arbitrary-precision arithmetic.
fn bigint_select<'a>(stakes: &'a BTreeMap<String, u64>, prev: &str, round: u64) -> &'a str {
    let total: u64 = stakes.values().sum();
    let r = BigUint::from_bytes_be(&proposer_seed(prev, round)) % BigUint::from(total);
    let r: u64 = r.try_into().unwrap();
    let mut acc = 0;
    for (id, s) in stakes {
        acc += s;
        if acc > r {
            return id;
        }
    }
    unreachable!()
}

proptest! {
    #[test]
    fn matches_bigint_oracle(stakes in prop::collection::btree_map("[A-Z][a-z0-9]{0,6}", 1u64..1_000_000_000_000, 1..8), round in any::<u64>(), prev in "[0-9a-f]{64}") {
        let reg = StakeRegistry::new(stakes.iter().map(|(id, s)| Validator {
            validator_id: id.clone(),
            public_key: SecretKey::from_label(id).public_key(),
            stake: *s,
        })).unwrap();
        prop_assert_eq!(select_proposer(&reg, &prev, round).unwrap(), bigint_select(&stakes, &prev, round));
    }

    #[test]
    fn residues_select_each_validator_exactly_stake_times(stakes in prop::collection::btree_map("[a-z]{1,4}", 0u64..40, 1..7)) {
        let reg = StakeRegistry::new(stakes.iter().map(|(id, s)| Validator {
            validator_id: id.clone(),
            public_key: SecretKey::from_label(id).public_key(),
            stake: *s,
        })).unwrap();
        let mut seen: BTreeMap<String, u64> = BTreeMap::new();
        for r in 0..reg.total_stake() {
            *seen.entry(reg.select_by_residue(r).unwrap().validator_id.clone()).or_default() += 1;
        }
        for (id, s) in &stakes {
            prop_assert_eq!(seen.get(id).copied().unwrap_or(0), *s);
        }
    }
}

#[test]
fn selection_is_deterministic() {
    let reg = registry(&[("A", 5), ("B", 7), ("C", 11)]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let prev = hex::encode(rng.random::<[u8; 32]>());
        let round = rng.random();
        assert_eq!(select_proposer(&reg, &prev, round), select_proposer(&reg, &prev, round));
    }
}
