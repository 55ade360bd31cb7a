//! Compares the rayon paths against sequential execution.
//!
//! With the default `parallel` feature each workload runs twice: inside a
//! one-thread pool (`sequential`) and on the global pool (`parallel`).
//! `cargo bench --no-default-features` measures the plain-loop fallback.

use std::collections::BTreeMap;
use std::hint::black_box;

use chrono::NaiveDate;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use halaltrace_core::consensus::{proposer_histogram, StakeRegistry, Validator};
use halaltrace_core::crypto::SecretKey;
use halaltrace_core::envelope::{EntryKind, Envelope, LedgerEntry};
use halaltrace_core::ledger::{Block, Chain};
use halaltrace_core::par;
use halaltrace_core::qr::{decode_qr, render_qr};
use halaltrace_core::records::fixtures::random_supply_chain;
use halaltrace_core::records::RecordIndex;
use halaltrace_core::trace::trace_many;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn modes() -> Vec<(&'static str, Option<usize>)> {
    if par::is_parallel() {
        vec![("sequential", Some(1)), ("parallel", None)]
    } else {
        vec![("fallback", None)]
    }
}

#[cfg(feature = "parallel")]
fn run_in<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_in<R: Send>(_threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    f()
}

fn chain_of(blocks: u64) -> (Chain, BTreeMap<String, halaltrace_core::PublicKey>) {
    let key = SecretKey::from_label("bench-validator");
    let keys = BTreeMap::from([("bench".to_string(), key.public_key())]);
    let mut chain = Chain::new();
    for h in 1..=blocks {
        let payload = (0..10)
            .map(|i| LedgerEntry::new(Envelope::unsigned(EntryKind::SimulatedRecord, json!({ "h": h, "i": i }), "bench"), None))
            .collect();
        let tip = chain.latest_block().clone();
        chain.append_block(Block::propose(&tip, h, payload, "bench", &key), &keys).unwrap();
    }
    (chain, keys)
}

fn bench_validate(c: &mut Criterion) {
    let (chain, keys) = chain_of(100);
    let mut group = c.benchmark_group("validate_chain_100_blocks");
    for (name, threads) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_in(threads, || assert!(chain.validate(black_box(&keys)).is_ok())))
        });
    }
    group.finish();
}

fn bench_selection(c: &mut Criterion) {
    let reg = StakeRegistry::new(["A", "B", "C"].iter().zip([1, 1, 2]).map(|(id, stake)| Validator {
        validator_id: id.to_string(),
        public_key: SecretKey::from_label(id).public_key(),
        stake,
    }))
    .unwrap();
    let prev = Block::genesis().hash;
    let mut group = c.benchmark_group("proposer_histogram_10k_rounds");
    for (name, threads) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_in(threads, || proposer_histogram(&reg, black_box(&prev), 1..10_001).unwrap()))
        });
    }
    group.finish();
}

fn bench_trace(c: &mut Criterion) {
    let sc = random_supply_chain(&mut ChaCha8Rng::seed_from_u64(1), 100);
    let index = RecordIndex::from_chain(&sc.chain);
    let ids: Vec<String> = sc.ids.iter().map(ToString::to_string).collect();
    let as_of = NaiveDate::from_ymd_opt(2024, 6, 1).unwrap();
    let mut group = c.benchmark_group("trace_all_100_products");
    for (name, threads) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_in(threads, || trace_many(&index, black_box(&ids), as_of)))
        });
    }
    group.finish();
}

fn bench_qr(c: &mut Criterion) {
    let payloads: Vec<String> = (0..16).map(|i| format!("HT1|MER-0000{i:04}|a3f09b12")).collect();
    let mut group = c.benchmark_group("qr_render_decode_16");
    group.sample_size(10);
    for (name, threads) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_in(threads, || par::map(&payloads, |p| decode_qr(&render_qr(p).unwrap()).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_validate, bench_selection, bench_trace, bench_qr);
criterion_main!(benches);
