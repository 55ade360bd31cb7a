//! Sample record bodies modelled on a small poultry supply chain. Used by
//! tests, benches and the CLI's example files.

use std::collections::{BTreeMap, HashSet};

use chrono::NaiveDate;
use rand::seq::IndexedRandom;
use rand::Rng;

use super::types::*;
use super::{stage_kind, utc_date, Stage, TraceabilityId};
use crate::crypto::SecretKey;
use crate::envelope::{Envelope, LedgerEntry};
use crate::ledger::{Block, Chain};

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid fixture date")
}

pub fn certificate(number: &str) -> HalalCertification {
    HalalCertification {
        cert_number: number.to_string(),
        issuing_body: "Regional Halal Certification Authority".into(),
        valid_from: date(2024, 1, 1),
        valid_to: date(2030, 12, 31),
    }
}

pub fn poultry_farm(recorded_at: u64) -> CultivatorRecord {
    CultivatorRecord {
        facility: Facility {
            name: "Al-Majmaah Poultry Farm".into(),
            latitude: 25.9036,
            longitude: 45.3454,
            manager_contact: "+966-16-000-0000".into(),
        },
        raw_material_type: RawMaterial { category: MaterialCategory::Animal, name: "broiler chicken".into() },
        husbandry_practices: "free-range, vegetarian grain feed, no animal by-products".into(),
        slaughter_method: Some("manual zabiha by certified slaughterman".into()),
        harvest_processing_description: "chilled at 2C within 30 minutes of slaughter".into(),
        certification: certificate("HC-CUL-2024-001"),
        batch_lot: "LOT-2024-0301".into(),
        recorded_at,
    }
}

pub fn maker(cultivators: &[TraceabilityId], production_date: NaiveDate, recorded_at: u64) -> MakerRecord {
    MakerRecord {
        ingredients: vec![
            Ingredient {
                name: "chicken breast".into(),
                cultivator_trace_ref: cultivators.first().map(ToString::to_string),
            },
            Ingredient { name: "salt".into(), cultivator_trace_ref: None },
        ],
        production_process_description: "deboned, marinated, vacuum sealed".into(),
        certification: certificate("HC-MAK-2024-014"),
        packaging_description: "500 g vacuum pack".into(),
        cultivator_refs: cultivators.iter().map(ToString::to_string).collect(),
        production_date,
        batch_number: "B-7781".into(),
        quality_control: QualityControl { notes: "metal detection passed".into(), staff_halal_trained: true },
        recorded_at,
    }
}

pub fn merchant(maker: TraceabilityId, purchase_date: NaiveDate, recorded_at: u64) -> MerchantRecord {
    MerchantRecord {
        purchase_date,
        invoice_number: "INV-55012".into(),
        supplier_contact: "orders@maker.example".into(),
        storage_conditions: "0-4C chilled".into(),
        storage_locations: vec!["aisle 3 chiller".into()],
        handling_procedures: "segregated from non-halal stock".into(),
        certification: certificate("HC-MER-2024-203"),
        maker_ref: maker.to_string(),
        recorded_at,
    }
}

/// Proposer of every block in [`random_supply_chain`].
pub const FIXTURE_VALIDATOR: &str = "fixture-validator";

pub fn fixture_validator_key() -> SecretKey {
    SecretKey::from_label(FIXTURE_VALIDATOR)
}

/// A generated chain and the trace ids committed on it, in commit order.
#[derive(Debug, Clone)]
pub struct SupplyChain {
    pub chain: Chain,
    pub ids: Vec<TraceabilityId>,
}

/// Random supply chain of `products` records (cultivator, maker and merchant
/// mixed) spread over blocks of 1 to 8 records. Makers reference 1 to 5
/// distinct committed cultivators; merchants one committed maker. Some
/// records stay unreferenced. Envelopes are unsigned.
pub fn random_supply_chain<R: Rng + ?Sized>(rng: &mut R, products: usize) -> SupplyChain {
    const T0: u64 = 1_709_251_200;
    let key = fixture_validator_key();
    let keys = BTreeMap::from([(FIXTURE_VALIDATOR.to_string(), key.public_key())]);
    let mut chain = Chain::new();
    let mut ids = Vec::with_capacity(products);
    let mut taken = HashSet::new();
    let (mut culs, mut maks) = (Vec::new(), Vec::new());
    let mut pending: Vec<LedgerEntry> = Vec::new();
    let mut batch_target = rng.random_range(1..=8);

    for i in 0..products {
        let recorded_at = T0 + i as u64 * 60;
        let roll = rng.random_range(0..100);
        let stage = if roll < 40 || culs.is_empty() {
            Stage::Cultivator
        } else if roll < 75 || maks.is_empty() {
            Stage::Maker
        } else {
            Stage::Merchant
        };
        let body = match stage {
            Stage::Cultivator => serde_json::to_value(poultry_farm(recorded_at)),
            Stage::Maker => {
                let k = rng.random_range(1..=culs.len().min(5));
                let refs: Vec<TraceabilityId> = culs.choose_multiple(rng, k).copied().collect();
                serde_json::to_value(maker(&refs, utc_date(recorded_at), recorded_at))
            }
            Stage::Merchant => {
                let m = *maks.choose(rng).expect("maker available");
                serde_json::to_value(merchant(m, utc_date(recorded_at), recorded_at))
            }
        }
        .expect("fixture bodies serialize");
        let id = TraceabilityId::generate(stage, rng, |id| taken.contains(id));
        taken.insert(id);
        ids.push(id);
        pending.push(LedgerEntry::new(Envelope::unsigned(stage_kind(stage), body, "fixture"), Some(id)));

        if pending.len() >= batch_target || i + 1 == products {
            let tip = chain.latest_block().clone();
            let block = Block::propose(&tip, recorded_at, std::mem::take(&mut pending), FIXTURE_VALIDATOR, &key);
            for entry in &block.payload {
                let id = entry.trace_id.expect("records carry ids");
                match id.stage() {
                    Stage::Cultivator => culs.push(id),
                    Stage::Maker => maks.push(id),
                    Stage::Merchant => {}
                }
            }
            chain.append_block(block, &keys).expect("generated block extends the tip");
            batch_target = rng.random_range(1..=8);
        }
    }
    SupplyChain { chain, ids }
}
