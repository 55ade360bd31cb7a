//! Core of a permissioned halal-food traceability ledger: hash-chained
//! blocks, stake-weighted proposer selection, role-based access control,
//! staged supply-chain records, provenance tracing and QR payloads.

pub mod canonical;
pub mod consensus;
pub mod crypto;
pub mod envelope;
pub mod ledger;
pub mod par;
pub mod pool;
pub mod qr;
pub mod records;
pub mod registry;
pub mod schema;
pub mod service;
pub mod trace;

pub use consensus::{select_proposer, StakeRegistry, Validator};
pub use crypto::{PublicKey, SecretKey, Signature};
pub use envelope::{EntryKind, Envelope, LedgerEntry};
pub use ledger::{Block, Chain, ValidationResult};
pub use records::{Stage, TraceabilityId};
pub use registry::{Role, StakeholderRegistry};
pub use service::{ServiceConfig, ServiceError, TraceabilityService};
