//! Stakeholder identities, roles and the role/action permission matrix.
//!
//! | role       | permitted actions (besides the public ones)                   |
//! |------------|---------------------------------------------------------------|
//! | cultivator | submit_cultivator_record                                      |
//! | maker      | submit_maker_record, confirm_record(cultivator)               |
//! | merchant   | submit_merchant_record, confirm_record(maker), issue_qr       |
//! | admin      | register_stakeholder                                          |
//! | consumer   | none                                                          |
//!
//! Public actions (`trace`, `read_chain`, `decode_qr`) are allowed for every
//! principal, including unauthenticated callers.

use std::collections::BTreeMap;
use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::crypto::PublicKey;
use crate::envelope::Envelope;
use crate::records::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Cultivator,
    Maker,
    Merchant,
    Consumer,
    Admin,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::Cultivator, Role::Maker, Role::Merchant, Role::Consumer, Role::Admin];

    /// The stage a role writes records for, if any.
    pub fn stage(self) -> Option<Stage> {
        match self {
            Role::Cultivator => Some(Stage::Cultivator),
            Role::Maker => Some(Stage::Maker),
            Role::Merchant => Some(Stage::Merchant),
            Role::Consumer | Role::Admin => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("role serializes");
        f.write_str(s.as_str().expect("role is a string"))
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown role `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    SubmitCultivatorRecord,
    SubmitMakerRecord,
    SubmitMerchantRecord,
    /// Confirm a record of the given (upstream) stage.
    ConfirmRecord(Stage),
    IssueQr,
    RegisterStakeholder,
    Trace,
    ReadChain,
    DecodeQr,
}

impl Action {
    pub const ALL: [Action; 11] = [
        Action::SubmitCultivatorRecord,
        Action::SubmitMakerRecord,
        Action::SubmitMerchantRecord,
        Action::ConfirmRecord(Stage::Cultivator),
        Action::ConfirmRecord(Stage::Maker),
        Action::ConfirmRecord(Stage::Merchant),
        Action::IssueQr,
        Action::RegisterStakeholder,
        Action::Trace,
        Action::ReadChain,
        Action::DecodeQr,
    ];

    pub fn is_public(self) -> bool {
        matches!(self, Action::Trace | Action::ReadChain | Action::DecodeQr)
    }

    pub fn submit_for(stage: Stage) -> Action {
        match stage {
            Stage::Cultivator => Action::SubmitCultivatorRecord,
            Stage::Maker => Action::SubmitMakerRecord,
            Stage::Merchant => Action::SubmitMerchantRecord,
        }
    }
}

/// The role → action table. `None` is the unauthenticated principal.
#[derive(Debug, Clone, Copy, Default)]
pub struct PermissionMatrix;

impl PermissionMatrix {
    pub fn allows(&self, role: Option<Role>, action: Action) -> bool {
        if action.is_public() {
            return true;
        }
        use Action::*;
        matches!(
            (role, action),
            (Some(Role::Cultivator), SubmitCultivatorRecord)
                | (Some(Role::Maker), SubmitMakerRecord)
                | (Some(Role::Maker), ConfirmRecord(Stage::Cultivator))
                | (Some(Role::Merchant), SubmitMerchantRecord)
                | (Some(Role::Merchant), ConfirmRecord(Stage::Maker))
                | (Some(Role::Merchant), IssueQr)
                | (Some(Role::Admin), RegisterStakeholder)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Decision {
    Allow,
    Deny { reason: String },
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        matches!(self, Decision::Allow)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct StakeholderIdentity {
    pub stakeholder_id: String,
    pub role: Role,
    pub public_key: PublicKey,
    pub display_name: String,
    pub contact: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("caller is not authorized for this action")]
    Unauthorized,
    #[error("stakeholder id `{0}` is already registered")]
    DuplicateId(String),
    #[error("unknown stakeholder `{0}`")]
    UnknownStakeholder(String),
    #[error("invalid identity: {0}")]
    InvalidIdentity(String),
}

fn valid_stakeholder_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
}

#[derive(Debug, Clone, Default)]
pub struct StakeholderRegistry {
    identities: BTreeMap<String, StakeholderIdentity>,
    matrix: PermissionMatrix,
}

impl StakeholderRegistry {
    /// Registry holding only the bootstrap admin.
    pub fn bootstrap(admin_id: &str, admin_key: PublicKey) -> Self {
        let mut identities = BTreeMap::new();
        identities.insert(
            admin_id.to_string(),
            StakeholderIdentity {
                stakeholder_id: admin_id.to_string(),
                role: Role::Admin,
                public_key: admin_key,
                display_name: "bootstrap administrator".into(),
                contact: String::new(),
            },
        );
        StakeholderRegistry { identities, matrix: PermissionMatrix }
    }

    pub fn get(&self, stakeholder_id: &str) -> Option<&StakeholderIdentity> {
        self.identities.get(stakeholder_id)
    }

    pub fn role_of(&self, stakeholder_id: &str) -> Option<Role> {
        self.get(stakeholder_id).map(|i| i.role)
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    pub fn identities(&self) -> impl Iterator<Item = &StakeholderIdentity> {
        self.identities.values()
    }

    /// Unknown ids are treated like unauthenticated callers.
    pub fn authorize(&self, caller: Option<&str>, action: Action) -> Decision {
        let role = caller.and_then(|id| self.role_of(id));
        if self.matrix.allows(role, action) {
            Decision::Allow
        } else {
            let who = match role {
                Some(r) => format!("role {r}"),
                None => "unauthenticated caller".to_string(),
            };
            Decision::Deny { reason: format!("{who} may not perform {action:?}") }
        }
    }

    /// Checks that `identity` could be registered by `caller` without storing it.
    pub fn check_registration(&self, caller: &str, identity: &StakeholderIdentity) -> Result<(), RegistryError> {
        if !self.authorize(Some(caller), Action::RegisterStakeholder).is_allow() {
            return Err(RegistryError::Unauthorized);
        }
        if !valid_stakeholder_id(&identity.stakeholder_id) {
            return Err(RegistryError::InvalidIdentity("stakeholder_id must be 1-64 chars of [A-Za-z0-9._-]".into()));
        }
        if identity.role == Role::Admin {
            return Err(RegistryError::InvalidIdentity("the admin role is bootstrap-only".into()));
        }
        if self.identities.contains_key(&identity.stakeholder_id) {
            return Err(RegistryError::DuplicateId(identity.stakeholder_id.clone()));
        }
        Ok(())
    }

    pub fn register_stakeholder(&mut self, caller: &str, identity: StakeholderIdentity) -> Result<String, RegistryError> {
        self.check_registration(caller, &identity)?;
        let id = identity.stakeholder_id.clone();
        self.identities.insert(id.clone(), identity);
        Ok(id)
    }

    /// Valid iff the envelope's signature verifies over its canonical body
    /// under the signer's registered key.
    pub fn verify_envelope_signature(&self, envelope: &Envelope) -> Result<bool, RegistryError> {
        let identity = self
            .get(&envelope.stakeholder_id)
            .ok_or_else(|| RegistryError::UnknownStakeholder(envelope.stakeholder_id.clone()))?;
        Ok(envelope.signature_valid(&identity.public_key))
    }
}
