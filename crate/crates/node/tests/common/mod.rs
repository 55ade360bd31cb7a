#![allow(dead_code)]

use std::time::{Duration, Instant};

use halaltrace_core::crypto::SecretKey;
use halaltrace_core::envelope::{EntryKind, Envelope};
use halaltrace_core::records::fixtures;
use halaltrace_core::records::{utc_date, TraceabilityId};
use halaltrace_core::registry::{Role, StakeholderIdentity};
use halaltrace_core::service::{confirmation_body, qr_issuance_body};
use halaltrace_node::devnet::{self, Devnet, DevnetOptions};
use halaltrace_node::BackgroundNode;
use serde::Serialize;
use serde_json::Value;

pub const T0: u64 = 1_709_251_200;

pub struct Net {
    pub dir: tempfile::TempDir,
    pub devnet: Devnet,
}

impl Net {
    pub fn new(batch_size: usize, round_interval_secs: f64) -> Net {
        let dir = tempfile::tempdir().unwrap();
        let opts = DevnetOptions {
            listen: "127.0.0.1:0".parse().unwrap(),
            validators: vec![("v1".into(), 1), ("v2".into(), 2), ("v3".into(), 3)],
            batch_size,
            round_interval_secs,
            seed: Some(11),
        };
        let devnet = devnet::init(dir.path(), &opts).unwrap();
        Net { dir, devnet }
    }

    pub fn start(&self) -> (BackgroundNode, Api) {
        let node = BackgroundNode::start(&self.devnet.config).unwrap();
        let api = Api::new(&node.base_url());
        (node, api)
    }

    pub fn admin(&self) -> &SecretKey {
        &self.devnet.admin_key
    }

    pub fn log_path(&self) -> std::path::PathBuf {
        self.devnet.config.data_dir.join(halaltrace_node::log::LOG_FILE)
    }
}

pub struct Api {
    pub base: String,
    pub http: reqwest::blocking::Client,
}

pub struct Reply {
    pub status: u16,
    pub headers: reqwest::header::HeaderMap,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or(Value::Null)
    }

    pub fn code(&self) -> String {
        self.json()["code"].as_str().unwrap_or_default().to_string()
    }
}

impl Api {
    pub fn new(base: &str) -> Api {
        Api { base: base.to_string(), http: reqwest::blocking::Client::builder().timeout(Duration::from_secs(30)).build().unwrap() }
    }

    fn finish(r: reqwest::blocking::Response) -> Reply {
        let status = r.status().as_u16();
        let headers = r.headers().clone();
        Reply { status, headers, bytes: r.bytes().unwrap().to_vec() }
    }

    pub fn get(&self, path: &str) -> Reply {
        Self::finish(self.http.get(format!("{}{path}", self.base)).send().unwrap())
    }

    pub fn post<T: Serialize + ?Sized>(&self, path: &str, body: &T) -> Reply {
        Self::finish(self.http.post(format!("{}{path}", self.base)).json(body).send().unwrap())
    }

    pub fn post_raw(&self, path: &str, content_type: &str, body: Vec<u8>) -> Reply {
        Self::finish(
            self.http
                .post(format!("{}{path}", self.base))
                .header(reqwest::header::CONTENT_TYPE, content_type)
                .body(body)
                .send()
                .unwrap(),
        )
    }

    pub fn height(&self) -> u64 {
        self.get("/api/v1/health").json()["height"].as_u64().unwrap()
    }

    pub fn pending(&self) -> u64 {
        self.get("/api/v1/health").json()["pending"].as_u64().unwrap()
    }

    pub fn tip_hash(&self) -> String {
        self.get("/api/v1/chain/tip").json()["hash"].as_str().unwrap().to_string()
    }

    /// Waits for the pool to empty; panics after `limit`.
    pub fn settle(&self, limit: Duration) {
        assert!(wait_for(limit, || self.pending() == 0), "pool did not drain within {limit:?}");
    }

    pub fn register(&self, admin: &SecretKey, id: &str, role: Role) -> SecretKey {
        let key = SecretKey::from_label(&format!("stakeholder|{id}"));
        let identity = StakeholderIdentity {
            stakeholder_id: id.into(),
            role,
            public_key: key.public_key(),
            display_name: id.into(),
            contact: format!("{id}@example.org"),
        };
        let env = signed(EntryKind::StakeholderRegistration, &identity, devnet::ADMIN_ID, admin);
        let r = self.post("/api/v1/stakeholders", &env);
        assert_eq!(r.status, 201, "{}", String::from_utf8_lossy(&r.bytes));
        key
    }

    pub fn submit(&self, stage: &str, env: &Envelope) -> Reply {
        self.post(&format!("/api/v1/records/{stage}"), env)
    }
}

pub fn signed<T: Serialize>(kind: EntryKind, body: &T, who: &str, key: &SecretKey) -> Envelope {
    Envelope::signed(kind, serde_json::to_value(body).unwrap(), who, key)
}

pub fn wait_for(limit: Duration, mut ready: impl FnMut() -> bool) -> bool {
    let start = Instant::now();
    while start.elapsed() < limit {
        if ready() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    ready()
}

pub struct Product {
    pub cul: TraceabilityId,
    pub mak: TraceabilityId,
    pub mer: TraceabilityId,
    pub shop: SecretKey,
}

/// Registers farm/plant/shop and commits a confirmed CUL -> MAK -> MER chain.
pub fn build_product(api: &Api, admin: &SecretKey) -> Product {
    let farm = api.register(admin, "farm", Role::Cultivator);
    let plant = api.register(admin, "plant", Role::Maker);
    let shop = api.register(admin, "shop", Role::Merchant);
    let limit = Duration::from_secs(20);
    let id = |r: Reply| -> TraceabilityId {
        assert_eq!(r.status, 202, "{}", String::from_utf8_lossy(&r.bytes));
        r.json()["trace_id"].as_str().unwrap().parse().unwrap()
    };

    let cul = id(api.submit("cultivator", &signed(EntryKind::CultivatorRecord, &fixtures::poultry_farm(T0), "farm", &farm)));
    api.settle(limit);
    let day = utc_date(T0 + 86_400);
    let mak = id(api.submit("maker", &signed(EntryKind::MakerRecord, &fixtures::maker(&[cul], day, T0 + 60), "plant", &plant)));
    let conf = Envelope::signed(EntryKind::Confirmation, confirmation_body(&cul.to_string(), T0 + 60), "plant", &plant);
    assert_eq!(api.post(&format!("/api/v1/records/{cul}/confirm"), &conf).status, 202);
    api.settle(limit);
    let mer = id(api.submit("merchant", &signed(EntryKind::MerchantRecord, &fixtures::merchant(mak, day, T0 + 120), "shop", &shop)));
    let conf = Envelope::signed(EntryKind::Confirmation, confirmation_body(&mak.to_string(), T0 + 120), "shop", &shop);
    assert_eq!(api.post(&format!("/api/v1/records/{mak}/confirm"), &conf).status, 202);
    api.settle(limit);
    Product { cul, mak, mer, shop }
}

pub fn qr_envelope(product: &Product) -> Envelope {
    Envelope::signed(EntryKind::QrIssuance, qr_issuance_body(&product.mer.to_string(), T0 + 180), "shop", &product.shop)
}
