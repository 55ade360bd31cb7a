use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use halaltrace_core::consensus::{simulate, SimValidator, SimulationConfig, SimulationReport};
use halaltrace_core::crypto::{PublicKey, SecretKey};
use halaltrace_core::envelope::{EntryKind, Envelope};
use halaltrace_core::ledger::Block;
use halaltrace_core::qr;
use halaltrace_core::records::{fixtures, utc_date, TraceabilityId};
use halaltrace_core::registry::StakeholderIdentity;
use halaltrace_core::service::{confirmation_body, qr_issuance_body};
use halaltrace_core::trace::{CheckStatus, ProvenanceReport, Verdict};
use halaltrace_node::api::{SubmitResponse, QR_PAYLOAD_HEADER};
use halaltrace_node::config::{write_key_file, NodeConfig};
use halaltrace_node::devnet::{self, DevnetOptions};
use halaltrace_node::state::{now_unix, ValidationReport};
use halaltrace_node::Node;
use serde_json::Value;

use crate::client::NodeClient;
use crate::error::CliError;
use crate::profile::{node_url, Profile, Signer};
use crate::*;

struct Ctx {
    node_flag: Option<String>,
    profile: Profile,
}

impl Ctx {
    fn client(&self) -> Result<NodeClient, CliError> {
        NodeClient::new(&node_url(self.node_flag.as_deref(), &self.profile))
    }

    fn signer(&self) -> Result<Signer, CliError> {
        self.profile.signer()
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Failed(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Failed(format!("cannot write {}: {e}", path.display())))
}

fn pretty(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("values serialize")
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let profile = match &cli.profile {
        Some(path) => Profile::load(path)?,
        None => Profile::default(),
    };
    let ctx = Ctx { node_flag: cli.node, profile };
    match cli.command {
        Command::Node(cmd) => node(cmd),
        Command::Keygen { out, force } => keygen(&out, force),
        Command::Stakeholder(cmd) => stakeholder(&ctx, cmd),
        Command::Record(cmd) => record(&ctx, cmd),
        Command::Trace { trace_id, json, as_of } => trace(&ctx, &trace_id, json, as_of),
        Command::Qr(cmd) => qr_cmd(&ctx, cmd),
        Command::Chain(cmd) => chain(&ctx, cmd),
        Command::Sim(SimCommand::Consensus(args)) => sim(&args),
        Command::Schema { name } => schema(name.as_deref()),
    }
}

/// Parses `id:stake,id:stake`.
pub fn parse_stakes(list: &str) -> Result<Vec<(String, u64)>, CliError> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (id, stake) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("expected id:stake, got `{item}`")))?;
            let stake = stake.parse().map_err(|_| CliError::Usage(format!("bad stake in `{item}`")))?;
            if id.is_empty() {
                return Err(CliError::Usage(format!("empty validator id in `{item}`")));
            }
            Ok((id.to_string(), stake))
        })
        .collect()
}

fn node(cmd: NodeCommand) -> Result<(), CliError> {
    match cmd {
        NodeCommand::Serve { config } => {
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
                )
                .init();
            let config = NodeConfig::load(&config).map_err(|e| CliError::Usage(e.to_string()))?;
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| CliError::Failed(e.to_string()))?;
            runtime.block_on(async {
                let node = Node::open(&config).map_err(|e| CliError::Failed(e.to_string()))?;
                node.serve().await.map_err(|e| CliError::Failed(e.to_string()))
            })
        }
        NodeCommand::Init { dir, validators, listen, batch_size, round_interval } => {
            let opts = DevnetOptions {
                listen,
                validators: parse_stakes(&validators)?,
                batch_size,
                round_interval_secs: round_interval,
                seed: None,
            };
            let net = devnet::init(&dir, &opts).map_err(|e| CliError::Failed(e.to_string()))?;
            let profile = Profile {
                node_url: Some(format!("http://{listen}")),
                stakeholder_id: Some(devnet::ADMIN_ID.into()),
                key_path: Some("keys/admin.key".into()),
            };
            let profile_path = dir.join("admin.profile.toml");
            write(&profile_path, toml::to_string_pretty(&profile).map_err(|e| CliError::Failed(e.to_string()))?)?;
            println!("config:        {}", net.config_path.display());
            println!("admin profile: {}", profile_path.display());
            println!("admin key:     {}", net.admin_key.public_key());
            Ok(())
        }
    }
}

fn keygen(out: &Path, force: bool) -> Result<(), CliError> {
    let public = out.with_extension(match out.extension() {
        Some(ext) => format!("{}.pub", ext.to_string_lossy()),
        None => "pub".into(),
    });
    if !force && (out.exists() || public.exists()) {
        return Err(CliError::Failed(format!("{} exists; pass --force to overwrite", out.display())));
    }
    let key = SecretKey::generate(&mut rand::rng());
    write_key_file(out, &key).map_err(|e| CliError::Failed(e.to_string()))?;
    write(&public, format!("{}\n", key.public_key()))?;
    println!("{}", key.public_key());
    Ok(())
}

fn stakeholder(ctx: &Ctx, cmd: StakeholderCommand) -> Result<(), CliError> {
    match cmd {
        StakeholderCommand::Register(args) => {
            let hex = match (&args.public_key, &args.public_key_file) {
                (Some(hex), _) => hex.clone(),
                (None, Some(path)) => String::from_utf8_lossy(&read(path)?).trim().to_string(),
                (None, None) => unreachable!("clap requires one key source"),
            };
            let public_key: PublicKey = hex.parse().map_err(|e| CliError::Usage(format!("public key: {e}")))?;
            let role = serde_json::to_value(format!("{:?}", args.role).to_lowercase()).expect("string");
            let identity = StakeholderIdentity {
                stakeholder_id: args.id,
                role: serde_json::from_value(role).map_err(|e| CliError::Usage(e.to_string()))?,
                public_key,
                display_name: args.display_name,
                contact: args.contact,
            };
            let signer = ctx.signer()?;
            let env = Envelope::signed(
                EntryKind::StakeholderRegistration,
                serde_json::to_value(&identity).expect("identity serializes"),
                &signer.id,
                &signer.key,
            );
            let reply: Value = ctx.client()?.post("/api/v1/stakeholders", &env)?;
            println!("registered {}", reply["stakeholder_id"].as_str().unwrap_or_default());
            Ok(())
        }
        StakeholderCommand::Show { id } => {
            let identity: StakeholderIdentity = ctx.client()?.get(&format!("/api/v1/stakeholders/{id}"))?;
            println!("{}", pretty(&identity));
            Ok(())
        }
    }
}

fn submit(ctx: &Ctx, stage: &str, kind: EntryKind, file: &Path) -> Result<(), CliError> {
    let body: Value = serde_json::from_slice(&read(file)?)
        .map_err(|e| CliError::Usage(format!("{} is not JSON: {e}", file.display())))?;
    let signer = ctx.signer()?;
    let env = Envelope::signed(kind, body, &signer.id, &signer.key);
    let reply: SubmitResponse = ctx.client()?.post(&format!("/api/v1/records/{stage}"), &env)?;
    println!("{} {}", reply.trace_id, reply.status);
    Ok(())
}

fn record(ctx: &Ctx, cmd: RecordCommand) -> Result<(), CliError> {
    match cmd {
        RecordCommand::SubmitCultivator { file } => submit(ctx, "cultivator", EntryKind::CultivatorRecord, &file),
        RecordCommand::SubmitMaker { file } => submit(ctx, "maker", EntryKind::MakerRecord, &file),
        RecordCommand::SubmitMerchant { file } => submit(ctx, "merchant", EntryKind::MerchantRecord, &file),
        RecordCommand::Confirm { trace_id } => {
            let signer = ctx.signer()?;
            let env = Envelope::signed(EntryKind::Confirmation, confirmation_body(&trace_id, now_unix()), &signer.id, &signer.key);
            let reply: Value = ctx.client()?.post(&format!("/api/v1/records/{trace_id}/confirm"), &env)?;
            println!("confirmed {trace_id} ({})", reply["status"].as_str().unwrap_or("pending"));
            Ok(())
        }
        RecordCommand::Example { stage } => {
            let now = now_unix();
            let placeholder = |s: &str| -> TraceabilityId { s.parse().expect("valid placeholder id") };
            let body = match stage {
                StageArg::Cultivator => serde_json::to_value(fixtures::poultry_farm(now)),
                StageArg::Maker => serde_json::to_value(fixtures::maker(&[placeholder("CUL-00000000")], utc_date(now), now)),
                StageArg::Merchant => serde_json::to_value(fixtures::merchant(placeholder("MAK-00000000"), utc_date(now), now)),
            };
            println!("{}", pretty(&body.expect("fixtures serialize")));
            Ok(())
        }
    }
}

fn status_mark(status: CheckStatus) -> &'static str {
    match status {
        CheckStatus::Pass => "pass",
        CheckStatus::Fail => "FAIL",
        CheckStatus::Warn => "warn",
    }
}

pub fn render_report(report: &ProvenanceReport) -> String {
    let mut out = String::new();
    let verdict = match report.verdict {
        Verdict::Verified => "VERIFIED",
        Verdict::Incomplete => "INCOMPLETE",
        Verdict::Inconsistent => "INCONSISTENT",
    };
    out.push_str(&format!("{}  {verdict}  (as of {})\n", report.query_id, report.as_of));
    out.push_str("stages:\n");
    for s in &report.stages {
        out.push_str(&format!("  {}  height {:<6} by {}\n", s.trace_id, s.block_height, s.submitted_by));
    }
    if !report.confirmations.is_empty() {
        out.push_str("confirmations:\n");
        for c in &report.confirmations {
            out.push_str(&format!("  {} confirmed by {} at height {}\n", c.subject_trace_id, c.confirmer_id, c.block_height));
        }
    }
    out.push_str("checks:\n");
    for c in &report.checks {
        out.push_str(&format!("  [{}] {}: {}\n", status_mark(c.status), c.check_name, c.detail));
    }
    out
}

fn show_report(report: &ProvenanceReport, json: bool) {
    if json {
        println!("{}", pretty(report));
    } else {
        print!("{}", render_report(report));
    }
}

fn trace(ctx: &Ctx, trace_id: &str, json: bool, as_of: Option<NaiveDate>) -> Result<(), CliError> {
    let query = as_of.map(|d| format!("?as_of={d}")).unwrap_or_default();
    let report: ProvenanceReport = ctx.client()?.get(&format!("/api/v1/trace/{trace_id}{query}"))?;
    show_report(&report, json);
    Ok(())
}

fn qr_cmd(ctx: &Ctx, cmd: QrCommand) -> Result<(), CliError> {
    match cmd {
        QrCommand::Issue { trace_id, out } => {
            let signer = ctx.signer()?;
            let env = Envelope::signed(EntryKind::QrIssuance, qr_issuance_body(&trace_id, now_unix()), &signer.id, &signer.key);
            let (png, payload) = ctx.client()?.post_for_bytes(&format!("/api/v1/products/{trace_id}/qr"), &env, QR_PAYLOAD_HEADER)?;
            write(&out, png)?;
            println!("{}", payload.unwrap_or_default());
            Ok(())
        }
        QrCommand::Decode { png } => {
            let text = qr::decode_qr(&read(&png)?).map_err(|e| CliError::Failed(e.to_string()))?;
            qr::parse_payload(&text).map_err(|e| CliError::Failed(format!("{e}: `{text}`")))?;
            println!("{text}");
            Ok(())
        }
        QrCommand::Verify { png, json } => {
            let report: ProvenanceReport = ctx.client()?.post_bytes("/api/v1/qr/verify", "image/png", read(&png)?)?;
            show_report(&report, json);
            Ok(())
        }
    }
}

fn chain(ctx: &Ctx, cmd: ChainCommand) -> Result<(), CliError> {
    let client = ctx.client()?;
    match cmd {
        ChainCommand::Validate => {
            let report: ValidationReport = client.get("/api/v1/chain/validate")?;
            if report.valid {
                println!("valid: height {} tip {}", report.tip_height, report.tip_hash);
                Ok(())
            } else {
                Err(CliError::Failed(format!(
                    "invalid at height {}: {}",
                    report.invalid_height.map(|h| h.to_string()).unwrap_or_else(|| "?".into()),
                    report.reason.unwrap_or_default()
                )))
            }
        }
        ChainCommand::Block { height } => {
            let block: Block = match height {
                Some(h) => client.get(&format!("/api/v1/chain/blocks/{h}"))?,
                None => client.get("/api/v1/chain/tip")?,
            };
            println!("{}", pretty(&block));
            Ok(())
        }
    }
}

pub fn render_sim(report: &SimulationReport, stakes: &BTreeMap<String, u64>) -> String {
    let total: u64 = stakes.values().sum();
    let mut out = format!(
        "rounds {}  committed {}  rejected {}  height {}  chain {}\n",
        report.rounds,
        report.committed,
        report.rejected,
        report.final_height,
        if report.chain_valid { "valid" } else { "INVALID" }
    );
    out.push_str(&format!("{:<16} {:>6} {:>8} {:>10} {:>10}\n", "validator", "stake", "selected", "observed", "expected"));
    for (id, stake) in stakes {
        out.push_str(&format!(
            "{:<16} {:>6} {:>8} {:>10.4} {:>10.4}\n",
            id,
            stake,
            report.per_validator_counts.get(id).copied().unwrap_or(0),
            report.proposer_frequency.get(id).copied().unwrap_or(0.0),
            *stake as f64 / total.max(1) as f64
        ));
    }
    for (reason, n) in &report.rejected_by_reason {
        out.push_str(&format!("rejected ({reason}): {n}\n"));
    }
    out.push_str(&format!("tip {}\n", report.tip_hash));
    out
}

fn sim(args: &SimArgs) -> Result<(), CliError> {
    let stakes = parse_stakes(&args.validators)?;
    let config = SimulationConfig {
        validators: stakes.iter().map(|(id, stake)| SimValidator { id: id.clone(), stake: *stake }).collect(),
        rounds: args.rounds,
        records_per_round: args.records_per_round,
        drop_rate: args.drop_rate,
        rng_seed: args.seed,
        batch_size: args.batch_size,
    };
    let report = simulate(&config).map_err(|e| CliError::Usage(e.to_string()))?;
    if args.json {
        println!("{}", pretty(&report));
    } else {
        print!("{}", render_sim(&report, &stakes.into_iter().collect()));
    }
    Ok(())
}

fn schema(name: Option<&str>) -> Result<(), CliError> {
    let mut all = halaltrace_node::api::schemas();
    match name {
        None => {
            for name in all.keys() {
                println!("{name}");
            }
            Ok(())
        }
        Some(n) => {
            let doc = all.remove(n).ok_or_else(|| CliError::Usage(format!("no schema named `{n}`")))?;
            println!("{}", pretty(&doc));
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stake_specs() {
        assert_eq!(parse_stakes("A:1,B:3").unwrap(), vec![("A".to_string(), 1), ("B".to_string(), 3)]);
        assert_eq!(parse_stakes(" A:1 , ").unwrap(), vec![("A".to_string(), 1)]);
        for bad in ["A", "A:x", ":1"] {
            assert!(matches!(parse_stakes(bad), Err(CliError::Usage(_))), "{bad}");
        }
    }
}
