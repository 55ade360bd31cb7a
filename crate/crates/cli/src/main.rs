//! `halaltrace`: run a node, manage keys and stakeholders, submit records,
//! trace products and work with QR labels.

mod client;
mod commands;
mod error;
mod profile;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::profile::{NODE_URL_ENV, PROFILE_ENV};

#[derive(Debug, Parser)]
#[command(name = "halaltrace", version, about = "Halal supply-chain traceability ledger")]
pub struct Cli {
    /// Node base URL.
    #[arg(long, global = true, env = NODE_URL_ENV)]
    pub node: Option<String>,
    /// Profile file with node_url, stakeholder_id and key_path.
    #[arg(long, global = true, env = PROFILE_ENV)]
    pub profile: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run or scaffold a node.
    #[command(subcommand)]
    Node(NodeCommand),
    /// Generate an Ed25519 key pair (`<out>` secret, `<out>.pub` public).
    Keygen {
        #[arg(long)]
        out: PathBuf,
        /// Overwrite existing files.
        #[arg(long)]
        force: bool,
    },
    #[command(subcommand)]
    Stakeholder(StakeholderCommand),
    #[command(subcommand)]
    Record(RecordCommand),
    /// Print the provenance report for a trace id.
    Trace {
        trace_id: String,
        #[arg(long)]
        json: bool,
        /// Judge certificate validity at this date (YYYY-MM-DD) instead of today.
        #[arg(long)]
        as_of: Option<chrono::NaiveDate>,
    },
    #[command(subcommand)]
    Qr(QrCommand),
    #[command(subcommand)]
    Chain(ChainCommand),
    #[command(subcommand)]
    Sim(SimCommand),
    /// Print a published JSON schema, or list them without a name.
    Schema { name: Option<String> },
}

#[derive(Debug, Subcommand)]
pub enum NodeCommand {
    /// Serve the HTTP API and run consensus rounds.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write keys, node.toml and an admin profile into a directory.
    Init {
        #[arg(long)]
        dir: PathBuf,
        /// Validator stakes as `id:stake,...`.
        #[arg(long, default_value = "validator-a:1,validator-b:3")]
        validators: String,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: std::net::SocketAddr,
        #[arg(long, default_value_t = 100)]
        batch_size: usize,
        #[arg(long, default_value_t = 5.0)]
        round_interval: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RoleArg {
    Cultivator,
    Maker,
    Merchant,
    Consumer,
    Admin,
}

#[derive(Debug, Subcommand)]
pub enum StakeholderCommand {
    /// Register a stakeholder (the profile must be the admin).
    Register(RegisterArgs),
    /// Show a registered identity.
    Show { id: String },
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub id: String,
    #[arg(long, value_enum)]
    pub role: RoleArg,
    /// Public key as 64 hex chars.
    #[arg(long, conflicts_with = "public_key_file", required_unless_present = "public_key_file")]
    pub public_key: Option<String>,
    /// File holding the public key, as written by `keygen` (`<out>.pub`).
    #[arg(long)]
    pub public_key_file: Option<PathBuf>,
    #[arg(long, default_value = "")]
    pub display_name: String,
    #[arg(long, default_value = "")]
    pub contact: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StageArg {
    Cultivator,
    Maker,
    Merchant,
}

#[derive(Debug, Subcommand)]
pub enum RecordCommand {
    /// Sign and submit a cultivator record body (JSON file).
    SubmitCultivator {
        #[arg(long)]
        file: PathBuf,
    },
    /// Sign and submit a maker record body (JSON file).
    SubmitMaker {
        #[arg(long)]
        file: PathBuf,
    },
    /// Sign and submit a merchant record body (JSON file).
    SubmitMerchant {
        #[arg(long)]
        file: PathBuf,
    },
    /// Confirm receipt of an upstream record.
    Confirm { trace_id: String },
    /// Print an example record body for a stage.
    Example {
        #[arg(value_enum)]
        stage: StageArg,
    },
}

#[derive(Debug, Subcommand)]
pub enum QrCommand {
    /// Issue the QR label for a merchant record and save the PNG.
    Issue {
        trace_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a QR image locally and print its payload.
    Decode { png: PathBuf },
    /// Verify a QR image against the node and print the provenance report.
    Verify {
        png: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum ChainCommand {
    /// Re-validate the node's persisted chain.
    Validate,
    /// Print a block as JSON (the tip without a height).
    Block { height: Option<u64> },
}

#[derive(Debug, Subcommand)]
pub enum SimCommand {
    /// Simulate proof-of-stake rounds in memory.
    Consensus(SimArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Validator stakes as `id:stake,...`.
    #[arg(long)]
    pub validators: String,
    #[arg(long)]
    pub rounds: u64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub records_per_round: usize,
    #[arg(long, default_value_t = 0.0)]
    pub drop_rate: f64,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long)]
    pub json: bool,
}

fn main() {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
