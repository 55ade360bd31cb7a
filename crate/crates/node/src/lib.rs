//! HTTP node for the traceability ledger: configuration, the durable chain
//! log, the round driver and the `/api/v1` router.

pub mod api;
pub mod config;
pub mod devnet;
pub mod error;
pub mod log;
pub mod state;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use halaltrace_core::service::{ServiceConfig, TraceabilityService};
use tokio::net::TcpListener;
use tokio::sync::watch;

pub use config::{ConfigError, NodeConfig};
pub use error::{ApiError, ErrorBody};
pub use log::{ChainLog, LogError};
pub use state::{CostReport, Shared};

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server: {0}")]
    Serve(std::io::Error),
}

/// A loaded node: chain recovered from disk, not yet serving.
pub struct Node {
    shared: Arc<Shared>,
    listen: SocketAddr,
}

impl Node {
    /// Loads validator keys, recovers the chain log and rebuilds all state.
    pub fn open(config: &NodeConfig) -> Result<Node, NodeError> {
        config.validate()?;
        let (stakes, validator_keys) = config.validator_set()?;
        let (log, recovered) = ChainLog::open(&config.data_dir, &stakes)?;
        if recovered.truncated_bytes > 0 {
            tracing::warn!(bytes = recovered.truncated_bytes, "recovered from a torn log write");
        }
        tracing::info!(height = recovered.chain.tip_height(), "chain loaded");
        let service = TraceabilityService::from_chain(
            recovered.chain,
            ServiceConfig {
                admin_id: config.admin.id.clone(),
                admin_key: config.admin.public_key,
                stakes,
                validator_keys,
                batch_size: config.batch_size,
                rng_seed: config.rng_seed,
            },
        );
        Ok(Node { shared: Shared::new(service, log, config.round_interval()), listen: config.listen })
    }

    pub fn shared(&self) -> Arc<Shared> {
        self.shared.clone()
    }

    pub fn router(&self) -> axum::Router {
        api::router(self.shared.clone())
    }

    /// Serves on `listener` and drives rounds until `shutdown` resolves.
    pub async fn run(self, listener: TcpListener, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), NodeError> {
        let (stop_tx, stop_rx) = watch::channel(false);
        let driver = tokio::spawn(state::drive(self.shared.clone(), stop_rx));
        let app = api::router(self.shared.clone());
        let served = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
        let _ = stop_tx.send(true);
        let _ = driver.await;
        served.map_err(NodeError::Serve)
    }

    /// Binds the configured address and serves until Ctrl-C.
    pub async fn serve(self) -> Result<(), NodeError> {
        let listener = TcpListener::bind(self.listen).await.map_err(|source| NodeError::Bind { addr: self.listen, source })?;
        tracing::info!(addr = %listener.local_addr().map_err(NodeError::Serve)?, "listening");
        self.run(listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    }
}

/// A node serving from its own thread and runtime. Used by tests and tools
/// that call the API with blocking clients.
pub struct BackgroundNode {
    pub addr: SocketAddr,
    pub shared: Arc<Shared>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<Result<(), NodeError>>>,
}

impl BackgroundNode {
    pub fn start(config: &NodeConfig) -> Result<BackgroundNode, NodeError> {
        let node = Node::open(config)?;
        let shared = node.shared();
        let std_listener =
            std::net::TcpListener::bind(config.listen).map_err(|source| NodeError::Bind { addr: config.listen, source })?;
        std_listener.set_nonblocking(true).map_err(NodeError::Serve)?;
        let addr = std_listener.local_addr().map_err(NodeError::Serve)?;
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(NodeError::Serve)?;
            runtime.block_on(async move {
                let listener = TcpListener::from_std(std_listener).map_err(NodeError::Serve)?;
                node.run(listener, async {
                    let _ = stopped.await;
                })
                .await
            })
        });
        Ok(BackgroundNode { addr, shared, stop: Some(stop), thread: Some(thread) })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops serving and waits for the driver to finish any round in flight.
    pub fn stop(mut self) -> Result<(), NodeError> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<(), NodeError> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(NodeError::Serve(std::io::Error::other("node thread panicked")))),
            None => Ok(()),
        }
    }
}

impl Drop for BackgroundNode {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}
