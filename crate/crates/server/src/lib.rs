//! The single process a deployment runs: configuration, recovery from the
//! data directory, and the HTTP API.

pub mod api;
pub mod auth;
pub mod config;
pub mod journal;

use std::net::SocketAddr;
use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use heteroglossia_core::distance::{load_embeddings, load_sidecar, DistanceScorer};
use heteroglossia_core::engine::{Engine, EventSink, ReplayError, Settings};
use heteroglossia_core::{Clock, GateConfig, ManualClock, SystemClock};
use parking_lot::RwLock;
use thiserror::Error;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use api::{router, AppState, SubmitResponse};
pub use config::{resolve_config_path, ClockKind, Config, ConfigError, CONFIG_ENV};
pub use journal::{Journal, JournalSink, RecoveryError};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
    #[error("cannot listen on {address}: {message}")]
    PortBind { address: String, message: String },
}

/// Builds the scorer from the configured vector files.
pub fn load_scorer(config: &Config) -> Result<DistanceScorer, ConfigError> {
    let store = match &config.embedding_path {
        Some(p) => Some(Arc::new(
            load_embeddings(p, config.case_folding).map_err(|e| ConfigError::Embeddings(e.to_string()))?,
        )),
        None => None,
    };
    let sidecar = match &config.sidecar_path {
        Some(p) => Some(Arc::new(load_sidecar(p).map_err(|e| ConfigError::Embeddings(e.to_string()))?)),
        None => None,
    };
    let scorer = DistanceScorer::new(store, sidecar);
    match &config.distance_metrics {
        Some(metrics) => scorer
            .with_metrics(metrics.clone())
            .map_err(|e| ConfigError::Embeddings(e.to_string())),
        None => Ok(scorer),
    }
}

pub fn settings(config: &Config) -> Settings {
    Settings {
        gates: GateConfig {
            time_lock_ms: config.time_lock_ms(),
            min_idea_words: config.min_idea_words,
            copy_overlap_tokens: config.copy_overlap_tokens,
        },
        duplicate_distance_threshold: config.duplicate_distance_threshold,
    }
}

#[derive(Clone)]
pub struct Service {
    state: AppState,
}

impl Service {
    /// Validates the config, loads vectors, then recovers state from the
    /// data directory. Nothing is written before all of that succeeds.
    pub fn open(config: &Config) -> Result<Service, ServeError> {
        config.validate()?;
        let scorer = load_scorer(config)?;
        let (journal, recovered) = Journal::open(&config.data_dir, config.fsync)?;
        if recovered.dropped_tail_bytes > 0 {
            tracing::warn!(bytes = recovered.dropped_tail_bytes, "dropped torn tail of the event log");
        }
        let sink = JournalSink::new(journal);
        let (clock, manual) = make_clock(config, recovered.last_at);
        let mut engine = Engine::new(clock, Box::new(sink.clone()))
            .with_settings(settings(config))
            .with_scorer(scorer);
        let snapshot_seq = recovered.snapshot.as_ref().map_or(0, |s| s.1);
        if let Some((state, seq)) = recovered.snapshot {
            engine = engine.with_snapshot(state, seq);
        }
        engine.replay(recovered.records).map_err(|e| match e {
            ReplayError::Gap { expected, found } => RecoveryError::Gap { expected, found },
        })?;
        tracing::info!(seq = engine.seq(), "state recovered");
        Ok(Service::assemble(config, engine, Some(sink), manual, snapshot_seq))
    }

    /// A service over a caller-supplied event sink with nothing recovered.
    /// Used to inject storage faults.
    pub fn with_sink(config: &Config, sink: Box<dyn EventSink>) -> Result<Service, ServeError> {
        config.validate()?;
        let scorer = load_scorer(config)?;
        let (clock, manual) = make_clock(config, None);
        let engine = Engine::new(clock, sink).with_settings(settings(config)).with_scorer(scorer);
        Ok(Service::assemble(config, engine, None, manual, 0))
    }

    fn assemble(
        config: &Config,
        engine: Engine,
        journal: Option<JournalSink>,
        manual_clock: Option<Arc<ManualClock>>,
        snapshot_seq: u64,
    ) -> Service {
        Service {
            state: AppState {
                engine: Arc::new(RwLock::new(engine)),
                journal,
                writer_key: config.writer_key.as_str().into(),
                manual_clock,
                default_quota: config.per_character_quota,
                snapshot_every: config.snapshot_every,
                last_snapshot: Arc::new(AtomicU64::new(snapshot_seq)),
            },
        }
    }

    pub fn engine(&self) -> Arc<RwLock<Engine>> {
        self.state.engine.clone()
    }

    pub fn router(&self) -> axum::Router {
        router(self.state.clone())
    }

    /// Forces a snapshot now, if the service has a journal.
    pub fn snapshot(&self) -> Result<(), heteroglossia_core::StorageError> {
        if let Some(journal) = &self.state.journal {
            let engine = self.state.engine.write();
            journal.snapshot(engine.state(), engine.seq(), engine.now())?;
            self.state
                .last_snapshot
                .store(engine.seq(), std::sync::atomic::Ordering::Relaxed);
        }
        Ok(())
    }
}

fn make_clock(
    config: &Config,
    last_at: Option<heteroglossia_core::Timestamp>,
) -> (Arc<dyn Clock>, Option<Arc<ManualClock>>) {
    match config.clock {
        ClockKind::System => (Arc::new(SystemClock), None),
        ClockKind::Manual => {
            let start = last_at.map_or(config.clock_start, |t| t.max(config.clock_start));
            let clock = Arc::new(ManualClock::new(start));
            (clock.clone(), Some(clock))
        }
    }
}

/// A service listening in the background.
pub struct Running {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    handle: JoinHandle<std::io::Result<()>>,
}

impl Running {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.handle.await;
    }
}

pub async fn spawn(service: &Service, address: &str) -> Result<Running, ServeError> {
    let listener = tokio::net::TcpListener::bind(address)
        .await
        .map_err(|e| ServeError::PortBind {
            address: address.to_string(),
            message: e.to_string(),
        })?;
    let addr = listener.local_addr().map_err(|e| ServeError::PortBind {
        address: address.to_string(),
        message: e.to_string(),
    })?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = service.router();
    let handle = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    Ok(Running {
        addr,
        shutdown: Some(tx),
        handle,
    })
}

/// Runs until interrupted.
pub async fn serve(config: &Config) -> Result<(), ServeError> {
    let service = Service::open(config)?;
    let running = spawn(&service, &config.listen_address).await?;
    tracing::info!("listening on {}", running.url());
    let _ = tokio::signal::ctrl_c().await;
    running.stop().await;
    Ok(())
}
