//! HTTP front end of the quantum internet service provider: reservations,
//! manual routing, topology, live status over server-sent events, and
//! measurement jobs against the simulated hardware.

pub mod api;
pub mod clock;
pub mod jobs;
pub mod writer;

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::Router;
use qisp_core::engine::{Engine, EngineError};
use qisp_core::QispConfig;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, watch};
use tokio::task::JoinHandle;

pub use clock::{Clock, ManualClock, SystemClock};
pub use writer::{ServerEvent, Snapshot, WriterHandle};

use jobs::JobStore;

pub struct ServiceOptions {
    pub clock: Arc<dyn Clock>,
    /// Drive scheduler ticks from a timer every `tick_ms`. Off in tests that
    /// tick by hand.
    pub ticker: bool,
    pub job_workers: usize,
    pub job_ttl_ms: u64,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        ServiceOptions {
            clock: Arc::new(SystemClock),
            ticker: true,
            job_workers: jobs::DEFAULT_WORKERS,
            job_ttl_ms: jobs::DEFAULT_TTL_MS,
        }
    }
}

pub(crate) struct Shared {
    pub config: Arc<QispConfig>,
    pub writer: WriterHandle,
    pub snapshot: watch::Receiver<Arc<Snapshot>>,
    pub events: broadcast::Sender<ServerEvent>,
    pub jobs: JobStore,
    pub clock: Arc<dyn Clock>,
}

#[derive(Clone)]
pub struct AppState(pub(crate) Arc<Shared>);

pub struct Service {
    state: AppState,
    ticker: Option<JoinHandle<()>>,
}

impl Service {
    /// Opens (and replays) the journal, then starts the writer and, if asked,
    /// the ticker. Must be called inside a tokio runtime.
    pub fn start(config: QispConfig, options: ServiceOptions) -> Result<Service, EngineError> {
        let engine = Engine::from_config(&config)?;
        let (events, _) = broadcast::channel(1024);
        let (writer, snapshot) = writer::spawn_writer(
            engine,
            Arc::new(config.topology.clone()),
            options.clock.clone(),
            events.clone(),
        );
        let tick = Duration::from_millis(config.tick_ms.max(1));
        let state = AppState(Arc::new(Shared {
            config: Arc::new(config),
            writer: writer.clone(),
            snapshot,
            events,
            jobs: JobStore::new(options.job_workers, options.job_ttl_ms),
            clock: options.clock,
        }));
        let ticker = options.ticker.then(|| {
            tokio::spawn(async move {
                let mut interval = tokio::time::interval(tick);
                interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
                loop {
                    interval.tick().await;
                    if let Err(writer::WriterError::Stopped) = writer.tick().await {
                        break;
                    }
                }
            })
        });
        Ok(Service { state, ticker })
    }

    pub fn router(&self) -> Router {
        api::router(self.state.clone())
    }

    pub fn writer(&self) -> &WriterHandle {
        &self.state.0.writer
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.state.0.snapshot.borrow().clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ServerEvent> {
        self.state.0.events.subscribe()
    }

    pub fn config(&self) -> &QispConfig {
        &self.state.0.config
    }

    /// Serves until `shutdown` resolves.
    pub async fn serve(mut self, listener: TcpListener, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
        let app = self.router();
        let result = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
        if let Some(t) = self.ticker.take() {
            t.abort();
        }
        result
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        if let Some(t) = &self.ticker {
            t.abort();
        }
    }
}
