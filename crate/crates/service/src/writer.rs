//! The single writer: one task owns the engine and applies every calendar
//! and fabric mutation in arrival order. Readers see committed snapshots
//! through a watch channel and never block the writer.

use std::fmt::Write as _;
use std::sync::Arc;

use qisp_core::engine::{Engine, EngineError, SubmitOutcome};
use qisp_core::fabric::{ChannelKind, FabricSnapshot, FabricState, UserId};
use qisp_core::scheduler::{
    Calendar, Decision, FabricOp, Reservation, ReservationDraft, ReservationId, SchedulerAction,
};
use qisp_core::status::{status_frame, StatusFrame};
use qisp_core::Topology;
use serde::Serialize;
use thiserror::Error;
use tokio::sync::{broadcast, mpsc, oneshot, watch};

use crate::clock::Clock;

/// Committed state as of `frame.timestamp_ms`.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub calendar: Calendar,
    pub fabric: FabricState,
    pub frame: Arc<StatusFrame>,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobNotice {
    pub id: String,
    pub owner: UserId,
    pub state: crate::jobs::JobState,
}

#[derive(Debug, Clone)]
pub enum ServerEvent {
    Status(Arc<StatusFrame>),
    Action(SchedulerAction),
    Job(JobNotice),
}

#[derive(Debug, Error)]
pub enum WriterError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("scheduler writer has stopped")]
    Stopped,
}

type Reply<T> = oneshot::Sender<Result<T, EngineError>>;

enum Command {
    Submit(ReservationDraft, Reply<SubmitOutcome>),
    Cancel(ReservationId, Reply<(Reservation, Option<SchedulerAction>)>),
    Override(ChannelKind, u8, Option<UserId>, Reply<FabricSnapshot>),
    Tick(Reply<Vec<SchedulerAction>>),
}

#[derive(Clone)]
pub struct WriterHandle {
    tx: mpsc::Sender<Command>,
}

impl WriterHandle {
    async fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, WriterError> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).await.map_err(|_| WriterError::Stopped)?;
        Ok(rx.await.map_err(|_| WriterError::Stopped)??)
    }

    pub async fn submit(&self, draft: ReservationDraft) -> Result<SubmitOutcome, WriterError> {
        self.call(|r| Command::Submit(draft, r)).await
    }

    pub async fn cancel(&self, id: ReservationId) -> Result<(Reservation, Option<SchedulerAction>), WriterError> {
        self.call(|r| Command::Cancel(id, r)).await
    }

    pub async fn override_route(
        &self,
        kind: ChannelKind,
        channel: u8,
        user: Option<UserId>,
    ) -> Result<FabricSnapshot, WriterError> {
        self.call(|r| Command::Override(kind, channel, user, r)).await
    }

    pub async fn tick(&self) -> Result<Vec<SchedulerAction>, WriterError> {
        self.call(Command::Tick).await
    }
}

struct Writer {
    engine: Engine,
    topology: Arc<Topology>,
    clock: Arc<dyn Clock>,
    last_ms: u64,
    snapshot: watch::Sender<Arc<Snapshot>>,
    events: broadcast::Sender<ServerEvent>,
}

pub fn describe(action: &SchedulerAction) -> String {
    let mut line = format!("{:?} {} for {}:", action.kind, action.reservation, action.user).to_lowercase();
    for op in &action.ops {
        match op {
            FabricOp::Route { kind, channel, user } => write!(line, " {kind} {channel} -> {user}"),
            FabricOp::Release { kind, channel } => write!(line, " {kind} {channel} released"),
        }
        .expect("write to string");
    }
    write!(line, " (settled at {} ms)", action.settled_ms).expect("write to string");
    line
}

fn snapshot(engine: &Engine, topology: &Topology, now: u64) -> Snapshot {
    let frame = status_frame(topology, engine.calendar(), engine.fabric(), now);
    Snapshot {
        calendar: engine.calendar().clone(),
        fabric: engine.fabric().clone(),
        frame: Arc::new(frame),
    }
}

impl Writer {
    fn now(&mut self) -> u64 {
        // frames stay monotone even if the wall clock steps back
        self.last_ms = self.last_ms.max(self.clock.now_ms());
        self.last_ms
    }

    fn snapshot_at(&self, now: u64) -> Snapshot {
        snapshot(&self.engine, &self.topology, now)
    }

    fn publish(&self, now: u64, actions: &[SchedulerAction]) {
        for a in actions {
            tracing::info!(target: "qisp::scheduler", "{}", describe(a));
            let _ = self.events.send(ServerEvent::Action(a.clone()));
        }
        let snap = self.snapshot_at(now);
        let frame = snap.frame.clone();
        self.snapshot.send_replace(Arc::new(snap));
        let _ = self.events.send(ServerEvent::Status(frame));
    }

    fn handle(&mut self, cmd: Command) {
        let now = self.now();
        match cmd {
            Command::Submit(draft, reply) => {
                let before = self.engine.calendar().last_tick_ms();
                let result = self.engine.submit(draft, now);
                let granted = matches!(&result, Ok(o) if matches!(o.decision, Decision::Granted(_)));
                let caught_up = self.engine.calendar().last_tick_ms() != before;
                if granted || caught_up {
                    let actions: Vec<_> = result.as_ref().ok().and_then(|o| o.action.clone()).into_iter().collect();
                    self.publish(now, &actions);
                }
                let _ = reply.send(result);
            }
            Command::Cancel(id, reply) => {
                let result = self.engine.cancel(id, now);
                if let Ok((_, action)) = &result {
                    self.publish(now, action.as_slice());
                }
                let _ = reply.send(result);
            }
            Command::Override(kind, channel, user, reply) => {
                let result = self.engine.override_route(kind, channel, user).map(|f| f.snapshot());
                if result.is_ok() {
                    tracing::info!(target: "qisp::scheduler", "override {kind} {channel} -> {user:?}");
                    self.publish(now, &[]);
                }
                let _ = reply.send(result);
            }
            Command::Tick(reply) => {
                let result = self.engine.tick(now);
                match &result {
                    Ok(actions) => self.publish(now, actions),
                    Err(e) => {
                        tracing::warn!(target: "qisp::scheduler", "tick at {now} ms failed: {e}");
                        self.publish(now, &[]);
                    }
                }
                let _ = reply.send(result);
            }
        }
    }
}

/// Starts the writer task. Must be called inside a tokio runtime.
pub fn spawn_writer(
    engine: Engine,
    topology: Arc<Topology>,
    clock: Arc<dyn Clock>,
    events: broadcast::Sender<ServerEvent>,
) -> (WriterHandle, watch::Receiver<Arc<Snapshot>>) {
    let now = clock.now_ms();
    let (snapshot_tx, rx) = watch::channel(Arc::new(snapshot(&engine, &topology, now)));
    let mut writer = Writer {
        engine,
        topology,
        last_ms: now,
        clock,
        snapshot: snapshot_tx,
        events,
    };
    let (tx, mut commands) = mpsc::channel(1024);
    tokio::spawn(async move {
        while let Some(cmd) = commands.recv().await {
            writer.handle(cmd);
        }
    });
    (WriterHandle { tx }, rx)
}
