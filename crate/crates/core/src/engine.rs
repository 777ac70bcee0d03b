//! The single writer that owns the calendar and the fabric. Every command
//! is journaled before its effects become visible.

use std::path::Path;

use thiserror::Error;

use crate::config::QispConfig;
use crate::fabric::{ChannelKind, FabricError, FabricSpec, FabricState, UserId};
use crate::journal::{Journal, JournalError, JournalRecord};
use crate::scheduler::{
    apply, ActionKind, Calendar, Decision, FabricOp, Reservation, ReservationDraft, ReservationId,
    ReservationStatus, SchedulerAction, SchedulerError, SchedulerPolicy,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("journal record {index} does not replay: {detail}")]
    Replay { index: usize, detail: String },
    #[error("{0}")]
    Diverged(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmitOutcome {
    pub decision: Decision,
    /// Allocation performed immediately when the window already contains now.
    pub action: Option<SchedulerAction>,
}

#[derive(Debug)]
pub struct Engine {
    spec: FabricSpec,
    calendar: Calendar,
    fabric: FabricState,
    journal: Option<Journal>,
}

impl Engine {
    pub fn new(spec: &FabricSpec, policy: SchedulerPolicy) -> Self {
        Engine {
            spec: spec.clone(),
            calendar: Calendar::new(spec, policy),
            fabric: FabricState::new(spec),
            journal: None,
        }
    }

    /// Rebuilds state from the journal at `path`, then keeps appending to it.
    pub fn open(spec: &FabricSpec, policy: SchedulerPolicy, path: impl AsRef<Path>) -> Result<Self, EngineError> {
        let (journal, records) = Journal::open(path)?;
        let mut engine = Engine::new(spec, policy);
        for (index, record) in records.into_iter().enumerate() {
            engine
                .execute(record)
                .map_err(|e| EngineError::Replay {
                    index,
                    detail: e.to_string(),
                })?;
        }
        engine.journal = Some(journal);
        Ok(engine)
    }

    /// In-memory engine, or journaled when the config names a journal file.
    pub fn from_config(config: &QispConfig) -> Result<Self, EngineError> {
        match &config.journal_path {
            Some(p) => Engine::open(&config.fabric, config.scheduler.clone(), p),
            None => Ok(Engine::new(&config.fabric, config.scheduler.clone())),
        }
    }

    pub fn calendar(&self) -> &Calendar {
        &self.calendar
    }

    pub fn fabric(&self) -> &FabricState {
        &self.fabric
    }

    pub fn spec(&self) -> &FabricSpec {
        &self.spec
    }

    fn journal(&mut self, record: &JournalRecord) -> Result<(), EngineError> {
        if let Some(j) = self.journal.as_mut() {
            j.append(record)?;
        }
        Ok(())
    }

    fn execute(&mut self, record: JournalRecord) -> Result<(), EngineError> {
        match record {
            JournalRecord::Submit { draft, now_ms } => match self.submit(draft, now_ms)?.decision {
                Decision::Granted(_) => Ok(()),
                Decision::Rejected(r) => Err(EngineError::Diverged(format!(
                    "journaled grant now rejected: {}",
                    r.detail
                ))),
            },
            JournalRecord::Cancel { id, now_ms } => self.cancel(id, now_ms).map(|_| ()),
            JournalRecord::Tick { now_ms } => self.tick(now_ms).map(|_| ()),
            JournalRecord::Override { kind, channel, user } => {
                self.override_route(kind, channel, user).map(|_| ())
            }
        }
    }

    pub fn submit(&mut self, draft: ReservationDraft, now_ms: u64) -> Result<SubmitOutcome, EngineError> {
        self.catch_up(now_ms)?;
        if let Some(rejection) = self.calendar.check(&draft, now_ms)? {
            return Ok(SubmitOutcome {
                decision: Decision::Rejected(rejection),
                action: None,
            });
        }
        let mut fabric = self.fabric.clone();
        let mut ops = Vec::new();
        if draft.window.contains(now_ms) {
            let mut resources = draft.resources.clone();
            resources.sort();
            for r in resources {
                fabric = fabric.set_route(r.kind, r.channel, draft.user).map_err(|e| {
                    SchedulerError::FabricInconsistency {
                        reservation: self.calendar.next_id(),
                        resource: r,
                        detail: e.to_string(),
                    }
                })?;
                ops.push(FabricOp::Route {
                    kind: r.kind,
                    channel: r.channel,
                    user: draft.user,
                });
            }
        }
        self.journal(&JournalRecord::Submit {
            draft: draft.clone(),
            now_ms,
        })?;
        let res = self.calendar.insert(draft, now_ms);
        self.fabric = fabric;
        let action = (res.status == ReservationStatus::Active).then(|| SchedulerAction {
            kind: ActionKind::Allocate,
            reservation: res.id,
            user: res.user,
            ops,
            at_ms: now_ms,
            settled_ms: now_ms + self.spec.switch_latency_ms,
        });
        Ok(SubmitOutcome {
            decision: Decision::Granted(res),
            action,
        })
    }

    pub fn cancel(
        &mut self,
        id: ReservationId,
        now_ms: u64,
    ) -> Result<(Reservation, Option<SchedulerAction>), EngineError> {
        self.catch_up(now_ms)?;
        let status = self
            .calendar
            .get(id)
            .ok_or(SchedulerError::UnknownReservation(id))?
            .status;
        if !matches!(status, ReservationStatus::Pending | ReservationStatus::Active) {
            return Err(SchedulerError::AlreadyFinished(id).into());
        }
        self.journal(&JournalRecord::Cancel { id, now_ms })?;
        let (res, ops) = self.calendar.cancel(id, &self.fabric)?;
        self.fabric = apply(&self.fabric, &ops)?;
        let action = (status == ReservationStatus::Active).then(|| SchedulerAction {
            kind: ActionKind::Recover,
            reservation: id,
            user: res.user,
            ops,
            at_ms: now_ms,
            settled_ms: now_ms + self.spec.switch_latency_ms,
        });
        Ok((res, action))
    }

    /// Commands observe the calendar as of their own timestamp, so expiries
    /// and starts due by `now_ms` are applied first. A timestamp behind the
    /// last tick leaves the calendar as is.
    fn catch_up(&mut self, now_ms: u64) -> Result<(), EngineError> {
        if self.calendar.last_tick_ms().is_none_or(|t| t < now_ms) {
            self.tick(now_ms)?;
        }
        Ok(())
    }

    pub fn tick(&mut self, now_ms: u64) -> Result<Vec<SchedulerAction>, EngineError> {
        let mut calendar = self.calendar.clone();
        let (fabric, actions) = calendar.tick(&self.fabric, now_ms)?;
        let changed = !actions.is_empty()
            || calendar.reservations().zip(self.calendar.reservations()).any(|(a, b)| a.status != b.status);
        if changed {
            self.journal(&JournalRecord::Tick { now_ms })?;
        }
        self.calendar = calendar;
        self.fabric = fabric;
        Ok(actions)
    }

    /// Manual route change outside scheduler control; `None` releases.
    pub fn override_route(
        &mut self,
        kind: ChannelKind,
        channel: u8,
        user: Option<UserId>,
    ) -> Result<&FabricState, EngineError> {
        let fabric = match user {
            Some(u) => self.fabric.set_route(kind, channel, u)?,
            None => self.fabric.release_route(kind, channel)?,
        };
        self.journal(&JournalRecord::Override { kind, channel, user })?;
        self.fabric = fabric;
        Ok(&self.fabric)
    }
}
