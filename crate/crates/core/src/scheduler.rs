//! Reservation calendar: admission of time-windowed channel claims,
//! allocation and recovery against the switch fabric.
//!
//! The calendar is a plain value driven by one writer. Admission is
//! first-come-first-served with no preemption; a rejected draft leaves no
//! trace and receives no id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::{is_reachable, ChannelKind, FabricError, FabricSpec, FabricState, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReservationId(pub u64);

impl fmt::Display for ReservationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Resource {
    pub kind: ChannelKind,
    pub channel: u8,
}

impl Resource {
    pub fn eps(channel: u8) -> Self {
        Resource { kind: ChannelKind::Eps, channel }
    }

    pub fn spd(channel: u8) -> Self {
        Resource { kind: ChannelKind::Spd, channel }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.kind, self.channel)
    }
}

/// Half-open interval `[start_ms, end_ms)` in ms since the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub start_ms: u64,
    pub end_ms: u64,
}

impl Window {
    pub fn new(start_ms: u64, end_ms: u64) -> Self {
        Window { start_ms, end_ms }
    }

    pub fn overlaps(&self, other: &Window) -> bool {
        self.start_ms < other.end_ms && other.start_ms < self.end_ms
    }

    pub fn contains(&self, t_ms: u64) -> bool {
        self.start_ms <= t_ms && t_ms < self.end_ms
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReservationDraft {
    pub user: UserId,
    pub resources: Vec<Resource>,
    pub window: Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReservationStatus {
    Pending,
    Active,
    Completed,
    Cancelled,
}

impl ReservationStatus {
    /// Statuses that keep their channels claimed for the window.
    pub fn is_live(self) -> bool {
        !matches!(self, ReservationStatus::Cancelled)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reservation {
    pub id: ReservationId,
    pub user: UserId,
    pub resources: Vec<Resource>,
    pub window: Window,
    pub status: ReservationStatus,
    pub created_ms: u64,
}

impl Reservation {
    pub fn count(&self, kind: ChannelKind) -> usize {
        self.resources.iter().filter(|r| r.kind == kind).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerPolicy {
    /// Longest window a single reservation may span; unlimited when absent.
    pub max_duration_ms: Option<u64>,
    /// How far ahead of now a window may start; unlimited when absent.
    pub horizon_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Conflict,
    Capacity,
    Unreachable,
    Policy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub reason: RejectReason,
    pub conflicting: Vec<ReservationId>,
    pub detail: String,
}

impl Rejection {
    fn new(reason: RejectReason, detail: impl Into<String>) -> Self {
        Rejection {
            reason,
            conflicting: Vec::new(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Decision {
    Granted(Reservation),
    Rejected(Rejection),
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum SchedulerError {
    #[error("malformed request: {0}")]
    MalformedRequest(String),
    #[error("unknown reservation {0}")]
    UnknownReservation(ReservationId),
    #[error("reservation {0} already finished")]
    AlreadyFinished(ReservationId),
    #[error("clock went backwards: {now_ms} < {last_ms}")]
    ClockWentBackwards { now_ms: u64, last_ms: u64 },
    #[error("fabric inconsistency for {reservation} on {resource}: {detail}")]
    FabricInconsistency {
        reservation: ReservationId,
        resource: Resource,
        detail: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum FabricOp {
    Route { kind: ChannelKind, channel: u8, user: UserId },
    Release { kind: ChannelKind, channel: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Allocate,
    Recover,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerAction {
    pub kind: ActionKind,
    pub reservation: ReservationId,
    pub user: UserId,
    pub ops: Vec<FabricOp>,
    pub at_ms: u64,
    /// When the switches have finished moving; photons flow only after this.
    pub settled_ms: u64,
}

/// Per-kind ceiling on what one user can hold at once.
pub fn capacity(kind: ChannelKind) -> usize {
    match kind {
        ChannelKind::Eps => 5,
        ChannelKind::Spd => 4,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calendar {
    policy: SchedulerPolicy,
    switch_latency_ms: u64,
    /// EPS channel → the other EPS channels sharing its 1×16 switch.
    eps_mates: BTreeMap<u8, Vec<u8>>,
    by_id: BTreeMap<ReservationId, Reservation>,
    by_user: BTreeMap<UserId, BTreeSet<ReservationId>>,
    /// Live reservations per resource keyed by window start. Windows on one
    /// resource never overlap, so starts and ends are both ordered.
    by_resource: BTreeMap<Resource, BTreeMap<u64, ReservationId>>,
    pending: BTreeSet<(u64, ReservationId)>,
    active: BTreeSet<(u64, ReservationId)>,
    next_id: u64,
    last_tick_ms: Option<u64>,
}

impl Calendar {
    pub fn new(spec: &FabricSpec, policy: SchedulerPolicy) -> Self {
        let eps_mates = spec
            .eps_channels
            .iter()
            .map(|c| {
                let mates = spec
                    .switch_mates(c.index)
                    .into_iter()
                    .filter(|&m| m != c.index)
                    .collect();
                (c.index, mates)
            })
            .collect();
        Calendar {
            policy,
            switch_latency_ms: spec.switch_latency_ms,
            eps_mates,
            by_id: BTreeMap::new(),
            by_user: BTreeMap::new(),
            by_resource: BTreeMap::new(),
            pending: BTreeSet::new(),
            active: BTreeSet::new(),
            next_id: 1,
            last_tick_ms: None,
        }
    }

    pub fn get(&self, id: ReservationId) -> Option<&Reservation> {
        self.by_id.get(&id)
    }

    pub fn reservations(&self) -> impl Iterator<Item = &Reservation> {
        self.by_id.values()
    }

    pub fn for_user(&self, user: UserId) -> impl Iterator<Item = &Reservation> {
        self.by_user
            .get(&user)
            .into_iter()
            .flatten()
            .map(|id| &self.by_id[id])
    }

    pub fn active(&self) -> impl Iterator<Item = &Reservation> {
        self.active.iter().map(|(_, id)| &self.by_id[id])
    }

    pub fn policy(&self) -> &SchedulerPolicy {
        &self.policy
    }

    /// Id the next grant will receive.
    pub fn next_id(&self) -> ReservationId {
        ReservationId(self.next_id)
    }

    pub fn last_tick_ms(&self) -> Option<u64> {
        self.last_tick_ms
    }

    /// Live reservations on `resource` whose window overlaps `window`.
    fn overlapping(&self, resource: Resource, window: &Window) -> Vec<ReservationId> {
        let Some(index) = self.by_resource.get(&resource) else {
            return Vec::new();
        };
        let mut hits = Vec::new();
        for (_, id) in index.range(..window.end_ms).rev() {
            if self.by_id[id].window.end_ms <= window.start_ms {
                break;
            }
            hits.push(*id);
        }
        hits
    }

    /// Decides a draft without changing anything.
    pub fn check(&self, draft: &ReservationDraft, now_ms: u64) -> Result<Option<Rejection>, SchedulerError> {
        let w = draft.window;
        if draft.resources.is_empty() {
            return Err(SchedulerError::MalformedRequest("no resources requested".into()));
        }
        if w.end_ms <= w.start_ms {
            return Err(SchedulerError::MalformedRequest(format!(
                "window [{}, {}) is empty",
                w.start_ms, w.end_ms
            )));
        }
        if w.end_ms <= now_ms {
            return Err(SchedulerError::MalformedRequest(format!(
                "window ends at {} which is not after now ({now_ms})",
                w.end_ms
            )));
        }
        for kind in [ChannelKind::Eps, ChannelKind::Spd] {
            let n = draft.resources.iter().filter(|r| r.kind == kind).count();
            if n > capacity(kind) {
                return Ok(Some(Rejection::new(
                    RejectReason::Capacity,
                    format!("{n} {kind} channels requested, at most {} per user", capacity(kind)),
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for r in &draft.resources {
            if !(1..=r.kind.channel_count()).contains(&r.channel) {
                return Err(SchedulerError::MalformedRequest(format!("no such channel: {r}")));
            }
            if !seen.insert(*r) {
                return Err(SchedulerError::MalformedRequest(format!("{r} requested twice")));
            }
        }
        if let Some(max) = self.policy.max_duration_ms {
            if w.end_ms - w.start_ms > max {
                return Ok(Some(Rejection::new(
                    RejectReason::Policy,
                    format!("window longer than {max} ms"),
                )));
            }
        }
        if let Some(h) = self.policy.horizon_ms {
            if w.start_ms > now_ms.saturating_add(h) {
                return Ok(Some(Rejection::new(
                    RejectReason::Policy,
                    format!("window starts more than {h} ms ahead"),
                )));
            }
        }
        if let Some(r) = draft
            .resources
            .iter()
            .find(|r| !is_reachable(draft.user, r.kind, r.channel))
        {
            return Ok(Some(Rejection::new(
                RejectReason::Unreachable,
                format!("{r} cannot be switched to {}", draft.user),
            )));
        }

        let mut blocking = BTreeSet::new();
        for r in &draft.resources {
            blocking.extend(self.overlapping(*r, &w));
            if r.kind == ChannelKind::Eps {
                for &m in self.eps_mates.get(&r.channel).into_iter().flatten() {
                    blocking.extend(
                        self.overlapping(Resource::eps(m), &w)
                            .into_iter()
                            .filter(|id| self.by_id[id].user != draft.user),
                    );
                }
            }
        }
        if !blocking.is_empty() {
            let ids: Vec<_> = blocking.into_iter().collect();
            let list: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
            return Ok(Some(Rejection {
                reason: RejectReason::Conflict,
                detail: format!("overlaps {}", list.join(", ")),
                conflicting: ids,
            }));
        }
        Ok(None)
    }

    /// Records an admitted draft. Callers must have run [`Calendar::check`].
    pub fn insert(&mut self, draft: ReservationDraft, now_ms: u64) -> Reservation {
        let id = ReservationId(self.next_id);
        self.next_id += 1;
        let status = if draft.window.contains(now_ms) {
            ReservationStatus::Active
        } else {
            ReservationStatus::Pending
        };
        let mut resources = draft.resources;
        resources.sort();
        let res = Reservation {
            id,
            user: draft.user,
            resources,
            window: draft.window,
            status,
            created_ms: now_ms,
        };
        for r in &res.resources {
            self.by_resource
                .entry(*r)
                .or_default()
                .insert(res.window.start_ms, id);
        }
        self.by_user.entry(res.user).or_default().insert(id);
        match status {
            ReservationStatus::Active => self.active.insert((res.window.end_ms, id)),
            _ => self.pending.insert((res.window.start_ms, id)),
        };
        self.by_id.insert(id, res.clone());
        res
    }

    pub fn submit(&mut self, draft: ReservationDraft, now_ms: u64) -> Result<Decision, SchedulerError> {
        Ok(match self.check(&draft, now_ms)? {
            Some(rejection) => Decision::Rejected(rejection),
            None => Decision::Granted(self.insert(draft, now_ms)),
        })
    }

    fn unindex(&mut self, id: ReservationId) {
        let res = &self.by_id[&id];
        for r in &res.resources {
            if let Some(index) = self.by_resource.get_mut(r) {
                index.remove(&res.window.start_ms);
            }
        }
    }

    /// Cancels a Pending or Active reservation. Returns the release
    /// operations an Active one needs; routes held by someone else are left alone.
    pub fn cancel(
        &mut self,
        id: ReservationId,
        fabric: &FabricState,
    ) -> Result<(Reservation, Vec<FabricOp>), SchedulerError> {
        let res = self
            .by_id
            .get(&id)
            .ok_or(SchedulerError::UnknownReservation(id))?
            .clone();
        let ops = match res.status {
            ReservationStatus::Pending => {
                self.pending.remove(&(res.window.start_ms, id));
                Vec::new()
            }
            ReservationStatus::Active => {
                self.active.remove(&(res.window.end_ms, id));
                release_ops(&res, fabric)
            }
            _ => return Err(SchedulerError::AlreadyFinished(id)),
        };
        self.unindex(id);
        let entry = self.by_id.get_mut(&id).expect("present");
        entry.status = ReservationStatus::Cancelled;
        Ok((entry.clone(), ops))
    }

    /// Advances to `now_ms`: recoveries first, then allocations, each in id
    /// order. All fabric changes are computed on a copy; on an inconsistency
    /// neither the calendar nor the fabric changes.
    pub fn tick(
        &mut self,
        fabric: &FabricState,
        now_ms: u64,
    ) -> Result<(FabricState, Vec<SchedulerAction>), SchedulerError> {
        if let Some(last) = self.last_tick_ms {
            if now_ms < last {
                return Err(SchedulerError::ClockWentBackwards { now_ms, last_ms: last });
            }
        }
        let mut next = fabric.clone();
        let mut actions = Vec::new();

        let mut recover: Vec<ReservationId> = self
            .active
            .range(..(now_ms + 1, ReservationId(0)))
            .map(|(_, id)| *id)
            .collect();
        recover.sort();
        for &id in &recover {
            let res = &self.by_id[&id];
            let ops = release_ops(res, &next);
            next = apply(&next, &ops).expect("release of known channels");
            actions.push(SchedulerAction {
                kind: ActionKind::Recover,
                reservation: id,
                user: res.user,
                ops,
                at_ms: now_ms,
                settled_ms: now_ms + self.switch_latency_ms,
            });
        }

        let due: Vec<(u64, ReservationId)> = self
            .pending
            .range(..(now_ms + 1, ReservationId(0)))
            .copied()
            .collect();
        let mut expired = Vec::new();
        let mut allocate = Vec::new();
        for (_, id) in &due {
            if self.by_id[id].window.end_ms <= now_ms {
                expired.push(*id);
            } else {
                allocate.push(*id);
            }
        }
        allocate.sort();
        for &id in &allocate {
            let res = &self.by_id[&id];
            let mut ops = Vec::new();
            for r in &res.resources {
                next = next.set_route(r.kind, r.channel, res.user).map_err(|e| {
                    SchedulerError::FabricInconsistency {
                        reservation: id,
                        resource: *r,
                        detail: e.to_string(),
                    }
                })?;
                ops.push(FabricOp::Route {
                    kind: r.kind,
                    channel: r.channel,
                    user: res.user,
                });
            }
            actions.push(SchedulerAction {
                kind: ActionKind::Allocate,
                reservation: id,
                user: res.user,
                ops,
                at_ms: now_ms,
                settled_ms: now_ms + self.switch_latency_ms,
            });
        }

        // commit
        for id in recover {
            let end = self.by_id[&id].window.end_ms;
            self.active.remove(&(end, id));
            self.by_id.get_mut(&id).expect("present").status = ReservationStatus::Completed;
        }
        for &(start, id) in &due {
            self.pending.remove(&(start, id));
        }
        for id in expired {
            self.by_id.get_mut(&id).expect("present").status = ReservationStatus::Completed;
        }
        for id in allocate {
            let res = self.by_id.get_mut(&id).expect("present");
            res.status = ReservationStatus::Active;
            self.active.insert((res.window.end_ms, id));
        }
        self.last_tick_ms = Some(now_ms);
        Ok((next, actions))
    }

    /// Channels held by `user` at `at_ms` through live reservations.
    pub fn usage(&self, user: UserId, at_ms: u64) -> Usage {
        let mut u = Usage::default();
        for res in self.for_user(user) {
            if res.status.is_live() && res.window.contains(at_ms) {
                u.eps += res.count(ChannelKind::Eps);
                u.spd += res.count(ChannelKind::Spd);
                u.ids.push(res.id);
            }
        }
        u
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub eps: usize,
    pub spd: usize,
    pub ids: Vec<ReservationId>,
}

/// Releases for the channels of `res` still routed to its user.
pub fn release_ops(res: &Reservation, fabric: &FabricState) -> Vec<FabricOp> {
    res.resources
        .iter()
        .filter(|r| fabric.route(r.kind, r.channel).ok().flatten() == Some(res.user))
        .map(|r| FabricOp::Release {
            kind: r.kind,
            channel: r.channel,
        })
        .collect()
}

pub fn apply(fabric: &FabricState, ops: &[FabricOp]) -> Result<FabricState, FabricError> {
    let mut next = fabric.clone();
    for op in ops {
        next = match *op {
            FabricOp::Route { kind, channel, user } => next.set_route(kind, channel, user)?,
            FabricOp::Release { kind, channel } => next.release_route(kind, channel)?,
        };
    }
    Ok(next)
}
