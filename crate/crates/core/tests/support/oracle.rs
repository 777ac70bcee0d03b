//! Brute-force reference for reservation admission.
//!
//! Keeps a flat list of grants and re-derives every decision from pairwise
//! interval overlaps and per-instant capacity sums, sharing no code with the
//! calendar beyond the plain data types.

use std::collections::BTreeSet;

use qisp_core::engine::Engine;
use qisp_core::fabric::{ChannelKind, FabricSpec, UserId};
use qisp_core::scheduler::{
    Decision, RejectReason, ReservationDraft, ReservationId, ReservationStatus, Resource,
    SchedulerError, SchedulerPolicy, Window,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub enum Op {
    Submit(ReservationDraft, u64),
    Cancel(ReservationId, u64),
    Tick(u64),
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub spec: FabricSpec,
    pub ops: Vec<Op>,
}

/// Decision category compared between calendar and oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Granted(ReservationId),
    Rejected(RejectReason, Vec<ReservationId>),
    Malformed,
    Cancelled,
    CannotCancel,
}

#[derive(Debug, Clone)]
struct Grant {
    id: ReservationId,
    user: UserId,
    resources: Vec<Resource>,
    window: Window,
    cancelled: bool,
}

#[derive(Debug, Default)]
pub struct Oracle {
    spec: FabricSpec,
    grants: Vec<Grant>,
    last_tick: Option<u64>,
}

fn overlap(a: &Window, b: &Window) -> bool {
    a.start_ms.max(b.start_ms) < a.end_ms.min(b.end_ms)
}

fn cap(kind: ChannelKind) -> usize {
    match kind {
        ChannelKind::Eps => 5,
        ChannelKind::Spd => 4,
    }
}

fn same_switch(spec: &FabricSpec, a: u8, b: u8) -> bool {
    let sw = |i: u8| spec.eps_channels.iter().find(|c| c.index == i).map(|c| c.switch);
    sw(a).is_some() && sw(a) == sw(b)
}

impl Oracle {
    pub fn new(spec: &FabricSpec) -> Self {
        Oracle {
            spec: spec.clone(),
            ..Default::default()
        }
    }

    fn live(&self) -> impl Iterator<Item = &Grant> {
        self.grants.iter().filter(|g| !g.cancelled)
    }

    pub fn submit(&mut self, d: &ReservationDraft, now: u64) -> Verdict {
        let w = d.window;
        if d.resources.is_empty() || w.end_ms <= w.start_ms || w.end_ms <= now {
            return Verdict::Malformed;
        }
        for kind in [ChannelKind::Eps, ChannelKind::Spd] {
            if d.resources.iter().filter(|r| r.kind == kind).count() > cap(kind) {
                return Verdict::Rejected(RejectReason::Capacity, vec![]);
            }
        }
        for (i, r) in d.resources.iter().enumerate() {
            let max = match r.kind {
                ChannelKind::Eps => 5,
                ChannelKind::Spd => 8,
            };
            if r.channel < 1 || r.channel > max || d.resources[..i].contains(r) {
                return Verdict::Malformed;
            }
        }
        let low = d.user.get() <= 8;
        if d
            .resources
            .iter()
            .any(|r| r.kind == ChannelKind::Spd && (r.channel <= 4) != low)
        {
            return Verdict::Rejected(RejectReason::Unreachable, vec![]);
        }

        let mut blocking = BTreeSet::new();
        for g in self.live() {
            if !overlap(&g.window, &w) {
                continue;
            }
            for a in &d.resources {
                for b in &g.resources {
                    let clash = a == b
                        || (a.kind == ChannelKind::Eps
                            && b.kind == ChannelKind::Eps
                            && g.user != d.user
                            && same_switch(&self.spec, a.channel, b.channel));
                    if clash {
                        blocking.insert(g.id);
                    }
                }
            }
        }
        if !blocking.is_empty() {
            return Verdict::Rejected(RejectReason::Conflict, blocking.into_iter().collect());
        }

        // capacity at every instant where the user's holdings can change
        let mut points: Vec<u64> = vec![w.start_ms];
        for g in self.live().filter(|g| g.user == d.user) {
            points.push(g.window.start_ms);
        }
        for t in points.into_iter().filter(|&t| w.start_ms <= t && t < w.end_ms) {
            for kind in [ChannelKind::Eps, ChannelKind::Spd] {
                let held: usize = self
                    .live()
                    .filter(|g| g.user == d.user && g.window.start_ms <= t && t < g.window.end_ms)
                    .map(|g| g.resources.iter().filter(|r| r.kind == kind).count())
                    .sum();
                let asked = d.resources.iter().filter(|r| r.kind == kind).count();
                if held + asked > cap(kind) {
                    return Verdict::Rejected(RejectReason::Capacity, vec![]);
                }
            }
        }

        let id = ReservationId(self.grants.len() as u64 + 1);
        self.grants.push(Grant {
            id,
            user: d.user,
            resources: d.resources.clone(),
            window: w,
            cancelled: false,
        });
        Verdict::Granted(id)
    }

    pub fn cancel(&mut self, id: ReservationId, now: u64) -> Verdict {
        let last = self.last_tick.unwrap_or(0).max(now);
        match self.grants.iter_mut().find(|g| g.id == id) {
            Some(g) if !g.cancelled && last < g.window.end_ms => {
                g.cancelled = true;
                Verdict::Cancelled
            }
            _ => Verdict::CannotCancel,
        }
    }

    pub fn tick(&mut self, now: u64) {
        self.last_tick = Some(now);
    }

    /// Routes the fabric must carry right after a tick at `now`.
    pub fn expected_routes(&self, now: u64) -> BTreeSet<(ChannelKind, u8, UserId)> {
        self.live()
            .filter(|g| g.window.start_ms <= now && now < g.window.end_ms)
            .flat_map(|g| g.resources.iter().map(move |r| (r.kind, r.channel, g.user)))
            .collect()
    }

    /// Post-hoc sweep of all live grants: no shared channel in overlapping
    /// windows and no user above capacity at any instant.
    pub fn violations(&self) -> Vec<String> {
        let live: Vec<&Grant> = self.live().collect();
        let mut out = Vec::new();
        for (i, a) in live.iter().enumerate() {
            for b in &live[i + 1..] {
                if overlap(&a.window, &b.window) && a.resources.iter().any(|r| b.resources.contains(r)) {
                    out.push(format!("{} and {} share a channel", a.id, b.id));
                }
            }
            for kind in [ChannelKind::Eps, ChannelKind::Spd] {
                let t = a.window.start_ms;
                let held: usize = live
                    .iter()
                    .filter(|g| g.user == a.user && g.window.start_ms <= t && t < g.window.end_ms)
                    .map(|g| g.resources.iter().filter(|r| r.kind == kind).count())
                    .sum();
                if held > cap(kind) {
                    out.push(format!("{} holds {held} {kind} at {t}", a.user));
                }
            }
        }
        out
    }
}

/// Random workload: ≤16 users, ≤200 requests, interleaved cancels and
/// ticks on a monotone clock, windows of mixed lengths including
/// malformed, over-capacity and unreachable requests.
pub fn workload(seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = FabricSpec::default();
    if rng.random_bool(0.3) {
        // some runs put several EPS channels behind one switch
        for ch in &mut spec.eps_channels {
            ch.switch = rng.random_range(1..=5);
        }
    }
    let n_users = rng.random_range(1..=16u8);
    let users: Vec<UserId> = {
        let all: Vec<u8> = (1..=16).collect();
        all.choose_multiple(&mut rng, n_users as usize)
            .map(|&u| UserId::new(u).unwrap())
            .collect()
    };
    let n_requests = rng.random_range(1..=200);
    let horizon = rng.random_range(500..5_000u64);
    let mut now = 0u64;
    let mut ops = Vec::new();
    let mut submitted = 0;
    while submitted < n_requests {
        now += rng.random_range(0..=horizon / 50);
        match rng.random_range(0..10) {
            0 => ops.push(Op::Tick(now)),
            1 => ops.push(Op::Cancel(ReservationId(rng.random_range(1..=submitted as u64 + 2)), now)),
            _ => {
                submitted += 1;
                let user = *users.choose(&mut rng).unwrap();
                let mut resources = Vec::new();
                let n = match rng.random_range(0..20) {
                    0 => 0,
                    1 => 6,
                    _ => rng.random_range(1..=4),
                };
                for _ in 0..n {
                    let kind = if rng.random_bool(0.5) { ChannelKind::Eps } else { ChannelKind::Spd };
                    let channel = if rng.random_range(0..50) == 0 {
                        9
                    } else if kind == ChannelKind::Eps {
                        rng.random_range(1..=5)
                    } else if rng.random_range(0..8) == 0 {
                        rng.random_range(1..=8)
                    } else if user.get() <= 8 {
                        rng.random_range(1..=4)
                    } else {
                        rng.random_range(5..=8)
                    };
                    let r = Resource { kind, channel };
                    // duplicates only occasionally
                    if !resources.contains(&r) || rng.random_range(0..10) == 0 {
                        resources.push(r);
                    }
                }
                let start = now.saturating_sub(horizon / 10) + rng.random_range(0..horizon);
                let len = match rng.random_range(0..10) {
                    0 => 0,
                    1 => rng.random_range(1..=5),
                    2 => rng.random_range(horizon / 2..horizon * 2),
                    _ => rng.random_range(1..horizon / 5),
                };
                ops.push(Op::Submit(
                    ReservationDraft {
                        user,
                        resources,
                        window: Window::new(start, start + len),
                    },
                    now,
                ));
            }
        }
    }
    ops.push(Op::Tick(now + 3 * horizon));
    Workload { spec, ops }
}

#[derive(Debug, Default)]
pub struct Report {
    pub decisions: usize,
    pub grants: usize,
    pub mismatches: Vec<String>,
    pub violations: Vec<String>,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty() && self.violations.is_empty()
    }
}

/// Runs a workload through the engine and the oracle side by side.
pub fn check(seed: u64) -> Report {
    let w = workload(seed);
    let mut engine = Engine::new(&w.spec, SchedulerPolicy::default());
    let mut oracle = Oracle::new(&w.spec);
    let mut report = Report::default();
    for (step, op) in w.ops.iter().enumerate() {
        let (got, want) = match op {
            Op::Submit(d, now) => {
                let got = match engine.submit(d.clone(), *now) {
                    Ok(out) => match out.decision {
                        Decision::Granted(r) => Verdict::Granted(r.id),
                        Decision::Rejected(r) => Verdict::Rejected(r.reason, r.conflicting),
                    },
                    Err(qisp_core::engine::EngineError::Scheduler(SchedulerError::MalformedRequest(_))) => {
                        Verdict::Malformed
                    }
                    Err(e) => {
                        report.violations.push(format!("seed {seed} step {step}: submit failed: {e}"));
                        continue;
                    }
                };
                (got, oracle.submit(d, *now))
            }
            Op::Cancel(id, now) => {
                let got = match engine.cancel(*id, *now) {
                    Ok(_) => Verdict::Cancelled,
                    Err(_) => Verdict::CannotCancel,
                };
                (got, oracle.cancel(*id, *now))
            }
            Op::Tick(now) => {
                oracle.tick(*now);
                if let Err(e) = engine.tick(*now) {
                    report.violations.push(format!("seed {seed} step {step}: tick failed: {e}"));
                    continue;
                }
                let routed: BTreeSet<_> = engine.fabric().routes().collect();
                let expected = oracle.expected_routes(*now);
                if routed != expected {
                    report
                        .violations
                        .push(format!("seed {seed} step {step}: fabric {routed:?} != {expected:?}"));
                }
                for r in engine.calendar().reservations() {
                    let done = r.window.end_ms <= *now;
                    let bad = match r.status {
                        ReservationStatus::Active => done || !r.window.contains(*now),
                        ReservationStatus::Pending => done || r.window.start_ms <= *now,
                        _ => false,
                    };
                    if bad {
                        report
                            .violations
                            .push(format!("seed {seed} step {step}: {} is {:?} at {now}", r.id, r.status));
                    }
                }
                continue;
            }
        };
        report.decisions += 1;
        if matches!(got, Verdict::Granted(_)) {
            report.grants += 1;
        }
        if got != want {
            report
                .mismatches
                .push(format!("seed {seed} step {step}: engine {got:?}, oracle {want:?} for {op:?}"));
        }
    }
    report.violations.extend(oracle.violations());
    // per-user load peaks at some reservation start
    for r in engine.calendar().reservations() {
        let u = engine.calendar().usage(r.user, r.window.start_ms);
        if u.eps > 5 || u.spd > 4 {
            report.violations.push(format!("seed {seed}: usage of {} is {u:?}", r.user));
        }
    }
    report
}
