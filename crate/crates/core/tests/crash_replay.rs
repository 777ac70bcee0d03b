mod support;

use std::collections::BTreeSet;
use std::fs;

use qisp_core::engine::Engine;
use qisp_core::scheduler::{ReservationStatus, SchedulerPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracle::{workload, Op};

fn apply(engine: &mut Engine, op: &Op) {
    // rejections and refused cancels are part of the workload, not failures
    let _ = match op {
        Op::Submit(d, now) => engine.submit(d.clone(), *now).map(|_| ()),
        Op::Cancel(id, now) => engine.cancel(*id, *now).map(|_| ()),
        Op::Tick(now) => engine.tick(*now).map(|_| ()),
    };
}

type Grant = (u64, String);

fn grants(engine: &Engine) -> BTreeSet<Grant> {
    engine
        .calendar()
        .reservations()
        .map(|r| (r.id.0, format!("{:?} {:?} {:?}", r.user, r.resources, r.window)))
        .collect()
}

/// Every route belongs to exactly one active reservation of the routed user,
/// and every active reservation holds all its routes.
fn routes_consistent(engine: &Engine) -> Result<(), String> {
    let mut expected = BTreeSet::new();
    for r in engine.calendar().reservations().filter(|r| r.status == ReservationStatus::Active) {
        for res in &r.resources {
            if !expected.insert((res.kind, res.channel)) {
                return Err(format!("{:?} {} held twice", res.kind, res.channel));
            }
            if engine.fabric().route(res.kind, res.channel) != Ok(Some(r.user)) {
                return Err(format!("{} lost {:?} {}", r.id, res.kind, res.channel));
            }
        }
    }
    let routed = engine.fabric().routes().count();
    if routed != expected.len() {
        return Err(format!("{routed} routes for {} active channels", expected.len()));
    }
    Ok(())
}

#[test]
fn truncated_journal_recovers_committed_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..12 {
        let w = workload(seed);
        let path = dir.path().join(format!("live-{seed}.ndjson"));
        let mut live = Engine::open(&w.spec, SchedulerPolicy::default(), &path).unwrap();
        let mut boundaries = vec![(0u64, grants(&live))];
        for op in &w.ops {
            apply(&mut live, op);
            boundaries.push((fs::metadata(&path).unwrap().len(), grants(&live)));
        }
        let bytes = fs::read(&path).unwrap();

        for _ in 0..20 {
            let cut = rng.random_range(0..=bytes.len());
            let copy = dir.path().join("crashed.ndjson");
            fs::write(&copy, &bytes[..cut]).unwrap();
            let reopened = Engine::open(&w.spec, SchedulerPolicy::default(), &copy).unwrap();
            let (_, committed) = boundaries.iter().rev().find(|(len, _)| *len as usize <= cut).unwrap();
            assert_eq!(&grants(&reopened), committed, "seed {seed} cut {cut}");
            routes_consistent(&reopened).unwrap_or_else(|e| panic!("seed {seed} cut {cut}: {e}"));
        }
    }
}

#[test]
fn recovery_then_resume_converges() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 100..106 {
        let w = workload(seed);
        let path = dir.path().join(format!("live-{seed}.ndjson"));
        let mut live = Engine::open(&w.spec, SchedulerPolicy::default(), &path).unwrap();
        let crash_at = w.ops.len() / 2;
        let mut cut = 0;
        for (i, op) in w.ops.iter().enumerate() {
            apply(&mut live, op);
            if i + 1 == crash_at {
                cut = fs::metadata(&path).unwrap().len() as usize;
            }
        }
        let copy = dir.path().join(format!("resumed-{seed}.ndjson"));
        fs::write(&copy, &fs::read(&path).unwrap()[..cut]).unwrap();
        let mut resumed = Engine::open(&w.spec, SchedulerPolicy::default(), &copy).unwrap();
        for op in &w.ops[crash_at..] {
            apply(&mut resumed, op);
        }
        assert_eq!(resumed.calendar(), live.calendar(), "seed {seed}");
        assert_eq!(resumed.fabric(), live.fabric(), "seed {seed}");
        assert_eq!(fs::read(&copy).unwrap(), fs::read(&path).unwrap(), "seed {seed}");
    }
}
