mod common;

use std::collections::BTreeSet;
use std::sync::{Arc, Barrier};
use std::thread;

use adaptivepq::pqcore::{DeleteMode, SkipListPq, SprayParams};
use common::{check_conservation, OpLog};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

fn stress(q: &Arc<SkipListPq>, threads: usize, ops: usize, range: u64, mode: DeleteMode) -> OpLog {
    let barrier = Arc::new(Barrier::new(threads));
    let handles: Vec<_> = (0..threads)
        .map(|t| {
            let q = Arc::clone(q);
            let barrier = Arc::clone(&barrier);
            thread::spawn(move || {
                let mut rng = SmallRng::seed_from_u64(1000 + t as u64);
                let mut log = OpLog::default();
                barrier.wait();
                for _ in 0..ops {
                    if rng.random_bool(0.5) {
                        let k = rng.random_range(1..=range);
                        if q.insert(k, k ^ 0xabcd).unwrap() {
                            log.inserted.push(k);
                        }
                    } else if let Some((k, v)) = q.delete_min_with(&mode) {
                        assert_eq!(v, k ^ 0xabcd, "value detached from key");
                        log.deleted.push(k);
                    }
                }
                log
            })
        })
        .collect();
    OpLog::merge(handles.into_iter().map(|h| h.join().unwrap()))
}

fn remaining(q: &SkipListPq) -> Vec<u64> {
    q.snapshot().into_iter().map(|(k, _)| k).collect()
}

#[test]
fn no_lost_updates_exact() {
    let q = Arc::new(SkipListPq::new(20, 1).unwrap());
    let log = stress(&q, 8, 20_000, 1 << 16, DeleteMode::Exact);
    let rest = remaining(&q);
    check_conservation(&log, &rest).unwrap();
    let report = q.audit().unwrap();
    assert_eq!(report.live, rest.len());
    assert_eq!(q.len() as i64, log.inserted.len() as i64 - log.deleted.len() as i64);
}

#[test]
fn no_lost_updates_spray() {
    let q = Arc::new(SkipListPq::new(20, 2).unwrap());
    let log = stress(&q, 8, 20_000, 1 << 16, DeleteMode::Spray(SprayParams::new(8)));
    check_conservation(&log, &remaining(&q)).unwrap();
    q.audit().unwrap();
}

#[test]
fn small_key_range_high_contention() {
    for seed in 0..3 {
        let q = Arc::new(SkipListPq::new(8, seed).unwrap());
        let log = stress(&q, 8, 10_000, 64, DeleteMode::Exact);
        check_conservation(&log, &remaining(&q)).unwrap();
        q.audit().unwrap();
    }
}

#[test]
fn concurrent_inserts_then_ordered_drain() {
    let q = Arc::new(SkipListPq::new(20, 3).unwrap());
    let handles: Vec<_> = (0..4u64)
        .map(|t| {
            let q = Arc::clone(&q);
            thread::spawn(move || (0..2_500u64).filter(|i| q.insert(1 + i * 4 + t, t).unwrap()).count())
        })
        .collect();
    let ok: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();
    assert_eq!(ok, 10_000);
    assert_eq!(q.audit().unwrap().live, 10_000);
    let drained: Vec<u64> = std::iter::from_fn(|| q.delete_min().map(|e| e.0)).collect();
    assert_eq!(drained, (1..=10_000).collect::<Vec<_>>());
}

/// Rank of `key` among `present` (1 = minimum).
fn rank(present: &BTreeSet<u64>, key: u64) -> usize {
    present.range(..key).count() + 1
}

#[test]
fn spray_rank_bound_quiescent() {
    for p in [2usize, 8] {
        let params = SprayParams::new(p);
        let bound = params.rank_bound();
        let q = SkipListPq::new(24, 40 + p as u64).unwrap();
        let mut present = BTreeSet::new();
        for k in 1..=100_000u64 {
            q.insert(k, 0).unwrap();
            present.insert(k);
        }
        let snapshot: Vec<u64> = q.snapshot().into_iter().map(|e| e.0).collect();
        assert!(snapshot.iter().copied().eq(present.iter().copied()));
        let mut worst = 0;
        for _ in 0..1_000 {
            let (k, _) = q.delete_min_spray(&params).unwrap();
            let r = rank(&present, k);
            assert!(present.remove(&k));
            worst = worst.max(r);
            assert!(r <= bound, "p={p}: rank {r} exceeds R(p)={bound}");
        }
        assert!(worst > 1, "p={p}: spray never relaxed");
    }
}

// Sprays favour tall nodes. If claimed nodes were unlinked at once, the
// front would fill up with short ones and ranks would creep upwards.
#[test]
fn sustained_spraying_keeps_rank_bound() {
    for p in [4usize, 8] {
        let params = SprayParams::new(p);
        let bound = params.rank_bound();
        let q = SkipListPq::new(24, 70 + p as u64).unwrap();
        let mut present = BTreeSet::new();
        for k in 1..=100_000u64 {
            q.insert(k * 4, 0).unwrap();
            present.insert(k * 4);
        }
        let mut rng = SmallRng::seed_from_u64(p as u64);
        let mut worst = 0;
        for i in 0..40_000 {
            if i % 4 == 3 {
                let k = rng.random_range(1..400_000u64);
                if q.insert(k, 0).unwrap() {
                    present.insert(k);
                }
                continue;
            }
            let (k, _) = q.delete_min_spray(&params).unwrap();
            let r = rank(&present, k);
            assert!(present.remove(&k));
            worst = worst.max(r);
            assert!(r <= bound, "p={p}, op {i}: rank {r} exceeds R(p)={bound}");
        }
        let report = q.audit().unwrap();
        assert_eq!(report.live, present.len());
        assert!(worst > 1);
    }
}

#[test]
fn spray_with_one_thread_is_exact() {
    let q = SkipListPq::new(20, 5).unwrap();
    for k in (1..=2_000u64).rev() {
        q.insert(k * 3, 0).unwrap();
    }
    let p = SprayParams::new(1);
    for i in 1..=1_000u64 {
        assert_eq!(q.delete_min_spray(&p).unwrap().0, i * 3);
    }
}
