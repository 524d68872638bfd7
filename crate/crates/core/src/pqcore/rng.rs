//! Per-thread, per-queue random streams.
//!
//! Each thread that touches a queue gets a stream seeded from the queue seed
//! and the order in which threads first touched that queue. A single-threaded
//! run therefore replays the same level and spray draws for the same seed.

use std::cell::RefCell;

use rand::rngs::SmallRng;
use rand::SeedableRng;

/// Streams kept per thread before the oldest one is evicted.
const CACHE_CAPACITY: usize = 16;

thread_local! {
    static STREAMS: RefCell<Vec<(u64, SmallRng)>> = const { RefCell::new(Vec::new()) };
}

/// SplitMix64 finalizer, used to spread seed material.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `f` with this thread's stream for queue `uid`. `slot` is called once,
/// on first use, to obtain the thread's registration index for the queue.
pub(crate) fn with_stream<R>(uid: u64, seed: u64, slot: impl FnOnce() -> u64, f: impl FnOnce(&mut SmallRng) -> R) -> R {
    STREAMS.with(|cell| {
        let mut streams = cell.borrow_mut();
        let idx = match streams.iter().position(|(id, _)| *id == uid) {
            Some(i) => i,
            None => {
                if streams.len() == CACHE_CAPACITY {
                    streams.remove(0);
                }
                let s = slot();
                let rng = SmallRng::seed_from_u64(mix64(seed ^ mix64(s.wrapping_add(1))));
                streams.push((uid, rng));
                streams.len() - 1
            }
        };
        f(&mut streams[idx].1)
    })
}
