//! SmartPQ: one queue, two access paths, switched at runtime.
//!
//! Every client operation reads the shared mode word. In oblivious mode the
//! caller runs the operation directly on the base skip list; in aware mode it
//! delegates through [`NuddlePq`]. Servers only poll for requests in aware
//! mode. Both paths mutate the same base queue, so a switch needs no barrier.
//!
//! A request published just before a 2 -> 1 switch must still be answered.
//! The mode word carries a generation counter next to the mode, and after
//! publishing a client re-reads it behind a full fence:
//!
//! * if the client still sees aware mode, any later switch is seen by the
//!   servers as a changed word, and a server runs one more pass (behind its
//!   own full fence) before going quiet;
//! * if the client sees oblivious mode, it bumps a drain counter, and a
//!   server that sees the counter move runs one more pass.
//!
//! Either way the pending request is picked up.

use std::sync::atomic::{fence, AtomicI64, AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::classify::{Features, Mode, Tree};
use crate::delegate::{decode_delete, ClientHandle, DelegateError, NuddlePq, ServerHandle, OP_DELETE_MIN, OP_INSERT};
use crate::pqcore::{check_key, PqError, SkipListPq};

/// Operations a handle buffers before flushing its counters.
pub const STATS_BATCH: u64 = 16;
/// Default decision interval.
pub const DEFAULT_INTERVAL: Duration = Duration::from_secs(1);

const MODE_MASK: u64 = 0b11;

fn pack(generation: u64, mode: Mode) -> u64 {
    (generation << 2) | mode.code() as u64
}

fn unpack_mode(word: u64) -> Mode {
    if word & MODE_MASK == Mode::Aware.code() as u64 {
        Mode::Aware
    } else {
        Mode::Oblivious
    }
}

#[derive(Debug, Error)]
pub enum AdaptiveError {
    #[error("no decision tree installed")]
    NoTree,
    #[error(transparent)]
    Delegate(#[from] DelegateError),
}

/// One mode change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    /// Time since the queue was created.
    pub at: Duration,
    pub from: Mode,
    pub to: Mode,
}

/// Shared workload counters. Handles update them in batches.
#[derive(Debug)]
pub struct WorkloadStats {
    inserts: AtomicU64,
    inserts_ok: AtomicU64,
    deletes: AtomicU64,
    deletes_ok: AtomicU64,
    active: AtomicI64,
    min_key: AtomicU64,
    max_key: AtomicU64,
}

/// Point-in-time copy of [`WorkloadStats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StatsSnapshot {
    pub inserts: u64,
    pub inserts_ok: u64,
    pub deletes: u64,
    pub deletes_ok: u64,
    pub active: i64,
}

impl StatsSnapshot {
    /// Successful inserts minus successful deletes.
    pub fn size_estimate(&self) -> i64 {
        self.inserts_ok as i64 - self.deletes_ok as i64
    }
}

impl Default for WorkloadStats {
    fn default() -> Self {
        Self {
            inserts: AtomicU64::new(0),
            inserts_ok: AtomicU64::new(0),
            deletes: AtomicU64::new(0),
            deletes_ok: AtomicU64::new(0),
            active: AtomicI64::new(0),
            min_key: AtomicU64::new(u64::MAX),
            max_key: AtomicU64::new(0),
        }
    }
}

impl WorkloadStats {
    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            inserts: self.inserts.load(Ordering::Relaxed),
            inserts_ok: self.inserts_ok.load(Ordering::Relaxed),
            deletes: self.deletes.load(Ordering::Relaxed),
            deletes_ok: self.deletes_ok.load(Ordering::Relaxed),
            active: self.active.load(Ordering::Relaxed),
        }
    }

    /// Returns and resets the requested-key window as `(min, max)`.
    fn take_key_window(&self) -> Option<(u64, u64)> {
        let min = self.min_key.swap(u64::MAX, Ordering::Relaxed);
        let max = self.max_key.swap(0, Ordering::Relaxed);
        (min <= max).then_some((min, max))
    }
}

/// Per-handle counters, flushed every [`STATS_BATCH`] operations.
#[derive(Debug)]
struct LocalStats {
    inserts: u64,
    inserts_ok: u64,
    deletes: u64,
    deletes_ok: u64,
    min_key: u64,
    max_key: u64,
    pending: u64,
}

impl Default for LocalStats {
    fn default() -> Self {
        Self {
            inserts: 0,
            inserts_ok: 0,
            deletes: 0,
            deletes_ok: 0,
            min_key: u64::MAX,
            max_key: 0,
            pending: 0,
        }
    }
}

impl LocalStats {
    fn insert(&mut self, shared: &WorkloadStats, key: u64, ok: bool) {
        self.inserts += 1;
        self.inserts_ok += ok as u64;
        self.min_key = self.min_key.min(key);
        self.max_key = self.max_key.max(key);
        self.tick(shared);
    }

    fn delete(&mut self, shared: &WorkloadStats, ok: bool) {
        self.deletes += 1;
        self.deletes_ok += ok as u64;
        self.tick(shared);
    }

    fn tick(&mut self, shared: &WorkloadStats) {
        self.pending += 1;
        if self.pending >= STATS_BATCH {
            self.flush(shared);
        }
    }

    fn flush(&mut self, shared: &WorkloadStats) {
        if self.pending == 0 {
            return;
        }
        shared.inserts.fetch_add(self.inserts, Ordering::Relaxed);
        shared.inserts_ok.fetch_add(self.inserts_ok, Ordering::Relaxed);
        shared.deletes.fetch_add(self.deletes, Ordering::Relaxed);
        shared.deletes_ok.fetch_add(self.deletes_ok, Ordering::Relaxed);
        if self.min_key <= self.max_key {
            shared.min_key.fetch_min(self.min_key, Ordering::Relaxed);
            shared.max_key.fetch_max(self.max_key, Ordering::Relaxed);
        }
        *self = Self::default();
    }
}

/// Builds feature vectors from successive stats windows.
#[derive(Debug, Default)]
struct FeatureSampler {
    last: StatsSnapshot,
    key_range: f64,
    insert_pct: Option<f64>,
}

impl FeatureSampler {
    fn sample(&mut self, pq: &SmartPq) -> Features<f64> {
        let now = pq.stats.snapshot();
        let ins = now.inserts - self.last.inserts;
        let del = now.deletes - self.last.deletes;
        if ins + del > 0 {
            self.insert_pct = Some(ins as f64 / (ins + del) as f64);
        }
        if let Some((lo, hi)) = pq.stats.take_key_window() {
            self.key_range = (hi - lo) as f64;
        }
        self.last = now;
        Features {
            n_threads: now.active.max(0) as f64,
            size: pq.base().len() as f64,
            key_range: self.key_range,
            insert_pct: self.insert_pct.unwrap_or(0.5),
        }
    }
}

/// The adaptive queue. Share it as `Arc<SmartPq>`.
pub struct SmartPq {
    nuddle: Arc<NuddlePq>,
    algo: AtomicU64,
    drain: AtomicU64,
    stats: WorkloadStats,
    tree: RwLock<Option<Arc<Tree<f64>>>>,
    transitions: Mutex<Vec<Transition>>,
    sampler: Mutex<FeatureSampler>,
    created: Instant,
}

impl std::fmt::Debug for SmartPq {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmartPq")
            .field("nuddle", &self.nuddle)
            .field("mode", &self.mode())
            .finish()
    }
}

impl SmartPq {
    /// Starts in oblivious mode.
    pub fn new(nuddle: Arc<NuddlePq>) -> Self {
        Self::with_mode(nuddle, Mode::Oblivious)
    }

    /// `Neutral` is treated as oblivious.
    pub fn with_mode(nuddle: Arc<NuddlePq>, mode: Mode) -> Self {
        let mode = if mode == Mode::Aware {
            Mode::Aware
        } else {
            Mode::Oblivious
        };
        Self {
            nuddle,
            algo: AtomicU64::new(pack(0, mode)),
            drain: AtomicU64::new(0),
            stats: WorkloadStats::default(),
            tree: RwLock::new(None),
            transitions: Mutex::new(Vec::new()),
            sampler: Mutex::new(FeatureSampler::default()),
            created: Instant::now(),
        }
    }

    pub fn nuddle(&self) -> &Arc<NuddlePq> {
        &self.nuddle
    }

    pub fn base(&self) -> &Arc<SkipListPq> {
        self.nuddle.base()
    }

    pub fn stats(&self) -> &WorkloadStats {
        &self.stats
    }

    /// Current mode; always `Oblivious` or `Aware`.
    pub fn mode(&self) -> Mode {
        unpack_mode(self.algo.load(Ordering::Acquire))
    }

    /// Raw mode word: `(generation << 2) | mode`.
    pub fn mode_word(&self) -> u64 {
        self.algo.load(Ordering::Acquire)
    }

    pub fn transitions(&self) -> Vec<Transition> {
        self.lock_transitions().clone()
    }

    fn lock_transitions(&self) -> std::sync::MutexGuard<'_, Vec<Transition>> {
        self.transitions.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn install_tree(&self, tree: Tree<f64>) {
        *self.tree.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(tree));
    }

    pub fn tree(&self) -> Option<Arc<Tree<f64>>> {
        self.tree.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Switches to `mode`. `Neutral` and the current mode are no-ops.
    /// Returns whether the mode changed.
    pub fn set_mode(&self, mode: Mode) -> bool {
        if mode == Mode::Neutral {
            return false;
        }
        let mut log = self.lock_transitions();
        let word = self.algo.load(Ordering::SeqCst);
        let from = unpack_mode(word);
        if from == mode {
            return false;
        }
        self.algo.store(pack((word >> 2) + 1, mode), Ordering::SeqCst);
        log.push(Transition {
            at: self.created.elapsed(),
            from,
            to: mode,
        });
        log::debug!("mode {} -> {}", from, mode);
        true
    }

    /// Classifies `f` and applies the prediction unless it is neutral.
    pub fn decide(&self, f: &Features<f64>) -> Result<Mode, AdaptiveError> {
        let tree = self.tree().ok_or(AdaptiveError::NoTree)?;
        let m = tree.predict(f);
        self.set_mode(m);
        Ok(m)
    }

    /// Current feature vector over the window since the previous call.
    pub fn sample_features(&self) -> Features<f64> {
        self.sampler.lock().unwrap_or_else(|e| e.into_inner()).sample(self)
    }

    /// One decision step: sample features, then [`SmartPq::decide`].
    pub fn tick(&self) -> Result<Mode, AdaptiveError> {
        if self.tree().is_none() {
            return Err(AdaptiveError::NoTree);
        }
        let f = self.sample_features();
        self.decide(&f)
    }

    pub fn init_client(self: &Arc<Self>) -> Result<SmartClient, AdaptiveError> {
        let inner = self.nuddle.init_client()?;
        self.stats.active.fetch_add(1, Ordering::Relaxed);
        Ok(SmartClient {
            pq: Arc::clone(self),
            inner,
            local: LocalStats::default(),
            active: true,
        })
    }

    pub fn init_server(self: &Arc<Self>, core: Option<usize>) -> Result<SmartServer, AdaptiveError> {
        let inner = self.nuddle.init_server(core)?;
        self.stats.active.fetch_add(1, Ordering::Relaxed);
        Ok(SmartServer {
            pq: Arc::clone(self),
            inner,
            last_word: self.algo.load(Ordering::SeqCst),
            last_drain: self.drain.load(Ordering::Acquire),
            local: LocalStats::default(),
            active: true,
        })
    }
}

/// Client handle of a [`SmartPq`].
#[derive(Debug)]
pub struct SmartClient {
    pq: Arc<SmartPq>,
    inner: ClientHandle,
    local: LocalStats,
    active: bool,
}

impl SmartClient {
    pub fn delegate(&self) -> &ClientHandle {
        &self.inner
    }

    /// Whether this handle counts towards the thread feature.
    pub fn set_active(&mut self, active: bool) {
        set_active(&self.pq.stats, &mut self.active, active);
    }

    /// Pushes buffered counters to the shared stats.
    pub fn flush_stats(&mut self) {
        self.local.flush(&self.pq.stats);
    }

    fn delegated(&mut self, op: u64, key: u64, value: u64) -> (u64, u64) {
        self.inner.publish(op, key, value);
        fence(Ordering::SeqCst);
        if unpack_mode(self.pq.algo.load(Ordering::SeqCst)) != Mode::Aware {
            self.pq.drain.fetch_add(1, Ordering::Release);
        }
        self.inner.wait()
    }

    pub fn insert(&mut self, key: u64, value: u64) -> Result<bool, PqError> {
        check_key(key)?;
        let ok = if self.pq.mode() == Mode::Aware {
            self.delegated(OP_INSERT, key, value).0 == 1
        } else {
            self.pq.base().insert(key, value)?
        };
        self.local.insert(&self.pq.stats, key, ok);
        Ok(ok)
    }

    pub fn delete_min(&mut self) -> Option<(u64, u64)> {
        let out = if self.pq.mode() == Mode::Aware {
            decode_delete(self.delegated(OP_DELETE_MIN, 0, 0))
        } else {
            self.pq.base().delete_min_with(&self.pq.nuddle.delete_mode())
        };
        self.local.delete(&self.pq.stats, out.is_some());
        out
    }
}

impl Drop for SmartClient {
    fn drop(&mut self) {
        self.flush_stats();
        self.set_active(false);
    }
}

/// Server handle of a [`SmartPq`].
#[derive(Debug)]
pub struct SmartServer {
    pq: Arc<SmartPq>,
    inner: ServerHandle,
    last_word: u64,
    last_drain: u64,
    local: LocalStats,
    active: bool,
}

impl SmartServer {
    pub fn delegate(&self) -> &ServerHandle {
        &self.inner
    }

    pub fn set_active(&mut self, active: bool) {
        set_active(&self.pq.stats, &mut self.active, active);
    }

    pub fn flush_stats(&mut self) {
        self.local.flush(&self.pq.stats);
    }

    /// Serves requests in aware mode. In oblivious mode it returns 0 unless a
    /// switch or a client's drain signal requires one more pass.
    pub fn serve(&mut self) -> usize {
        let word = self.pq.algo.load(Ordering::SeqCst);
        if unpack_mode(word) == Mode::Aware {
            self.last_word = word;
            return self.inner.serve_requests();
        }
        if word != self.last_word {
            self.last_word = word;
            fence(Ordering::SeqCst);
            return self.inner.serve_requests();
        }
        let drain = self.pq.drain.load(Ordering::Acquire);
        if drain != self.last_drain {
            self.last_drain = drain;
            return self.inner.serve_requests();
        }
        0
    }

    /// Direct insert on the base queue.
    pub fn insert(&mut self, key: u64, value: u64) -> Result<bool, PqError> {
        let ok = self.inner.insert(key, value)?;
        self.local.insert(&self.pq.stats, key, ok);
        Ok(ok)
    }

    pub fn delete_min(&mut self) -> Option<(u64, u64)> {
        let out = self.inner.delete_min();
        self.local.delete(&self.pq.stats, out.is_some());
        out
    }
}

impl Drop for SmartServer {
    fn drop(&mut self) {
        self.flush_stats();
        self.set_active(false);
    }
}

fn set_active(stats: &WorkloadStats, flag: &mut bool, active: bool) {
    if *flag != active {
        *flag = active;
        stats.active.fetch_add(if active { 1 } else { -1 }, Ordering::Relaxed);
    }
}

/// Background thread calling [`SmartPq::tick`] at a fixed interval.
#[derive(Debug)]
pub struct DecisionLoop {
    stop: mpsc::Sender<()>,
    handle: Option<JoinHandle<usize>>,
}

impl DecisionLoop {
    /// `None` means an infinite interval: the thread never ticks.
    pub fn spawn(pq: Arc<SmartPq>, interval: Option<Duration>) -> Result<Self, AdaptiveError> {
        if pq.tree().is_none() {
            return Err(AdaptiveError::NoTree);
        }
        let (stop, rx) = mpsc::channel::<()>();
        let handle = std::thread::Builder::new()
            .name("adaptivepq-decide".into())
            .spawn(move || {
                let mut ticks = 0;
                let Some(interval) = interval else {
                    let _ = rx.recv();
                    return ticks;
                };
                let mut next = Instant::now() + interval;
                loop {
                    let wait = next.saturating_duration_since(Instant::now());
                    match rx.recv_timeout(wait) {
                        Err(RecvTimeoutError::Timeout) => {
                            if let Err(e) = pq.tick() {
                                log::warn!("decision tick failed: {e}");
                            }
                            ticks += 1;
                            next += interval;
                        }
                        _ => return ticks,
                    }
                }
            })
            .expect("spawn decision thread");
        Ok(Self {
            stop,
            handle: Some(handle),
        })
    }

    /// Stops the thread and returns the number of ticks it ran.
    pub fn stop(mut self) -> usize {
        self.shutdown()
    }

    fn shutdown(&mut self) -> usize {
        let _ = self.stop.send(());
        self.handle.take().map(|h| h.join().unwrap_or(0)).unwrap_or(0)
    }
}

impl Drop for DecisionLoop {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::TreeNode;
    use crate::delegate::NuddleConfig;
    use crate::topology::Topology;

    fn smart(servers: usize, clients: usize) -> Arc<SmartPq> {
        let base = Arc::new(SkipListPq::new(20, 3).unwrap());
        let n = NuddlePq::with_topology(base, NuddleConfig::new(servers, clients), Topology::simulated(1, 4)).unwrap();
        Arc::new(SmartPq::new(Arc::new(n)))
    }

    fn insert_pct_tree() -> Tree<f64> {
        Tree::from_nodes(vec![
            TreeNode::Split {
                feature: 3,
                threshold: 0.5,
                left: 1,
                right: 2,
            },
            TreeNode::Leaf(Mode::Aware),
            TreeNode::Leaf(Mode::Oblivious),
        ])
        .unwrap()
    }

    #[test]
    fn oblivious_mode_runs_directly() {
        let pq = smart(1, 7);
        let mut c = pq.init_client().unwrap();
        let mut s = pq.init_server(None).unwrap();
        assert_eq!(pq.mode(), Mode::Oblivious);
        assert!(c.insert(5, 50).unwrap());
        assert!(!c.insert(5, 51).unwrap());
        assert_eq!(s.serve(), 0);
        assert_eq!(c.delete_min(), Some((5, 50)));
        assert_eq!(c.delete_min(), None);
        assert_eq!(c.delegate().stats().issued, 0);
    }

    #[test]
    fn set_mode_semantics() {
        let pq = smart(1, 7);
        assert!(!pq.set_mode(Mode::Neutral));
        assert!(!pq.set_mode(Mode::Oblivious));
        assert!(pq.set_mode(Mode::Aware));
        assert_eq!(pq.mode(), Mode::Aware);
        assert_eq!(pq.mode_word(), pack(1, Mode::Aware));
        assert!(pq.set_mode(Mode::Oblivious));
        assert_eq!(pq.mode_word() & MODE_MASK, 1);
        let t = pq.transitions();
        assert_eq!(t.len(), 2);
        assert_eq!((t[0].from, t[0].to), (Mode::Oblivious, Mode::Aware));
    }

    #[test]
    fn decide_requires_tree() {
        let pq = smart(1, 7);
        let f = Features::new(4.0, 10.0, 100.0, 0.3).unwrap();
        assert!(matches!(pq.decide(&f), Err(AdaptiveError::NoTree)));
        assert!(DecisionLoop::spawn(Arc::clone(&pq), None).is_err());
        pq.install_tree(insert_pct_tree());
        assert_eq!(pq.decide(&f).unwrap(), Mode::Aware);
        assert_eq!(pq.mode(), Mode::Aware);
        assert_eq!(pq.decide(&f).unwrap(), Mode::Aware);
        assert_eq!(pq.transitions().len(), 1);
    }

    #[test]
    fn neutral_prediction_keeps_mode() {
        let pq = smart(1, 7);
        pq.install_tree(Tree::leaf(Mode::Neutral));
        let f = Features::new(4.0, 10.0, 100.0, 0.3).unwrap();
        assert_eq!(pq.decide(&f).unwrap(), Mode::Neutral);
        assert_eq!(pq.mode(), Mode::Oblivious);
        assert!(pq.transitions().is_empty());
    }

    #[test]
    fn drain_after_switch_to_oblivious() {
        let pq = smart(1, 7);
        pq.set_mode(Mode::Aware);
        let mut c = pq.init_client().unwrap();
        let mut s = pq.init_server(None).unwrap();
        // Published while aware, switched before the server got to it.
        c.inner.publish(OP_INSERT, 9, 90);
        pq.set_mode(Mode::Oblivious);
        assert_eq!(s.serve(), 1);
        assert_eq!(c.inner.wait(), (1, 0));
        assert_eq!(s.serve(), 0);

        // Published after the server already saw the switch: the drain
        // counter forces one more pass.
        c.inner.publish(OP_DELETE_MIN, 0, 0);
        fence(Ordering::SeqCst);
        pq.drain.fetch_add(1, Ordering::Release);
        assert_eq!(s.serve(), 1);
        assert_eq!(decode_delete(c.inner.wait()), Some((9, 90)));
        assert_eq!(s.serve(), 0);
    }

    #[test]
    fn stats_are_batched_and_flushed() {
        let pq = smart(1, 7);
        let mut c = pq.init_client().unwrap();
        for k in 1..=10 {
            c.insert(k, 0).unwrap();
        }
        assert_eq!(pq.stats().snapshot().inserts, 0);
        for k in 11..=16 {
            c.insert(k, 0).unwrap();
        }
        assert_eq!(pq.stats().snapshot().inserts, 16);
        c.delete_min();
        c.flush_stats();
        let s = pq.stats().snapshot();
        assert_eq!((s.inserts_ok, s.deletes_ok, s.size_estimate()), (16, 1, 15));
        assert_eq!(s.active, 1);
        drop(c);
        assert_eq!(pq.stats().snapshot().active, 0);
    }

    #[test]
    fn sampled_features() {
        let pq = smart(1, 7);
        let mut c = pq.init_client().unwrap();
        for k in 100..=180 {
            c.insert(k, 0).unwrap();
        }
        for _ in 0..20 {
            c.delete_min();
        }
        c.flush_stats();
        let f = pq.sample_features();
        assert_eq!(f.n_threads, 1.0);
        assert_eq!(f.size, 61.0);
        assert_eq!(f.key_range, 80.0);
        assert_eq!(f.insert_pct, 81.0 / 101.0);
        // Empty window keeps the previous values.
        let g = pq.sample_features();
        assert_eq!((g.key_range, g.insert_pct), (80.0, 81.0 / 101.0));
    }

    #[test]
    fn infinite_interval_never_switches() {
        let pq = smart(1, 7);
        pq.install_tree(Tree::leaf(Mode::Aware));
        let d = DecisionLoop::spawn(Arc::clone(&pq), None).unwrap();
        std::thread::sleep(Duration::from_millis(50));
        assert_eq!(d.stop(), 0);
        assert_eq!(pq.mode(), Mode::Oblivious);
    }

    #[test]
    fn loop_ticks_and_stops() {
        let pq = smart(1, 7);
        pq.install_tree(Tree::leaf(Mode::Aware));
        let d = DecisionLoop::spawn(Arc::clone(&pq), Some(Duration::from_millis(10))).unwrap();
        std::thread::sleep(Duration::from_millis(100));
        assert!(d.stop() >= 2);
        assert_eq!(pq.mode(), Mode::Aware);
        assert_eq!(pq.transitions().len(), 1);
    }
}
