//! Lock-free skip-list priority queue.
//!
//! This is the base algorithm shared by both algorithmic modes. Keys are
//! `u64` priorities (smaller is served first) with set semantics: inserting a
//! key that is already present returns `false`. Keys `0` and `u64::MAX` are
//! reserved for the head and tail sentinels.
//!
//! Deletion is split into a logical and a physical step. A node is logically
//! deleted once its bottom-level link carries the mark bit; whoever sets that
//! mark owns the node's `(key, value)`. Upper levels are marked first, top
//! down, so a node that is unmarked on level `l` is unmarked on every level
//! below `l`.
//!
//! Physical unlinking is lazy. Exact deleteMin sweeps away the run of marked
//! nodes at the front of the list; spray deleteMin leaves the node it claims
//! in place and only occasionally sweeps the front. Marked nodes in the middle
//! of the list stay until the front reaches them or an insert's search passes
//! over them. Keeping them keeps the tower heights along the list geometric,
//! which the spray walk relies on (see [`SprayParams`]).
//!
//! Memory is reclaimed through epochs. A node is retired once three things
//! have happened: its inserter stopped linking it, its deleter marked it, and
//! it was unlinked from the bottom level. Whoever completes the last of the
//! three sweeps the node out of every level and retires it.

mod rng;
mod spray;

pub use spray::{rank_bound, SprayParams, RANK_BOUND_TAIL};

use std::collections::HashSet;
use std::sync::atomic::{AtomicI64, AtomicU64, AtomicU8, Ordering};

use crossbeam_epoch::{self as epoch, Atomic, Guard, Owned, Shared};
use rand::Rng;
use thiserror::Error;

/// Largest accepted `max_level`.
pub const MAX_LEVEL_LIMIT: usize = 32;
/// Key reserved for the head sentinel.
pub const MIN_RESERVED_KEY: u64 = 0;
/// Key reserved for the tail sentinel (also the "empty" code on the wire).
pub const MAX_RESERVED_KEY: u64 = u64::MAX;

/// Spray attempts before falling back to an exact scan.
const SPRAY_ATTEMPTS: usize = 3;

const INSERT_DONE: u8 = 0b001;
const DELETE_DONE: u8 = 0b010;
const UNLINKED: u8 = 0b100;
const RETIRABLE: u8 = INSERT_DONE | DELETE_DONE | UNLINKED;

static NEXT_QUEUE_UID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PqError {
    #[error("max_level must be in 1..={MAX_LEVEL_LIMIT}, got {0}")]
    InvalidMaxLevel(usize),
    #[error("key {0} is reserved for a sentinel")]
    ReservedKey(u64),
}

/// Rejects the two sentinel keys.
pub fn check_key(key: u64) -> Result<(), PqError> {
    if key == MIN_RESERVED_KEY || key == MAX_RESERVED_KEY {
        Err(PqError::ReservedKey(key))
    } else {
        Ok(())
    }
}

/// Which deleteMin the base queue runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeleteMode {
    #[default]
    Exact,
    Spray(SprayParams),
}

struct Node {
    key: u64,
    value: u64,
    state: AtomicU8,
    next: Box<[Atomic<Node>]>,
}

impl Node {
    fn new(key: u64, value: u64, height: usize) -> Self {
        Self {
            key,
            value,
            state: AtomicU8::new(0),
            next: (0..height).map(|_| Atomic::null()).collect(),
        }
    }

    fn height(&self) -> usize {
        self.next.len()
    }
}

/// Structural audit report for a quiescent queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    pub live: usize,
    /// Deleted nodes not yet unlinked.
    pub marked: usize,
    /// Linked nodes per level, marked ones included.
    pub per_level: Vec<usize>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuditError {
    #[error("level {level}: keys not strictly ascending ({prev} then {next})")]
    Unsorted { level: usize, prev: u64, next: u64 },
    #[error("level {level}: node {key} is marked but its bottom link is not")]
    Marked { level: usize, key: u64 },
    #[error("level {level}: node {key} is not on the bottom level")]
    NotSubset { level: usize, key: u64 },
    #[error("level {level}: node {key} has height {height}")]
    TooShort { level: usize, key: u64, height: usize },
    #[error("size counter {counter} disagrees with {live} live nodes")]
    SizeMismatch { counter: i64, live: usize },
}

/// Concurrent skip-list priority queue over `(u64 key, u64 value)` entries.
pub struct SkipListPq {
    head: Box<Node>,
    max_level: usize,
    len: AtomicI64,
    seed: u64,
    uid: u64,
    thread_slots: AtomicU64,
}

impl std::fmt::Debug for SkipListPq {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SkipListPq")
            .field("max_level", &self.max_level)
            .field("len", &self.len())
            .field("seed", &self.seed)
            .finish()
    }
}

type Tower<'g> = [Shared<'g, Node>; MAX_LEVEL_LIMIT];
/// Nodes this thread must sweep and retire before returning.
type Reap<'g> = Vec<Shared<'g, Node>>;

impl SkipListPq {
    pub fn new(max_level: usize, seed: u64) -> Result<Self, PqError> {
        if !(1..=MAX_LEVEL_LIMIT).contains(&max_level) {
            return Err(PqError::InvalidMaxLevel(max_level));
        }
        Ok(Self {
            head: Box::new(Node::new(MIN_RESERVED_KEY, 0, max_level)),
            max_level,
            len: AtomicI64::new(0),
            seed,
            uid: NEXT_QUEUE_UID.fetch_add(1, Ordering::Relaxed),
            thread_slots: AtomicU64::new(0),
        })
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    /// Live-entry count: successful inserts minus successful deletes.
    /// Exact when no operation is in flight.
    pub fn len(&self) -> usize {
        self.len.load(Ordering::Relaxed).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn head<'g>(&self) -> Shared<'g, Node> {
        Shared::from(&*self.head as *const Node)
    }

    fn with_rng<R>(&self, f: impl FnOnce(&mut rand::rngs::SmallRng) -> R) -> R {
        rng::with_stream(
            self.uid,
            self.seed,
            || self.thread_slots.fetch_add(1, Ordering::Relaxed),
            f,
        )
    }

    fn random_height(&self) -> usize {
        let max = self.max_level;
        self.with_rng(|rng| {
            let bits: u64 = rng.random();
            // Geometric(1/2) on 1..=max via trailing ones.
            ((bits.trailing_ones() as usize) + 1).min(max)
        })
    }

    /// Locates `key` on every level, unlinking marked nodes on the way.
    /// Returns true if an unmarked node with `key` sits at `succs[0]`.
    fn find<'g>(
        &self,
        key: u64,
        preds: &mut Tower<'g>,
        succs: &mut Tower<'g>,
        guard: &'g Guard,
        reap: &mut Reap<'g>,
    ) -> bool {
        'retry: loop {
            let mut pred = self.head();
            for level in (0..self.max_level).rev() {
                // SAFETY: `pred` is the head or a node observed unmarked on
                // `level + 1`; it is protected by `guard`.
                let mut curr = unsafe { pred.deref() }.next[level]
                    .load(Ordering::Acquire, guard)
                    .with_tag(0);
                while let Some(c) = unsafe { curr.as_ref() } {
                    let succ = c.next[level].load(Ordering::Acquire, guard);
                    if succ.tag() == 1 {
                        let pred_ref = unsafe { pred.deref() };
                        match pred_ref.next[level].compare_exchange(
                            curr,
                            succ.with_tag(0),
                            Ordering::AcqRel,
                            Ordering::Acquire,
                            guard,
                        ) {
                            Ok(_) => {
                                if level == 0 {
                                    self.note_unlinked(curr, reap);
                                }
                                curr = succ.with_tag(0);
                                continue;
                            }
                            Err(_) => continue 'retry,
                        }
                    }
                    if c.key < key {
                        pred = curr;
                        curr = succ;
                    } else {
                        break;
                    }
                }
                preds[level] = pred;
                succs[level] = curr;
            }
            return match unsafe { succs[0].as_ref() } {
                Some(n) => n.key == key,
                None => false,
            };
        }
    }

    /// Sweeps every level, unlinking all marked nodes with keys `<= key`.
    fn unlink_through<'g>(&self, key: u64, guard: &'g Guard, reap: &mut Reap<'g>) {
        for level in (0..self.max_level).rev() {
            'retry: loop {
                let mut pred = self.head();
                let mut curr = unsafe { pred.deref() }.next[level]
                    .load(Ordering::Acquire, guard)
                    .with_tag(0);
                loop {
                    let Some(c) = (unsafe { curr.as_ref() }) else {
                        break 'retry;
                    };
                    if c.key > key {
                        break 'retry;
                    }
                    let succ = c.next[level].load(Ordering::Acquire, guard);
                    if succ.tag() == 1 {
                        match unsafe { pred.deref() }.next[level].compare_exchange(
                            curr,
                            succ.with_tag(0),
                            Ordering::AcqRel,
                            Ordering::Acquire,
                            guard,
                        ) {
                            Ok(_) => {
                                if level == 0 {
                                    self.note_unlinked(curr, reap);
                                }
                                curr = succ.with_tag(0);
                            }
                            Err(_) => continue 'retry,
                        }
                    } else {
                        pred = curr;
                        curr = succ;
                    }
                }
            }
        }
    }

    /// Sets one of the three retirement conditions; the caller that sets the
    /// last one queues the node for [`Self::reap`].
    fn finish<'g>(&self, node: Shared<'g, Node>, bit: u8, reap: &mut Reap<'g>) {
        let n = unsafe { node.deref() };
        let prev = n.state.fetch_or(bit, Ordering::AcqRel);
        if prev | bit == RETIRABLE && prev != RETIRABLE {
            reap.push(node);
        }
    }

    fn note_unlinked<'g>(&self, node: Shared<'g, Node>, reap: &mut Reap<'g>) {
        self.finish(node, UNLINKED, reap);
    }

    /// Sweeps queued nodes out of every level and retires them. The sweep
    /// starts after their inserters finished, so nothing can relink them;
    /// nodes it completes in turn are handled in the next round.
    fn reap<'g>(&self, mut list: Reap<'g>, guard: &'g Guard) {
        while !list.is_empty() {
            let bound = list.iter().map(|n| unsafe { n.deref() }.key).max().unwrap_or(0);
            let mut next = Vec::new();
            self.unlink_through(bound, guard, &mut next);
            for node in list.drain(..) {
                if !cfg!(feature = "leak-nodes") {
                    // SAFETY: the node is marked on every level, its inserter
                    // has stopped linking it, and the sweep above removed it
                    // from every level, so no new reference can be created.
                    unsafe { guard.defer_destroy(node) };
                }
            }
            list = next;
        }
    }

    /// Unlinks the run of marked nodes at the front of the list.
    fn clean_front<'g>(&self, guard: &'g Guard, reap: &mut Reap<'g>) {
        let mut bound = None;
        let mut curr = self.first(guard);
        while let Some(c) = unsafe { curr.as_ref() } {
            let next = c.next[0].load(Ordering::Acquire, guard);
            if next.tag() == 0 {
                break;
            }
            bound = Some(c.key);
            curr = next.with_tag(0);
        }
        if let Some(b) = bound {
            self.unlink_through(b, guard, reap);
        }
    }

    /// Inserts `(key, value)`. Returns `Ok(false)` if `key` is already present.
    pub fn insert(&self, key: u64, value: u64) -> Result<bool, PqError> {
        check_key(key)?;
        let guard = &epoch::pin();
        let height = self.random_height();
        let mut preds: Tower<'_> = [Shared::null(); MAX_LEVEL_LIMIT];
        let mut succs: Tower<'_> = [Shared::null(); MAX_LEVEL_LIMIT];
        let mut owned = Owned::new(Node::new(key, value, height));
        let mut reap = Vec::new();

        let node = loop {
            if self.find(key, &mut preds, &mut succs, guard, &mut reap) {
                self.reap(reap, guard);
                return Ok(false);
            }
            for (level, link) in owned.next.iter().enumerate() {
                link.store(succs[level], Ordering::Relaxed);
            }
            let pred = unsafe { preds[0].deref() };
            match pred.next[0].compare_exchange(succs[0], owned, Ordering::AcqRel, Ordering::Acquire, guard) {
                Ok(node) => break node,
                Err(e) => owned = e.new,
            }
        };
        self.len.fetch_add(1, Ordering::Relaxed);

        let n = unsafe { node.deref() };
        'levels: for level in 1..height {
            loop {
                let next = n.next[level].load(Ordering::Acquire, guard);
                if next.tag() == 1 {
                    break 'levels;
                }
                let succ = succs[level];
                if next != succ
                    && n.next[level]
                        .compare_exchange(next, succ, Ordering::AcqRel, Ordering::Acquire, guard)
                        .is_err()
                {
                    break 'levels;
                }
                let pred = unsafe { preds[level].deref() };
                if pred.next[level]
                    .compare_exchange(succ, node, Ordering::AcqRel, Ordering::Acquire, guard)
                    .is_ok()
                {
                    break;
                }
                self.find(key, &mut preds, &mut succs, guard, &mut reap);
                if n.next[0].load(Ordering::Acquire, guard).tag() == 1 {
                    break 'levels;
                }
            }
        }
        self.finish(node, INSERT_DONE, &mut reap);
        self.reap(reap, guard);
        Ok(true)
    }

    /// Tries to logically delete `node`. Returns true if this call owns it.
    fn claim<'g>(&self, node: Shared<'g, Node>, guard: &'g Guard, reap: &mut Reap<'g>) -> bool {
        let n = unsafe { node.deref() };
        if n.next[0].load(Ordering::Acquire, guard).tag() == 1 {
            return false;
        }
        for level in (1..n.height()).rev() {
            n.next[level].fetch_or(1, Ordering::AcqRel, guard);
        }
        loop {
            let succ = n.next[0].load(Ordering::Acquire, guard);
            if succ.tag() == 1 {
                return false;
            }
            if n.next[0]
                .compare_exchange(succ, succ.with_tag(1), Ordering::AcqRel, Ordering::Acquire, guard)
                .is_ok()
            {
                self.len.fetch_sub(1, Ordering::Relaxed);
                self.finish(node, DELETE_DONE, reap);
                return true;
            }
        }
    }

    /// Walks the bottom level from `start` and claims the first live node.
    fn claim_from<'g>(&self, mut curr: Shared<'g, Node>, guard: &'g Guard, reap: &mut Reap<'g>) -> Option<(u64, u64)> {
        while let Some(c) = unsafe { curr.as_ref() } {
            let succ = c.next[0].load(Ordering::Acquire, guard);
            if succ.tag() == 0 && self.claim(curr, guard, reap) {
                return Some((c.key, c.value));
            }
            curr = c.next[0].load(Ordering::Acquire, guard).with_tag(0);
        }
        None
    }

    fn first<'g>(&self, guard: &'g Guard) -> Shared<'g, Node> {
        self.head.next[0].load(Ordering::Acquire, guard).with_tag(0)
    }

    /// Removes and returns the live entry with the smallest key.
    pub fn delete_min(&self) -> Option<(u64, u64)> {
        let guard = &epoch::pin();
        let mut reap = Vec::new();
        let hit = self.claim_from(self.first(guard), guard, &mut reap);
        self.clean_front(guard, &mut reap);
        self.reap(reap, guard);
        hit
    }

    /// Relaxed deleteMin: removes an entry among the first few.
    ///
    /// In a quiescent queue the returned entry's rank is at most
    /// [`SprayParams::rank_bound`] (up to the documented tail probability).
    /// After a few sprays that find no live entry past their landing node,
    /// falls back to an exact scan, so `None` means the queue had no live
    /// entry. One call in `p` also sweeps the marked front of the list.
    pub fn delete_min_spray(&self, params: &SprayParams) -> Option<(u64, u64)> {
        let guard = &epoch::pin();
        let mut reap = Vec::new();
        let mut hit = None;
        for _ in 0..SPRAY_ATTEMPTS {
            hit = self.claim_from(self.spray(params, guard), guard, &mut reap);
            if hit.is_some() {
                break;
            }
        }
        let clean = match hit {
            None => {
                hit = self.claim_from(self.first(guard), guard, &mut reap);
                true
            }
            Some(_) => params.threads <= 1 || self.with_rng(|rng| rng.random_range(0..params.threads) == 0),
        };
        if clean {
            self.clean_front(guard, &mut reap);
        }
        self.reap(reap, guard);
        hit
    }

    pub fn delete_min_with(&self, mode: &DeleteMode) -> Option<(u64, u64)> {
        match mode {
            DeleteMode::Exact => self.delete_min(),
            DeleteMode::Spray(params) => self.delete_min_spray(params),
        }
    }

    /// Random descending walk; returns the landing node. Marked nodes count
    /// as positions like any other.
    fn spray<'g>(&self, params: &SprayParams, guard: &'g Guard) -> Shared<'g, Node> {
        let top = params.start_height().min(self.max_level - 1);
        let walk = params.max_walk();
        let head = self.head();
        let mut curr = head;
        for level in (0..=top).rev() {
            let steps = if walk == 0 {
                0
            } else {
                self.with_rng(|rng| rng.random_range(0..=walk))
            };
            for _ in 0..steps {
                let next = unsafe { curr.deref() }.next[level]
                    .load(Ordering::Acquire, guard)
                    .with_tag(0);
                if next.is_null() {
                    break;
                }
                curr = next;
            }
        }
        if curr == head {
            self.first(guard)
        } else {
            curr
        }
    }

    /// Live entries in key order. Only meaningful when quiescent.
    pub fn snapshot(&self) -> Vec<(u64, u64)> {
        let guard = &epoch::pin();
        let mut out = Vec::with_capacity(self.len());
        let mut curr = self.first(guard);
        while let Some(c) = unsafe { curr.as_ref() } {
            let next = c.next[0].load(Ordering::Acquire, guard);
            if next.tag() == 0 {
                out.push((c.key, c.value));
            }
            curr = next.with_tag(0);
        }
        out
    }

    /// Checks the structural invariants. Call only when no operation is in flight.
    pub fn audit(&self) -> Result<AuditReport, AuditError> {
        let guard = &epoch::pin();
        let mut bottom: HashSet<*const Node> = HashSet::new();
        let mut per_level = Vec::with_capacity(self.max_level);
        let mut marked = 0;
        for level in 0..self.max_level {
            let mut count = 0;
            let mut prev: Option<u64> = None;
            let mut curr = self.head.next[level].load(Ordering::Acquire, guard).with_tag(0);
            while let Some(c) = unsafe { curr.as_ref() } {
                let next = c.next[level].load(Ordering::Acquire, guard);
                if next.tag() == 1 {
                    if level == 0 {
                        marked += 1;
                    } else if c.next[0].load(Ordering::Acquire, guard).tag() == 0 {
                        return Err(AuditError::Marked { level, key: c.key });
                    }
                }
                if let Some(p) = prev {
                    if p >= c.key {
                        return Err(AuditError::Unsorted {
                            level,
                            prev: p,
                            next: c.key,
                        });
                    }
                }
                if c.height() <= level {
                    return Err(AuditError::TooShort {
                        level,
                        key: c.key,
                        height: c.height(),
                    });
                }
                let ptr = curr.as_raw();
                if level == 0 {
                    bottom.insert(ptr);
                } else if !bottom.contains(&ptr) {
                    return Err(AuditError::NotSubset { level, key: c.key });
                }
                count += 1;
                prev = Some(c.key);
                curr = next.with_tag(0);
            }
            per_level.push(count);
        }
        let live = per_level[0] - marked;
        let counter = self.len.load(Ordering::Relaxed);
        if counter != live as i64 {
            return Err(AuditError::SizeMismatch { counter, live });
        }
        Ok(AuditReport {
            live,
            marked,
            per_level,
        })
    }
}

impl Drop for SkipListPq {
    fn drop(&mut self) {
        // No operation can be in flight, so every node still on the bottom
        // level has not been retired.
        unsafe {
            let guard = epoch::unprotected();
            let mut curr = self.head.next[0].load(Ordering::Relaxed, guard).with_tag(0);
            while !curr.is_null() {
                let next = curr.deref().next[0].load(Ordering::Relaxed, guard).with_tag(0);
                drop(curr.into_owned());
                curr = next;
            }
        }
    }
}
