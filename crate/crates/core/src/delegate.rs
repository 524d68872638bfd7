//! Nuddle: multi-server delegation over the shared skip list.
//!
//! Server threads execute operations on the base queue for groups of client
//! threads. Each client owns one request line; each group shares one
//! response line written only by the group's server. A request is pending
//! while the client's request toggle differs from its bit in the response
//! toggle word. See `docs/protocol.md` for the exact layout.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crossbeam_utils::Backoff;
use thiserror::Error;

use crate::pqcore::{check_key, DeleteMode, PqError, SkipListPq};
use crate::topology::{pin_self, Topology};

/// Request line word holding the toggle (bit 0) and op code (bits 1-2).
pub const REQ_CTRL: usize = 0;
pub const REQ_KEY: usize = 1;
pub const REQ_VALUE: usize = 2;
/// Written by the server: the value of the entry a deleteMin removed.
pub const REQ_RET: usize = 3;

pub const OP_INSERT: u64 = 1;
pub const OP_DELETE_MIN: u64 = 2;

/// deleteMin result meaning "queue was empty".
pub const EMPTY_RESULT: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LineSize {
    #[default]
    B64,
    B128,
}

impl LineSize {
    pub fn from_bytes(bytes: usize) -> Option<Self> {
        match bytes {
            64 => Some(Self::B64),
            128 => Some(Self::B128),
            _ => None,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Self::B64 => 64,
            Self::B128 => 128,
        }
    }

    pub fn words(self) -> usize {
        self.bytes() / 8
    }

    /// One result word per client plus one toggle word.
    pub fn clients_per_group(self) -> usize {
        self.words() - 1
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DelegateError {
    #[error("need at least one server")]
    NoServers,
    #[error("need at least one client")]
    NoClients,
    #[error("all {0} client slots are taken")]
    ClientsExhausted(usize),
    #[error("all {0} servers are registered")]
    ServersExhausted(usize),
}

#[repr(C, align(128))]
struct Block([AtomicU64; 16]);

/// Zeroed array of equally sized lines, each aligned to its own size.
struct LineArray {
    blocks: Box<[Block]>,
    words_per_line: usize,
}

impl LineArray {
    fn new(lines: usize, size: LineSize) -> Self {
        let words = lines * size.words();
        let blocks = (0..words.div_ceil(16))
            .map(|_| Block(std::array::from_fn(|_| AtomicU64::new(0))))
            .collect();
        Self {
            blocks,
            words_per_line: size.words(),
        }
    }

    fn word(&self, line: usize, w: usize) -> &AtomicU64 {
        let i = line * self.words_per_line + w;
        &self.blocks[i / 16].0[i % 16]
    }
}

#[derive(Debug, Clone)]
pub struct NuddleConfig {
    pub servers: usize,
    pub max_clients: usize,
    pub line_size: LineSize,
    /// deleteMin variant run by servers.
    pub delete_mode: DeleteMode,
}

impl NuddleConfig {
    pub fn new(servers: usize, max_clients: usize) -> Self {
        Self {
            servers,
            max_clients,
            line_size: LineSize::B64,
            delete_mode: DeleteMode::Exact,
        }
    }
}

#[derive(Debug, Default)]
struct Registration {
    server_cnt: usize,
    clients_cnt: usize,
    group_cnt: usize,
    clients: usize,
}

pub struct NuddlePq {
    base: Arc<SkipListPq>,
    servers: usize,
    groups: usize,
    clnt_per_group: usize,
    line_size: LineSize,
    delete_mode: DeleteMode,
    requests: LineArray,
    responses: LineArray,
    topology: Topology,
    global_lock: Mutex<Registration>,
}

impl fmt::Debug for NuddlePq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NuddlePq")
            .field("servers", &self.servers)
            .field("groups", &self.groups)
            .field("clnt_per_group", &self.clnt_per_group)
            .field("line_size", &self.line_size)
            .finish()
    }
}

impl NuddlePq {
    pub fn new(base: Arc<SkipListPq>, config: NuddleConfig) -> Result<Self, DelegateError> {
        Self::with_topology(base, config, Topology::discover())
    }

    /// Like [`NuddlePq::new`] but pins servers against `topology`.
    pub fn with_topology(
        base: Arc<SkipListPq>,
        config: NuddleConfig,
        topology: Topology,
    ) -> Result<Self, DelegateError> {
        if config.servers == 0 {
            return Err(DelegateError::NoServers);
        }
        if config.max_clients == 0 {
            return Err(DelegateError::NoClients);
        }
        let cpg = config.line_size.clients_per_group();
        let groups = config.max_clients.div_ceil(cpg);
        Ok(Self {
            base,
            servers: config.servers,
            groups,
            clnt_per_group: cpg,
            line_size: config.line_size,
            delete_mode: config.delete_mode,
            requests: LineArray::new(groups * cpg, config.line_size),
            responses: LineArray::new(groups, config.line_size),
            topology,
            global_lock: Mutex::new(Registration::default()),
        })
    }

    pub fn base(&self) -> &Arc<SkipListPq> {
        &self.base
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn clnt_per_group(&self) -> usize {
        self.clnt_per_group
    }

    pub fn line_size(&self) -> LineSize {
        self.line_size
    }

    pub fn delete_mode(&self) -> DeleteMode {
        self.delete_mode
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Client slots: `groups * clnt_per_group`.
    pub fn capacity(&self) -> usize {
        self.groups * self.clnt_per_group
    }

    pub fn registered_clients(&self) -> usize {
        self.lock().clients
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Registration> {
        self.global_lock.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Groups owned by server `index`: those with `g % servers == index`.
    pub fn groups_of(&self, index: usize) -> Vec<usize> {
        (index..self.groups).step_by(self.servers).collect()
    }

    /// Claims the next free client slot, filling groups in order.
    pub fn init_client(self: &Arc<Self>) -> Result<ClientHandle, DelegateError> {
        let mut reg = self.lock();
        if reg.clients == self.capacity() {
            return Err(DelegateError::ClientsExhausted(self.capacity()));
        }
        let (group, pos) = (reg.group_cnt, reg.clients_cnt);
        reg.clients += 1;
        reg.clients_cnt += 1;
        if reg.clients_cnt == self.clnt_per_group {
            reg.clients_cnt = 0;
            reg.group_cnt += 1;
        }
        drop(reg);
        let line = group * self.clnt_per_group + pos;
        let toggle = self.requests.word(line, REQ_CTRL).load(Ordering::Relaxed) & 1;
        Ok(ClientHandle {
            pq: Arc::clone(self),
            group,
            pos,
            line,
            toggle,
            outstanding: false,
            stats: ClientStats::default(),
        })
    }

    /// Registers the next server and pins the calling thread to `core`.
    /// Pinning failure is logged and recorded in the handle, not fatal.
    pub fn init_server(self: &Arc<Self>, core: Option<usize>) -> Result<ServerHandle, DelegateError> {
        let mut reg = self.lock();
        if reg.server_cnt == self.servers {
            return Err(DelegateError::ServersExhausted(self.servers));
        }
        let index = reg.server_cnt;
        reg.server_cnt += 1;
        drop(reg);
        let pinned = core.filter(|&c| {
            let ok = pin_self(&self.topology, c);
            if !ok {
                log::warn!("server {index}: could not pin to context {c}; running unpinned");
            }
            ok
        });
        let my_groups = self.groups_of(index);
        let toggles = my_groups
            .iter()
            .map(|&g| self.responses.word(g, self.clnt_per_group).load(Ordering::Acquire))
            .collect();
        Ok(ServerHandle {
            pq: Arc::clone(self),
            index,
            my_groups,
            toggles,
            pinned,
            stats: ServerStats::default(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientStats {
    /// Requests published.
    pub issued: u64,
    /// Responses received.
    pub answered: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServerStats {
    /// Requests executed on behalf of clients.
    pub served: u64,
    /// Response-line stores.
    pub publishes: u64,
    /// Serve passes over a group that found at least one pending request.
    pub passes_with_pending: u64,
    pub passes: u64,
}

impl std::ops::AddAssign for ClientStats {
    fn add_assign(&mut self, o: Self) {
        self.issued += o.issued;
        self.answered += o.answered;
    }
}

impl std::ops::AddAssign for ServerStats {
    fn add_assign(&mut self, o: Self) {
        self.served += o.served;
        self.publishes += o.publishes;
        self.passes_with_pending += o.passes_with_pending;
        self.passes += o.passes;
    }
}

/// A client's slot. One outstanding request at a time.
pub struct ClientHandle {
    pq: Arc<NuddlePq>,
    group: usize,
    pos: usize,
    line: usize,
    toggle: u64,
    outstanding: bool,
    stats: ClientStats,
}

impl fmt::Debug for ClientHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClientHandle")
            .field("group", &self.group)
            .field("pos", &self.pos)
            .field("stats", &self.stats)
            .finish()
    }
}

impl ClientHandle {
    pub fn group(&self) -> usize {
        self.group
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn stats(&self) -> ClientStats {
        self.stats
    }

    pub fn pq(&self) -> &Arc<NuddlePq> {
        &self.pq
    }

    /// Delegates an insert. Reserved keys are rejected before publishing.
    pub fn insert(&mut self, key: u64, value: u64) -> Result<bool, PqError> {
        check_key(key)?;
        self.publish(OP_INSERT, key, value);
        Ok(self.wait().0 == 1)
    }

    pub fn delete_min(&mut self) -> Option<(u64, u64)> {
        self.publish(OP_DELETE_MIN, 0, 0);
        decode_delete(self.wait())
    }

    /// Publishes an insert without waiting. Complete it with [`Self::poll`].
    pub fn publish_insert(&mut self, key: u64, value: u64) -> Result<(), PqError> {
        check_key(key)?;
        self.publish(OP_INSERT, key, value);
        Ok(())
    }

    /// Publishes a deleteMin without waiting. Complete it with [`Self::poll`].
    pub fn publish_delete_min(&mut self) {
        self.publish(OP_DELETE_MIN, 0, 0);
    }

    /// Writes the request and flips the toggle (release).
    pub(crate) fn publish(&mut self, op: u64, key: u64, value: u64) {
        assert!(!self.outstanding, "client already has a request in flight");
        let req = &self.pq.requests;
        req.word(self.line, REQ_KEY).store(key, Ordering::Relaxed);
        req.word(self.line, REQ_VALUE).store(value, Ordering::Relaxed);
        self.toggle ^= 1;
        req.word(self.line, REQ_CTRL)
            .store(self.toggle | (op << 1), Ordering::Release);
        self.outstanding = true;
        self.stats.issued += 1;
    }

    /// Returns the raw `(result, ret)` words once the server has answered
    /// the outstanding request. Inserts yield `(1 or 0, 0)`; deleteMin yields
    /// `(key, value)` or `(EMPTY_RESULT, 0)`.
    pub fn poll(&mut self) -> Option<(u64, u64)> {
        if !self.outstanding {
            return None;
        }
        let pq = &self.pq;
        let bits = pq.responses.word(self.group, pq.clnt_per_group).load(Ordering::Acquire);
        if (bits >> self.pos) & 1 != self.toggle {
            return None;
        }
        let result = pq.responses.word(self.group, self.pos).load(Ordering::Relaxed);
        let ret = pq.requests.word(self.line, REQ_RET).load(Ordering::Relaxed);
        self.outstanding = false;
        self.stats.answered += 1;
        Some((result, ret))
    }

    /// Spins until the response arrives. Unbounded by design: a server
    /// must be serving this client's group.
    pub(crate) fn wait(&mut self) -> (u64, u64) {
        let backoff = Backoff::new();
        loop {
            if let Some(r) = self.poll() {
                return r;
            }
            backoff.snooze();
        }
    }
}

pub(crate) fn decode_delete((result, ret): (u64, u64)) -> Option<(u64, u64)> {
    (result != EMPTY_RESULT).then_some((result, ret))
}

/// A registered server and the groups it owns.
pub struct ServerHandle {
    pq: Arc<NuddlePq>,
    index: usize,
    my_groups: Vec<usize>,
    /// Last published toggle word of each owned group.
    toggles: Vec<u64>,
    pinned: Option<usize>,
    stats: ServerStats,
}

impl fmt::Debug for ServerHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ServerHandle")
            .field("index", &self.index)
            .field("my_groups", &self.my_groups)
            .field("pinned", &self.pinned)
            .field("stats", &self.stats)
            .finish()
    }
}

impl ServerHandle {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn my_groups(&self) -> &[usize] {
        &self.my_groups
    }

    /// Context this server's thread was pinned to, if pinning succeeded.
    pub fn pinned(&self) -> Option<usize> {
        self.pinned
    }

    pub fn stats(&self) -> ServerStats {
        self.stats
    }

    pub fn pq(&self) -> &Arc<NuddlePq> {
        &self.pq
    }

    /// Runs directly on the base queue.
    pub fn insert(&self, key: u64, value: u64) -> Result<bool, PqError> {
        self.pq.base.insert(key, value)
    }

    pub fn delete_min(&self) -> Option<(u64, u64)> {
        self.pq.base.delete_min_with(&self.pq.delete_mode)
    }

    /// One pass over every owned group. Pending requests run in slot order;
    /// a group's response line is published once, after all its requests.
    pub fn serve_requests(&mut self) -> usize {
        let pq = Arc::clone(&self.pq);
        let cpg = pq.clnt_per_group;
        let mut total = 0;
        for (gi, &group) in self.my_groups.iter().enumerate() {
            let mut bits = self.toggles[gi];
            let mut served = 0;
            for pos in 0..cpg {
                let line = group * cpg + pos;
                let ctrl = pq.requests.word(line, REQ_CTRL).load(Ordering::Acquire);
                if ctrl & 1 == (bits >> pos) & 1 {
                    continue;
                }
                let key = pq.requests.word(line, REQ_KEY).load(Ordering::Relaxed);
                let value = pq.requests.word(line, REQ_VALUE).load(Ordering::Relaxed);
                let (result, ret) = match ctrl >> 1 {
                    OP_INSERT => (pq.base.insert(key, value).unwrap_or(false) as u64, 0),
                    OP_DELETE_MIN => pq.base.delete_min_with(&pq.delete_mode).unwrap_or((EMPTY_RESULT, 0)),
                    _ => (0, 0),
                };
                pq.responses.word(group, pos).store(result, Ordering::Relaxed);
                pq.requests.word(line, REQ_RET).store(ret, Ordering::Relaxed);
                bits ^= 1 << pos;
                served += 1;
            }
            self.stats.passes += 1;
            if served > 0 {
                self.stats.passes_with_pending += 1;
                pq.responses.word(group, cpg).store(bits, Ordering::Release);
                self.stats.publishes += 1;
                self.toggles[gi] = bits;
                total += served;
            }
        }
        self.stats.served += total as u64;
        total
    }
}
