//! Multi-phase workload runner.
//!
//! `threads` in a phase is the total number of worker threads. For the
//! delegation-based implementations the servers count towards it and the
//! remaining `max(1, threads - servers)` threads are clients. Every completed
//! call (insert or deleteMin, successful or not) counts as one operation.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use adaptivepq::adaptive::{DecisionLoop, SmartClient, SmartPq, SmartServer, Transition};
use adaptivepq::classify::{Mode, Tree};
use adaptivepq::delegate::{ClientHandle, LineSize, NuddleConfig, NuddlePq, ServerHandle};
use adaptivepq::pqcore::{DeleteMode, PqError, SkipListPq, SprayParams, MAX_LEVEL_LIMIT};
use adaptivepq::topology::{pin_self, Topology};
use anyhow::{bail, ensure, Context, Result};
use crossbeam_utils::CachePadded;
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use crate::phases::WorkloadPhase;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Impl {
    /// All threads operate on the shared skip list.
    Oblivious,
    /// Delegation: servers serve requests and run their own operations.
    Nuddle,
    /// Adaptive switching between the two.
    SmartPq,
    /// One dedicated server that only serves requests.
    Ffwd,
}

impl Impl {
    pub const ALL: [Impl; 4] = [Impl::Oblivious, Impl::Nuddle, Impl::SmartPq, Impl::Ffwd];

    pub fn name(self) -> &'static str {
        match self {
            Impl::Oblivious => "oblivious",
            Impl::Nuddle => "nuddle",
            Impl::SmartPq => "smartpq",
            Impl::Ffwd => "ffwd",
        }
    }

    fn delegates(self) -> bool {
        !matches!(self, Impl::Oblivious)
    }
}

impl fmt::Display for Impl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Impl {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Impl::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| format!("unknown implementation `{s}` (oblivious, nuddle, smartpq, ffwd)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeleteChoice {
    Exact,
    /// Spray with `p` set to the largest thread count of the run.
    #[default]
    Spray,
}

impl FromStr for DeleteChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(DeleteChoice::Exact),
            "spray" => Ok(DeleteChoice::Spray),
            _ => Err(format!("unknown delete mode `{s}` (exact, spray)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub imp: Impl,
    /// Server threads; `None` picks 1 for ffwd and `default_servers` otherwise.
    pub servers: Option<usize>,
    pub default_servers: usize,
    pub line_size: LineSize,
    pub delete: DeleteChoice,
    /// Spin-loop hints between two operations of a worker.
    pub pause_iters: u32,
    pub seed: u64,
    /// Throughput sample window. Windows carry across phase boundaries, so
    /// the sample count follows the total duration rather than the phase
    /// count.
    pub sample_interval: Duration,
    /// Classifier for smartpq. Without one the queue stays in `initial_mode`.
    pub tree: Option<Tree<f64>>,
    /// Decision interval; `None` disables the decision loop.
    pub decision_interval: Option<Duration>,
    pub initial_mode: Mode,
    /// Topology used for placement; `None` discovers it.
    pub topology: Option<Topology>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            imp: Impl::Oblivious,
            servers: None,
            default_servers: 1,
            line_size: LineSize::B64,
            delete: DeleteChoice::Spray,
            pause_iters: 25,
            seed: 1,
            sample_interval: Duration::from_secs(1),
            tree: None,
            decision_interval: Some(adaptivepq::adaptive::DEFAULT_INTERVAL),
            initial_mode: Mode::Oblivious,
            topology: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputSample {
    /// End of the sampling window, seconds since the first phase started.
    pub time_s: f64,
    pub phase: usize,
    pub ops_per_sec: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSummary {
    pub phase: usize,
    /// Start time, seconds since the first phase started.
    pub start_s: f64,
    pub threads: usize,
    pub servers: usize,
    pub clients: usize,
    /// Measured wall time of the phase.
    pub elapsed_s: f64,
    pub ops: u64,
    pub ops_per_sec: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Audit {
    pub inserted: u64,
    pub deleted: u64,
    pub remaining: u64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub imp: Impl,
    pub samples: Vec<ThroughputSample>,
    pub phases: Vec<PhaseSummary>,
    /// Mode changes, timed from the start of the first phase.
    pub transitions: Vec<Transition>,
    pub final_size: usize,
    pub audit: Audit,
}

impl RunResult {
    /// Operations per second over all phases.
    pub fn mean_throughput(&self) -> f64 {
        let ops: u64 = self.phases.iter().map(|p| p.ops).sum();
        let t: f64 = self.phases.iter().map(|p| p.elapsed_s).sum();
        if t > 0.0 {
            ops as f64 / t
        } else {
            0.0
        }
    }
}

/// Value stored with each key, so that deleteMin results can be checked.
pub fn value_of(key: u64) -> u64 {
    key.rotate_left(23) ^ 0x5bd1_e995_5bd1_e995
}

fn mix_seed(seed: u64, phase: usize, worker: usize) -> u64 {
    let mut z = seed ^ ((phase as u64) << 32 | worker as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic operation source of one worker in one phase.
#[derive(Debug)]
pub struct OpStream {
    rng: SmallRng,
    key_range: u64,
    insert_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Insert(u64),
    DeleteMin,
}

impl OpStream {
    pub fn new(seed: u64, phase: usize, worker: usize, key_range: u64, insert_pct: f64) -> Self {
        Self {
            rng: SmallRng::seed_from_u64(mix_seed(seed, phase, worker)),
            key_range,
            insert_pct,
        }
    }

    pub fn next_op(&mut self) -> Op {
        if self.rng.random::<f64>() < self.insert_pct {
            Op::Insert(self.rng.random_range(1..=self.key_range))
        } else {
            Op::DeleteMin
        }
    }
}

/// Per-thread record of successful operations.
#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    inserted: u64,
    insert_sum: u64,
    deleted: u64,
    delete_sum: u64,
    bad_values: u64,
}

impl Tally {
    fn add(&mut self, o: Tally) {
        self.inserted += o.inserted;
        self.insert_sum = self.insert_sum.wrapping_add(o.insert_sum);
        self.deleted += o.deleted;
        self.delete_sum = self.delete_sum.wrapping_add(o.delete_sum);
        self.bad_values += o.bad_values;
    }

    fn on_insert(&mut self, key: u64, r: Result<bool, PqError>) {
        if let Ok(true) = r {
            self.inserted += 1;
            self.insert_sum = self.insert_sum.wrapping_add(key);
        }
    }

    fn on_delete(&mut self, r: Option<(u64, u64)>) {
        if let Some((k, v)) = r {
            self.deleted += 1;
            self.delete_sum = self.delete_sum.wrapping_add(k);
            if v != value_of(k) {
                self.bad_values += 1;
            }
        }
    }
}

enum Client {
    Direct(Arc<SkipListPq>, DeleteMode),
    Nuddle(ClientHandle),
    Smart(SmartClient),
}

impl Client {
    fn apply(&mut self, op: Op, tally: &mut Tally) {
        match op {
            Op::Insert(k) => {
                let r = match self {
                    Client::Direct(pq, _) => pq.insert(k, value_of(k)),
                    Client::Nuddle(h) => h.insert(k, value_of(k)),
                    Client::Smart(h) => h.insert(k, value_of(k)),
                };
                tally.on_insert(k, r);
            }
            Op::DeleteMin => {
                let r = match self {
                    Client::Direct(pq, mode) => pq.delete_min_with(mode),
                    Client::Nuddle(h) => h.delete_min(),
                    Client::Smart(h) => h.delete_min(),
                };
                tally.on_delete(r);
            }
        }
    }

    fn set_active(&mut self, active: bool) {
        if let Client::Smart(h) = self {
            h.set_active(active);
            h.flush_stats();
        }
    }
}

enum Server {
    Nuddle(ServerHandle),
    Smart(SmartServer),
}

impl Server {
    fn serve(&mut self) -> usize {
        match self {
            Server::Nuddle(h) => h.serve_requests(),
            Server::Smart(h) => h.serve(),
        }
    }

    fn apply(&mut self, op: Op, tally: &mut Tally) {
        match op {
            Op::Insert(k) => {
                let r = match self {
                    Server::Nuddle(h) => h.insert(k, value_of(k)),
                    Server::Smart(h) => h.insert(k, value_of(k)),
                };
                tally.on_insert(k, r);
            }
            Op::DeleteMin => {
                let r = match self {
                    Server::Nuddle(h) => h.delete_min(),
                    Server::Smart(h) => h.delete_min(),
                };
                tally.on_delete(r);
            }
        }
    }

    fn flush(&mut self) {
        if let Server::Smart(h) = self {
            h.flush_stats();
        }
    }
}

/// Skip-list height for a key range: `ceil(log2 range)`, clamped to 4..=32.
fn max_level_for(key_range: u64) -> usize {
    let bits = (u64::BITS - key_range.max(1).leading_zeros()) as usize;
    bits.clamp(4, MAX_LEVEL_LIMIT)
}

#[inline]
fn pause(iters: u32) {
    for _ in 0..iters {
        std::hint::spin_loop();
    }
}

/// Runs `phases` back to back and returns per-sample and per-phase
/// throughput. Fails if the final conservation audit does not hold.
pub fn run(phases: &[WorkloadPhase], cfg: &RunConfig) -> Result<RunResult> {
    ensure!(!phases.is_empty(), "no phases to run");
    for (i, p) in phases.iter().enumerate() {
        p.validate().with_context(|| format!("phase {}", i + 1))?;
    }
    ensure!(cfg.sample_interval > Duration::ZERO, "sample interval must be > 0");
    let servers = match (cfg.imp, cfg.servers) {
        (Impl::Oblivious, _) => 0,
        (Impl::Ffwd, None | Some(1)) => 1,
        (Impl::Ffwd, Some(n)) => bail!("ffwd runs exactly one server (got --servers {n})"),
        (_, Some(0)) => bail!("{} needs at least one server", cfg.imp),
        (_, Some(n)) => n,
        (_, None) => cfg.default_servers.max(1),
    };
    let clients_in = |p: &WorkloadPhase| {
        if cfg.imp.delegates() {
            p.threads.saturating_sub(servers).max(1)
        } else {
            p.threads
        }
    };
    let max_clients = phases.iter().map(clients_in).max().unwrap_or(1);
    let max_threads = phases.iter().map(|p| p.threads).max().unwrap_or(1);
    let max_range = phases.iter().map(|p| p.key_range).max().unwrap_or(1);
    let delete_mode = match cfg.delete {
        DeleteChoice::Exact => DeleteMode::Exact,
        DeleteChoice::Spray => DeleteMode::Spray(SprayParams::new(max_threads)),
    };
    let topo = cfg.topology.clone().unwrap_or_else(Topology::discover);

    let base = Arc::new(SkipListPq::new(max_level_for(max_range), cfg.seed)?);

    // Prefill with distinct random keys.
    let mut total = Tally::default();
    let first = &phases[0];
    let size = first.size.unwrap_or(0).min(first.key_range);
    if size > 0 {
        let mut rng = SmallRng::seed_from_u64(mix_seed(cfg.seed, usize::MAX, 0));
        let range = usize::try_from(first.key_range).context("key range too large for this platform")?;
        for i in rand::seq::index::sample(&mut rng, range, size as usize) {
            let k = i as u64 + 1;
            total.on_insert(k, base.insert(k, value_of(k)));
        }
    }

    let mut nuddle_cfg = NuddleConfig::new(servers.max(1), max_clients);
    nuddle_cfg.line_size = cfg.line_size;
    nuddle_cfg.delete_mode = delete_mode;

    let mut smart: Option<Arc<SmartPq>> = None;
    let mut smart_born = Instant::now();
    let (mut clients, mut server_pool): (Vec<Client>, Vec<Server>) = match cfg.imp {
        Impl::Oblivious => (
            (0..max_clients)
                .map(|_| Client::Direct(Arc::clone(&base), delete_mode))
                .collect(),
            Vec::new(),
        ),
        Impl::Nuddle | Impl::Ffwd => {
            let nuddle = Arc::new(NuddlePq::with_topology(Arc::clone(&base), nuddle_cfg, topo.clone())?);
            let s = (0..servers)
                .map(|_| nuddle.init_server(None).map(Server::Nuddle))
                .collect::<Result<_, _>>()?;
            let c = (0..max_clients)
                .map(|_| nuddle.init_client().map(Client::Nuddle))
                .collect::<Result<_, _>>()?;
            (c, s)
        }
        Impl::SmartPq => {
            let nuddle = Arc::new(NuddlePq::with_topology(Arc::clone(&base), nuddle_cfg, topo.clone())?);
            let pq = Arc::new(SmartPq::with_mode(nuddle, cfg.initial_mode));
            smart_born = Instant::now();
            let s = (0..servers)
                .map(|_| pq.init_server(None).map(Server::Smart))
                .collect::<Result<_, _>>()?;
            let c = (0..max_clients)
                .map(|_| pq.init_client().map(Client::Smart))
                .collect::<Result<_, _>>()?;
            smart = Some(pq);
            (c, s)
        }
    };

    let decision = match (&smart, &cfg.tree) {
        (Some(pq), Some(tree)) => {
            pq.install_tree(tree.clone());
            Some(DecisionLoop::spawn(Arc::clone(pq), cfg.decision_interval)?)
        }
        (Some(_), None) => {
            log::warn!("smartpq without --tree: staying in {} mode", cfg.initial_mode.name());
            None
        }
        _ => None,
    };
    let mode_now = || match (&smart, cfg.imp) {
        (Some(pq), _) => pq.mode(),
        (None, Impl::Oblivious) => Mode::Oblivious,
        (None, _) => Mode::Aware,
    };

    let counters: Vec<CachePadded<AtomicU64>> = (0..servers + max_clients)
        .map(|_| CachePadded::new(AtomicU64::new(0)))
        .collect();
    let read_ops = || counters.iter().map(|c| c.load(Ordering::Relaxed)).sum::<u64>();
    let group = nuddle_cfg_group(cfg);
    let ffwd = cfg.imp == Impl::Ffwd;

    let mut samples = Vec::new();
    // Sampling window carried across phases: (active seconds, ops).
    let mut window = (0.0f64, 0u64);
    let interval_s = cfg.sample_interval.as_secs_f64();
    let mut summaries = Vec::with_capacity(phases.len());
    let run_start = Instant::now();

    for (pi, phase) in phases.iter().enumerate() {
        let n_clients = clients_in(phase);
        for (i, c) in clients.iter_mut().enumerate() {
            c.set_active(i < n_clients);
        }
        let places = topo.placement(servers, n_clients, group);
        let pin = !topo.is_simulated();
        let topo = &topo;
        let stop_clients = AtomicBool::new(false);
        let stop_servers = AtomicBool::new(false);
        let duration = Duration::from_secs_f64(phase.duration_s);

        let tallies = std::thread::scope(|s| -> Result<Vec<Tally>> {
            let mut server_threads = Vec::with_capacity(servers);
            for (si, srv) in server_pool.iter_mut().enumerate() {
                let (ctr, stop) = (&counters[si], &stop_servers);
                let ctx = places[si].context;
                let mut ops = OpStream::new(cfg.seed, pi, si, phase.key_range, phase.insert_pct);
                let pause_iters = cfg.pause_iters;
                server_threads.push(s.spawn(move || {
                    if pin {
                        pin_self(topo, ctx);
                    }
                    let mut t = Tally::default();
                    while !stop.load(Ordering::Relaxed) {
                        srv.serve();
                        if !ffwd {
                            srv.apply(ops.next_op(), &mut t);
                            ctr.fetch_add(1, Ordering::Relaxed);
                            pause(pause_iters);
                        }
                    }
                    srv.flush();
                    t
                }));
            }
            let mut client_threads = Vec::with_capacity(n_clients);
            for (ci, cl) in clients.iter_mut().take(n_clients).enumerate() {
                let (ctr, stop) = (&counters[servers + ci], &stop_clients);
                let ctx = places[servers + ci].context;
                let mut ops = OpStream::new(cfg.seed, pi, servers + ci, phase.key_range, phase.insert_pct);
                let pause_iters = cfg.pause_iters;
                client_threads.push(s.spawn(move || {
                    if pin {
                        pin_self(topo, ctx);
                    }
                    let mut t = Tally::default();
                    while !stop.load(Ordering::Relaxed) {
                        cl.apply(ops.next_op(), &mut t);
                        ctr.fetch_add(1, Ordering::Relaxed);
                        pause(pause_iters);
                    }
                    if let Client::Smart(h) = cl {
                        h.flush_stats();
                    }
                    t
                }));
            }

            let start = Instant::now();
            let end = start + duration;
            let ops0 = read_ops();
            let (mut last_t, mut last_ops) = (start, ops0);
            let last_phase = pi + 1 == phases.len();
            loop {
                let due = last_t + cfg.sample_interval.saturating_sub(Duration::from_secs_f64(window.0));
                let next = due.min(end);
                let now = Instant::now();
                if next > now {
                    std::thread::sleep(next - now);
                }
                let now = Instant::now();
                let ops = read_ops();
                window.0 += (now - last_t).as_secs_f64();
                window.1 += ops - last_ops;
                (last_t, last_ops) = (now, ops);
                let full = window.0 >= interval_s * 0.999;
                let tail = last_phase && now >= end && window.0 >= interval_s * 0.5;
                if full || tail {
                    samples.push(ThroughputSample {
                        time_s: (now - run_start).as_secs_f64(),
                        phase: pi,
                        ops_per_sec: window.1 as f64 / window.0,
                        mode: mode_now(),
                    });
                    window = (0.0, 0);
                }
                if now >= end {
                    break;
                }
            }
            let elapsed = start.elapsed().as_secs_f64();
            let ops = read_ops() - ops0;
            summaries.push(PhaseSummary {
                phase: pi,
                start_s: (start - run_start).as_secs_f64(),
                threads: phase.threads,
                servers,
                clients: n_clients,
                elapsed_s: elapsed,
                ops,
                ops_per_sec: ops as f64 / elapsed,
            });

            // Clients first: servers must keep serving until every
            // outstanding request is answered.
            stop_clients.store(true, Ordering::Relaxed);
            let mut out = Vec::new();
            for h in client_threads {
                out.push(h.join().map_err(|_| anyhow::anyhow!("client thread panicked"))?);
            }
            stop_servers.store(true, Ordering::Relaxed);
            for h in server_threads {
                out.push(h.join().map_err(|_| anyhow::anyhow!("server thread panicked"))?);
            }
            Ok(out)
        })?;
        for t in tallies {
            total.add(t);
        }
    }

    if let Some(d) = decision {
        d.stop();
    }
    // The queue clocks transitions from its creation; report them on the run clock.
    let skew = run_start.saturating_duration_since(smart_born);
    let transitions: Vec<Transition> = smart
        .as_ref()
        .map(|pq| pq.transitions())
        .unwrap_or_default()
        .into_iter()
        .map(|t| Transition {
            at: t.at.saturating_sub(skew),
            ..t
        })
        .collect();
    drop(clients);
    drop(server_pool);

    let report = base
        .audit()
        .map_err(|e| anyhow::anyhow!("skip list audit failed: {e}"))?;
    let left = base.snapshot();
    let left_sum = left.iter().fold(0u64, |a, (k, _)| a.wrapping_add(*k));
    let expect = total.inserted.checked_sub(total.deleted);
    ensure!(
        total.bad_values == 0,
        "conservation audit failed: {} deleteMin results carried a wrong value",
        total.bad_values
    );
    ensure!(
        expect == Some(left.len() as u64) && report.live == left.len(),
        "conservation audit failed: {} inserted, {} deleted, {} remaining",
        total.inserted,
        total.deleted,
        left.len()
    );
    ensure!(
        total.insert_sum.wrapping_sub(total.delete_sum) == left_sum,
        "conservation audit failed: key sums disagree"
    );

    Ok(RunResult {
        imp: cfg.imp,
        samples,
        phases: summaries,
        transitions,
        final_size: left.len(),
        audit: Audit {
            inserted: total.inserted,
            deleted: total.deleted,
            remaining: left.len() as u64,
        },
    })
}

fn nuddle_cfg_group(cfg: &RunConfig) -> usize {
    match cfg.imp {
        Impl::Oblivious => 1,
        _ => cfg.line_size.clients_per_group(),
    }
}
