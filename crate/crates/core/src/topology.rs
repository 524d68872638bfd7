//! Hardware-context discovery, placement and pinning.
//!
//! Discovery reads `/sys/devices/system/node/node*/cpulist` on Linux. The
//! `ADAPTIVEPQ_TOPOLOGY` environment variable (`nodes=N,cpn=M`) overrides it
//! with a simulated topology whose contexts are numbered node-major: node `n`
//! owns contexts `n*M .. (n+1)*M`. Pinning is refused on simulated topologies.

use std::fs;
use std::path::Path;

use thiserror::Error;

pub const TOPOLOGY_ENV: &str = "ADAPTIVEPQ_TOPOLOGY";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("bad topology spec `{0}` (expected `nodes=N,cpn=M` with N, M >= 1)")]
    BadSpec(String),
    #[error("bad cpulist `{0}`")]
    BadCpuList(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    /// Context ids of each node, ascending.
    nodes: Vec<Vec<usize>>,
    simulated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Server,
    /// Client thread in the given group.
    Client {
        group: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub role: Role,
    pub node: usize,
    pub context: usize,
}

/// Parses a Linux cpulist such as `0-3,8,10-11`.
pub fn parse_cpulist(text: &str) -> Result<Vec<usize>, TopologyError> {
    let bad = || TopologyError::BadCpuList(text.trim().to_string());
    let mut out = Vec::new();
    for part in text.trim().split(',').filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.trim().parse().map_err(|_| bad())?),
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

impl Topology {
    /// Simulated topology from a `nodes=N,cpn=M` spec.
    pub fn from_spec(spec: &str) -> Result<Self, TopologyError> {
        let bad = || TopologyError::BadSpec(spec.to_string());
        let (mut nodes, mut cpn) = (None, None);
        for part in spec.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            let v: usize = v.trim().parse().map_err(|_| bad())?;
            match k.trim() {
                "nodes" => nodes = Some(v),
                "cpn" => cpn = Some(v),
                _ => return Err(bad()),
            }
        }
        match (nodes, cpn) {
            (Some(n), Some(c)) if n >= 1 && c >= 1 => Ok(Self::simulated(n, c)),
            _ => Err(bad()),
        }
    }

    pub fn simulated(nodes: usize, contexts_per_node: usize) -> Self {
        Self {
            nodes: (0..nodes)
                .map(|n| (n * contexts_per_node..(n + 1) * contexts_per_node).collect())
                .collect(),
            simulated: true,
        }
    }

    /// Builds a real topology from per-node context lists. Empty nodes are
    /// dropped; returns `None` if nothing is left or a context repeats.
    pub fn from_nodes(nodes: Vec<Vec<usize>>) -> Option<Self> {
        let nodes: Vec<Vec<usize>> = nodes.into_iter().filter(|n| !n.is_empty()).collect();
        let mut all: Vec<usize> = nodes.iter().flatten().copied().collect();
        let total = all.len();
        all.sort_unstable();
        all.dedup();
        if nodes.is_empty() || all.len() != total {
            return None;
        }
        Some(Self {
            nodes,
            simulated: false,
        })
    }

    /// Env override, then sysfs, then a simulated single node sized to the
    /// available parallelism.
    pub fn discover() -> Self {
        if let Ok(spec) = std::env::var(TOPOLOGY_ENV) {
            match Self::from_spec(&spec) {
                Ok(t) => return t,
                Err(e) => log::warn!("ignoring {TOPOLOGY_ENV}: {e}"),
            }
        }
        if let Some(t) = Self::from_sysfs(Path::new("/sys/devices/system/node")) {
            return t;
        }
        let n = std::thread::available_parallelism().map_or(1, |n| n.get());
        Self::simulated(1, n)
    }

    /// Reads `nodeN/cpulist` files under `root`.
    pub fn from_sysfs(root: &Path) -> Option<Self> {
        let mut found: Vec<(usize, Vec<usize>)> = Vec::new();
        for entry in fs::read_dir(root).ok()?.flatten() {
            let name = entry.file_name();
            let Some(id) = name
                .to_str()
                .and_then(|n| n.strip_prefix("node"))
                .and_then(|n| n.parse::<usize>().ok())
            else {
                continue;
            };
            let text = fs::read_to_string(entry.path().join("cpulist")).ok()?;
            found.push((id, parse_cpulist(&text).ok()?));
        }
        found.sort_by_key(|(id, _)| *id);
        Self::from_nodes(found.into_iter().map(|(_, c)| c).collect())
    }

    pub fn is_simulated(&self) -> bool {
        self.simulated
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contexts(&self, node: usize) -> &[usize] {
        &self.nodes[node]
    }

    pub fn context_count(&self) -> usize {
        self.nodes.iter().map(Vec::len).sum()
    }

    /// All context ids, node-major.
    pub fn all_contexts(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().flatten().copied()
    }

    pub fn node_of(&self, ctx: usize) -> Option<usize> {
        self.nodes.iter().position(|n| n.contains(&ctx))
    }

    /// Servers take node 0's contexts in order. Client group `g` goes to node
    /// `g % nodes`; each node hands out its contexts in order, skipping those
    /// already taken by servers on node 0, and wraps when exhausted.
    pub fn placement(&self, n_servers: usize, n_clients: usize, group: usize) -> Vec<Placement> {
        let group = group.max(1);
        let mut out = Vec::with_capacity(n_servers + n_clients);
        let node0 = &self.nodes[0];
        for s in 0..n_servers {
            out.push(Placement {
                role: Role::Server,
                node: 0,
                context: node0[s % node0.len()],
            });
        }
        let mut cursor = vec![0usize; self.nodes.len()];
        cursor[0] = n_servers;
        for c in 0..n_clients {
            let g = c / group;
            let node = g % self.nodes.len();
            let ctxs = &self.nodes[node];
            out.push(Placement {
                role: Role::Client { group: g },
                node,
                context: ctxs[cursor[node] % ctxs.len()],
            });
            cursor[node] += 1;
        }
        out
    }
}

/// Pins the calling thread to `ctx`. Returns false on simulated topologies,
/// unknown contexts, or OS failure.
pub fn pin_self(topo: &Topology, ctx: usize) -> bool {
    if topo.simulated || topo.node_of(ctx).is_none() {
        return false;
    }
    set_affinity(ctx)
}

#[cfg(target_os = "linux")]
fn set_affinity(ctx: usize) -> bool {
    if ctx >= libc::CPU_SETSIZE as usize {
        return false;
    }
    // SAFETY: `set` is a plain bitmask initialised by CPU_ZERO; pid 0 is the
    // calling thread.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_ZERO(&mut set);
        libc::CPU_SET(ctx, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) == 0
    }
}

#[cfg(not(target_os = "linux"))]
fn set_affinity(_ctx: usize) -> bool {
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cpulist_parsing() {
        assert_eq!(parse_cpulist("0-3,8,10-11\n").unwrap(), vec![0, 1, 2, 3, 8, 10, 11]);
        assert_eq!(parse_cpulist("5").unwrap(), vec![5]);
        assert!(parse_cpulist("3-1").is_err());
        assert!(parse_cpulist("a").is_err());
    }

    #[test]
    fn spec_strings() {
        let t = Topology::from_spec("nodes=4,cpn=16").unwrap();
        assert_eq!(t.node_count(), 4);
        assert_eq!(t.context_count(), 64);
        assert_eq!(t.contexts(1)[0], 16);
        assert!(t.is_simulated());
        assert_eq!(Topology::from_spec("nodes=1,cpn=8").unwrap().context_count(), 8);
        assert!(Topology::from_spec("nodes=0,cpn=8").is_err());
        assert!(Topology::from_spec("nodes=2").is_err());
        assert!(Topology::from_spec("sockets=2,cpn=2").is_err());
    }

    #[test]
    fn from_nodes_rejects_overlap() {
        assert!(Topology::from_nodes(vec![vec![0, 1], vec![1, 2]]).is_none());
        assert!(Topology::from_nodes(vec![vec![], vec![]]).is_none());
        let t = Topology::from_nodes(vec![vec![0, 2], vec![], vec![1, 3]]).unwrap();
        assert_eq!(t.node_count(), 2);
        assert_eq!(t.node_of(3), Some(1));
    }

    #[test]
    fn pin_refused_when_simulated_or_out_of_range() {
        let sim = Topology::simulated(1, 4);
        assert!(!pin_self(&sim, 0));
        let real = Topology::from_nodes(vec![vec![0]]).unwrap();
        assert!(!pin_self(&real, 999));
    }
}
