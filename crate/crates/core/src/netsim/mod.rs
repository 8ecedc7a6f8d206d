//! Deterministic discrete-event simulation of the sensor radio network.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::Station;
use crate::rng;

/// Fixed per-message header size in bytes.
pub const HEADER_BYTES: usize = 32;

/// Radio latency: fixed processing delay plus propagation at `2e8` m/s.
pub fn default_latency(distance: f64) -> f64 {
    0.005 + distance / 2e8
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: u32,
    pub b: u32,
    pub latency: f64,
    pub drop_prob: f64,
}

/// Undirected simple graph over station ids.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Topology {
    nodes: Vec<u32>,
    edges: Vec<Edge>,
    #[serde(skip)]
    adjacency: HashMap<u32, Vec<(u32, usize)>>,
    disconnected: bool,
}

impl Topology {
    /// Builds from explicit edges; rejects self-edges, duplicates, unknown
    /// nodes and non-positive latencies.
    pub fn new(mut nodes: Vec<u32>, edges: Vec<Edge>) -> Result<Self> {
        nodes.sort_unstable();
        if nodes.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidTopology("duplicate node id".into()));
        }
        let known: BTreeSet<u32> = nodes.iter().copied().collect();
        let mut seen = BTreeSet::new();
        for e in &edges {
            if e.a == e.b {
                return Err(Error::InvalidTopology(format!("self-edge on node {}", e.a)));
            }
            if !known.contains(&e.a) || !known.contains(&e.b) {
                return Err(Error::InvalidTopology(format!("edge {}-{} references unknown node", e.a, e.b)));
            }
            if !(e.latency > 0.0) {
                return Err(Error::InvalidTopology(format!("edge {}-{} latency must be positive", e.a, e.b)));
            }
            if !(0.0..=1.0).contains(&e.drop_prob) {
                return Err(Error::InvalidTopology(format!("edge {}-{} drop probability outside [0, 1]", e.a, e.b)));
            }
            if !seen.insert(key(e.a, e.b)) {
                return Err(Error::InvalidTopology(format!("duplicate edge {}-{}", e.a, e.b)));
            }
        }
        let mut t = Self { nodes, edges, adjacency: HashMap::new(), disconnected: false };
        t.reindex();
        Ok(t)
    }

    fn reindex(&mut self) {
        let mut adj: HashMap<u32, Vec<(u32, usize)>> = self.nodes.iter().map(|&n| (n, Vec::new())).collect();
        for (i, e) in self.edges.iter().enumerate() {
            adj.get_mut(&e.a).unwrap().push((e.b, i));
            adj.get_mut(&e.b).unwrap().push((e.a, i));
        }
        for v in adj.values_mut() {
            v.sort_unstable();
        }
        self.adjacency = adj;
        self.disconnected = !self.is_connected_with(|_| true);
    }

    pub fn nodes(&self) -> &[u32] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_disconnected(&self) -> bool {
        self.disconnected
    }

    /// Neighbor ids in ascending order.
    pub fn neighbors(&self, node: u32) -> Vec<u32> {
        self.adjacency.get(&node).map(|v| v.iter().map(|&(n, _)| n).collect()).unwrap_or_default()
    }

    pub fn degree(&self, node: u32) -> usize {
        self.adjacency.get(&node).map_or(0, Vec::len)
    }

    pub fn edge(&self, a: u32, b: u32) -> Option<&Edge> {
        self.adjacency.get(&a)?.iter().find(|&&(n, _)| n == b).map(|&(_, i)| &self.edges[i])
    }

    pub fn contains(&self, node: u32) -> bool {
        self.adjacency.contains_key(&node)
    }

    /// Same graph with every edge's drop probability set to `p`.
    pub fn with_drop_prob(mut self, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid(format!("drop probability {p} outside [0, 1]")));
        }
        for e in &mut self.edges {
            e.drop_prob = p;
        }
        Ok(self)
    }

    /// Connectivity restricted to edges accepted by `usable`.
    pub(crate) fn is_connected_with(&self, usable: impl Fn(&Edge) -> bool) -> bool {
        let Some(&start) = self.nodes.first() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for &(m, i) in &self.adjacency[&n] {
                if usable(&self.edges[i]) && seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        seen.len() == self.nodes.len()
    }

    /// Breadth-first spanning tree rooted at `root` over edges accepted by
    /// `usable`: `(parent, children)` per reached node, children ascending.
    pub fn bfs_tree(&self, root: u32, usable: impl Fn(u32, u32) -> bool) -> BTreeMap<u32, (Option<u32>, Vec<u32>)> {
        let mut tree: BTreeMap<u32, (Option<u32>, Vec<u32>)> = BTreeMap::new();
        if !self.contains(root) {
            return tree;
        }
        tree.insert(root, (None, Vec::new()));
        let mut queue = VecDeque::from([root]);
        while let Some(n) = queue.pop_front() {
            for &(m, _) in &self.adjacency[&n] {
                if !tree.contains_key(&m) && usable(n, m) {
                    tree.insert(m, (Some(n), Vec::new()));
                    tree.get_mut(&n).unwrap().1.push(m);
                    queue.push_back(m);
                }
            }
        }
        tree
    }
}

/// Geometric graph: an edge joins every pair within `comm_range` meters.
/// A disconnected result is returned with its flag set.
pub fn build_topology(stations: &[Station], comm_range: f64) -> Result<Topology> {
    if !(comm_range > 0.0) {
        return Err(invalid(format!("comm_range must be positive, got {comm_range}")));
    }
    let mut edges = Vec::new();
    for (i, a) in stations.iter().enumerate() {
        for b in &stations[i + 1..] {
            let d = a.position.distance(b.position);
            if d <= comm_range {
                edges.push(Edge { a: a.id, b: b.id, latency: default_latency(d), drop_prob: 0.0 });
            }
        }
    }
    Topology::new(stations.iter().map(|s| s.id).collect(), edges)
}

fn key(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PayloadKind {
    Model,
    Aggregate,
    Trace,
    Image,
    Control,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub src: u32,
    pub dst: u32,
    pub kind: PayloadKind,
    /// Algorithm-defined label, e.g. round number.
    pub tag: u64,
    pub payload: Vec<f64>,
    pub send_time: f64,
    pub deliver_time: f64,
    pub size_bytes: usize,
}

pub fn message_size(payload_len: usize) -> usize {
    HEADER_BYTES + 8 * payload_len
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Sent but not yet delivered.
    pub in_flight: u64,
    pub total_bytes: u64,
    pub sim_time: f64,
}

/// Per directed edge counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeCounter {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub bytes: u64,
}

/// Commands applied between events, in submission order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NetCommand {
    FailLink { a: u32, b: u32 },
    RestoreLink { a: u32, b: u32 },
    SetDropProb { p: f64 },
}

#[derive(Debug)]
struct Pending {
    time: f64,
    seq: u64,
    msg: Message,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // reversed so the max-heap pops the earliest (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Serialize)]
struct TraceLine<'a> {
    t: f64,
    seq: u64,
    event: &'a str,
    src: u32,
    dst: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<PayloadKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tag: Option<u64>,
    bytes: usize,
}

/// Event-driven network: seeded drops decided at send time, deliveries
/// ordered by `(time, sequence)`.
pub struct Network {
    topology: Topology,
    failed: BTreeSet<(u32, u32)>,
    time: f64,
    seq: u64,
    queue: BinaryHeap<Pending>,
    rng: ChaCha8Rng,
    stats: RunStats,
    ledger: BTreeMap<(u32, u32), EdgeCounter>,
    commands: VecDeque<NetCommand>,
    trace: Option<Vec<String>>,
}

impl Network {
    pub fn new(topology: Topology, seed: u64) -> Self {
        Self {
            topology,
            failed: BTreeSet::new(),
            time: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            rng: rng::stream(seed, &[0x6e6574]),
            stats: RunStats::default(),
            ledger: BTreeMap::new(),
            commands: VecDeque::new(),
            trace: None,
        }
    }

    /// Keeps a JSON-lines event log in memory.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn stats(&self) -> RunStats {
        RunStats { sim_time: self.time, ..self.stats }
    }

    /// Directed `(src, dst)` counters.
    pub fn edge_ledger(&self) -> &BTreeMap<(u32, u32), EdgeCounter> {
        &self.ledger
    }

    pub fn trace_lines(&self) -> &[String] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn write_trace(&self, path: &Path) -> Result<()> {
        let mut s = self.trace_lines().join("\n");
        if !s.is_empty() {
            s.push('\n');
        }
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn is_link_up(&self, a: u32, b: u32) -> bool {
        self.topology.edge(a, b).is_some() && !self.failed.contains(&key(a, b))
    }

    /// Neighbors reachable over links that are currently up.
    pub fn active_neighbors(&self, node: u32) -> Vec<u32> {
        self.topology.neighbors(node).into_iter().filter(|&n| self.is_link_up(node, n)).collect()
    }

    pub fn failed_links(&self) -> Vec<(u32, u32)> {
        self.failed.iter().copied().collect()
    }

    pub fn is_connected(&self) -> bool {
        self.topology.is_connected_with(|e| !self.failed.contains(&key(e.a, e.b)))
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    fn log(&mut self, event: &str, msg: &Message, t: f64, seq: u64) {
        if let Some(lines) = &mut self.trace {
            let line = TraceLine {
                t,
                seq,
                event,
                src: msg.src,
                dst: msg.dst,
                kind: Some(msg.kind),
                tag: Some(msg.tag),
                bytes: msg.size_bytes,
            };
            lines.push(serde_json::to_string(&line).expect("trace line serializes"));
        }
    }

    fn log_link(&mut self, event: &str, a: u32, b: u32) {
        let (t, seq) = (self.time, self.seq);
        if let Some(lines) = &mut self.trace {
            let line = TraceLine { t, seq, event, src: a, dst: b, kind: None, tag: None, bytes: 0 };
            lines.push(serde_json::to_string(&line).expect("trace line serializes"));
        }
    }

    /// Unicast to a direct neighbor over a link that is up.
    pub fn send(&mut self, src: u32, dst: u32, kind: PayloadKind, tag: u64, payload: Vec<f64>) -> Result<()> {
        if !self.topology.contains(src) {
            return Err(invalid(format!("unknown node {src}")));
        }
        let Some(edge) = self.topology.edge(src, dst).copied() else {
            return Err(Error::InvalidRoute(format!("{dst} is not a neighbor of {src}")));
        };
        if self.failed.contains(&key(src, dst)) {
            return Err(Error::InvalidRoute(format!("link {src}-{dst} is down")));
        }
        let size = message_size(payload.len());
        let msg = Message {
            src,
            dst,
            kind,
            tag,
            payload,
            send_time: self.time,
            deliver_time: self.time + edge.latency,
            size_bytes: size,
        };
        let seq = self.seq;
        self.seq += 1;
        self.stats.sent += 1;
        self.stats.total_bytes += size as u64;
        let counter = self.ledger.entry((src, dst)).or_default();
        counter.sent += 1;
        counter.bytes += size as u64;
        let dropped = edge.drop_prob > 0.0 && self.rng.random::<f64>() < edge.drop_prob;
        if dropped {
            self.stats.dropped += 1;
            counter.dropped += 1;
            let t = self.time;
            self.log("drop", &msg, t, seq);
        } else {
            self.stats.in_flight += 1;
            let t = self.time;
            self.log("send", &msg, t, seq);
            self.queue.push(Pending { time: msg.deliver_time, seq, msg });
        }
        Ok(())
    }

    /// One unicast per active neighbor, ascending id. Returns the count.
    pub fn broadcast(&mut self, src: u32, kind: PayloadKind, tag: u64, payload: &[f64]) -> Result<usize> {
        if !self.topology.contains(src) {
            return Err(invalid(format!("unknown node {src}")));
        }
        let nbrs = self.active_neighbors(src);
        for &n in &nbrs {
            self.send(src, n, kind, tag, payload.to_vec())?;
        }
        Ok(nbrs.len())
    }

    pub fn fail_link(&mut self, a: u32, b: u32) -> Result<()> {
        if self.topology.edge(a, b).is_none() {
            return Err(invalid(format!("no link {a}-{b}")));
        }
        self.failed.insert(key(a, b));
        self.log_link("fail_link", a, b);
        Ok(())
    }

    pub fn restore_link(&mut self, a: u32, b: u32) -> Result<()> {
        if self.topology.edge(a, b).is_none() {
            return Err(invalid(format!("no link {a}-{b}")));
        }
        self.failed.remove(&key(a, b));
        self.log_link("restore_link", a, b);
        Ok(())
    }

    pub fn set_drop_prob(&mut self, p: f64) -> Result<()> {
        let topo = std::mem::replace(&mut self.topology, Topology::new(Vec::new(), Vec::new())?);
        self.topology = topo.with_drop_prob(p)?;
        Ok(())
    }

    /// Queues a command for the next gap between events.
    pub fn submit(&mut self, cmd: NetCommand) {
        self.commands.push_back(cmd);
    }

    fn apply_commands(&mut self) -> Result<()> {
        while let Some(cmd) = self.commands.pop_front() {
            match cmd {
                NetCommand::FailLink { a, b } => self.fail_link(a, b)?,
                NetCommand::RestoreLink { a, b } => self.restore_link(a, b)?,
                NetCommand::SetDropProb { p } => self.set_drop_prob(p)?,
            }
        }
        Ok(())
    }

    /// Time of the next queued delivery.
    pub fn next_event_time(&self) -> Option<f64> {
        self.queue.peek().map(|p| p.time)
    }

    /// Delivers every message due at or before `t`, in `(time, seq)` order,
    /// then advances the clock to `t`.
    pub fn step_until(&mut self, t: f64) -> Result<Vec<Message>> {
        if t < self.time {
            return Err(invalid(format!("cannot step back from {} to {t}", self.time)));
        }
        let mut out = Vec::new();
        self.apply_commands()?;
        while self.queue.peek().is_some_and(|p| p.time <= t) {
            let p = self.queue.pop().unwrap();
            self.time = p.time;
            self.stats.in_flight -= 1;
            self.stats.delivered += 1;
            self.ledger.entry((p.msg.src, p.msg.dst)).or_default().delivered += 1;
            self.log("deliver", &p.msg, p.time, p.seq);
            out.push(p.msg);
            self.apply_commands()?;
        }
        self.time = t;
        Ok(out)
    }

    /// Delivers everything in flight.
    pub fn drain(&mut self) -> Result<Vec<Message>> {
        let end = self.queue.iter().map(|p| p.time).fold(self.time, f64::max);
        self.step_until(end)
    }

    /// Shortest path of live links from `src` to `dst`, both ends included.
    pub fn route(&self, src: u32, dst: u32) -> Result<Vec<u32>> {
        if !self.topology.contains(src) || !self.topology.contains(dst) {
            return Err(invalid(format!("unknown node in route {src}->{dst}")));
        }
        let tree = self.topology.bfs_tree(dst, |a, b| self.is_link_up(a, b));
        let mut path = vec![src];
        let mut at = src;
        while at != dst {
            match tree.get(&at).and_then(|(parent, _)| *parent) {
                Some(p) => {
                    path.push(p);
                    at = p;
                }
                None => return Err(Error::InvalidRoute(format!("no live path from {src} to {dst}"))),
            }
        }
        Ok(path)
    }

    /// Application-level store-and-forward along [`Network::route`]: every
    /// hop is an ordinary unicast, resent until it arrives or `max_retries`
    /// resends are spent. Needs an idle network. Returns the payload as
    /// received at `dst`.
    pub fn relay(
        &mut self,
        src: u32,
        dst: u32,
        kind: PayloadKind,
        tag: u64,
        payload: Vec<f64>,
        max_retries: usize,
    ) -> Result<Vec<f64>> {
        if self.pending() != 0 {
            return Err(invalid("relay needs an idle network"));
        }
        let path = self.route(src, dst)?;
        let mut payload = payload;
        for hop in path.windows(2) {
            let mut arrived = None;
            for _ in 0..=max_retries {
                self.send(hop[0], hop[1], kind, tag, payload.clone())?;
                if let Some(m) = self.drain()?.into_iter().next() {
                    arrived = Some(m.payload);
                    break;
                }
            }
            payload = arrived.ok_or_else(|| {
                Error::InvalidRoute(format!("hop {}->{} lost after {max_retries} retries", hop[0], hop[1]))
            })?;
        }
        Ok(payload)
    }
}
