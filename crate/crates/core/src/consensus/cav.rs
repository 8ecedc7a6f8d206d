use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ConsensusConfig, ConsensusProblem, NodeState};
use crate::error::{Error, Result};
use crate::netsim::{Network, PayloadKind};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Partitioning {
    /// One spanning tree aggregates the whole model vector.
    Horizontal,
    /// The model is cut into `p` contiguous column blocks; block `k` is
    /// aggregated at its own landlord node and redistributed from there.
    Vertical,
}

/// Block-iterative Kaczmarz with component averaging over the lifted rows
/// `[a_r, √λ e_r]`. Cell `ℓ` of the network estimate is the average of the
/// local estimates weighted by each node's ray count in that cell.
pub struct CavSolver {
    /// Lifted cell part `δ = s − s_ref`, identical at every node after a round.
    x: Vec<f64>,
    /// Slack of each node's own rows.
    z: Vec<Vec<f64>>,
    /// `N_ℓ / n_iℓ`, zero where node `i` has no ray.
    scale: Vec<Vec<f64>>,
    rhs: Vec<Vec<f64>>,
    iterations: u64,
    last_broadcast: f64,
    rng: ChaCha8Rng,
    sweeps: usize,
    relaxation: f64,
    partitioning: Partitioning,
    max_retries: usize,
    sqrt_lambda: f64,
}

impl CavSolver {
    pub fn new(problem: &ConsensusProblem, config: &ConsensusConfig, seed: u64) -> Self {
        let l = problem.cells();
        let counts: Vec<Vec<usize>> = problem.locals.iter().map(|d| d.matrix.column_hits()).collect();
        let total: Vec<usize> = (0..l).map(|c| counts.iter().map(|n| n[c]).sum()).collect();
        let scale = counts
            .iter()
            .map(|n| (0..l).map(|c| if n[c] > 0 { total[c] as f64 / n[c] as f64 } else { 0.0 }).collect())
            .collect();
        Self {
            x: vec![0.0; l],
            z: problem.locals.iter().map(|d| vec![0.0; d.rows.len()]).collect(),
            scale,
            rhs: (0..problem.len()).map(|i| problem.local_rhs(i)).collect(),
            iterations: 0,
            last_broadcast: 0.0,
            rng: rng::stream(seed, &[0x636176]),
            sweeps: config.cav_sweeps,
            relaxation: config.relaxation,
            partitioning: config.partitioning,
            max_retries: config.max_retries,
            sqrt_lambda: problem.lambda.sqrt(),
        }
    }

    /// Weight of node `i` in component `cell`: its share of the rays there.
    pub fn weight(&self, i: usize, cell: usize) -> f64 {
        let s = self.scale[i][cell];
        if s > 0.0 {
            1.0 / s
        } else {
            0.0
        }
    }

    pub fn model(&self, problem: &ConsensusProblem) -> Vec<f64> {
        self.x.iter().zip(&problem.reference).map(|(d, r)| d + r).collect()
    }

    pub fn states(&self, problem: &ConsensusProblem) -> Vec<NodeState> {
        let x = self.model(problem);
        problem
            .locals
            .iter()
            .map(|d| NodeState { node_id: d.node, x: x.clone(), iteration: self.iterations, last_broadcast: self.last_broadcast })
            .collect()
    }

    pub fn rescale_slack(&mut self, old: f64, new: f64) {
        let f = if old > 0.0 { (new / old).sqrt() } else { 0.0 };
        for z in &mut self.z {
            for v in z {
                *v *= f;
            }
        }
        self.sqrt_lambda = new.sqrt();
    }

    /// Local sweeps at node `i`. Returns the node's contribution `u` to the
    /// cell part; its local view of the averaged estimate is `x + N/n ∘ u`.
    fn sweep(&mut self, problem: &ConsensusProblem, i: usize) -> Vec<f64> {
        let d = &problem.locals[i];
        let s = &self.scale[i];
        let sl = self.sqrt_lambda;
        let lam = sl * sl;
        let mut u = vec![0.0; self.x.len()];
        let mut us = vec![0.0; d.rows.len()];
        let mut order: Vec<usize> = (0..d.rows.len()).collect();
        for _ in 0..self.sweeps {
            order.shuffle(&mut self.rng);
            for &k in &order {
                let mut pred = sl * (self.z[i][k] + us[k]);
                let mut den = lam;
                for (c, a) in d.matrix.row(k) {
                    pred += a * (self.x[c] + s[c] * u[c]);
                    den += a * a * s[c];
                }
                if den <= 0.0 {
                    continue;
                }
                let coef = self.relaxation * (self.rhs[i][k] - pred) / den;
                for (c, a) in d.matrix.row(k) {
                    u[c] += coef * a;
                }
                us[k] += coef * sl;
            }
        }
        for (z, v) in self.z[i].iter_mut().zip(us) {
            *z += v;
        }
        u
    }

    pub fn round(&mut self, problem: &ConsensusProblem, net: &mut Network, tag: u64) -> Result<()> {
        let contributions: Vec<Vec<f64>> = (0..problem.len()).map(|i| self.sweep(problem, i)).collect();
        let nodes = problem.nodes();
        let blocks = match self.partitioning {
            Partitioning::Horizontal => vec![(nodes[0], 0..self.x.len())],
            Partitioning::Vertical => column_blocks(&nodes, self.x.len()),
        };
        let mut attempt = 0;
        let total = loop {
            match tree_allreduce(net, problem, &contributions, &blocks, tag, self.max_retries) {
                Ok(t) => break t,
                Err(Error::InvalidRoute(_)) if attempt < self.max_retries => attempt += 1,
                Err(e) => return Err(e),
            }
        };
        for (x, t) in self.x.iter_mut().zip(total) {
            *x += t;
        }
        self.iterations += 1;
        self.last_broadcast = net.time();
        Ok(())
    }
}

/// One sweep at every node followed by component averaging through the
/// network.
pub fn kaczmarz_cav_round(solver: &mut CavSolver, problem: &ConsensusProblem, net: &mut Network, tag: u64) -> Result<()> {
    solver.round(problem, net, tag)
}

/// `p` contiguous, near-equal column blocks; block `k` is owned by the
/// `k`-th node.
fn column_blocks(nodes: &[u32], l: usize) -> Vec<(u32, std::ops::Range<usize>)> {
    let p = nodes.len().min(l.max(1));
    (0..p).map(|k| (nodes[k], k * l / p..(k + 1) * l / p)).filter(|(_, r)| !r.is_empty()).collect()
}

struct Tree {
    range: std::ops::Range<usize>,
    parent: BTreeMap<u32, Option<u32>>,
    children: BTreeMap<u32, Vec<u32>>,
    depth: BTreeMap<u32, usize>,
}

/// Sums every node's vector over spanning trees of the live links: partial
/// sums climb to each block's root level by level, then the total comes back
/// down. Lost messages are resent up to `max_retries` times per hop.
fn tree_allreduce(
    net: &mut Network,
    problem: &ConsensusProblem,
    values: &[Vec<f64>],
    blocks: &[(u32, std::ops::Range<usize>)],
    tag: u64,
    max_retries: usize,
) -> Result<Vec<f64>> {
    let l = values.first().map_or(0, Vec::len);
    let mut trees = Vec::with_capacity(blocks.len());
    for (root, range) in blocks {
        let bfs = net.topology().bfs_tree(*root, |a, b| net.is_link_up(a, b));
        if bfs.len() < problem.len() {
            return Err(Error::InvalidTopology(format!(
                "network is partitioned: {} of {} nodes reachable from {root}",
                bfs.len(),
                problem.len()
            )));
        }
        let mut depth = BTreeMap::from([(*root, 0usize)]);
        let mut frontier = vec![*root];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for n in frontier {
                for &c in &bfs[&n].1 {
                    depth.insert(c, depth[&n] + 1);
                    next.push(c);
                }
            }
            frontier = next;
        }
        trees.push(Tree {
            range: range.clone(),
            parent: bfs.iter().map(|(&n, (p, _))| (n, *p)).collect(),
            children: bfs.into_iter().map(|(n, (_, c))| (n, c)).collect(),
            depth,
        });
    }
    let max_depth = trees.iter().flat_map(|t| t.depth.values().copied()).max().unwrap_or(0);
    let tree_tag = |k: usize| (tag << 20) | k as u64;

    let mut partial: Vec<BTreeMap<u32, Vec<f64>>> = trees
        .iter()
        .map(|t| {
            problem
                .locals
                .iter()
                .enumerate()
                .map(|(i, d)| (d.node, values[i][t.range.clone()].to_vec()))
                .collect()
        })
        .collect();
    for level in (1..=max_depth).rev() {
        let mut sends = Vec::new();
        for (k, t) in trees.iter().enumerate() {
            for (&n, &d) in &t.depth {
                if d == level {
                    let parent = t.parent[&n].expect("non-root has a parent");
                    sends.push((n, parent, tree_tag(k), PayloadKind::Aggregate, partial[k][&n].clone()));
                }
            }
        }
        for (src, dst, tg, payload) in exchange(net, sends, max_retries)? {
            let k = (tg & 0xfffff) as usize;
            let _ = src;
            for (a, b) in partial[k].get_mut(&dst).expect("parent in tree").iter_mut().zip(&payload) {
                *a += b;
            }
        }
    }

    let mut total = vec![0.0; l];
    let mut known: Vec<BTreeSet<u32>> = Vec::with_capacity(trees.len());
    for (k, ((root, range), t)) in blocks.iter().zip(&trees).enumerate() {
        total[range.clone()].copy_from_slice(&partial[k][root]);
        known.push(BTreeSet::from([*root]));
        let _ = t;
    }
    for level in 0..max_depth {
        let mut sends = Vec::new();
        for (k, t) in trees.iter().enumerate() {
            for (&n, &d) in &t.depth {
                if d == level {
                    for &c in &t.children[&n] {
                        sends.push((n, c, tree_tag(k), PayloadKind::Model, total[t.range.clone()].to_vec()));
                    }
                }
            }
        }
        for (_, dst, tg, _) in exchange(net, sends, max_retries)? {
            known[(tg & 0xfffff) as usize].insert(dst);
        }
    }
    debug_assert!(known.iter().all(|k| k.len() == problem.len()));
    Ok(total)
}

type Outgoing = (u32, u32, u64, PayloadKind, Vec<f64>);
type Delivered = (u32, u32, u64, Vec<f64>);

/// Sends every message, waits for delivery and resends whatever was lost.
fn exchange(net: &mut Network, sends: Vec<Outgoing>, max_retries: usize) -> Result<Vec<Delivered>> {
    let mut pending: BTreeMap<(u32, u32, u64), (PayloadKind, Vec<f64>)> =
        sends.into_iter().map(|(s, d, t, k, p)| ((s, d, t), (k, p))).collect();
    let mut got = Vec::new();
    for _ in 0..=max_retries {
        if pending.is_empty() {
            break;
        }
        for (&(s, d, t), (k, p)) in &pending {
            net.send(s, d, *k, t, p.clone())?;
        }
        for m in net.drain()? {
            if pending.remove(&(m.src, m.dst, m.tag)).is_some() {
                got.push((m.src, m.dst, m.tag, m.payload));
            }
        }
    }
    if let Some(&(s, d, _)) = pending.keys().next() {
        return Err(Error::InvalidRoute(format!("message {s}->{d} lost after {max_retries} retries")));
    }
    got.sort_by_key(|g| (g.2, g.1, g.0));
    Ok(got)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{Edge, Topology};
    use crate::tomo::{solve_centralized, SparseMatrix, TomoSystem};
    use rand::{Rng, SeedableRng};

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        d / b.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn random_system(cells: usize, rows: usize, owners: u32, seed: u64) -> TomoSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        for _ in 0..rows {
            let mut row = Vec::new();
            for c in 0..cells {
                if rng.random_bool(0.35) {
                    row.push((c, rng.random_range(10.0..100.0)));
                }
            }
            entries.push(row);
        }
        let truth: Vec<f64> = (0..cells).map(|_| rng.random_range(4e-4..6e-4)).collect();
        let m = SparseMatrix::from_rows(cells, &entries).unwrap();
        let t = m.mul(&truth);
        let mut sys = TomoSystem::new(m, t, 1.0).unwrap();
        sys.reference = vec![5e-4; cells];
        sys.row_meta = (0..rows).map(|r| (0, r as u32 % owners)).collect();
        sys
    }

    fn line(n: u32, drop: f64) -> Network {
        let edges = (1..n).map(|i| Edge { a: i - 1, b: i, latency: 0.002, drop_prob: drop }).collect();
        Network::new(Topology::new((0..n).collect(), edges).unwrap(), 9)
    }

    #[test]
    fn single_node_reaches_centralized() {
        let sys = random_system(12, 30, 1, 2);
        let oracle = solve_centralized(&sys).unwrap().slowness;
        let p = ConsensusProblem::by_station(&sys, &[0]).unwrap();
        let mut s = CavSolver::new(&p, &ConsensusConfig::default(), 4);
        let mut net = line(1, 0.0);
        for r in 1..=20_000 {
            kaczmarz_cav_round(&mut s, &p, &mut net, r).unwrap();
            if rel_err(&s.model(&p), &oracle) < 1e-7 {
                break;
            }
        }
        assert!(rel_err(&s.model(&p), &oracle) < 1e-6, "{}", rel_err(&s.model(&p), &oracle));
    }

    #[test]
    fn zero_rays_means_zero_weight() {
        let rows = vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 2.0)], vec![(2, 1.0)]];
        let m = SparseMatrix::from_rows(3, &rows).unwrap();
        let mut sys = TomoSystem::new(m, vec![1.0, 1.0, 1.0], 0.1).unwrap();
        sys.row_meta = vec![(0, 0), (0, 1), (0, 1)];
        let p = ConsensusProblem::by_station(&sys, &[0, 1]).unwrap();
        let s = CavSolver::new(&p, &ConsensusConfig::default(), 0);
        assert_eq!(s.weight(0, 2), 0.0);
        assert_eq!(s.weight(1, 1), 0.0);
        assert_eq!(s.weight(0, 0), 0.5);
        assert_eq!(s.weight(1, 2), 1.0);
        for c in 0..3 {
            assert!((s.weight(0, c) + s.weight(1, c) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn orthogonal_rows_residual_decreases() {
        let rows = vec![vec![(0, 1.0), (1, 1.0)], vec![(2, 2.0)], vec![(0, 1.0), (1, -1.0)], vec![(3, 1.0)]];
        let m = SparseMatrix::from_rows(4, &rows).unwrap();
        let mut sys = TomoSystem::new(m, vec![1.0, -0.5, 0.3, 2.0], 1e-3).unwrap();
        sys.row_meta = vec![(0, 0), (0, 0), (0, 1), (0, 1)];
        let p = ConsensusProblem::by_station(&sys, &[0, 1]).unwrap();
        let mut s = CavSolver::new(&p, &ConsensusConfig::default(), 0);
        let full = p.to_system().unwrap();
        let residual = |x: &[f64]| -> f64 {
            full.matrix.mul(x).iter().zip(&full.t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let before = residual(&s.model(&p));
        let mut net = line(2, 0.0);
        kaczmarz_cav_round(&mut s, &p, &mut net, 1).unwrap();
        let after = residual(&s.model(&p));
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn partitionings_agree_and_survive_drops() {
        let sys = random_system(15, 40, 5, 8);
        let p = ConsensusProblem::by_station(&sys, &[0, 1, 2, 3, 4]).unwrap();
        let run = |part: Partitioning, drop: f64| {
            let cfg = ConsensusConfig { partitioning: part, ..Default::default() };
            let mut s = CavSolver::new(&p, &cfg, 3);
            let mut net = line(5, drop);
            for r in 1..=5 {
                kaczmarz_cav_round(&mut s, &p, &mut net, r).unwrap();
            }
            (s.model(&p), net.stats())
        };
        let (h, hs) = run(Partitioning::Horizontal, 0.0);
        let (v, vs) = run(Partitioning::Vertical, 0.0);
        let (d, ds) = run(Partitioning::Horizontal, 0.3);
        assert!(rel_err(&v, &h) < 1e-12);
        assert!(rel_err(&d, &h) < 1e-12);
        assert!(vs.sent > hs.sent);
        assert!(vs.total_bytes < hs.total_bytes + vs.sent * 32);
        assert!(ds.dropped > 0);
        assert_eq!(ds.sent, ds.delivered + ds.dropped);
    }

    #[test]
    fn partitioned_network_is_an_error() {
        let sys = random_system(6, 12, 3, 1);
        let p = ConsensusProblem::by_station(&sys, &[0, 1, 2]).unwrap();
        let mut s = CavSolver::new(&p, &ConsensusConfig::default(), 0);
        let mut net = line(3, 0.0);
        net.fail_link(1, 2).unwrap();
        assert!(matches!(kaczmarz_cav_round(&mut s, &p, &mut net, 1), Err(Error::InvalidTopology(_))));
    }

    #[test]
    fn blocks_cover_columns() {
        let b = column_blocks(&[3, 5, 9], 10);
        assert_eq!(b, vec![(3, 0..3), (5, 3..6), (9, 6..10)]);
        let b = column_blocks(&[1, 2, 3, 4], 2);
        assert_eq!(b.iter().map(|x| x.1.len()).sum::<usize>(), 2);
    }
}
