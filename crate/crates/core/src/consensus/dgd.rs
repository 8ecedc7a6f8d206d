use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::mixing::metropolis_over;
use super::{ConsensusConfig, ConsensusProblem, MixingMatrix, NodeState};
use crate::error::Result;
use crate::netsim::{Network, PayloadKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DgdVariant {
    /// Constant step with the exact first-order correction
    /// `x⁺ = (I+W)x − ½(I+W)x⁻ − γ(∇f(x) − ∇f(x⁻))`.
    Extra,
    /// Plain DGD with `γ_k = γ₀ / √k`.
    Diminishing,
}

/// `x_i ← Σ_j W_ij x_j − γ ∇F_i(x_i)` for every node at once. States must
/// be ordered like the rows of `w` and the problem's nodes.
pub fn dgd_sync_round(states: &mut [NodeState], w: &MixingMatrix, problem: &ConsensusProblem, step: f64) {
    let xs: Vec<Vec<f64>> = states.iter().map(|s| s.x.clone()).collect();
    let mixed = w.apply(&xs);
    for (i, (s, m)) in states.iter_mut().zip(mixed).enumerate() {
        let g = problem.gradient(i, &xs[i]);
        s.x = m.iter().zip(&g).map(|(m, g)| m - step * g).collect();
        s.iteration += 1;
    }
}

struct Memory {
    x: Vec<Vec<f64>>,
    mix: Vec<Vec<f64>>,
    grad: Vec<Vec<f64>>,
}

/// Synchronous gradient consensus over the network: every round each node
/// broadcasts its estimate, then mixes with whatever it last heard from
/// each neighbor.
pub struct DgdSolver {
    variant: DgdVariant,
    step: f64,
    states: Vec<NodeState>,
    heard: Vec<BTreeMap<u32, Vec<f64>>>,
    memory: Option<Memory>,
    k: u64,
}

impl DgdSolver {
    pub fn new(problem: &ConsensusProblem, config: &ConsensusConfig, warm: Option<&[f64]>) -> Self {
        let start = warm.map_or_else(|| problem.reference.clone(), <[f64]>::to_vec);
        let states = problem
            .locals
            .iter()
            .map(|d| NodeState { node_id: d.node, x: start.clone(), iteration: 0, last_broadcast: 0.0 })
            .collect();
        Self {
            variant: config.dgd_variant,
            step: config.step.unwrap_or_else(|| problem.default_step()),
            states,
            heard: vec![BTreeMap::new(); problem.len()],
            memory: None,
            k: 0,
        }
    }

    pub fn states(&self) -> &[NodeState] {
        &self.states
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    /// Forgets the correction history so the next round starts afresh from
    /// the current estimates.
    pub fn reset_memory(&mut self) {
        self.memory = None;
        self.k = 0;
    }

    pub fn round(&mut self, problem: &ConsensusProblem, net: &mut Network, tag: u64) -> Result<()> {
        for s in &mut self.states {
            net.broadcast(s.node_id, PayloadKind::Model, tag, &s.x)?;
            s.last_broadcast = net.time();
        }
        for m in net.drain()? {
            if let Some(i) = problem.index_of(m.dst) {
                self.heard[i].insert(m.src, m.payload);
            }
        }
        let w = metropolis_over(net.topology(), |a, b| net.is_link_up(a, b));
        let xs: Vec<Vec<f64>> = self.states.iter().map(|s| s.x.clone()).collect();
        let l = problem.cells();
        let mix: Vec<Vec<f64>> = (0..xs.len())
            .map(|i| {
                let mut out = vec![0.0; l];
                for (j, node) in w.nodes.iter().enumerate() {
                    let wij = w.get(i, j);
                    if wij == 0.0 {
                        continue;
                    }
                    let xj = if i == j { &xs[i] } else { self.heard[i].get(node).unwrap_or(&xs[i]) };
                    for (o, v) in out.iter_mut().zip(xj) {
                        *o += wij * v;
                    }
                }
                out
            })
            .collect();
        let grad: Vec<Vec<f64>> = (0..xs.len()).map(|i| problem.gradient(i, &xs[i])).collect();
        self.k += 1;
        let next: Vec<Vec<f64>> = match (self.variant, &self.memory) {
            (DgdVariant::Extra, Some(m)) => (0..xs.len())
                .map(|i| {
                    (0..l)
                        .map(|c| {
                            xs[i][c] + mix[i][c]
                                - 0.5 * (m.x[i][c] + m.mix[i][c])
                                - self.step * (grad[i][c] - m.grad[i][c])
                        })
                        .collect()
                })
                .collect(),
            (DgdVariant::Extra, None) => (0..xs.len())
                .map(|i| (0..l).map(|c| mix[i][c] - self.step * grad[i][c]).collect())
                .collect(),
            (DgdVariant::Diminishing, _) => {
                let g = self.step / (self.k as f64).sqrt();
                (0..xs.len()).map(|i| (0..l).map(|c| mix[i][c] - g * grad[i][c]).collect()).collect()
            }
        };
        for (s, x) in self.states.iter_mut().zip(next) {
            s.x = x;
            s.iteration += 1;
        }
        self.memory = Some(Memory { x: xs, mix, grad });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::{consensus_error, metropolis_weights};
    use crate::netsim::{Edge, Topology};
    use crate::tomo::{SparseMatrix, TomoSystem};

    fn ring(n: u32) -> Topology {
        Topology::new((0..n).collect(), (0..n).map(|i| Edge { a: i, b: (i + 1) % n, latency: 0.01, drop_prob: 0.0 }).collect())
            .unwrap()
    }

    /// Every node holds the same rows, so all local objectives coincide.
    fn shared_quadratic(p: u32) -> ConsensusProblem {
        let rows = vec![vec![(0, 1.0), (1, 0.5)], vec![(1, 2.0)], vec![(0, -1.0), (2, 1.0)]];
        let mut all = Vec::new();
        let mut t = Vec::new();
        let mut meta = Vec::new();
        for n in 0..p {
            all.extend(rows.clone());
            t.extend([1.0, -0.5, 2.0]);
            meta.extend([(0, n); 3]);
        }
        let mut sys = TomoSystem::new(SparseMatrix::from_rows(3, &all).unwrap(), t, 0.3).unwrap();
        sys.row_meta = meta;
        ConsensusProblem::by_station(&sys, &(0..p).collect::<Vec<_>>()).unwrap()
    }

    fn states(p: &ConsensusProblem, xs: &[Vec<f64>]) -> Vec<NodeState> {
        p.locals
            .iter()
            .zip(xs)
            .map(|(d, x)| NodeState { node_id: d.node, x: x.clone(), iteration: 0, last_broadcast: 0.0 })
            .collect()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let p = shared_quadratic(4);
        let opt = crate::tomo::solve_centralized(&p.to_system().unwrap()).unwrap().slowness;
        let w = metropolis_weights(&ring(4)).unwrap();
        let mut s = states(&p, &vec![opt.clone(); 4]);
        dgd_sync_round(&mut s, &w, &p, 0.01);
        for st in &s {
            for (a, b) in st.x.iter().zip(&opt) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_node_is_gradient_descent() {
        let p = shared_quadratic(1);
        let w = MixingMatrix { nodes: vec![0], weights: vec![vec![1.0]] };
        let x0 = vec![0.3, -0.2, 0.7];
        let mut s = states(&p, std::slice::from_ref(&x0));
        dgd_sync_round(&mut s, &w, &p, 0.05);
        let g = p.gradient(0, &x0);
        for c in 0..3 {
            assert!((s[0].x[c] - (x0[c] - 0.05 * g[c])).abs() < 1e-15);
        }
    }

    #[test]
    fn ring_consensus_error_non_increasing() {
        let p = shared_quadratic(4);
        let w = metropolis_weights(&ring(4)).unwrap();
        let lipschitz = 2.0 * 6.0 + 2.0 * p.local_lambda();
        let mut s = states(&p, &[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, -1.0], vec![0.5, 0.5, 0.5]]);
        let mut prev = consensus_error(&s);
        for _ in 0..50 {
            dgd_sync_round(&mut s, &w, &p, 0.9 / lipschitz);
            let e = consensus_error(&s);
            assert!(e <= prev + 1e-15, "{e} > {prev}");
            prev = e;
        }
    }

    #[test]
    fn pure_averaging_preserves_mean() {
        let p = shared_quadratic(4);
        let w = metropolis_weights(&ring(4)).unwrap();
        let xs = vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, -1.0], vec![0.5, 0.5, 0.5]];
        let mut s = states(&p, &xs);
        let mean0 = super::super::mean_of(xs.iter().map(Vec::as_slice));
        let mut prev = consensus_error(&s);
        for _ in 0..30 {
            dgd_sync_round(&mut s, &w, &p, 0.0);
            let mean = super::super::mean_of(s.iter().map(|s| s.x.as_slice()));
            for (a, b) in mean.iter().zip(&mean0) {
                assert!((a - b).abs() < 1e-14);
            }
            let e = consensus_error(&s);
            assert!(e < prev);
            prev = e;
        }
        assert!(prev < 1e-3);
    }
}
