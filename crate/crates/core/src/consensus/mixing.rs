use serde::Serialize;

use crate::error::{Error, Result};
use crate::netsim::Topology;

/// Symmetric doubly stochastic weights over the nodes of a graph.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixingMatrix {
    /// Node ids in row order, ascending.
    pub nodes: Vec<u32>,
    pub weights: Vec<Vec<f64>>,
}

impl MixingMatrix {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, node: u32) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i][j]
    }

    /// `Σ_j W_ij x_j` for each row `i`.
    pub fn apply(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let l = xs.first().map_or(0, Vec::len);
        (0..self.len())
            .map(|i| {
                let mut out = vec![0.0; l];
                for (j, x) in xs.iter().enumerate() {
                    let w = self.weights[i][j];
                    if w != 0.0 {
                        for (o, v) in out.iter_mut().zip(x) {
                            *o += w * v;
                        }
                    }
                }
                out
            })
            .collect()
    }
}

/// Metropolis–Hastings weights `w_ij = 1 / (1 + max(deg_i, deg_j))` on
/// edges, remainder on the diagonal. The graph must be connected.
pub fn metropolis_weights(topology: &Topology) -> Result<MixingMatrix> {
    if topology.is_disconnected() {
        return Err(Error::InvalidTopology("mixing weights need a connected graph".into()));
    }
    Ok(metropolis_over(topology, |_, _| true))
}

/// Metropolis weights over the edges accepted by `usable`, without a
/// connectivity check.
pub(crate) fn metropolis_over(topology: &Topology, usable: impl Fn(u32, u32) -> bool) -> MixingMatrix {
    let nodes = topology.nodes().to_vec();
    let p = nodes.len();
    let idx = |n: u32| nodes.binary_search(&n).expect("edge endpoints are nodes");
    let mut deg = vec![0usize; p];
    let live: Vec<(usize, usize)> = topology
        .edges()
        .iter()
        .filter(|e| usable(e.a, e.b))
        .map(|e| (idx(e.a), idx(e.b)))
        .collect();
    for &(a, b) in &live {
        deg[a] += 1;
        deg[b] += 1;
    }
    let mut weights = vec![vec![0.0; p]; p];
    for &(a, b) in &live {
        let w = 1.0 / (1.0 + deg[a].max(deg[b]) as f64);
        weights[a][b] = w;
        weights[b][a] = w;
    }
    for (i, row) in weights.iter_mut().enumerate() {
        let off: f64 = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, w)| w).sum();
        row[i] = 1.0 - off;
    }
    MixingMatrix { nodes, weights }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::Edge;
    use proptest::prelude::*;

    fn graph(n: u32, pairs: &[(u32, u32)]) -> Topology {
        Topology::new((0..n).collect(), pairs.iter().map(|&(a, b)| Edge { a, b, latency: 0.01, drop_prob: 0.0 }).collect()).unwrap()
    }

    #[test]
    fn path_of_three() {
        let w = metropolis_weights(&graph(3, &[(0, 1), (1, 2)])).unwrap();
        let third = 1.0 / 3.0;
        assert!((w.get(0, 1) - third).abs() < 1e-15);
        assert!((w.get(1, 2) - third).abs() < 1e-15);
        assert!((w.get(1, 1) - third).abs() < 1e-15);
        assert!((w.get(0, 0) - 2.0 * third).abs() < 1e-15);
        assert_eq!(w.get(0, 2), 0.0);
    }

    #[test]
    fn complete_k4_is_uniform() {
        let w = metropolis_weights(&graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((w.get(i, j) - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn disconnected_rejected() {
        assert!(matches!(metropolis_weights(&graph(3, &[(0, 1)])), Err(Error::InvalidTopology(_))));
    }

    proptest! {
        #[test]
        fn rows_sum_to_one_and_symmetric(n in 2u32..10, mask in proptest::collection::vec(any::<bool>(), 45)) {
            let mut pairs: Vec<(u32, u32)> = (1..n).map(|i| (i - 1, i)).collect();
            let mut k = 0;
            for a in 0..n {
                for b in a + 2..n {
                    if mask[k % mask.len()] { pairs.push((a, b)); }
                    k += 1;
                }
            }
            let t = graph(n, &pairs);
            let w = metropolis_weights(&t).unwrap();
            for i in 0..n as usize {
                let s: f64 = w.weights[i].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                for j in 0..n as usize {
                    prop_assert_eq!(w.get(i, j), w.get(j, i));
                    prop_assert!(w.get(i, j) >= 0.0);
                    if i != j && w.get(i, j) > 0.0 {
                        prop_assert!(t.edge(w.nodes[i], w.nodes[j]).is_some());
                    }
                }
            }
        }
    }
}
