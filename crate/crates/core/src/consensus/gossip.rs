use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{ConsensusConfig, ConsensusProblem, NodeState};
use crate::error::Result;
use crate::netsim::{Message, Network, PayloadKind};
use crate::rng;
use crate::tomo::dot;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LocalSolve {
    /// `local_iters` randomized Kaczmarz sweeps over the node's rows.
    Kaczmarz,
    /// Exact projection onto the node's row constraints.
    Exact,
}

/// One lifted row `[a, √λ e_r] · [δ; z] = b_r`.
#[derive(Clone, Debug)]
struct LiftedRow {
    cells: Vec<(usize, f64)>,
    slack: usize,
    rhs: f64,
}

/// Asynchronous broadcast gossip in the lifted space `[δ; z]`, where
/// `A δ + √λ z = t − A s_ref`. The minimum-norm solution of this
/// underdetermined system is the ridge solution, so local projections plus
/// neighbor averaging converge to the centralized model.
pub struct AsyncSolver {
    y: Vec<Vec<f64>>,
    rows: Vec<Vec<LiftedRow>>,
    next_wake: Vec<f64>,
    iterations: Vec<u64>,
    last_broadcast: Vec<f64>,
    rng: ChaCha8Rng,
    wake: Exp<f64>,
    beta: f64,
    local_iters: usize,
    mode: LocalSolve,
    sqrt_lambda: f64,
}

impl AsyncSolver {
    pub fn new(problem: &ConsensusProblem, config: &ConsensusConfig, seed: u64) -> Self {
        let l = problem.cells();
        let dim = l + problem.total_rows;
        let sl = problem.lambda.sqrt();
        let rows = (0..problem.len())
            .map(|i| {
                let d = &problem.locals[i];
                let rhs = problem.local_rhs(i);
                (0..d.rows.len())
                    .map(|k| LiftedRow { cells: d.matrix.row(k).collect(), slack: l + d.rows[k], rhs: rhs[k] })
                    .collect()
            })
            .collect();
        let mut rng = rng::stream(seed, &[0x676f73]);
        let wake = Exp::new(1.0 / config.wake_mean).expect("wake_mean validated positive");
        let next_wake = (0..problem.len()).map(|_| wake.sample(&mut rng)).collect();
        Self {
            y: vec![vec![0.0; dim]; problem.len()],
            rows,
            next_wake,
            iterations: vec![0; problem.len()],
            last_broadcast: vec![0.0; problem.len()],
            rng,
            wake,
            beta: config.beta,
            local_iters: config.local_iters,
            mode: config.local_solve,
            sqrt_lambda: sl,
        }
    }

    pub fn states(&self, problem: &ConsensusProblem) -> Vec<NodeState> {
        let l = problem.cells();
        problem
            .locals
            .iter()
            .enumerate()
            .map(|(i, d)| NodeState {
                node_id: d.node,
                x: self.y[i][..l].iter().zip(&problem.reference).map(|(a, r)| a + r).collect(),
                iteration: self.iterations[i],
                last_broadcast: self.last_broadcast[i],
            })
            .collect()
    }

    /// Keeps every iterate in the row space of the lifted matrix when the
    /// ridge weight changes.
    pub fn rescale_slack(&mut self, old: f64, new: f64) {
        let f = if old > 0.0 { (new / old).sqrt() } else { 0.0 };
        let l = self.y.first().map_or(0, |y| y.len()) - self.rows.iter().map(Vec::len).sum::<usize>();
        for y in &mut self.y {
            for v in &mut y[l..] {
                *v *= f;
            }
        }
        self.sqrt_lambda = new.sqrt();
    }

    fn row_dot(&self, row: &LiftedRow, y: &[f64]) -> f64 {
        row.cells.iter().map(|&(c, v)| v * y[c]).sum::<f64>() + self.sqrt_lambda * y[row.slack]
    }

    fn row_norm2(&self, row: &LiftedRow) -> f64 {
        row.cells.iter().map(|(_, v)| v * v).sum::<f64>() + self.sqrt_lambda * self.sqrt_lambda
    }

    fn add_row(&self, row: &LiftedRow, coef: f64, y: &mut [f64]) {
        for &(c, v) in &row.cells {
            y[c] += coef * v;
        }
        y[row.slack] += coef * self.sqrt_lambda;
    }

    fn local_update(&mut self, i: usize) {
        let mut y = std::mem::take(&mut self.y[i]);
        match self.mode {
            LocalSolve::Kaczmarz => {
                let mut order: Vec<usize> = (0..self.rows[i].len()).collect();
                for _ in 0..self.local_iters {
                    order.shuffle(&mut self.rng);
                    for &k in &order {
                        let row = &self.rows[i][k];
                        let n2 = self.row_norm2(row);
                        if n2 > 0.0 {
                            let coef = (row.rhs - self.row_dot(row, &y)) / n2;
                            self.add_row(row, coef, &mut y);
                        }
                    }
                }
            }
            LocalSolve::Exact => self.project(i, &mut y),
        }
        self.y[i] = y;
        self.iterations[i] += 1;
    }

    /// `y += B_iᵀ w` with `(B_i B_iᵀ) w = b_i − B_i y`, solved by conjugate
    /// gradients.
    fn project(&self, i: usize, y: &mut [f64]) {
        let rows = &self.rows[i];
        let m = rows.len();
        if m == 0 {
            return;
        }
        let dim = y.len();
        let gram = |w: &[f64]| -> Vec<f64> {
            let mut v = vec![0.0; dim];
            for (row, &wk) in rows.iter().zip(w) {
                self.add_row(row, wk, &mut v);
            }
            rows.iter().map(|row| self.row_dot(row, &v)).collect()
        };
        let r0: Vec<f64> = rows.iter().map(|row| row.rhs - self.row_dot(row, y)).collect();
        let mut w = vec![0.0; m];
        let mut r = r0.clone();
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        let tol = 1e-28 * dot(&r0, &r0).max(f64::MIN_POSITIVE);
        for _ in 0..10 * m {
            if rr <= tol {
                break;
            }
            let ap = gram(&p);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let a = rr / pap;
            for k in 0..m {
                w[k] += a * p[k];
                r[k] -= a * ap[k];
            }
            let rn = dot(&r, &r);
            for k in 0..m {
                p[k] = r[k] + rn / rr * p[k];
            }
            rr = rn;
        }
        for (row, &wk) in rows.iter().zip(&w) {
            self.add_row(row, wk, y);
        }
    }

    /// Applies neighbor broadcasts: `y_j ← β y_j + (1 − β) y_i`.
    pub fn deliver(&mut self, problem: &ConsensusProblem, messages: &[Message]) {
        for m in messages {
            if m.kind != PayloadKind::Model {
                continue;
            }
            if let Some(j) = problem.index_of(m.dst) {
                if m.payload.len() != self.y[j].len() {
                    continue;
                }
                let b = self.beta;
                for (v, p) in self.y[j].iter_mut().zip(&m.payload) {
                    *v = b * *v + (1.0 - b) * p;
                }
            }
        }
    }

    /// Local iterations at node `i` followed by a broadcast.
    pub fn wake(&mut self, problem: &ConsensusProblem, net: &mut Network, i: usize) -> Result<()> {
        self.local_update(i);
        let node = problem.locals[i].node;
        net.broadcast(node, PayloadKind::Model, self.iterations[i], &self.y[i])?;
        self.last_broadcast[i] = net.time();
        Ok(())
    }

    /// `p` wake-ups in order of each node's exponential clock.
    pub fn round(&mut self, problem: &ConsensusProblem, net: &mut Network) -> Result<()> {
        for _ in 0..problem.len() {
            let (i, &t) = self
                .next_wake
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
                .expect("at least one node");
            let t = t.max(net.time());
            let delivered = net.step_until(t)?;
            self.deliver(problem, &delivered);
            self.wake(problem, net, i)?;
            self.next_wake[i] = t + self.wake.sample(&mut self.rng).max(1e-9);
        }
        Ok(())
    }

}

/// Wakes `node`: local iterations, then a broadcast of its lifted estimate.
/// Neighbors average it in when the network delivers it; see
/// [`AsyncSolver::deliver`].
pub fn async_broadcast_step(
    solver: &mut AsyncSolver,
    problem: &ConsensusProblem,
    net: &mut Network,
    node: u32,
) -> Result<()> {
    let i = problem
        .index_of(node)
        .ok_or_else(|| crate::error::invalid(format!("unknown node {node}")))?;
    solver.wake(problem, net, i)
}
