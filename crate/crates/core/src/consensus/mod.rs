//! Decentralized solvers for the tomography ridge problem. Each node holds
//! the rays it recorded and talks only to radio neighbors through
//! [`crate::netsim`].

mod cav;
mod dgd;
mod gossip;
mod mixing;

pub use cav::{kaczmarz_cav_round, CavSolver, Partitioning};
pub use dgd::{dgd_sync_round, DgdSolver, DgdVariant};
pub use gossip::{async_broadcast_step, AsyncSolver, LocalSolve};
pub use mixing::{metropolis_weights, MixingMatrix};

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::GridGeometry;
use crate::netsim::{Network, RunStats};
use crate::tomo::{clamped_model, norm, SparseMatrix, TomoModel, TomoSystem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Algorithm {
    DgdSync,
    AsyncBroadcast,
    KaczmarzCav,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::DgdSync, Algorithm::AsyncBroadcast, Algorithm::KaczmarzCav];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::DgdSync => "DGD_SYNC",
            Algorithm::AsyncBroadcast => "ASYNC_BROADCAST",
            Algorithm::KaczmarzCav => "KACZMARZ_CAV",
        }
    }
}

/// Tunables for all three algorithms; each reads only its own fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsensusConfig {
    pub algorithm: Algorithm,
    pub dgd_variant: DgdVariant,
    /// Base step; `None` uses `1 / max_i(‖A_i‖₁‖A_i‖∞ + λ/p)`.
    pub step: Option<f64>,
    /// Weight a receiver keeps on its own estimate when averaging.
    pub beta: f64,
    /// Local Kaczmarz sweeps per asynchronous wake-up.
    pub local_iters: usize,
    pub local_solve: LocalSolve,
    /// Mean time between wake-ups of one node, seconds.
    pub wake_mean: f64,
    /// Kaczmarz sweeps per component-averaging round.
    pub cav_sweeps: usize,
    pub relaxation: f64,
    pub partitioning: Partitioning,
    /// Retransmissions allowed per tree hop before giving up.
    pub max_retries: usize,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::KaczmarzCav,
            dgd_variant: DgdVariant::Extra,
            step: None,
            beta: 0.5,
            local_iters: 10,
            local_solve: LocalSolve::Kaczmarz,
            wake_mean: 0.05,
            cav_sweeps: 1,
            relaxation: 1.0,
            partitioning: Partitioning::Horizontal,
            max_retries: 50,
        }
    }
}

/// Stop when the mean model moved less than `rel_change` (relative) over
/// the last `window` rounds and the consensus error is below
/// `consensus_tol`, or give up after `max_rounds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoppingRule {
    pub rel_change: f64,
    pub window: usize,
    pub consensus_tol: f64,
    pub max_rounds: u64,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self { rel_change: 1e-6, window: 10, consensus_tol: 1e-4, max_rounds: 20_000 }
    }
}

/// Rows recorded by one node.
#[derive(Clone, Debug)]
pub struct LocalData {
    pub node: u32,
    pub matrix: SparseMatrix,
    pub t: Vec<f64>,
    /// Index of each local row in the full system.
    pub rows: Vec<usize>,
}

impl LocalData {
    pub fn is_data_free(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Row partition of a ridge system over network nodes. Node `i` holds
/// `F_i(x) = ‖t_i − A_i x‖² + (λ/p)‖x − s_ref‖²`, so `Σ F_i` is twice the
/// centralized objective.
#[derive(Clone, Debug)]
pub struct ConsensusProblem {
    /// Ascending node id.
    pub locals: Vec<LocalData>,
    pub lambda: f64,
    pub reference: Vec<f64>,
    pub total_rows: usize,
    pub geometry: Option<GridGeometry>,
}

impl ConsensusProblem {
    /// Assigns row `r` to node `owner(r)`. Nodes that receive no row are
    /// kept as data-free participants.
    pub fn from_system(system: &TomoSystem, nodes: &[u32], owner: impl Fn(usize) -> u32) -> Result<Self> {
        let mut ids = nodes.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() {
            return Err(Error::InsufficientData("no nodes to partition over".into()));
        }
        let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); ids.len()];
        for r in 0..system.rows() {
            let o = owner(r);
            let i = ids.binary_search(&o).map_err(|_| invalid(format!("row {r} owned by unknown node {o}")))?;
            assigned[i].push(r);
        }
        let locals = ids
            .iter()
            .zip(assigned)
            .map(|(&node, rows)| LocalData {
                node,
                matrix: system.matrix.select_rows(&rows),
                t: rows.iter().map(|&r| system.t[r]).collect(),
                rows,
            })
            .collect();
        Ok(Self {
            locals,
            lambda: system.lambda,
            reference: system.reference.clone(),
            total_rows: system.rows(),
            geometry: system.geometry,
        })
    }

    /// Each ray belongs to the station that recorded it.
    pub fn by_station(system: &TomoSystem, nodes: &[u32]) -> Result<Self> {
        Self::from_system(system, nodes, |r| system.row_meta[r].1)
    }

    pub fn nodes(&self) -> Vec<u32> {
        self.locals.iter().map(|l| l.node).collect()
    }

    pub fn len(&self) -> usize {
        self.locals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locals.is_empty()
    }

    pub fn cells(&self) -> usize {
        self.reference.len()
    }

    pub fn index_of(&self, node: u32) -> Option<usize> {
        self.locals.binary_search_by_key(&node, |l| l.node).ok()
    }

    /// Per-node share of the ridge weight.
    pub fn local_lambda(&self) -> f64 {
        self.lambda / self.len() as f64
    }

    /// `∇F_i(x) = 2 A_iᵀ(A_i x − t_i) + 2 (λ/p)(x − s_ref)`
    pub fn gradient(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let d = &self.locals[i];
        let r: Vec<f64> = d.matrix.mul(x).iter().zip(&d.t).map(|(p, t)| p - t).collect();
        let mut g = d.matrix.tmul(&r);
        let lp = self.local_lambda();
        for ((g, x), s) in g.iter_mut().zip(x).zip(&self.reference) {
            *g = 2.0 * *g + 2.0 * lp * (x - s);
        }
        g
    }

    pub fn local_objective(&self, i: usize, x: &[f64]) -> f64 {
        let d = &self.locals[i];
        let misfit: f64 = d.matrix.mul(x).iter().zip(&d.t).map(|(p, t)| (p - t).powi(2)).sum();
        let ridge: f64 = x.iter().zip(&self.reference).map(|(x, s)| (x - s).powi(2)).sum();
        misfit + self.local_lambda() * ridge
    }

    /// `Σ_i F_i(x)`
    pub fn objective(&self, x: &[f64]) -> f64 {
        (0..self.len()).map(|i| self.local_objective(i, x)).sum()
    }

    /// `1 / max_i(‖A_i‖₁‖A_i‖∞ + λ/p)`, half the inverse of a bound on each
    /// local gradient's Lipschitz constant.
    pub fn default_step(&self) -> f64 {
        let worst = self
            .locals
            .iter()
            .map(|d| d.matrix.norm_one() * d.matrix.norm_inf() + self.local_lambda())
            .fold(0.0, f64::max);
        if worst > 0.0 {
            1.0 / worst
        } else {
            1.0
        }
    }

    /// `t_i − A_i s_ref`
    pub(crate) fn local_rhs(&self, i: usize) -> Vec<f64> {
        let d = &self.locals[i];
        d.matrix.mul(&self.reference).iter().zip(&d.t).map(|(p, t)| t - p).collect()
    }

    /// Reassembles the full system (rows in original order).
    pub fn to_system(&self) -> Result<TomoSystem> {
        let l = self.cells();
        let mut rows = vec![Vec::new(); self.total_rows];
        let mut t = vec![0.0; self.total_rows];
        let mut meta = vec![(0, 0); self.total_rows];
        for d in &self.locals {
            for (k, &r) in d.rows.iter().enumerate() {
                rows[r] = d.matrix.row(k).collect();
                t[r] = d.t[k];
                meta[r] = (0, d.node);
            }
        }
        let mut s = TomoSystem::new(SparseMatrix::from_rows(l, &rows)?, t, self.lambda)?;
        s.reference = self.reference.clone();
        s.row_meta = meta;
        s.geometry = self.geometry;
        Ok(s)
    }
}

/// Local estimate held by one node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub node_id: u32,
    /// Slowness estimate, s/m.
    pub x: Vec<f64>,
    pub iteration: u64,
    pub last_broadcast: f64,
}

/// `max_i ‖x_i − x̄‖ / max(1, ‖x̄‖)`
pub fn consensus_error(states: &[NodeState]) -> f64 {
    if states.is_empty() {
        return 0.0;
    }
    let mean = mean_of(states.iter().map(|s| s.x.as_slice()));
    let worst = states
        .iter()
        .map(|s| norm(&s.x.iter().zip(&mean).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .fold(0.0, f64::max);
    worst / norm(&mean).max(1.0)
}

pub(crate) fn mean_of<'a>(xs: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for x in xs {
        if sum.is_empty() {
            sum = vec![0.0; x.len()];
        }
        for (s, v) in sum.iter_mut().zip(x) {
            *s += v;
        }
        n += 1;
    }
    for s in &mut sum {
        *s /= n.max(1) as f64;
    }
    sum
}

/// One line of the convergence log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub round: u64,
    pub sim_time: f64,
    pub objective: f64,
    pub consensus_error: f64,
    pub bytes_total: u64,
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut s = String::from("round,wall_sim_time_s,objective,consensus_error,bytes_total\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:e},{:e},{}", r.round, r.sim_time, r.objective, r.consensus_error, r.bytes_total);
    }
    s
}

pub fn write_convergence_csv(path: &Path, rows: &[ConvergenceRow]) -> Result<()> {
    std::fs::write(path, convergence_csv(rows))?;
    Ok(())
}

enum Inner {
    Dgd(DgdSolver),
    Async(AsyncSolver),
    Cav(CavSolver),
}

/// Round-by-round driver shared by batch runs and the control service.
pub struct DistributedSolver {
    problem: ConsensusProblem,
    config: ConsensusConfig,
    seed: u64,
    inner: Inner,
    round: u64,
    history: VecDeque<Vec<f64>>,
    log: Vec<ConvergenceRow>,
}

impl DistributedSolver {
    pub fn new(problem: ConsensusProblem, config: ConsensusConfig, seed: u64) -> Result<Self> {
        if problem.is_empty() {
            return Err(Error::InsufficientData("consensus problem has no nodes".into()));
        }
        validate(&config)?;
        let inner = Self::make_inner(&problem, &config, seed, None)?;
        Ok(Self { problem, config, seed, inner, round: 0, history: VecDeque::new(), log: Vec::new() })
    }

    /// As [`DistributedSolver::new`]; gradient methods start from `warm`
    /// (slowness), projection methods from the reference model.
    pub fn with_warm_start(problem: ConsensusProblem, config: ConsensusConfig, seed: u64, warm: &[f64]) -> Result<Self> {
        if warm.len() != problem.cells() {
            return Err(invalid(format!("warm start has {} cells, expected {}", warm.len(), problem.cells())));
        }
        let mut s = Self::new(problem, config, seed)?;
        s.inner = Self::make_inner(&s.problem, &s.config, seed, Some(warm))?;
        Ok(s)
    }

    fn make_inner(problem: &ConsensusProblem, config: &ConsensusConfig, seed: u64, warm: Option<&[f64]>) -> Result<Inner> {
        Ok(match config.algorithm {
            Algorithm::DgdSync => Inner::Dgd(DgdSolver::new(problem, config, warm)),
            Algorithm::AsyncBroadcast => Inner::Async(AsyncSolver::new(problem, config, seed)),
            Algorithm::KaczmarzCav => Inner::Cav(CavSolver::new(problem, config, seed)),
        })
    }

    pub fn problem(&self) -> &ConsensusProblem {
        &self.problem
    }

    pub fn config(&self) -> &ConsensusConfig {
        &self.config
    }

    pub fn algorithm(&self) -> Algorithm {
        self.config.algorithm
    }

    pub fn rounds(&self) -> u64 {
        self.round
    }

    pub fn log(&self) -> &[ConvergenceRow] {
        &self.log
    }

    pub fn states(&self) -> Vec<NodeState> {
        match &self.inner {
            Inner::Dgd(s) => s.states().to_vec(),
            Inner::Async(s) => s.states(&self.problem),
            Inner::Cav(s) => s.states(&self.problem),
        }
    }

    pub fn mean_model(&self) -> Vec<f64> {
        match &self.inner {
            Inner::Cav(s) => s.model(&self.problem),
            _ => mean_of(self.states().iter().map(|s| s.x.as_slice())),
        }
    }

    pub fn consensus_error(&self) -> f64 {
        consensus_error(&self.states())
    }

    /// Mean model with non-positive cells clamped.
    pub fn model(&self) -> TomoModel {
        clamped_model(&self.problem.reference, self.mean_model(), self.problem.geometry)
    }

    /// One synchronous round, or `p` wake-ups for the asynchronous solver.
    pub fn round(&mut self, net: &mut Network) -> Result<ConvergenceRow> {
        self.round += 1;
        let tag = self.round;
        match &mut self.inner {
            Inner::Dgd(s) => s.round(&self.problem, net, tag)?,
            Inner::Async(s) => s.round(&self.problem, net)?,
            Inner::Cav(s) => s.round(&self.problem, net, tag)?,
        }
        let mean = self.mean_model();
        let row = ConvergenceRow {
            round: self.round,
            sim_time: net.time(),
            objective: self.problem.objective(&mean),
            consensus_error: self.consensus_error(),
            bytes_total: net.stats().total_bytes,
        };
        self.history.push_back(mean);
        while self.history.len() > 64 {
            self.history.pop_front();
        }
        self.log.push(row);
        Ok(row)
    }

    /// `‖x̄_k − x̄_{k−window}‖ / ‖x̄_k‖`, once enough rounds exist.
    pub fn relative_change(&self, window: usize) -> Option<f64> {
        let n = self.history.len();
        if window == 0 || n <= window {
            return None;
        }
        let now = &self.history[n - 1];
        let then = &self.history[n - 1 - window];
        let diff = norm(&now.iter().zip(then).map(|(a, b)| a - b).collect::<Vec<_>>());
        let scale = norm(now);
        Some(if scale > 0.0 { diff / scale } else { diff })
    }

    pub fn is_converged(&self, stop: &StoppingRule) -> bool {
        let window = stop.window.min(63);
        match (self.relative_change(window), self.log.last()) {
            (Some(c), Some(last)) => c < stop.rel_change && last.consensus_error < stop.consensus_tol,
            _ => false,
        }
    }

    /// Changes the ridge weight and keeps iterating from the current
    /// estimates.
    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be non-negative, got {lambda}")));
        }
        let old = self.problem.lambda;
        self.problem.lambda = lambda;
        match &mut self.inner {
            Inner::Dgd(s) => s.reset_memory(),
            Inner::Async(s) => s.rescale_slack(old, lambda),
            Inner::Cav(s) => s.rescale_slack(old, lambda),
        }
        self.history.clear();
        Ok(())
    }

    /// Restarts the current algorithm from the current estimate, as
    /// [`DistributedSolver::set_algorithm`] does.
    pub fn restart(&mut self) -> Result<()> {
        self.set_algorithm(self.config.algorithm)
    }

    /// Switches algorithm. Gradient methods continue from the current mean
    /// model; projection methods restart from the reference model.
    pub fn set_algorithm(&mut self, algorithm: Algorithm) -> Result<()> {
        let warm = self.mean_model();
        self.config.algorithm = algorithm;
        self.inner = Self::make_inner(&self.problem, &self.config, self.seed.wrapping_add(self.round), Some(&warm))?;
        self.history.clear();
        Ok(())
    }
}

fn validate(c: &ConsensusConfig) -> Result<()> {
    if !(0.0..=1.0).contains(&c.beta) {
        return Err(invalid(format!("beta must lie in [0, 1], got {}", c.beta)));
    }
    if c.local_iters == 0 || c.cav_sweeps == 0 {
        return Err(invalid("local_iters and cav_sweeps must be at least 1"));
    }
    if !(c.wake_mean > 0.0) {
        return Err(invalid(format!("wake_mean must be positive, got {}", c.wake_mean)));
    }
    if !(c.relaxation > 0.0 && c.relaxation < 2.0) {
        return Err(invalid(format!("relaxation must lie in (0, 2), got {}", c.relaxation)));
    }
    if let Some(s) = c.step {
        if !(s > 0.0) {
            return Err(invalid(format!("step must be positive, got {s}")));
        }
    }
    Ok(())
}

/// Outcome of [`run_distributed`].
#[derive(Clone, Debug, Serialize)]
pub struct DistributedRun {
    pub model: TomoModel,
    pub rounds: u64,
    pub consensus_error: f64,
    pub objective: f64,
    pub net: RunStats,
    pub log: Vec<ConvergenceRow>,
}

/// Drives rounds through `net` until `stop` is met. Hitting `max_rounds`
/// first is a convergence failure carrying the mean model.
pub fn run_distributed(
    problem: ConsensusProblem,
    config: &ConsensusConfig,
    net: &mut Network,
    stop: &StoppingRule,
    seed: u64,
) -> Result<DistributedRun> {
    let mut solver = DistributedSolver::new(problem, config.clone(), seed)?;
    while solver.rounds() < stop.max_rounds {
        solver.round(net)?;
        if solver.is_converged(stop) {
            let last = *solver.log().last().expect("at least one round ran");
            return Ok(DistributedRun {
                model: solver.model(),
                rounds: solver.rounds(),
                consensus_error: last.consensus_error,
                objective: last.objective,
                net: net.stats(),
                log: solver.log().to_vec(),
            });
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: solver.rounds() as usize,
        residual: solver.relative_change(stop.window.min(63)).unwrap_or(f64::INFINITY),
        best: solver.model().slowness,
    })
}
