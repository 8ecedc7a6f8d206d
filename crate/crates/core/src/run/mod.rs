//! Round-by-round execution of a scenario. The batch runner and the control
//! service drive the same [`Run`], so a run without commands produces the
//! same bytes either way.

mod ansi_run;
mod mmi_run;
mod tomo_run;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::consensus::{write_convergence_csv, Algorithm, ConvergenceRow};
use crate::error::{invalid, Error, Result};
use crate::io::{encode_f32, write_grid, GridManifest};
use crate::model::{Point, Station};
use crate::netsim::{build_topology, EdgeCounter, Network, RunStats};
use crate::scenario::{check_band, check_resolution, GridSpec, Pipeline, Scenario};
use crate::signal::{write_picks_csv, Pick, PickMethod, PickParams};

use ansi_run::AnsiRun;
use mmi_run::MmiRun;
use tomo_run::TomoRun;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Running,
    Paused,
    Finished,
    Failed,
}

/// Operator command, applied between rounds in submission order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Command {
    SetLambda {
        value: f64,
    },
    SetBand {
        band: [f64; 2],
    },
    SetPicker {
        method: PickMethod,
        #[serde(default)]
        params: Option<PickParams>,
    },
    SetAlgorithm {
        algorithm: Algorithm,
    },
    SetResolution {
        spacing: f64,
    },
    InjectEvent {
        x: f64,
        y: f64,
        #[serde(default)]
        origin_time: Option<f64>,
        #[serde(default)]
        magnitude_scale: Option<f64>,
    },
    FailLink {
        a: u32,
        b: u32,
    },
    RestoreLink {
        a: u32,
        b: u32,
    },
    Pause,
    Resume,
    RestartSolve,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SetLambda { .. } => "SET_LAMBDA",
            Command::SetBand { .. } => "SET_BAND",
            Command::SetPicker { .. } => "SET_PICKER",
            Command::SetAlgorithm { .. } => "SET_ALGORITHM",
            Command::SetResolution { .. } => "SET_RESOLUTION",
            Command::InjectEvent { .. } => "INJECT_EVENT",
            Command::FailLink { .. } => "FAIL_LINK",
            Command::RestoreLink { .. } => "RESTORE_LINK",
            Command::Pause => "PAUSE",
            Command::Resume => "RESUME",
            Command::RestartSolve => "RESTART_SOLVE",
        }
    }
}

/// Static facts needed to accept or reject a command without touching the
/// running simulation.
#[derive(Clone, Debug)]
pub struct CommandCheck {
    pipeline: Pipeline,
    sampling_rate: f64,
    grid: GridSpec,
    links: BTreeSet<(u32, u32)>,
}

impl CommandCheck {
    pub fn check(&self, cmd: &Command) -> Result<()> {
        let only = |allowed: &[Pipeline]| {
            if allowed.contains(&self.pipeline) {
                Ok(())
            } else {
                Err(invalid(format!("{} is not supported by the {} pipeline", cmd.name(), self.pipeline.as_str())))
            }
        };
        match cmd {
            Command::SetLambda { value } => {
                only(&[Pipeline::TomoTt])?;
                if !(*value >= 0.0 && value.is_finite()) {
                    return Err(invalid(format!("lambda must be a non-negative number, got {value}")));
                }
            }
            Command::SetBand { band } => {
                check_band(*band, self.sampling_rate).map_err(invalid)?;
            }
            Command::SetPicker { params, .. } => {
                only(&[Pipeline::TomoTt])?;
                if let Some(p) = params {
                    if !(p.sta > 0.0 && p.lta > p.sta && p.threshold > 0.0 && p.mer_window > 0.0 && p.water_level >= 0.0) {
                        return Err(invalid("picker windows must be positive with lta > sta"));
                    }
                }
            }
            Command::SetAlgorithm { .. } => only(&[Pipeline::TomoTt])?,
            Command::SetResolution { spacing } => {
                only(&[Pipeline::TomoTt, Pipeline::Ansi])?;
                check_resolution(&self.grid, *spacing).map_err(invalid)?;
            }
            Command::InjectEvent { x, y, origin_time, magnitude_scale } => {
                only(&[Pipeline::TomoTt, Pipeline::Mmi])?;
                let [ex, ey] = self.grid.extent;
                if !(*x > 0.0 && *x < ex && *y > 0.0 && *y < ey) {
                    return Err(invalid(format!("event ({x}, {y}) is not strictly inside the grid")));
                }
                if origin_time.is_some_and(|t| !(t.is_finite() && t >= 0.0)) {
                    return Err(invalid("origin_time must be non-negative"));
                }
                if magnitude_scale.is_some_and(|m| !(m > 0.0 && m.is_finite())) {
                    return Err(invalid("magnitude_scale must be positive"));
                }
            }
            Command::FailLink { a, b } | Command::RestoreLink { a, b } => {
                if !self.links.contains(&(*a.min(b), *a.max(b))) {
                    return Err(invalid(format!("no link {a}-{b}")));
                }
            }
            Command::Pause | Command::Resume | Command::RestartSolve => {}
        }
        Ok(())
    }
}

/// Current values of the steerable parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Params {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub picker: Option<PickMethod>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<Algorithm>,
    pub resolution: f64,
    pub failed_links: Vec<(u32, u32)>,
    pub paused: bool,
}

/// Grid image with its sidecar manifest and an optional parallel hit grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub stem: &'static str,
    pub manifest: GridManifest,
    pub values: Vec<f64>,
    pub hits: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub manifest: GridManifest,
    /// Base64 of little-endian float32 values.
    pub data: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hits: Option<String>,
}

impl Image {
    pub fn payload(&self) -> ImagePayload {
        let b64 = |v: &[f64]| base64::engine::general_purpose::STANDARD.encode(encode_f32(v));
        ImagePayload { manifest: self.manifest.clone(), data: b64(&self.values), hits: self.hits.as_deref().map(b64) }
    }
}

impl ImagePayload {
    pub fn decode(&self) -> Result<Vec<f32>> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&self.data)
            .map_err(|e| invalid(format!("image payload is not base64: {e}")))?;
        crate::io::decode_f32(&bytes)
    }
}

/// Immutable view of a run between rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub run_id: String,
    pub seq: u64,
    pub sim_time: f64,
    pub pipeline: Pipeline,
    pub round: u64,
    pub status: RunStatus,
    pub image: ImagePayload,
    /// Tail of the convergence log since the last restart.
    pub convergence: Vec<ConvergenceRow>,
    pub stats: RunStats,
    pub params: Params,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Rows of the convergence tail carried by a snapshot.
pub const SNAPSHOT_TAIL: usize = 50;

pub(crate) struct StepOutcome {
    pub objective: f64,
    pub consensus_error: f64,
    pub done: bool,
}

pub(crate) enum Stage {
    Tomo(Box<TomoRun>),
    Mmi(Box<MmiRun>),
    Ansi(Box<AnsiRun>),
}

impl Stage {
    fn step(&mut self, net: &mut Network, tag: u64) -> Result<StepOutcome> {
        match self {
            Stage::Tomo(r) => r.step(net),
            Stage::Mmi(r) => r.step(net, tag),
            Stage::Ansi(r) => r.step(net, tag),
        }
    }

    fn apply(&mut self, cmd: &Command) -> Result<()> {
        match self {
            Stage::Tomo(r) => r.apply(cmd),
            Stage::Mmi(r) => r.apply(cmd),
            Stage::Ansi(r) => r.apply(cmd),
        }
    }

    fn image(&self) -> Image {
        match self {
            Stage::Tomo(r) => r.image(),
            Stage::Mmi(r) => r.image(),
            Stage::Ansi(r) => r.image(),
        }
    }

    fn metrics(&self) -> BTreeMap<String, f64> {
        match self {
            Stage::Tomo(r) => r.metrics(),
            Stage::Mmi(r) => r.metrics(),
            Stage::Ansi(r) => r.metrics(),
        }
    }

    fn params(&self) -> Params {
        match self {
            Stage::Tomo(r) => r.params(),
            Stage::Mmi(r) => r.params(),
            Stage::Ansi(r) => r.params(),
        }
    }

    fn picks(&self) -> Vec<Pick> {
        match self {
            Stage::Tomo(r) => r.picks(),
            Stage::Mmi(r) => r.picks(),
            Stage::Ansi(_) => Vec::new(),
        }
    }

    fn write_extra(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        match self {
            Stage::Tomo(r) => r.write_extra(dir),
            _ => Ok(Vec::new()),
        }
    }
}

pub struct Run {
    scenario: Scenario,
    stations: Vec<Station>,
    net: Network,
    stage: Stage,
    status: RunStatus,
    paused: bool,
    round: u64,
    log: Vec<ConvergenceRow>,
    segment_start: usize,
    queue: VecDeque<Command>,
    check: CommandCheck,
    message: Option<String>,
}

impl Run {
    /// Builds the network and runs every preparation step (synthesis,
    /// picking, location, assembly) so the first round can start.
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let stations = scenario.stations()?;
        let topology = build_topology(&stations, scenario.network.comm_range)?.with_drop_prob(scenario.network.drop_prob)?;
        if topology.is_disconnected() {
            return Err(crate::scenario::config_error(
                "network.comm_range",
                format!("{} m leaves the station graph disconnected", scenario.network.comm_range),
            ));
        }
        let links = topology.edges().iter().map(|e| (e.a.min(e.b), e.a.max(e.b))).collect();
        let mut net = Network::new(topology, scenario.seed);
        if scenario.network.trace {
            net = net.with_trace();
        }
        let stage = match scenario.pipeline {
            Pipeline::TomoTt => Stage::Tomo(Box::new(TomoRun::new(&scenario, &stations)?)),
            Pipeline::Mmi => Stage::Mmi(Box::new(MmiRun::new(&scenario, &stations)?)),
            Pipeline::Ansi => Stage::Ansi(Box::new(AnsiRun::new(&scenario, &stations)?)),
        };
        let check = CommandCheck {
            pipeline: scenario.pipeline,
            sampling_rate: scenario.sampling_rate,
            grid: scenario.grid.clone(),
            links,
        };
        let paused = scenario.control.start_paused;
        Ok(Self {
            scenario,
            stations,
            net,
            stage,
            status: if paused { RunStatus::Paused } else { RunStatus::Running },
            paused,
            round: 0,
            log: Vec::new(),
            segment_start: 0,
            queue: VecDeque::new(),
            check,
            message: None,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn status(&self) -> RunStatus {
        self.status
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn log(&self) -> &[ConvergenceRow] {
        &self.log
    }

    /// Message of the last failure or rejected application, if any.
    pub fn message(&self) -> Option<&str> {
        self.message.as_deref()
    }

    pub fn command_check(&self) -> CommandCheck {
        self.check.clone()
    }

    /// Validates and queues a command; it takes effect at the next round
    /// boundary.
    pub fn submit(&mut self, cmd: Command) -> Result<()> {
        self.check.check(&cmd)?;
        self.queue.push_back(cmd);
        Ok(())
    }

    /// Applies queued commands in order.
    pub fn apply_pending(&mut self) {
        while let Some(cmd) = self.queue.pop_front() {
            if let Err(e) = self.apply(&cmd) {
                self.message = Some(format!("{} failed: {e}", cmd.name()));
            }
        }
    }

    fn apply(&mut self, cmd: &Command) -> Result<()> {
        match cmd {
            Command::Pause => {
                self.paused = true;
                if self.status == RunStatus::Running {
                    self.status = RunStatus::Paused;
                }
            }
            Command::Resume => {
                self.paused = false;
                if self.status == RunStatus::Paused {
                    self.status = RunStatus::Running;
                }
            }
            Command::FailLink { a, b } => self.net.fail_link(*a, *b)?,
            Command::RestoreLink { a, b } => self.net.restore_link(*a, *b)?,
            other => {
                self.stage.apply(other)?;
                self.segment_start = self.log.len();
                self.message = None;
                self.status = if self.paused { RunStatus::Paused } else { RunStatus::Running };
            }
        }
        Ok(())
    }

    /// Applies pending commands, then runs one round unless paused or done.
    /// Returns whether a round ran.
    pub fn step(&mut self) -> bool {
        self.apply_pending();
        if self.status != RunStatus::Running {
            return false;
        }
        self.round += 1;
        match self.stage.step(&mut self.net, self.round) {
            Ok(out) => {
                self.log.push(ConvergenceRow {
                    round: self.round,
                    sim_time: self.net.time(),
                    objective: out.objective,
                    consensus_error: out.consensus_error,
                    bytes_total: self.net.stats().total_bytes,
                });
                if out.done {
                    self.status = RunStatus::Finished;
                }
            }
            Err(e) => {
                self.status = RunStatus::Failed;
                self.message = Some(e.to_string());
            }
        }
        true
    }

    /// Steps until the run finishes or fails.
    pub fn run_to_end(&mut self) -> RunStatus {
        if self.status == RunStatus::Paused {
            self.queue.push_back(Command::Resume);
        }
        while self.step() {}
        self.status
    }

    pub fn image(&self) -> Image {
        self.stage.image()
    }

    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = self.stage.metrics();
        m.insert("rounds".into(), self.round as f64);
        m
    }

    pub fn params(&self) -> Params {
        let mut p = self.stage.params();
        p.failed_links = self.net.failed_links();
        p.paused = self.paused;
        p
    }

    pub fn picks(&self) -> Vec<Pick> {
        self.stage.picks()
    }

    pub fn snapshot(&self, run_id: &str, seq: u64) -> RunSnapshot {
        let segment = &self.log[self.segment_start..];
        let tail = segment[segment.len().saturating_sub(SNAPSHOT_TAIL)..].to_vec();
        RunSnapshot {
            run_id: run_id.to_string(),
            seq,
            sim_time: self.net.time(),
            pipeline: self.scenario.pipeline,
            round: self.round,
            status: self.status,
            image: self.image().payload(),
            convergence: tail,
            stats: self.net.stats(),
            params: self.params(),
            metrics: self.metrics(),
            message: self.message.clone(),
        }
    }

    /// Writes every artifact into `dir` and returns the file names written,
    /// manifest excluded.
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        let mut files: Vec<PathBuf> = Vec::new();
        let resolved = dir.join("scenario.resolved.json");
        std::fs::write(&resolved, self.scenario.to_json())?;
        files.push(resolved);
        let img = self.image();
        files.extend(write_grid(dir, img.stem, &img.manifest, &img.values)?);
        if let Some(h) = &img.hits {
            let m = GridManifest { quantity: "hits".into(), ..img.manifest.clone() };
            files.extend(write_grid(dir, &format!("{}_hits", img.stem), &m, h)?);
        }
        let conv = dir.join("convergence.csv");
        write_convergence_csv(&conv, &self.log)?;
        files.push(conv);
        let picks = dir.join("picks.csv");
        write_picks_csv(&picks, &self.picks())?;
        files.push(picks);
        let stats = dir.join("netsim_stats.json");
        std::fs::write(&stats, serde_json::to_vec_pretty(&NetReport::of(&self.net))?)?;
        files.push(stats);
        if self.scenario.network.trace {
            let p = dir.join("netsim_trace.jsonl");
            self.net.write_trace(&p)?;
            files.push(p);
        }
        files.extend(self.stage.write_extra(dir)?);
        Ok(files
            .iter()
            .map(|p| p.file_name().expect("artifact has a file name").to_string_lossy().into_owned())
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub src: u32,
    pub dst: u32,
    #[serde(flatten)]
    pub counter: EdgeCounter,
}

/// Network counters and the per-edge ledger, as written to
/// `netsim_stats.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetReport {
    pub stats: RunStats,
    pub failed_links: Vec<(u32, u32)>,
    pub edges: Vec<EdgeReport>,
}

impl NetReport {
    pub fn of(net: &Network) -> Self {
        Self {
            stats: net.stats(),
            failed_links: net.failed_links(),
            edges: net.edge_ledger().iter().map(|(&(src, dst), &counter)| EdgeReport { src, dst, counter }).collect(),
        }
    }
}

/// Relative ℓ2 change between consecutive images; zero for two zero images.
pub(crate) fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    let d: f64 = old.iter().zip(new).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let n: f64 = new.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        d / n
    } else {
        d
    }
}

pub(crate) fn chebyshev_cells(g: &crate::model::GridGeometry, a: usize, b: Point) -> Option<usize> {
    let bi = g.cell_of(b)?;
    let (ax, ay) = g.cell_coords(a);
    let (bx, by) = g.cell_coords(bi);
    Some(ax.abs_diff(bx).max(ay.abs_diff(by)))
}

pub(crate) fn unsupported(pipeline: Pipeline, cmd: &Command) -> Error {
    invalid(format!("{} is not supported by the {} pipeline", cmd.name(), pipeline.as_str()))
}

pub(crate) fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
