use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::{median, unsupported, Command, Image, Params, StepOutcome};
use crate::consensus::{ConsensusProblem, DistributedSolver};
use crate::error::{Error, Result};
use crate::forward::{synthesize_trace, trace_ray, travel_time, SynthParams, Trace};
use crate::io::GridManifest;
use crate::model::{Point, SeismicEvent, Station, VelocityGrid};
use crate::netsim::Network;
use crate::scenario::{Pipeline, Scenario, TomoSpec, TravelTimes};
use crate::signal::{bandpass, pick_arrival, Pick};
use crate::tomo::{
    assemble_system, checkerboard_score, default_lambda, solve_centralized, EventPicks, Locator, TomoModel, TomoSystem,
};

/// Synthesize, pick, locate and assemble once; then one distributed solver
/// round per step.
pub(crate) struct TomoRun {
    spec: TomoSpec,
    seed: u64,
    extent: [f64; 2],
    synth: SynthParams,
    truth: VelocityGrid,
    base: VelocityGrid,
    stations: Vec<Station>,
    events: Vec<SeismicEvent>,
    records: Vec<Vec<Trace>>,
    located: Vec<EventPicks>,
    inversion: VelocityGrid,
    system: TomoSystem,
    oracle: Option<TomoModel>,
    solver: DistributedSolver,
}

impl TomoRun {
    pub fn new(scenario: &Scenario, stations: &[Station]) -> Result<Self> {
        let truth = scenario.true_grid()?;
        let base = scenario.base_grid()?;
        let spec = scenario.tomo.clone();
        let inversion = inversion_grid(scenario.grid.extent, &base, spec.resolution)?;
        let mut records = Vec::new();
        let events = scenario.events()?;
        let synth = synth_params(scenario, &spec);
        if spec.travel_times == TravelTimes::Picked {
            for e in &events {
                records.push(synthesize_event(e, stations, &truth, &synth, scenario.seed)?);
            }
        }
        let located = locate_all(&spec, stations, &truth, &base, &events, &records)?;
        let (system, oracle, solver) = build(&spec, &located, stations, &inversion, scenario.seed, None)?;
        Ok(Self {
            spec,
            seed: scenario.seed,
            extent: scenario.grid.extent,
            synth,
            truth,
            base,
            stations: stations.to_vec(),
            events,
            records,
            located,
            inversion,
            system,
            oracle,
            solver,
        })
    }

    fn relocate(&mut self) -> Result<()> {
        self.located = locate_all(&self.spec, &self.stations, &self.truth, &self.base, &self.events, &self.records)?;
        Ok(())
    }

    fn rebuild(&mut self, warm: Option<Vec<f64>>) -> Result<()> {
        let (system, oracle, solver) = build(&self.spec, &self.located, &self.stations, &self.inversion, self.seed, warm)?;
        self.system = system;
        self.oracle = oracle;
        self.solver = solver;
        Ok(())
    }

    fn add_event(&mut self, e: SeismicEvent) -> Result<()> {
        if self.spec.travel_times == TravelTimes::Picked {
            self.records.push(synthesize_event(&e, &self.stations, &self.truth, &self.synth, self.seed)?);
        }
        self.events.push(e);
        Ok(())
    }

    pub fn step(&mut self, net: &mut Network) -> Result<StepOutcome> {
        let row = self.solver.round(net)?;
        let done = self.solver.is_converged(&self.spec.stopping);
        if !done && self.solver.rounds() >= self.spec.stopping.max_rounds {
            return Err(Error::ConvergenceFailure {
                iterations: self.solver.rounds() as usize,
                residual: self.solver.relative_change(self.spec.stopping.window.min(63)).unwrap_or(f64::INFINITY),
                best: self.solver.mean_model(),
            });
        }
        Ok(StepOutcome { objective: row.objective, consensus_error: row.consensus_error, done })
    }

    pub fn apply(&mut self, cmd: &Command) -> Result<()> {
        let warm = || Some(self.solver.mean_model());
        match cmd {
            Command::SetLambda { value } => {
                self.solver.set_lambda(*value)?;
                self.spec.lambda = Some(*value);
                self.system.lambda = *value;
                self.oracle = solve_centralized(&self.system).ok();
            }
            Command::SetAlgorithm { algorithm } => {
                self.solver.set_algorithm(*algorithm)?;
                self.spec.consensus.algorithm = *algorithm;
            }
            Command::RestartSolve => self.solver.restart()?,
            Command::SetBand { band } => {
                let w = warm();
                self.spec.band = Some(*band);
                self.relocate()?;
                self.rebuild(w)?;
            }
            Command::SetPicker { method, params } => {
                let w = warm();
                self.spec.picker = *method;
                if let Some(p) = params {
                    self.spec.pick = p.clone();
                }
                self.relocate()?;
                self.rebuild(w)?;
            }
            Command::SetResolution { spacing } => {
                self.spec.resolution = Some(*spacing);
                self.inversion = inversion_grid(self.extent, &self.base, Some(*spacing))?;
                self.rebuild(None)?;
            }
            Command::InjectEvent { x, y, origin_time, magnitude_scale } => {
                let w = warm();
                let id = self.events.iter().map(|e| e.id + 1).max().unwrap_or(0);
                let e = SeismicEvent {
                    id,
                    hypocenter: Point::new(*x, *y),
                    origin_time: origin_time.unwrap_or(0.5),
                    magnitude_scale: magnitude_scale.unwrap_or(1.0),
                };
                self.add_event(e)?;
                self.relocate()?;
                self.rebuild(w)?;
            }
            other => return Err(unsupported(Pipeline::TomoTt, other)),
        }
        Ok(())
    }

    fn truth_on_inversion(&self) -> TomoModel {
        let g = self.inversion.geometry();
        let slowness = (0..g.len())
            .map(|i| {
                let c = self.truth.cell_of(g.cell_center(i)).expect("inversion cell inside the true grid");
                1.0 / self.truth.velocity_at(c)
            })
            .collect();
        TomoModel { geometry: Some(*g), slowness, clamped: 0 }
    }

    pub fn image(&self) -> Image {
        let model = self.solver.model();
        let hits: Vec<f64> = self.system.matrix.column_hits().iter().map(|&h| h as f64).collect();
        let manifest = GridManifest::new("velocity", self.inversion.geometry())
            .with("units", "m/s".into())
            .with("algorithm", self.solver.algorithm().as_str().into())
            .with("lambda", self.system.lambda.into())
            .with("solver_round", self.solver.rounds().into());
        Image { stem: "velocity_model", manifest, values: model.velocity(), hits: Some(hits) }
    }

    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        let model = self.solver.model();
        let hits = self.system.matrix.column_hits();
        if let Ok(score) = checkerboard_score(&model, &self.truth_on_inversion(), &hits) {
            m.insert("checkerboard_score".into(), score);
        }
        if let Some(o) = &self.oracle {
            let mean = self.solver.mean_model();
            let d: f64 = mean.iter().zip(&o.slowness).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let n: f64 = o.slowness.iter().map(|v| v * v).sum::<f64>().sqrt();
            m.insert("relative_error_vs_centralized".into(), d / n);
        }
        m.insert("consensus_error".into(), self.solver.consensus_error());
        m.insert("solver_rounds".into(), self.solver.rounds() as f64);
        m.insert("lambda".into(), self.system.lambda);
        m.insert("clamped_cells".into(), model.clamped as f64);
        m.insert("rays".into(), self.system.rows() as f64);
        m.insert("events_located".into(), self.located.len() as f64);
        if let Some(last) = self.solver.log().last() {
            m.insert("objective".into(), last.objective);
        }
        if self.spec.travel_times == TravelTimes::Picked {
            let errs: Vec<f64> = self
                .located
                .iter()
                .filter_map(|ep| self.events.iter().find(|e| e.id == ep.event.id).map(|e| e.hypocenter.distance(ep.event.hypocenter)))
                .collect();
            m.insert("median_location_error_m".into(), median(errs));
        }
        m
    }

    pub fn params(&self) -> Params {
        Params {
            lambda: Some(self.system.lambda),
            band: self.spec.band,
            picker: Some(self.spec.picker),
            algorithm: Some(self.solver.algorithm()),
            resolution: self.inversion.geometry().spacing,
            ..Default::default()
        }
    }

    pub fn picks(&self) -> Vec<Pick> {
        self.located.iter().flat_map(|ep| ep.picks.iter().cloned()).collect()
    }

    pub fn write_extra(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        #[derive(Serialize)]
        struct Located<'a> {
            truth: &'a SeismicEvent,
            located: Option<&'a SeismicEvent>,
            picks: usize,
        }
        let rows: Vec<Located> = self
            .events
            .iter()
            .map(|e| {
                let ep = self.located.iter().find(|ep| ep.event.id == e.id);
                Located { truth: e, located: ep.map(|ep| &ep.event), picks: ep.map_or(0, |ep| ep.picks.len()) }
            })
            .collect();
        let p = dir.join("events.json");
        std::fs::write(&p, serde_json::to_vec_pretty(&rows)?)?;
        Ok(vec![p])
    }
}

fn inversion_grid(extent: [f64; 2], base: &VelocityGrid, resolution: Option<f64>) -> Result<VelocityGrid> {
    match resolution {
        Some(r) => VelocityGrid::uniform(extent, r, base.background()),
        None => Ok(base.clone()),
    }
}

fn synth_params(scenario: &Scenario, spec: &TomoSpec) -> SynthParams {
    SynthParams {
        sampling_rate: scenario.sampling_rate,
        wavelet_freq: spec.wavelet_freq,
        snr: scenario.noise.snr,
        duration: spec.duration,
        start_time: 0.0,
    }
}

fn synthesize_event(
    e: &SeismicEvent,
    stations: &[Station],
    truth: &VelocityGrid,
    p: &SynthParams,
    seed: u64,
) -> Result<Vec<Trace>> {
    stations.par_iter().map(|s| synthesize_trace(e, s, truth, p, seed)).collect()
}

fn pick_all(spec: &TomoSpec, records: &[Trace]) -> Result<Vec<Pick>> {
    let picks = records
        .par_iter()
        .map(|tr| {
            let tr = match spec.band {
                Some([lo, hi]) => bandpass(tr, lo, hi, 4)?,
                None => tr.clone(),
            };
            pick_arrival(&tr, spec.picker, &spec.pick)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(picks.into_iter().flatten().collect())
}

/// Picks and locates every event with the current picker and band. Exact
/// mode uses ray times through the true model at the true hypocenters.
fn locate_all(
    spec: &TomoSpec,
    stations: &[Station],
    truth: &VelocityGrid,
    base: &VelocityGrid,
    events: &[SeismicEvent],
    records: &[Vec<Trace>],
) -> Result<Vec<EventPicks>> {
    let located: Vec<EventPicks> = match spec.travel_times {
        TravelTimes::Exact => events
            .iter()
            .map(|e| {
                let picks = stations
                    .iter()
                    .map(|s| {
                        let ray = trace_ray(e.hypocenter, s.position, truth)?;
                        Ok(Pick {
                            station_id: s.id,
                            arrival_time: e.origin_time + travel_time(&ray, truth),
                            method: spec.picker,
                            quality: 1.0,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(EventPicks { event: *e, picks })
            })
            .collect::<Result<_>>()?,
        TravelTimes::Picked => {
            let locator = Locator::new(stations, base, spec.search_spacing)?;
            let mut out = Vec::new();
            for (e, rec) in events.iter().zip(records) {
                let picks = pick_all(spec, rec)?;
                if picks.len() < 3 {
                    continue;
                }
                let (hypocenter, origin_time) = locator.locate(&picks)?;
                out.push(EventPicks { event: SeismicEvent { hypocenter, origin_time, ..*e }, picks });
            }
            out
        }
    };
    if located.is_empty() {
        return Err(Error::InsufficientData("no event has enough picks to be located".into()));
    }
    Ok(located)
}

/// Assembles the system on `inversion` and starts a solver, warm from `warm`
/// slowness when its length matches.
fn build(
    spec: &TomoSpec,
    located: &[EventPicks],
    stations: &[Station],
    inversion: &VelocityGrid,
    seed: u64,
    warm: Option<Vec<f64>>,
) -> Result<(TomoSystem, Option<TomoModel>, DistributedSolver)> {
    let mut system = assemble_system(located, stations, inversion, Some(0.0))?;
    system.lambda = spec.lambda.unwrap_or_else(|| spec.lambda_scale * default_lambda(&system.matrix));
    let ids: Vec<u32> = stations.iter().map(|s| s.id).collect();
    let problem = ConsensusProblem::by_station(&system, &ids)?;
    let cfg = spec.consensus.clone();
    let solver = match warm.filter(|w| w.len() == system.cells()) {
        Some(w) => DistributedSolver::with_warm_start(problem, cfg, seed, &w)?,
        None => DistributedSolver::new(problem, cfg, seed)?,
    };
    let oracle = solve_centralized(&system).ok();
    Ok((system, oracle, solver))
}
