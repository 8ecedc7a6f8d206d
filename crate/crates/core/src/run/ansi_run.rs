use std::collections::BTreeMap;

use super::{median, relative_change, unsupported, Command, Image, Params, StepOutcome};
use crate::ansi::{eikonal_map, stack_maps, synthesize_noise, travel_time_surface, PhaseVelocityMap, SegmentSpectra};
use crate::error::{invalid, Result};
use crate::io::GridManifest;
use crate::model::{GridGeometry, Station, VelocityGrid};
use crate::netsim::{Network, PayloadKind};
use crate::scenario::{AnsiSpec, Pipeline, Scenario};

/// Ambient-noise imaging, one virtual source per round. The source's map
/// goes to its cluster head, which keeps a running stack; after the last
/// source the heads send their stacks to the sink.
pub(crate) struct AnsiRun {
    spec: AnsiSpec,
    extent: [f64; 2],
    background: f64,
    stations: Vec<Station>,
    spectra: SegmentSpectra,
    sources: Vec<u32>,
    geometry: GridGeometry,
    sink: u32,
    /// Running stack per cluster id.
    stacks: BTreeMap<u32, PhaseVelocityMap>,
    done: usize,
    image: PhaseVelocityMap,
}

impl AnsiRun {
    pub fn new(scenario: &Scenario, stations: &[Station]) -> Result<Self> {
        let spec = scenario.ansi.clone();
        let background = scenario.grid.background_velocity;
        let noise = crate::ansi::NoiseSpec { velocity: background, sampling_rate: scenario.sampling_rate, ..spec.noise.clone() };
        let field = synthesize_noise(stations, &noise, scenario.seed)?;
        let spectra = SegmentSpectra::new(&field, spec.n_segments, spec.max_lag)?;
        let sources = spec.virtual_sources.clone().unwrap_or_else(|| stations.iter().map(|s| s.id).collect());
        let geometry = map_geometry(scenario.grid.extent, spec.resolution.unwrap_or(scenario.grid.spacing), background)?;
        let sink = stations.iter().map(|s| s.id).min().ok_or_else(|| invalid("no stations"))?;
        Ok(Self {
            image: PhaseVelocityMap::empty(geometry, spec.band),
            spec,
            extent: scenario.grid.extent,
            background,
            stations: stations.to_vec(),
            spectra,
            sources,
            geometry,
            sink,
            stacks: BTreeMap::new(),
            done: 0,
        })
    }

    fn restart(&mut self) {
        self.stacks.clear();
        self.done = 0;
        self.image = PhaseVelocityMap::empty(self.geometry, self.spec.band);
    }

    fn station(&self, id: u32) -> Result<&Station> {
        self.stations.iter().find(|s| s.id == id).ok_or_else(|| invalid(format!("unknown station {id}")))
    }

    fn head_of(&self, cluster: u32) -> u32 {
        self.stations.iter().filter(|s| s.cluster_id == cluster).map(|s| s.id).min().expect("cluster has members")
    }

    fn send_map(&self, net: &mut Network, src: u32, dst: u32, tag: u64, map: PhaseVelocityMap) -> Result<PhaseVelocityMap> {
        if src == dst {
            return Ok(map);
        }
        let n = map.geometry.len();
        let payload: Vec<f64> = map.velocity.iter().copied().chain(map.hits.iter().map(|&h| h as f64)).collect();
        let got = net.relay(src, dst, PayloadKind::Aggregate, tag, payload, self.spec.max_retries)?;
        Ok(PhaseVelocityMap {
            velocity: got[..n].to_vec(),
            hits: got[n..].iter().map(|&h| h as u32).collect(),
            ..map
        })
    }

    fn current_stack(&self) -> Result<PhaseVelocityMap> {
        if self.stacks.is_empty() {
            return Ok(PhaseVelocityMap::empty(self.geometry, self.spec.band));
        }
        stack_maps(&self.stacks.values().cloned().collect::<Vec<_>>())
    }

    pub fn step(&mut self, net: &mut Network, tag: u64) -> Result<StepOutcome> {
        let Some(&v) = self.sources.get(self.done) else {
            return Ok(StepOutcome { objective: 0.0, consensus_error: 0.0, done: true });
        };
        let gather = self.spectra.gather(v)?;
        let surface = travel_time_surface(v, &gather, self.spec.band);
        let map = eikonal_map(&surface, &self.stations, &self.geometry, self.spec.mode, self.spec.band, &self.spec.map)?;
        let cluster = self.station(v)?.cluster_id;
        let head = self.head_of(cluster);
        let map = self.send_map(net, v, head, tag, map)?;
        let stacked = match self.stacks.remove(&cluster) {
            Some(s) => stack_maps(&[s, map])?,
            None => map,
        };
        self.stacks.insert(cluster, stacked);
        self.done += 1;
        let finished = self.done == self.sources.len();
        let previous = std::mem::replace(&mut self.image, PhaseVelocityMap::empty(self.geometry, self.spec.band));
        self.image = if finished {
            let mut at_sink = Vec::with_capacity(self.stacks.len());
            for (&c, s) in &self.stacks {
                at_sink.push(self.send_map(net, self.head_of(c), self.sink, tag, s.clone())?);
            }
            stack_maps(&at_sink)?
        } else {
            self.current_stack()?
        };
        let objective = relative_change(&previous.velocity, &self.image.velocity);
        Ok(StepOutcome { objective, consensus_error: 0.0, done: finished })
    }

    pub fn apply(&mut self, cmd: &Command) -> Result<()> {
        match cmd {
            Command::SetBand { band } => self.spec.band = *band,
            Command::SetResolution { spacing } => {
                self.spec.resolution = Some(*spacing);
                self.geometry = map_geometry(self.extent, *spacing, self.background)?;
            }
            Command::RestartSolve => {}
            other => return Err(unsupported(Pipeline::Ansi, other)),
        }
        self.restart();
        Ok(())
    }

    pub fn image(&self) -> Image {
        let manifest = GridManifest::new("phase_velocity", &self.geometry)
            .with("units", "m/s".into())
            .with("band", serde_json::json!(self.spec.band))
            .with("sources_done", self.done.into());
        Image {
            stem: "phase_velocity",
            manifest,
            values: self.image.velocity.clone(),
            hits: Some(self.image.hits.iter().map(|&h| h as f64).collect()),
        }
    }

    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        let errs: Vec<f64> = self.image.covered().map(|(_, v)| (v - self.background).abs() / self.background).collect();
        m.insert("covered_cells".into(), errs.len() as f64);
        if !errs.is_empty() {
            m.insert("median_relative_error".into(), median(errs));
        }
        m.insert("sources_done".into(), self.done as f64);
        m.insert("sources".into(), self.sources.len() as f64);
        m
    }

    pub fn params(&self) -> Params {
        Params { band: Some(self.spec.band), resolution: self.geometry.spacing, ..Default::default() }
    }
}

fn map_geometry(extent: [f64; 2], spacing: f64, background: f64) -> Result<GridGeometry> {
    Ok(*VelocityGrid::uniform(extent, spacing, background)?.geometry())
}
