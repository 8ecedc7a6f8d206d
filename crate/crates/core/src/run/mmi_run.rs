use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{chebyshev_cells, relative_change, unsupported, Command, Image, Params, StepOutcome};
use crate::error::{invalid, Result};
use crate::forward::{fd_propagate, ricker, PointSource, SynthParams, Trace, Wavefield};
use crate::io::GridManifest;
use crate::mmi::{
    cluster_temporal_stack, cross_cluster_product, image_per_receiver, image_sum, locate_max, reverse_extrapolate,
    synthesize_fd_records, ClusterImage, ImageVolume, ImagingMode,
};
use crate::model::{Point, SeismicEvent, Station, VelocityGrid};
use crate::netsim::{Network, PayloadKind};
use crate::scenario::{ImagingCondition, MmiSpec, Pipeline, Scenario};
use crate::signal::{bandpass, pick_arrival, Pick, PickMethod, PickParams};

/// Origin time of injected events without one, seconds.
const INJECT_ORIGIN: f64 = 0.15;

/// Migration imaging, one cluster per round. Members back-propagate their
/// records and relay the images to the cluster head, which stacks them and
/// relays the result to the sink.
pub(crate) struct MmiRun {
    spec: MmiSpec,
    seed: u64,
    grid: VelocityGrid,
    synth: SynthParams,
    stations: Vec<Station>,
    /// Station indices per cluster, ascending cluster id.
    clusters: Vec<(u32, Vec<usize>)>,
    sink: u32,
    events: Vec<SeismicEvent>,
    records: Vec<Trace>,
    done: Vec<ClusterImage>,
    /// Running time-domain sum at the sink for the sum condition.
    running: Option<ImageVolume>,
    image: Vec<f64>,
}

impl MmiRun {
    pub fn new(scenario: &Scenario, stations: &[Station]) -> Result<Self> {
        let grid = scenario.true_grid()?;
        let spec = scenario.mmi.clone();
        let synth = SynthParams {
            sampling_rate: scenario.sampling_rate,
            wavelet_freq: spec.wavelet_freq,
            snr: scenario.noise.snr,
            duration: spec.duration,
            start_time: 0.0,
        };
        let mut by_cluster: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, s) in stations.iter().enumerate() {
            by_cluster.entry(s.cluster_id).or_default().push(i);
        }
        let sink = stations.iter().map(|s| s.id).min().ok_or_else(|| invalid("no stations"))?;
        let mut run = Self {
            image: vec![0.0; grid.len()],
            spec,
            seed: scenario.seed,
            grid,
            synth,
            stations: stations.to_vec(),
            clusters: by_cluster.into_iter().collect(),
            sink,
            events: Vec::new(),
            records: Vec::new(),
            done: Vec::new(),
            running: None,
        };
        for e in scenario.events()? {
            run.add_event(e)?;
        }
        Ok(run)
    }

    /// Adds an event's records to the superposed recordings.
    fn add_event(&mut self, e: SeismicEvent) -> Result<()> {
        let recs = synthesize_fd_records(&e, &self.stations, &self.grid, &self.synth, &self.spec.fd, self.seed)?;
        if self.records.is_empty() {
            self.records = recs;
        } else {
            for (r, n) in self.records.iter_mut().zip(recs) {
                for (a, b) in r.samples.iter_mut().zip(n.samples) {
                    *a += b;
                }
            }
        }
        self.events.push(e);
        Ok(())
    }

    fn restart(&mut self) {
        self.done.clear();
        self.running = None;
        self.image = vec![0.0; self.grid.len()];
    }

    fn dt(&self) -> f64 {
        1.0 / self.synth.sampling_rate
    }

    fn nt(&self) -> usize {
        self.records.first().map_or(0, Trace::len)
    }

    /// Forward wavefield of the known sources, re-indexed onto the receiver
    /// wavefields' reversed time axis.
    fn source_wavefield(&self) -> Result<Wavefield> {
        let (dt, nt) = (self.dt(), self.nt());
        let mut frames = vec![vec![0.0; self.grid.len()]; nt];
        for e in &self.events {
            let sig = (0..=nt).map(|k| e.magnitude_scale * ricker(k as f64 * dt - e.origin_time, self.spec.wavelet_freq)).collect();
            let source = PointSource { position: e.hypocenter, signature: Trace::new(0, 0.0, 1.0 / dt, sig)? };
            let f = fd_propagate(&self.grid, &source, dt, nt, &self.spec.fd)?;
            for (k, frame) in frames.iter_mut().enumerate() {
                if let Some(src) = nt.checked_sub(k + 3).and_then(|j| f.frames.get(j)) {
                    for (a, b) in frame.iter_mut().zip(src) {
                        *a += b;
                    }
                }
            }
        }
        Ok(Wavefield { geometry: *self.grid.geometry(), dt, frames })
    }

    fn receiver_image(&self, i: usize, source: Option<&Wavefield>) -> Result<ImageVolume> {
        let tr = match self.spec.band {
            Some([lo, hi]) => bandpass(&self.records[i], lo, hi, 4)?,
            None => self.records[i].clone(),
        };
        let w = reverse_extrapolate(&tr, &self.stations[i], &self.grid, self.dt(), self.nt(), &self.spec.fd)?;
        image_per_receiver(&w, self.spec.mode, source)
    }

    fn unflatten(&self, v: Vec<f64>, template: &ImageVolume) -> ImageVolume {
        let n = template.geometry.len();
        ImageVolume { geometry: template.geometry, dt: template.dt, frames: v.chunks(n).map(<[f64]>::to_vec).collect() }
    }

    fn move_image(&self, net: &mut Network, src: u32, dst: u32, tag: u64, im: ImageVolume) -> Result<ImageVolume> {
        if !self.spec.in_network || src == dst {
            return Ok(im);
        }
        let flat: Vec<f64> = im.frames.concat();
        let got = net.relay(src, dst, PayloadKind::Image, tag, flat, self.spec.max_retries)?;
        Ok(self.unflatten(got, &im))
    }

    pub fn step(&mut self, net: &mut Network, tag: u64) -> Result<StepOutcome> {
        let k = self.done.len();
        let Some((cid, members)) = self.clusters.get(k).cloned() else {
            return Ok(StepOutcome { objective: 0.0, consensus_error: 0.0, done: true });
        };
        let source = match self.spec.mode {
            ImagingMode::Interferometric => Some(self.source_wavefield()?),
            ImagingMode::Sourceless => None,
        };
        let images = members.par_iter().map(|&i| self.receiver_image(i, source.as_ref())).collect::<Result<Vec<_>>>()?;
        let head = members.iter().map(|&i| self.stations[i].id).min().expect("cluster has members");
        let mut at_head = Vec::with_capacity(images.len());
        for (&i, im) in members.iter().zip(images) {
            at_head.push(self.move_image(net, self.stations[i].id, head, tag, im)?);
        }
        let previous = std::mem::take(&mut self.image);
        match self.spec.condition {
            ImagingCondition::Hybrid => {
                let c = cluster_temporal_stack(cid, &at_head, self.spec.collapse)?;
                let moved = self.move_image(net, head, self.sink, tag, ImageVolume::spatial(c.geometry, c.values)?)?;
                self.done.push(ClusterImage { cluster_id: cid, geometry: moved.geometry, values: moved.frames.concat() });
                self.image = cross_cluster_product(&self.done)?.frames.concat();
            }
            ImagingCondition::Sum => {
                let summed = image_sum(&at_head)?;
                let moved = self.move_image(net, head, self.sink, tag, summed)?;
                let running = match self.running.take() {
                    Some(r) => image_sum(&[r, moved])?,
                    None => moved,
                };
                self.image = cluster_temporal_stack(0, std::slice::from_ref(&running), self.spec.collapse)?.values;
                self.running = Some(running);
                self.done.push(ClusterImage { cluster_id: cid, geometry: *self.grid.geometry(), values: Vec::new() });
            }
        }
        let objective = relative_change(&previous, &self.image);
        Ok(StepOutcome { objective, consensus_error: 0.0, done: self.done.len() == self.clusters.len() })
    }

    pub fn apply(&mut self, cmd: &Command) -> Result<()> {
        match cmd {
            Command::SetBand { band } => self.spec.band = Some(*band),
            Command::InjectEvent { x, y, origin_time, magnitude_scale } => {
                let id = self.events.iter().map(|e| e.id + 1).max().unwrap_or(0);
                self.add_event(SeismicEvent {
                    id,
                    hypocenter: Point::new(*x, *y),
                    origin_time: origin_time.unwrap_or(INJECT_ORIGIN),
                    magnitude_scale: magnitude_scale.unwrap_or(1.0),
                })?;
            }
            Command::RestartSolve => {}
            other => return Err(unsupported(Pipeline::Mmi, other)),
        }
        self.restart();
        Ok(())
    }

    pub fn image(&self) -> Image {
        let manifest = GridManifest::new("mmi_image", self.grid.geometry())
            .with("condition", format!("{:?}", self.spec.condition).to_uppercase().into())
            .with("clusters_done", self.done.len().into());
        Image { stem: "mmi_image", manifest, values: self.image.clone(), hits: None }
    }

    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("clusters_done".into(), self.done.len() as f64);
        m.insert("clusters".into(), self.clusters.len() as f64);
        let g = self.grid.geometry();
        if self.image.iter().any(|&v| v != 0.0) {
            if let Ok((idx, p)) = locate_max(&ImageVolume { geometry: *g, dt: None, frames: vec![self.image.clone()] }) {
                let nearest = self.events.iter().min_by(|a, b| a.hypocenter.distance(p).total_cmp(&b.hypocenter.distance(p)));
                if let Some(e) = nearest {
                    m.insert("location_error_m".into(), e.hypocenter.distance(p));
                    if let Some(c) = chebyshev_cells(g, idx, e.hypocenter) {
                        m.insert("location_error_cells".into(), c as f64);
                    }
                }
                m.insert("located_x".into(), p.x);
                m.insert("located_y".into(), p.y);
            }
        }
        m
    }

    pub fn params(&self) -> Params {
        Params { band: self.spec.band, resolution: self.grid.geometry().spacing, ..Default::default() }
    }

    pub fn picks(&self) -> Vec<Pick> {
        let p = PickParams::default();
        self.records.iter().filter_map(|t| pick_arrival(t, PickMethod::StaLta, &p).ok().flatten()).collect()
    }
}
