//! Migration-based microseismic imaging: time-reversed propagation of
//! receiver records, imaging conditions and the cluster-level stacking
//! split used for in-network execution.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::{fd_propagate, ricker, FdConfig, FdSolver, PointSource, SynthParams, Trace, Wavefield};
use crate::model::{GridGeometry, Point, SeismicEvent, Station, VelocityGrid};
use crate::signal::detect_event_window;

/// Short-window energy ratio that marks an event in a receiver trace.
pub const WINDOW_THRESHOLD: f64 = 4.0;
/// Event spans closer than this are merged, seconds.
pub const WINDOW_MIN_GAP: f64 = 0.1;
/// Padding kept on either side of each detected span, seconds.
pub const WINDOW_PAD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ImagingMode {
    /// `I_r = S · R` with a modeled source wavefield `S`.
    Interferometric,
    /// `I_r = R`; receiver wavefields are correlated with each other by the
    /// downstream stacking.
    Sourceless,
}

/// How a cluster collapses its time axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Collapse {
    /// `Σ_t Σ_k I_k(x, t)`
    Sum,
    /// `Σ_t (Σ_k I_k(x, t))²`
    Energy,
}

/// Image over a grid, with a time axis (`dt` set, one frame per step) or
/// collapsed to a single frame.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageVolume {
    pub geometry: GridGeometry,
    pub dt: Option<f64>,
    pub frames: Vec<Vec<f64>>,
}

impl ImageVolume {
    pub fn spatial(geometry: GridGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(invalid(format!("image has {} values, grid has {} cells", values.len(), geometry.len())));
        }
        Ok(Self { geometry, dt: None, frames: vec![values] })
    }

    pub fn from_wavefield(w: &Wavefield) -> Self {
        Self { geometry: w.geometry, dt: Some(w.dt), frames: w.frames.clone() }
    }

    pub fn has_time_axis(&self) -> bool {
        self.dt.is_some()
    }

    pub fn nt(&self) -> usize {
        self.frames.len()
    }

    /// First frame; the whole image once collapsed.
    pub fn values(&self) -> &[f64] {
        &self.frames[0]
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.geometry == other.geometry && self.dt == other.dt && self.frames.len() == other.frames.len()
    }
}

/// Time-collapsed image of one cluster.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterImage {
    pub cluster_id: u32,
    pub geometry: GridGeometry,
    pub values: Vec<f64>,
}

/// Zeroes everything outside the detected event spans (padded). A trace
/// without any span is an error unless it is identically zero.
pub fn window_trace(trace: &Trace) -> Result<Trace> {
    if trace.samples.iter().all(|&v| v == 0.0) {
        return Ok(trace.clone());
    }
    let spans = detect_event_window(trace, WINDOW_THRESHOLD, WINDOW_MIN_GAP)?;
    if spans.is_empty() {
        return Err(Error::InsufficientData(format!("no event window in trace of station {}", trace.station_id)));
    }
    let samples = trace
        .samples
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let t = trace.time_at(i);
            if spans.iter().any(|&(a, b)| t >= a - WINDOW_PAD && t <= b + WINDOW_PAD) {
                v
            } else {
                0.0
            }
        })
        .collect();
    Ok(trace.with_samples(samples))
}

/// Receiver wavefield: the windowed trace, divided by its RMS, is played
/// backwards from its last sample and injected at the station. Frame `k`
/// corresponds to recording time `end_time − (k + 1)·dt`.
pub fn reverse_extrapolate(
    trace: &Trace,
    station: &Station,
    grid: &VelocityGrid,
    dt: f64,
    nt: usize,
    cfg: &FdConfig,
) -> Result<Wavefield> {
    let windowed = window_trace(trace)?;
    let n = windowed.len().max(1) as f64;
    let rms = (windowed.energy() / n).sqrt();
    if rms == 0.0 {
        // still validates dt and the station position
        let solver = FdSolver::new(grid, dt, cfg)?;
        solver.sample(station.position)?;
        return Ok(Wavefield { geometry: *grid.geometry(), dt, frames: vec![vec![0.0; grid.len()]; nt] });
    }
    let end = windowed.end_time();
    let reversed: Vec<f64> = (0..=nt).map(|k| windowed.value_at(end - k as f64 * dt) / rms).collect();
    let signature = Trace::new(station.id, 0.0, 1.0 / dt, reversed)?;
    fd_propagate(grid, &PointSource { position: station.position, signature }, dt, nt, cfg)
}

/// Per-receiver image; `source` is required for [`ImagingMode::Interferometric`].
pub fn image_per_receiver(receiver: &Wavefield, mode: ImagingMode, source: Option<&Wavefield>) -> Result<ImageVolume> {
    match mode {
        ImagingMode::Sourceless => Ok(ImageVolume::from_wavefield(receiver)),
        ImagingMode::Interferometric => {
            let s = source.ok_or_else(|| invalid("interferometric imaging needs a source wavefield"))?;
            if s.geometry != receiver.geometry || s.nt() != receiver.nt() {
                return Err(invalid("source and receiver wavefields differ in shape"));
            }
            let frames = s
                .frames
                .iter()
                .zip(&receiver.frames)
                .map(|(a, b)| a.iter().zip(b).map(|(a, b)| a * b).collect())
                .collect();
            Ok(ImageVolume { geometry: receiver.geometry, dt: Some(receiver.dt), frames })
        }
    }
}

fn check_shapes(images: &[ImageVolume]) -> Result<&ImageVolume> {
    let first = images.first().ok_or_else(|| invalid("no images to combine"))?;
    if images.iter().any(|im| !im.same_shape(first)) {
        return Err(invalid("images differ in shape"));
    }
    Ok(first)
}

/// Pointwise sum over receivers.
pub fn image_sum(images: &[ImageVolume]) -> Result<ImageVolume> {
    let first = check_shapes(images)?;
    let mut out = first.clone();
    for im in &images[1..] {
        for (o, f) in out.frames.iter_mut().zip(&im.frames) {
            for (a, b) in o.iter_mut().zip(f) {
                *a += b;
            }
        }
    }
    Ok(out)
}

/// Product over consecutive groups of `n` receivers of the within-group
/// sums.
pub fn image_hybrid(images: &[ImageVolume], n: usize) -> Result<ImageVolume> {
    check_shapes(images)?;
    if n == 0 || !images.len().is_multiple_of(n) {
        return Err(invalid(format!("group length {n} does not divide {} receivers", images.len())));
    }
    let mut groups = images.chunks(n).map(image_sum);
    let mut out = groups.next().expect("at least one group")?;
    for g in groups {
        let g = g?;
        for (o, f) in out.frames.iter_mut().zip(&g.frames) {
            for (a, b) in o.iter_mut().zip(f) {
                *a *= b;
            }
        }
    }
    Ok(out)
}

/// Sums a cluster's receiver images and collapses the time axis.
pub fn cluster_temporal_stack(cluster_id: u32, images: &[ImageVolume], collapse: Collapse) -> Result<ClusterImage> {
    let stacked = image_sum(images)?;
    let mut values = vec![0.0; stacked.geometry.len()];
    for frame in &stacked.frames {
        for (v, f) in values.iter_mut().zip(frame) {
            *v += match collapse {
                Collapse::Sum => *f,
                Collapse::Energy => f * f,
            };
        }
    }
    Ok(ClusterImage { cluster_id, geometry: stacked.geometry, values })
}

/// Pointwise product of cluster images, in ascending cluster order.
pub fn cross_cluster_product(clusters: &[ClusterImage]) -> Result<ImageVolume> {
    let mut sorted: Vec<&ClusterImage> = clusters.iter().collect();
    sorted.sort_by_key(|c| c.cluster_id);
    let first = sorted.first().ok_or_else(|| invalid("no cluster images"))?;
    if sorted.iter().any(|c| c.geometry != first.geometry) {
        return Err(invalid("cluster images differ in grid"));
    }
    let mut values = first.values.clone();
    for c in &sorted[1..] {
        for (v, x) in values.iter_mut().zip(&c.values) {
            *v *= x;
        }
    }
    ImageVolume::spatial(first.geometry, values)
}

/// Cell center of the largest value of a collapsed image; the lowest index
/// wins ties.
pub fn locate_max(image: &ImageVolume) -> Result<(usize, Point)> {
    let values = image.frames.first().filter(|v| !v.is_empty()).ok_or_else(|| invalid("empty image"))?;
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if v > &values[best] {
            best = i;
        }
    }
    Ok((best, image.geometry.cell_center(best)))
}

/// Point source with a Ricker signature peaking at the origin time,
/// recorded at every station by finite differences on `grid`. Gaussian
/// noise is scaled to each record's peak over `params.snr`.
pub fn synthesize_fd_records(
    event: &SeismicEvent,
    stations: &[Station],
    grid: &VelocityGrid,
    params: &SynthParams,
    cfg: &FdConfig,
    seed: u64,
) -> Result<Vec<Trace>> {
    use rand_distr::{Distribution, Normal};
    let dt = 1.0 / params.sampling_rate;
    let n = (params.duration * params.sampling_rate).round() as usize;
    if n == 0 {
        return Err(invalid("duration must cover at least one sample"));
    }
    if params.start_time != 0.0 {
        return Err(invalid("finite-difference records start at time zero"));
    }
    let sig: Vec<f64> =
        (0..=n).map(|k| event.magnitude_scale * ricker(k as f64 * dt - event.origin_time, params.wavelet_freq)).collect();
    let mut solver = FdSolver::new(grid, dt, cfg)?;
    solver.add_source(PointSource { position: event.hypocenter, signature: Trace::new(0, 0.0, params.sampling_rate, sig)? })?;
    let mut records = vec![Vec::with_capacity(n); stations.len()];
    for s in stations {
        solver.sample(s.position)?;
    }
    for _ in 0..n {
        for (r, s) in records.iter_mut().zip(stations) {
            r.push(solver.sample(s.position)?);
        }
        solver.step();
    }
    stations
        .iter()
        .zip(records)
        .map(|(s, mut r)| {
            if let Some(snr) = params.snr.filter(|v| v.is_finite()) {
                if !(snr > 0.0) {
                    return Err(invalid(format!("snr must be positive, got {snr}")));
                }
                let peak = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if peak > 0.0 {
                    let normal = Normal::new(0.0, peak / snr).map_err(|e| invalid(e.to_string()))?;
                    let mut rng = crate::rng::stream(seed, &[2, event.id as u64, s.id as u64]);
                    for v in &mut r {
                        *v += normal.sample(&mut rng);
                    }
                }
            }
            Trace::new(s.id, 0.0, params.sampling_rate, r)
        })
        .collect()
}
