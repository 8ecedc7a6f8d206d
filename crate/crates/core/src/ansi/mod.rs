//! Ambient-noise imaging: synthetic diffuse noise, virtual-source
//! correlation gathers, surface-wave travel times and eikonal or Helmholtz
//! phase-velocity maps.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::Trace;
use crate::model::{GridGeometry, Point, Station};
use crate::signal::spectral::envelope;
use crate::signal::{bandpass, fold, CorrelationFunction};

/// Far-field ring of uncorrelated band-limited sources.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Distance of the sources from the array centroid, meters. `None`
    /// picks five apertures.
    pub ring_radius: Option<f64>,
    pub n_sources: usize,
    /// Source band, Hz.
    pub band: [f64; 2],
    /// Medium velocity, m/s.
    pub velocity: f64,
    pub sampling_rate: f64,
    /// Record length, seconds.
    pub duration: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { ring_radius: None, n_sources: 720, band: [3.0, 10.0], velocity: 2000.0, sampling_rate: 50.0, duration: 1920.0 }
    }
}

/// One noise record per station, all with the same start and length.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseField {
    pub spec: NoiseSpec,
    pub stations: Vec<Station>,
    pub traces: Vec<Trace>,
}

impl NoiseField {
    pub fn trace_of(&self, station: u32) -> Option<&Trace> {
        self.traces.iter().find(|t| t.station_id == station)
    }
}

fn aperture(stations: &[Station]) -> f64 {
    let mut a: f64 = 0.0;
    for (i, s) in stations.iter().enumerate() {
        for t in &stations[i + 1..] {
            a = a.max(s.position.distance(t.position));
        }
    }
    a
}

fn centroid(stations: &[Station]) -> Point {
    let n = stations.len().max(1) as f64;
    Point::new(
        stations.iter().map(|s| s.position.x).sum::<f64>() / n,
        stations.iter().map(|s| s.position.y).sum::<f64>() / n,
    )
}

/// Noise from `n_sources` sources evenly spaced on a ring around the
/// array. Each source emits an independent band-limited Gaussian signal
/// that reaches every station after `distance / velocity`.
pub fn synthesize_noise(stations: &[Station], spec: &NoiseSpec, seed: u64) -> Result<NoiseField> {
    if stations.is_empty() {
        return Err(invalid("no stations"));
    }
    let ap = aperture(stations);
    let radius = spec.ring_radius.unwrap_or(5.0 * ap.max(1.0));
    if radius < 3.0 * ap {
        return Err(invalid(format!("ring radius {radius} m is under three apertures ({ap} m)")));
    }
    if spec.n_sources == 0 {
        return Err(invalid("n_sources must be at least 1"));
    }
    let c = centroid(stations);
    let sources: Vec<Point> = (0..spec.n_sources)
        .map(|k| {
            let th = 2.0 * PI * k as f64 / spec.n_sources as f64;
            Point::new(c.x + radius * th.cos(), c.y + radius * th.sin())
        })
        .collect();
    synthesize_noise_from(stations, &sources, spec, seed)
}

/// As [`synthesize_noise`] with explicit source positions.
pub fn synthesize_noise_from(stations: &[Station], sources: &[Point], spec: &NoiseSpec, seed: u64) -> Result<NoiseField> {
    let fs = spec.sampling_rate;
    let [lo, hi] = spec.band;
    if !(fs > 0.0 && lo > 0.0 && lo < hi && hi < fs / 2.0) {
        return Err(invalid(format!("band {lo}-{hi} Hz must lie inside (0, {}) Hz", fs / 2.0)));
    }
    if !(spec.velocity > 0.0) {
        return Err(invalid("velocity must be positive"));
    }
    let n = (spec.duration * fs).round() as usize;
    if n < 4 {
        return Err(invalid("noise record is too short"));
    }
    let df = fs / n as f64;
    let k0 = (lo / df).ceil() as usize;
    let k1 = ((hi / df).floor() as usize).min(n / 2 - 1);
    if k1 < k0 {
        return Err(invalid("band contains no frequency bin"));
    }
    let taper_w = ((hi - lo) / 4.0).min(1.0);
    let shape: Vec<f64> = (k0..=k1)
        .map(|k| {
            let f = k as f64 * df;
            let edge = (f - lo).min(hi - f);
            if edge >= taper_w {
                1.0
            } else {
                0.5 - 0.5 * (PI * edge / taper_w).cos()
            }
        })
        .collect();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let spectra: Vec<Vec<Complex64>> = (0..sources.len())
        .map(|s| {
            let mut rng = crate::rng::stream(seed, &[0x616e73, s as u64]);
            shape.iter().map(|&a| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)) * a).collect()
        })
        .collect();
    let inverse = FftPlanner::new().plan_fft_inverse(n);
    let traces = stations
        .par_iter()
        .map(|st| {
            let mut x = vec![Complex64::new(0.0, 0.0); n];
            for (src, g) in sources.iter().zip(&spectra) {
                let delay = st.position.distance(*src) / spec.velocity;
                let w = -2.0 * PI * df * delay;
                let step = Complex64::from_polar(1.0, w);
                let mut ph = Complex64::from_polar(1.0, w * k0 as f64);
                for (j, gk) in g.iter().enumerate() {
                    x[k0 + j] += gk * ph;
                    ph *= step;
                }
            }
            for k in k0..=k1 {
                x[n - k] = x[k].conj();
            }
            inverse.process(&mut x);
            let scale = 1.0 / (n as f64 * sources.len().max(1) as f64).sqrt();
            Trace::new(st.id, 0.0, fs, x.iter().map(|v| v.re * scale).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NoiseField { spec: spec.clone(), stations: stations.to_vec(), traces })
}

/// Per-segment spectra of every record, so many gathers can share them.
pub struct SegmentSpectra {
    ids: Vec<u32>,
    spectra: Vec<Vec<Vec<Complex64>>>,
    energy: Vec<Vec<f64>>,
    nfft: usize,
    k: usize,
    fs: f64,
    inverse: Arc<dyn Fft<f64>>,
}

impl SegmentSpectra {
    pub fn new(field: &NoiseField, n_segments: usize, max_lag: f64) -> Result<Self> {
        if n_segments == 0 {
            return Err(invalid("n_segments must be at least 1"));
        }
        let first = field.traces.first().ok_or_else(|| invalid("empty noise field"))?;
        let fs = first.sampling_rate;
        let k = (max_lag * fs).round() as usize;
        let seg = first.len() / n_segments;
        if seg <= 2 * k + 1 {
            return Err(Error::InsufficientData(format!(
                "segments of {seg} samples cannot hold lags up to {max_lag} s"
            )));
        }
        let nfft = (seg + k + 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(nfft);
        let inverse = planner.plan_fft_inverse(nfft);
        let (spectra, energy) = field
            .traces
            .par_iter()
            .map(|t| {
                (0..n_segments)
                    .map(|s| {
                        let x = &t.samples[s * seg..(s + 1) * seg];
                        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                        buf.resize(nfft, Complex64::new(0.0, 0.0));
                        forward.process(&mut buf);
                        (buf, x.iter().map(|v| v * v).sum::<f64>())
                    })
                    .unzip::<_, _, Vec<_>, Vec<_>>()
            })
            .unzip();
        Ok(Self { ids: field.traces.iter().map(|t| t.station_id).collect(), spectra, energy, nfft, k, fs, inverse })
    }

    /// Mean over segments of the normalized correlation of `a` with `b`,
    /// folded. Lags span `[-max_lag, max_lag]`.
    pub fn pair(&self, a: u32, b: u32) -> Result<CorrelationFunction> {
        let ia = self.ids.iter().position(|&i| i == a).ok_or_else(|| Error::NotFound(format!("station {a}")))?;
        let ib = self.ids.iter().position(|&i| i == b).ok_or_else(|| Error::NotFound(format!("station {b}")))?;
        let nseg = self.spectra[ia].len();
        let mut acc = vec![Complex64::new(0.0, 0.0); self.nfft];
        for s in 0..nseg {
            let norm = (self.energy[ia][s] * self.energy[ib][s]).sqrt();
            if norm == 0.0 {
                continue;
            }
            let w = 1.0 / (norm * nseg as f64 * self.nfft as f64);
            for ((o, x), y) in acc.iter_mut().zip(&self.spectra[ia][s]).zip(&self.spectra[ib][s]) {
                *o += x.conj() * y * w;
            }
        }
        self.inverse.process(&mut acc);
        let n = self.nfft as i64;
        let k = self.k as i64;
        let values = (-k..=k).map(|lag| acc[lag.rem_euclid(n) as usize].re).collect();
        let lags = (-k..=k).map(|lag| lag as f64 / self.fs).collect();
        Ok(fold(&CorrelationFunction { station_a: a, station_b: b, sampling_rate: self.fs, lags, values }))
    }

    /// Gather around `center`, one folded correlation per station in field
    /// order, the center's autocorrelation included.
    pub fn gather(&self, center: u32) -> Result<Vec<CorrelationFunction>> {
        self.ids.iter().map(|&b| self.pair(center, b)).collect()
    }
}

/// Virtual-source gather around `center`: every record is cut into
/// `n_segments` equal segments, correlated segment by segment, normalized,
/// averaged and folded.
pub fn virtual_source_gather(
    center: &Station,
    field: &NoiseField,
    n_segments: usize,
    max_lag: f64,
) -> Result<Vec<CorrelationFunction>> {
    SegmentSpectra::new(field, n_segments, max_lag)?.gather(center.id)
}

/// Group travel time and amplitude: lag and height of the envelope maximum
/// of the band-passed correlation over non-negative lags, refined by a
/// parabola through the peak and its neighbors.
pub fn extract_travel_time(corr: &CorrelationFunction, band: [f64; 2]) -> Result<(f64, f64)> {
    let z = corr.zero_index();
    if corr.values.len() <= z + 2 {
        return Err(invalid("correlation has no positive-lag branch"));
    }
    let t = Trace::new(corr.station_b, corr.lags[0], corr.sampling_rate, corr.values.clone())?;
    let filtered = bandpass(&t, band[0], band[1], 4)?;
    let env = envelope(&filtered.samples);
    let pos = &env[z..];
    let mut k = 0;
    for (i, v) in pos.iter().enumerate() {
        if *v > pos[k] {
            k = i;
        }
    }
    if k == 0 || k + 1 == pos.len() || pos[k] <= 0.0 {
        return Err(Error::UnreliableMeasurement(format!(
            "envelope peak of pair {}-{} at the lag boundary",
            corr.station_a, corr.station_b
        )));
    }
    let (a, b, c) = (pos[k - 1], pos[k], pos[k + 1]);
    let den = a - 2.0 * b + c;
    let off = if den < 0.0 { (0.5 * (a - c) / den).clamp(-0.5, 0.5) } else { 0.0 };
    Ok(((k as f64 + off) / corr.sampling_rate, b))
}

/// Travel times and amplitudes from one virtual source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TravelTimeSurface {
    pub virtual_source: u32,
    /// `(station_id, τ seconds, amplitude)`; the source itself has `τ = 0`.
    pub samples: Vec<(u32, f64, f64)>,
    /// Angular frequency, rad/s.
    pub omega: f64,
}

/// Measures a surface from a gather; unreliable pairs are left out.
pub fn travel_time_surface(center: u32, gather: &[CorrelationFunction], band: [f64; 2]) -> TravelTimeSurface {
    let mut samples = vec![(center, 0.0, 0.0)];
    for c in gather.iter().filter(|c| c.station_b != center) {
        if let Ok((tau, a)) = extract_travel_time(c, band) {
            samples.push((c.station_b, tau, a));
        }
    }
    samples.sort_by_key(|s| s.0);
    TravelTimeSurface { virtual_source: center, samples, omega: PI * (band[0] + band[1]) }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MapMode {
    Eikonal,
    Helmholtz,
}

/// Interpolation and masking knobs for [`eikonal_map`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapParams {
    /// Measurements closer than this to the virtual source are dropped and
    /// cells within it plus one cell are masked, meters.
    pub min_distance: f64,
    /// Pairs farther apart than this are not used and cells beyond it are
    /// masked, meters. Unlimited when absent.
    pub max_distance: Option<f64>,
    pub neighbors: usize,
    pub power: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        Self { min_distance: 600.0, max_distance: None, neighbors: 6, power: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseVelocityMap {
    pub geometry: GridGeometry,
    /// m/s; zero where `hits` is zero.
    pub velocity: Vec<f64>,
    pub hits: Vec<u32>,
    pub band: [f64; 2],
}

impl PhaseVelocityMap {
    pub fn empty(geometry: GridGeometry, band: [f64; 2]) -> Self {
        Self { geometry, velocity: vec![0.0; geometry.len()], hits: vec![0; geometry.len()], band }
    }

    pub fn covered(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.velocity.iter().enumerate().filter(|(i, _)| self.hits[*i] > 0).map(|(i, &v)| (i, v))
    }
}

/// Inverse-distance weighting over the `k` nearest of `pts`; an exact hit
/// returns its value.
fn idw(p: Point, pts: &[(Point, f64)], k: usize, power: f64) -> f64 {
    let mut d: Vec<(f64, f64)> = pts.iter().map(|(q, v)| (p.distance(*q), *v)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0));
    d.truncate(k.max(1));
    if d[0].0 <= 1e-9 {
        return d[0].1;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (dist, v) in d {
        let w = dist.powf(-power);
        num += w * v;
        den += w;
    }
    num / den
}

/// Phase velocity from the spatial derivatives of an interpolated
/// travel-time surface: `1/c² = |∇τ|²`, or `|∇τ|² − ∇²A / (A ω²)` in
/// Helmholtz mode. Travel times are interpolated onto cell centers inside
/// the stations' bounding box and differentiated with central differences;
/// cells whose stencil leaves the supported region get no hit.
pub fn eikonal_map(
    surface: &TravelTimeSurface,
    stations: &[Station],
    geometry: &GridGeometry,
    mode: MapMode,
    band: [f64; 2],
    params: &MapParams,
) -> Result<PhaseVelocityMap> {
    let pos = |id: u32| stations.iter().find(|s| s.id == id).map(|s| s.position);
    let src = pos(surface.virtual_source).ok_or_else(|| Error::NotFound(format!("station {}", surface.virtual_source)))?;
    let far = params.max_distance.unwrap_or(f64::INFINITY);
    let usable: Vec<(Point, f64, f64)> = surface
        .samples
        .iter()
        .filter_map(|&(id, t, a)| pos(id).map(|p| (p, t, a)))
        .filter(|(p, _, _)| p.distance(src) >= params.min_distance && p.distance(src) <= far)
        .collect();
    let mut map = PhaseVelocityMap::empty(*geometry, band);
    if usable.len() < 3 {
        return Ok(map);
    }
    let taus: Vec<(Point, f64)> = usable.iter().map(|&(p, t, _)| (p, t)).collect();
    let amps: Vec<(Point, f64)> = usable.iter().map(|&(p, _, a)| (p, a)).collect();
    let (x0, x1, y0, y1) = stations.iter().fold((f64::MAX, f64::MIN, f64::MAX, f64::MIN), |b, s| {
        (b.0.min(s.position.x), b.1.max(s.position.x), b.2.min(s.position.y), b.3.max(s.position.y))
    });
    let eps = 1e-9 * geometry.spacing;
    let h = geometry.spacing;
    let supported = |p: Point| {
        p.x >= x0 - eps && p.x <= x1 + eps && p.y >= y0 - eps && p.y <= y1 + eps
            && p.distance(src) >= params.min_distance + h
            && p.distance(src) <= far
    };
    let (nx, ny) = (geometry.nx, geometry.ny);
    let mut tau = vec![f64::NAN; geometry.len()];
    let mut amp = vec![f64::NAN; geometry.len()];
    for i in 0..geometry.len() {
        let p = geometry.cell_center(i);
        if supported(p) {
            tau[i] = idw(p, &taus, params.neighbors, params.power);
            if mode == MapMode::Helmholtz {
                amp[i] = idw(p, &amps, params.neighbors, params.power);
            }
        }
    }
    for iy in 1..ny.saturating_sub(1) {
        for ix in 1..nx.saturating_sub(1) {
            let i = iy * nx + ix;
            let st = [i, i - 1, i + 1, i - nx, i + nx];
            if st.iter().any(|&j| tau[j].is_nan()) {
                continue;
            }
            let gx = (tau[i + 1] - tau[i - 1]) / (2.0 * h);
            let gy = (tau[i + nx] - tau[i - nx]) / (2.0 * h);
            let mut s2 = gx * gx + gy * gy;
            if mode == MapMode::Helmholtz {
                if st.iter().any(|&j| !(amp[j] > 0.0)) {
                    continue;
                }
                let lap = (amp[i - 1] + amp[i + 1] + amp[i - nx] + amp[i + nx] - 4.0 * amp[i]) / (h * h);
                s2 -= lap / (amp[i] * surface.omega * surface.omega);
            }
            if s2 > 0.0 && s2.is_finite() {
                map.velocity[i] = 1.0 / s2.sqrt();
                map.hits[i] = 1;
            }
        }
    }
    Ok(map)
}

/// Hit-weighted mean slowness per cell, converted back to velocity.
pub fn stack_maps(maps: &[PhaseVelocityMap]) -> Result<PhaseVelocityMap> {
    let first = maps.first().ok_or_else(|| invalid("no maps to stack"))?;
    if maps.iter().any(|m| m.geometry != first.geometry || m.band != first.band) {
        return Err(invalid("maps differ in grid or band"));
    }
    let mut out = PhaseVelocityMap::empty(first.geometry, first.band);
    let mut slow = vec![0.0; first.geometry.len()];
    for m in maps {
        for (i, v) in m.covered() {
            slow[i] += m.hits[i] as f64 / v;
            out.hits[i] += m.hits[i];
        }
    }
    for (i, s) in slow.iter().enumerate() {
        if out.hits[i] > 0 {
            out.velocity[i] = out.hits[i] as f64 / s;
        }
    }
    Ok(out)
}
