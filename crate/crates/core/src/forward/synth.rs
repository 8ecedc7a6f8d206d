use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ray::trace_ray;
use super::{travel_time, Trace};
use crate::error::{invalid, Result};
use crate::model::{SeismicEvent, Station, VelocityGrid};

/// Ricker wavelet with peak frequency `f`, centered at `t = 0`, peak value 1.
pub fn ricker(t: f64, f: f64) -> f64 {
    let a = (std::f64::consts::PI * f * t).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub sampling_rate: f64,
    pub wavelet_freq: f64,
    /// Peak amplitude over noise standard deviation; `None` is noise-free.
    pub snr: Option<f64>,
    pub duration: f64,
    pub start_time: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { sampling_rate: 500.0, wavelet_freq: 25.0, snr: None, duration: 2.0, start_time: 0.0 }
    }
}

/// Ricker arrival at `origin_time + travel_time(event -> station)` plus white
/// Gaussian noise. The noise stream depends only on `(seed, event, station)`.
pub fn synthesize_trace(
    event: &SeismicEvent,
    station: &Station,
    grid: &VelocityGrid,
    params: &SynthParams,
    seed: u64,
) -> Result<Trace> {
    let nyquist = params.sampling_rate / 2.0;
    if !(params.wavelet_freq > 0.0 && params.wavelet_freq < nyquist) {
        return Err(invalid(format!(
            "wavelet frequency {} Hz must be below Nyquist {nyquist} Hz",
            params.wavelet_freq
        )));
    }
    if let Some(snr) = params.snr {
        if !(snr > 0.0) {
            return Err(invalid(format!("snr must be positive, got {snr}")));
        }
    }
    if !(params.duration > 0.0) {
        return Err(invalid("duration must be positive"));
    }
    let ray = trace_ray(event.hypocenter, station.position, grid)?;
    let arrival = event.origin_time + travel_time(&ray, grid);
    let n = (params.duration * params.sampling_rate).round() as usize;
    let dt = 1.0 / params.sampling_rate;
    let mut samples: Vec<f64> = (0..n)
        .map(|i| event.magnitude_scale * ricker(params.start_time + i as f64 * dt - arrival, params.wavelet_freq))
        .collect();
    if let Some(snr) = params.snr.filter(|s| s.is_finite()) {
        let sigma = event.magnitude_scale / snr;
        let normal = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
        let mut rng = crate::rng::stream(seed, &[1, event.id as u64, station.id as u64]);
        for s in &mut samples {
            *s += normal.sample(&mut rng);
        }
    }
    Trace::new(station.id, params.start_time, params.sampling_rate, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Point;
    use rand::{Rng, SeedableRng};

    fn setup() -> (VelocityGrid, SeismicEvent) {
        let g = VelocityGrid::uniform([2000.0, 2000.0], 100.0, 2000.0).unwrap();
        let ev = SeismicEvent { id: 0, hypocenter: Point::new(500.0, 1000.0), origin_time: 0.0, magnitude_scale: 1.0 };
        (g, ev)
    }

    fn argmax(x: &[f64]) -> usize {
        x.iter().enumerate().fold(0, |b, (i, v)| if *v > x[b] { i } else { b })
    }

    #[test]
    fn noise_free_peak_at_travel_time() {
        let (g, ev) = setup();
        let st = Station { id: 1, position: Point::new(1500.0, 1000.0), cluster_id: 0 };
        let tr = synthesize_trace(&ev, &st, &g, &SynthParams::default(), 1).unwrap();
        assert_eq!(argmax(&tr.samples), 250);
    }

    #[test]
    fn equidistant_stations_match() {
        let (g, ev) = setup();
        let a = Station { id: 1, position: Point::new(500.0, 1600.0), cluster_id: 0 };
        let b = Station { id: 2, position: Point::new(500.0, 400.0), cluster_id: 0 };
        let p = SynthParams::default();
        let (ta, tb) = (synthesize_trace(&ev, &a, &g, &p, 3).unwrap(), synthesize_trace(&ev, &b, &g, &p, 3).unwrap());
        assert_eq!(ta.samples, tb.samples);
    }

    #[test]
    fn same_seed_same_bytes() {
        let (g, ev) = setup();
        let st = Station { id: 4, position: Point::new(0.0, 0.0), cluster_id: 0 };
        let p = SynthParams { snr: Some(5.0), ..Default::default() };
        let a = synthesize_trace(&ev, &st, &g, &p, 9).unwrap();
        let b = synthesize_trace(&ev, &st, &g, &p, 9).unwrap();
        let c = synthesize_trace(&ev, &st, &g, &p, 10).unwrap();
        assert_eq!(crate::io::encode_f32(&a.samples), crate::io::encode_f32(&b.samples));
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn rejects_wavelet_above_nyquist() {
        let (g, ev) = setup();
        let st = Station { id: 4, position: Point::new(0.0, 0.0), cluster_id: 0 };
        let p = SynthParams { wavelet_freq: 250.0, ..Default::default() };
        assert!(synthesize_trace(&ev, &st, &g, &p, 0).is_err());
    }

    #[test]
    fn placement_within_one_sample() {
        let (g, _) = setup();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let p = SynthParams { duration: 3.0, ..Default::default() };
        for i in 0..100 {
            let ev = SeismicEvent {
                id: i,
                hypocenter: Point::new(rng.random_range(0.0..2000.0), rng.random_range(0.0..2000.0)),
                origin_time: rng.random_range(0.0..0.5),
                magnitude_scale: rng.random_range(0.5..2.0),
            };
            let st = Station { id: 0, position: Point::new(rng.random_range(0.0..2000.0), 0.0), cluster_id: 0 };
            let expected = ev.origin_time + ev.hypocenter.distance(st.position) / 2000.0;
            let tr = synthesize_trace(&ev, &st, &g, &p, 0).unwrap();
            let got = argmax(&tr.samples) as f64 / p.sampling_rate;
            assert!((got - expected).abs() <= 1.0 / p.sampling_rate, "{got} vs {expected}");
        }
    }
}
