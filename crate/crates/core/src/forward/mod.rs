//! Forward modeling: straight rays, synthetic arrivals and 2D acoustic
//! finite differences.

mod fd;
mod ray;
mod synth;

pub use fd::{fd_propagate, FdConfig, FdSolver, PointSource, Wavefield};
pub use ray::{trace_ray, travel_time, travel_time_with, RayPath};
pub use synth::{ricker, synthesize_trace, SynthParams};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniformly sampled time series recorded at one station.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub station_id: u32,
    pub start_time: f64,
    pub sampling_rate: f64,
    pub samples: Vec<f64>,
}

impl Trace {
    pub fn new(station_id: u32, start_time: f64, sampling_rate: f64, samples: Vec<f64>) -> Result<Self> {
        if !(sampling_rate > 0.0 && sampling_rate.is_finite()) {
            return Err(invalid(format!("sampling rate must be positive, got {sampling_rate}")));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(invalid("trace contains non-finite samples"));
        }
        Ok(Self { station_id, start_time, sampling_rate, samples })
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sampling_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time_at(&self, i: usize) -> f64 {
        self.start_time + i as f64 / self.sampling_rate
    }

    pub fn end_time(&self) -> f64 {
        self.time_at(self.len().saturating_sub(1))
    }

    /// Nearest sample index for time `t`, clamped to the trace.
    pub fn index_at(&self, t: f64) -> usize {
        let i = ((t - self.start_time) * self.sampling_rate).round();
        (i.max(0.0) as usize).min(self.len().saturating_sub(1))
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self { samples, ..self.clone() }
    }

    /// Linear interpolation at time `t`, zero outside the recorded span.
    pub fn value_at(&self, t: f64) -> f64 {
        let u = (t - self.start_time) * self.sampling_rate;
        if u < 0.0 || self.is_empty() {
            return 0.0;
        }
        let i = u.floor() as usize;
        if i + 1 >= self.len() {
            return if i + 1 == self.len() && u == i as f64 { self.samples[i] } else { 0.0 };
        }
        let f = u - i as f64;
        self.samples[i] * (1.0 - f) + self.samples[i + 1] * f
    }
}
