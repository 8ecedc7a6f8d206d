use crate::error::{invalid, Result};
use crate::forward::Trace;

/// Second-order section `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn run(&self, x: &mut [f64]) {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let y = self.b[0] * *v + z1;
            z1 = self.b[1] * *v - self.a[0] * y + z2;
            z2 = self.b[2] * *v - self.a[1] * y;
            *v = y;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    LowPass,
    HighPass,
}

/// Digital Butterworth of even `order` via the bilinear transform with
/// frequency prewarping, as a cascade of `order / 2` biquads.
pub fn butterworth(kind: Kind, order: usize, cutoff: f64, fs: f64) -> Vec<Biquad> {
    let k = (std::f64::consts::PI * cutoff / fs).tan();
    (1..=order / 2)
        .map(|j| {
            let zeta2 = 2.0 * (std::f64::consts::PI * (2 * j - 1) as f64 / (2 * order) as f64).sin();
            let a0 = 1.0 + zeta2 * k + k * k;
            let a1 = (2.0 * k * k - 2.0) / a0;
            let a2 = (1.0 - zeta2 * k + k * k) / a0;
            let b = match kind {
                Kind::LowPass => [k * k / a0, 2.0 * k * k / a0, k * k / a0],
                Kind::HighPass => [1.0 / a0, -2.0 / a0, 1.0 / a0],
            };
            Biquad { b, a: [a1, a2] }
        })
        .collect()
}

/// Squared magnitude of the one-pass analog-prototype response at `f`
/// after prewarping: `1 / (1 + (tan(pi f / fs) / tan(pi fc / fs))^(±2N))`.
pub fn butterworth_gain2(kind: Kind, order: usize, cutoff: f64, fs: f64, f: f64) -> f64 {
    let r = (std::f64::consts::PI * f / fs).tan() / (std::f64::consts::PI * cutoff / fs).tan();
    let e = 2 * order as i32;
    match kind {
        Kind::LowPass => 1.0 / (1.0 + r.powi(e)),
        Kind::HighPass => 1.0 / (1.0 + r.powi(-e)),
    }
}

/// Zero-phase Butterworth band-pass: a high-pass and a low-pass section,
/// each of the given order, run forward then backward over an odd-reflected
/// padding of the trace.
pub fn bandpass(trace: &Trace, f_lo: f64, f_hi: f64, order: usize) -> Result<Trace> {
    let nyq = trace.sampling_rate / 2.0;
    if !(f_lo > 0.0 && f_lo < f_hi && f_hi < nyq) {
        return Err(invalid(format!(
            "band {f_lo}-{f_hi} Hz must satisfy 0 < lo < hi < {nyq} Hz"
        )));
    }
    if ![2, 4, 8].contains(&order) {
        return Err(invalid(format!("filter order must be 2, 4 or 8, got {order}")));
    }
    let mut sections = butterworth(Kind::HighPass, order, f_lo, trace.sampling_rate);
    sections.extend(butterworth(Kind::LowPass, order, f_hi, trace.sampling_rate));
    let pad = ((3.0 * trace.sampling_rate / f_lo).ceil() as usize).min(trace.len().saturating_sub(1));
    Ok(trace.with_samples(filtfilt(&sections, &trace.samples, pad)))
}

pub fn filtfilt(sections: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    ext[pad..pad + n].to_vec()
}
