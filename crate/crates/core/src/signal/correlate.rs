use std::cmp::Ordering;

use rustfft::num_complex::Complex64;

use super::spectral::{fft_len, ifft, real_fft};
use super::CorrelationFunction;
use crate::error::{invalid, Result};
use crate::forward::Trace;

/// `C_ab(t) = Σ_τ a(τ) b(t + τ)` for lags in `[-max_lag, max_lag]`.
///
/// Time is absolute: the start-time offset between the traces is rounded to
/// whole samples. If `b(t) = a(t - d)` the peak sits at `+d`. The pair is
/// evaluated in a canonical order so that swapping the arguments reverses
/// the lag axis bit for bit.
pub fn cross_correlate(a: &Trace, b: &Trace, max_lag: f64) -> Result<CorrelationFunction> {
    if (a.sampling_rate - b.sampling_rate).abs() > 1e-9 * a.sampling_rate {
        return Err(invalid(format!(
            "sampling rates differ: {} vs {} Hz",
            a.sampling_rate, b.sampling_rate
        )));
    }
    if !(max_lag >= 0.0) {
        return Err(invalid(format!("max_lag must be non-negative, got {max_lag}")));
    }
    if a.is_empty() || b.is_empty() {
        return Err(invalid("cannot correlate an empty trace"));
    }
    let fs = a.sampling_rate;
    let k = (max_lag * fs).round() as usize;
    let lags: Vec<f64> = (0..=2 * k).map(|i| (i as f64 - k as f64) / fs).collect();
    let values = if canonical(a, b) != Ordering::Greater {
        raw(a, b, k)
    } else {
        let mut v = raw(b, a, k);
        v.reverse();
        v
    };
    Ok(CorrelationFunction { station_a: a.station_id, station_b: b.station_id, sampling_rate: fs, lags, values })
}

/// Correlation divided by `sqrt(E_a E_b)`; zero when either trace is silent.
pub fn cross_correlate_normalized(a: &Trace, b: &Trace, max_lag: f64) -> Result<CorrelationFunction> {
    let mut c = cross_correlate(a, b, max_lag)?;
    let norm = (a.energy() * b.energy()).sqrt();
    for v in &mut c.values {
        *v = if norm > 0.0 { *v / norm } else { 0.0 };
    }
    Ok(c)
}

fn canonical(a: &Trace, b: &Trace) -> Ordering {
    a.station_id
        .cmp(&b.station_id)
        .then(a.start_time.total_cmp(&b.start_time))
        .then(a.samples.len().cmp(&b.samples.len()))
        .then_with(|| {
            a.samples
                .iter()
                .zip(&b.samples)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Values at lag samples `-k..=k` for absolute time alignment.
fn raw(a: &Trace, b: &Trace, k: usize) -> Vec<f64> {
    let (na, nb) = (a.len(), b.len());
    // b sample j sits at a-sample index j + offset
    let offset = ((b.start_time - a.start_time) * a.sampling_rate).round() as i64;
    // r[m] = Σ_i a[i] b[i + m], for m in -(na-1)..=(nb-1)
    let n = fft_len(na + nb - 1);
    let fa = real_fft(&a.samples, n);
    let fb = real_fft(&b.samples, n);
    let prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    let r = ifft(&prod);
    let at = |m: i64| -> f64 {
        if m > nb as i64 - 1 || m < -(na as i64 - 1) {
            0.0
        } else {
            r[m.rem_euclid(n as i64) as usize].re
        }
    };
    (-(k as i64)..=k as i64).map(|lag| at(lag - offset)).collect()
}

/// Averages the positive and negative lag branches; the result is even.
pub fn fold(c: &CorrelationFunction) -> CorrelationFunction {
    let n = c.values.len();
    let values = (0..n).map(|i| 0.5 * (c.values[i] + c.values[n - 1 - i])).collect();
    CorrelationFunction { values, ..c.clone() }
}
