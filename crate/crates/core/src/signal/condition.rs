use crate::error::{invalid, Result};
use crate::forward::Trace;

/// Fraction of the trace tapered at each end.
const TAPER_FRACTION: f64 = 0.05;

/// Detrend and taper.
///
/// The line is fitted on the untapered interior only, then a 5% cosine taper
/// is applied to each end. The residual mean left by the tapered ends is
/// removed with a bump that vanishes at both endpoints and on the interior,
/// so the output has zero mean and a second pass leaves the interior
/// unchanged.
pub fn condition(trace: &Trace) -> Result<Trace> {
    let n = trace.len();
    if n < 8 {
        return Err(invalid(format!("conditioning needs at least 8 samples, got {n}")));
    }
    let w = taper(n);
    let interior: Vec<usize> = (0..n).filter(|&i| w[i] == 1.0).collect();
    let (a, b) = fit_line(&trace.samples, &interior);
    let mut out: Vec<f64> = trace
        .samples
        .iter()
        .zip(&w)
        .enumerate()
        .map(|(i, (x, wi))| wi * (x - a - b * i as f64))
        .collect();
    let bump: Vec<f64> = w.iter().map(|wi| wi * (1.0 - wi)).collect();
    let bump_sum: f64 = bump.iter().sum();
    if bump_sum > 0.0 {
        let c = out.iter().sum::<f64>() / bump_sum;
        for (o, u) in out.iter_mut().zip(&bump) {
            *o -= c * u;
        }
    }
    Ok(trace.with_samples(out))
}

/// Conditioning followed by linear-interpolation resampling to `rate` Hz.
pub fn condition_resampled(trace: &Trace, rate: f64) -> Result<Trace> {
    condition(&resample(trace, rate)?)
}

/// Linear interpolation onto a new uniform time axis with the same start.
pub fn resample(trace: &Trace, rate: f64) -> Result<Trace> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(invalid(format!("resampling rate must be positive, got {rate}")));
    }
    if trace.len() < 2 {
        return Err(invalid("resampling needs at least 2 samples"));
    }
    let span = (trace.len() - 1) as f64 / trace.sampling_rate;
    let n = (span * rate + 1e-9).floor() as usize + 1;
    let samples = (0..n)
        .map(|i| {
            let u = i as f64 * trace.sampling_rate / rate;
            let j = (u.floor() as usize).min(trace.len() - 2);
            let f = u - j as f64;
            trace.samples[j] * (1.0 - f) + trace.samples[j + 1] * f
        })
        .collect();
    Trace::new(trace.station_id, trace.start_time, rate, samples)
}

/// Tukey window with cosine ramps over `TAPER_FRACTION` of each end.
fn taper(n: usize) -> Vec<f64> {
    let m = ((n as f64 * TAPER_FRACTION).round() as usize).max(1);
    (0..n)
        .map(|i| {
            let d = i.min(n - 1 - i);
            if d >= m {
                1.0
            } else {
                0.5 - 0.5 * (std::f64::consts::PI * d as f64 / m as f64).cos()
            }
        })
        .collect()
}

/// Least-squares `x[i] ≈ a + b i` over the given indices.
fn fit_line(x: &[f64], idx: &[usize]) -> (f64, f64) {
    let m = idx.len() as f64;
    let ti = idx.iter().map(|&i| i as f64).sum::<f64>() / m;
    let xm = idx.iter().map(|&i| x[i]).sum::<f64>() / m;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &i in idx {
        let dt = i as f64 - ti;
        sxy += dt * (x[i] - xm);
        sxx += dt * dt;
    }
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (xm - b * ti, b)
}
