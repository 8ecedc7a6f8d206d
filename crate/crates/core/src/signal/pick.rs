use serde::{Deserialize, Serialize};

use super::{Pick, PickMethod};
use crate::error::{invalid, Result};
use crate::forward::Trace;

/// Window lengths and thresholds for the three pickers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PickParams {
    /// Short STA window, seconds.
    pub sta: f64,
    /// Long LTA window, seconds. Trailing and includes the STA window.
    pub lta: f64,
    pub threshold: f64,
    /// MER pre/post energy window, seconds.
    pub mer_window: f64,
    /// Stabilizer added to energy denominators and variances, as a fraction
    /// of the trace's peak power.
    pub water_level: f64,
    /// AIC search span in absolute time; whole trace when absent.
    pub aic_window: Option<(f64, f64)>,
}

impl Default for PickParams {
    fn default() -> Self {
        Self { sta: 0.05, lta: 0.5, threshold: 4.0, mer_window: 0.01, water_level: 0.0075, aic_window: None }
    }
}

/// Picks the first arrival with the chosen characteristic function.
///
/// `Ok(None)` means STA/LTA never crossed the threshold. MER and AIC always
/// return a pick.
pub fn pick_arrival(trace: &Trace, method: PickMethod, params: &PickParams) -> Result<Option<Pick>> {
    let found = match method {
        PickMethod::StaLta => sta_lta(trace, params)?,
        PickMethod::Mer => Some(mer(trace, params)?),
        PickMethod::Aic => Some(aic(trace, params)?),
    };
    Ok(found.map(|(k, quality)| Pick {
        station_id: trace.station_id,
        arrival_time: trace.time_at(k),
        method,
        quality,
    }))
}

fn samples_for(trace: &Trace, seconds: f64, what: &str) -> Result<usize> {
    let n = (seconds * trace.sampling_rate).round();
    if !(n >= 1.0) {
        return Err(invalid(format!("{what} window of {seconds} s is shorter than one sample")));
    }
    let n = n as usize;
    if n >= trace.len() {
        return Err(invalid(format!("{what} window of {n} samples not shorter than trace ({})", trace.len())));
    }
    Ok(n)
}

fn cumsum(x: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut c = vec![0.0];
    let mut acc = 0.0;
    for v in x {
        acc += v;
        c.push(acc);
    }
    c
}

fn floor_power(trace: &Trace, params: &PickParams) -> f64 {
    params.water_level * trace.samples.iter().fold(0.0f64, |m, v| m.max(v * v))
}

fn sta_lta(trace: &Trace, p: &PickParams) -> Result<Option<(usize, f64)>> {
    let ns = samples_for(trace, p.sta, "STA")?;
    let nl = samples_for(trace, p.lta, "LTA")?;
    if ns >= nl {
        return Err(invalid("STA window must be shorter than LTA window"));
    }
    if !(p.threshold > 0.0) {
        return Err(invalid(format!("threshold must be positive, got {}", p.threshold)));
    }
    let c = cumsum(trace.samples.iter().map(|v| v * v));
    let fl = floor_power(trace, p);
    if fl == 0.0 {
        return Ok(None);
    }
    let ratio = |k: usize| {
        let sta = (c[k + 1] - c[k + 1 - ns]) / ns as f64;
        let lta = (c[k + 1] - c[k + 1 - nl]) / nl as f64;
        sta / (lta + fl)
    };
    let n = trace.len();
    let Some(k) = (nl - 1..n).find(|&k| ratio(k) > p.threshold) else {
        return Ok(None);
    };
    let peak = (k..n).map(ratio).fold(0.0f64, f64::max);
    Ok(Some((k, peak)))
}

fn mer(trace: &Trace, p: &PickParams) -> Result<(usize, f64)> {
    let ne = samples_for(trace, p.mer_window, "MER")?;
    let n = trace.len();
    if 2 * ne >= n {
        return Err(invalid("MER window too long for trace"));
    }
    let c = cumsum(trace.samples.iter().map(|v| v * v));
    let fl = floor_power(trace, p) * ne as f64 + f64::MIN_POSITIVE;
    let mut best = (ne, -1.0);
    for k in ne..n - ne {
        let post = c[k + ne] - c[k];
        let pre = c[k] - c[k - ne];
        let v = (post / (pre + fl)).powi(3) * trace.samples[k].abs();
        if v > best.1 {
            best = (k, v);
        }
    }
    Ok(best)
}

fn aic(trace: &Trace, p: &PickParams) -> Result<(usize, f64)> {
    let (lo, hi) = match p.aic_window {
        Some((t0, t1)) => {
            if !(t0 < t1) {
                return Err(invalid(format!("AIC window [{t0}, {t1}] is empty")));
            }
            (trace.index_at(t0), trace.index_at(t1) + 1)
        }
        None => (0, trace.len()),
    };
    let w = &trace.samples[lo..hi];
    let m = w.len();
    if m < 8 {
        return Err(invalid(format!("AIC window has {m} samples, at least 8 required")));
    }
    let s1 = cumsum(w.iter().copied());
    let s2 = cumsum(w.iter().map(|v| v * v));
    let fl = floor_power(trace, p) + f64::MIN_POSITIVE;
    let var = |a: usize, b: usize| {
        let len = (b - a) as f64;
        let mean = (s1[b] - s1[a]) / len;
        ((s2[b] - s2[a]) / len - mean * mean).max(0.0)
    };
    let mut best = (0usize, f64::INFINITY);
    let mut worst = f64::NEG_INFINITY;
    for k in 2..m - 2 {
        let v = k as f64 * (var(0, k) + fl).ln() + (m - k - 1) as f64 * (var(k, m) + fl).ln();
        if v < best.1 {
            best = (k, v);
        }
        worst = worst.max(v);
    }
    Ok((lo + best.0, (worst - best.1) / m as f64))
}
