use crate::error::{invalid, Result};
use crate::forward::Trace;

/// Frame length for short-window RMS, seconds.
const FRAME: f64 = 0.05;
/// Trailing history used for the background median, in frames.
const HISTORY: usize = 40;
/// Frames of history required before the trailing median is trusted.
const MIN_HISTORY: usize = 10;

/// Energy segmentation: spans where short-window RMS exceeds `threshold`
/// times the trailing median RMS. Spans separated by less than `min_gap`
/// seconds are merged. Returned as `(start, end)` absolute times.
pub fn detect_event_window(trace: &Trace, threshold: f64, min_gap: f64) -> Result<Vec<(f64, f64)>> {
    if !(threshold > 1.0) {
        return Err(invalid(format!("threshold must exceed 1, got {threshold}")));
    }
    let len = ((FRAME * trace.sampling_rate).round() as usize).max(1);
    let rms: Vec<f64> = trace
        .samples
        .chunks(len)
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt())
        .collect();
    if rms.is_empty() {
        return Ok(Vec::new());
    }
    let warmup = median(&rms[..rms.len().min(HISTORY)]);
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for (i, &r) in rms.iter().enumerate() {
        let reference = if i >= MIN_HISTORY { median(&rms[i.saturating_sub(HISTORY)..i]) } else { warmup };
        if r > threshold * reference && r > 0.0 {
            match spans.last_mut() {
                Some(s) if s.1 + 1 == i => s.1 = i,
                _ => spans.push((i, i)),
            }
        }
    }
    let dt = trace.dt();
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in spans {
        let t0 = trace.time_at(a * len);
        let t1 = trace.time_at(((b + 1) * len).min(trace.len()) - 1) + dt;
        match out.last_mut() {
            Some(w) if t0 - w.1 < min_gap => w.1 = t1,
            _ => out.push((t0, t1)),
        }
    }
    Ok(out)
}

fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::ricker;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn trace(events: &[f64], sigma: f64, seed: u64) -> Trace {
        let fs = 500.0;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, sigma).unwrap();
        let x = (0..5000)
            .map(|i| {
                let t = i as f64 / fs;
                events.iter().map(|&c| ricker(t - c, 25.0)).sum::<f64>() + d.sample(&mut rng)
            })
            .collect();
        Trace::new(0, 0.0, fs, x).unwrap()
    }

    #[test]
    fn pure_noise_has_no_windows() {
        for s in 0..20 {
            assert!(detect_event_window(&trace(&[], 1.0, s), 5.0, 1.0).unwrap().is_empty());
        }
    }

    #[test]
    fn single_event_gives_one_window() {
        for s in 0..10 {
            let w = detect_event_window(&trace(&[2.0], 0.05, s), 5.0, 1.0).unwrap();
            assert_eq!(w.len(), 1, "{w:?}");
            assert!(w[0].0 <= 2.0 && 2.0 <= w[0].1);
        }
    }

    #[test]
    fn events_five_seconds_apart_stay_separate() {
        let w = detect_event_window(&trace(&[2.0, 7.0], 0.05, 3), 5.0, 1.0).unwrap();
        assert_eq!(w.len(), 2, "{w:?}");
        assert!(w[0].0 <= 2.0 && 2.0 <= w[0].1);
        assert!(w[1].0 <= 7.0 && 7.0 <= w[1].1);
    }

    #[test]
    fn close_events_merge() {
        let w = detect_event_window(&trace(&[2.0, 2.5], 0.05, 3), 5.0, 1.0).unwrap();
        assert_eq!(w.len(), 1, "{w:?}");
    }

    #[test]
    fn threshold_must_exceed_one() {
        assert!(detect_event_window(&trace(&[], 1.0, 0), 1.0, 1.0).is_err());
    }
}
