use rustfft::num_complex::Complex64;

use super::spectral::{ifft, interp, real_fft, welch};
use crate::error::{invalid, Result};
use crate::forward::Trace;

/// Welch segment length used for both noise and signal spectra.
const NPERSEG: usize = 128;

/// Spectral Wiener filter with gain `max(0, 1 - N(f) / X(f))`.
///
/// `N` is the Welch spectrum of the noise-only window `[t0, t1]`, `X` that of
/// the whole trace. Where the noise spectrum is zero the gain is 1.
pub fn wiener(trace: &Trace, noise_window: (f64, f64)) -> Result<Trace> {
    let (t0, t1) = noise_window;
    let (start, end) = (trace.start_time, trace.end_time());
    if !(t0 >= start - 1e-12 && t1 <= end + 1e-12 && t0 < t1) {
        return Err(invalid(format!("noise window [{t0}, {t1}] outside trace [{start}, {end}]")));
    }
    let (i0, i1) = (trace.index_at(t0), trace.index_at(t1));
    if i1 + 1 - i0 < NPERSEG {
        return Err(invalid(format!(
            "noise window has {} samples, at least {NPERSEG} required",
            i1 + 1 - i0
        )));
    }
    let fs = trace.sampling_rate;
    let (freqs, noise) = welch(&trace.samples[i0..=i1], fs, NPERSEG);
    let (_, total) = welch(&trace.samples, fs, NPERSEG);
    let gain: Vec<f64> = noise
        .iter()
        .zip(&total)
        .map(|(&n, &x)| if n <= 0.0 { 1.0 } else if x <= 0.0 { 0.0 } else { (1.0 - n / x).max(0.0) })
        .collect();

    let n = trace.len();
    let mut spec = real_fft(&trace.samples, n);
    for (k, v) in spec.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let f = bin as f64 * fs / n as f64;
        *v *= interp(&freqs, &gain, f);
    }
    let out: Vec<f64> = ifft(&spec).iter().map(|c: &Complex64| c.re).collect();
    Ok(trace.with_samples(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn noise(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, sigma).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    fn energy(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn pure_noise_is_suppressed() {
        for seed in 0..20 {
            let t = Trace::new(0, 0.0, 500.0, noise(2000, 1.0, seed)).unwrap();
            let out = wiener(&t, (0.0, t.end_time())).unwrap();
            assert!(energy(&out.samples) <= 0.1 * energy(&t.samples));
        }
    }

    #[test]
    fn clean_sine_with_silent_noise_window_unchanged() {
        let n = 2000;
        let x: Vec<f64> = (0..n)
            .map(|i| if i < 400 { 0.0 } else { (2.0 * std::f64::consts::PI * 12.0 * i as f64 / 500.0).sin() })
            .collect();
        let t = Trace::new(0, 0.0, 500.0, x.clone()).unwrap();
        let out = wiener(&t, (0.0, 0.7)).unwrap();
        for (a, b) in out.samples.iter().zip(&x) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn improves_snr_of_noisy_sine() {
        let (n, fs) = (4000, 500.0);
        let clean: Vec<f64> = (0..n)
            .map(|i| if i < 1000 { 0.0 } else { (2.0 * std::f64::consts::PI * 15.0 * i as f64 / fs).sin() })
            .collect();
        let snr = |x: &[f64]| {
            let err: f64 = x[1000..].iter().zip(&clean[1000..]).map(|(a, b)| (a - b).powi(2)).sum();
            energy(&clean[1000..]) / err
        };
        for seed in 0..5 {
            let noisy: Vec<f64> = clean.iter().zip(noise(n, 0.5, seed)).map(|(c, e)| c + e).collect();
            let t = Trace::new(0, 0.0, fs, noisy.clone()).unwrap();
            let out = wiener(&t, (0.0, 1.99)).unwrap();
            assert!(snr(&out.samples) >= snr(&noisy), "seed {seed}");
            assert!(energy(&out.samples) <= energy(&noisy));
        }
    }

    #[test]
    fn short_window_rejected() {
        let t = Trace::new(0, 0.0, 500.0, noise(1000, 1.0, 1)).unwrap();
        assert!(wiener(&t, (0.0, 0.1)).is_err());
        assert!(wiener(&t, (-1.0, 1.0)).is_err());
    }

    #[test]
    fn wiener_is_linear() {
        let t = Trace::new(0, 0.0, 500.0, noise(1500, 1.0, 2)).unwrap();
        let s = t.with_samples(t.samples.iter().map(|v| 3.5 * v).collect());
        let (a, b) = (wiener(&t, (0.0, 1.0)).unwrap(), wiener(&s, (0.0, 1.0)).unwrap());
        let scale = a.samples.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 3.5;
        for (p, q) in a.samples.iter().zip(&b.samples) {
            assert!((3.5 * p - q).abs() <= 1e-9 * scale);
        }
    }
}
