//! FFT helpers shared by filtering, correlation and envelope picking.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

pub fn fft(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Inverse FFT including the `1/n` normalization.
pub fn ifft(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    let n = buf.len() as f64;
    FftPlanner::new().plan_fft_inverse(buf.len()).process(&mut buf);
    for v in &mut buf {
        *v /= n;
    }
    buf
}

pub fn real_fft(x: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    fft(&buf)
}

/// Envelope `|x + i H[x]|` from the FFT analytic signal.
pub fn envelope(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut spec = real_fft(x, n);
    for (k, v) in spec.iter_mut().enumerate() {
        let gain = if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *v *= gain;
    }
    ifft(&spec).iter().map(|c| c.norm()).collect()
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// One-sided Welch power spectral density with a periodic Hann window and
/// 50% overlap. Returns `(frequencies, psd)` with `nperseg / 2 + 1` bins.
pub fn welch(x: &[f64], fs: f64, nperseg: usize) -> (Vec<f64>, Vec<f64>) {
    let w = hann(nperseg);
    let scale = 1.0 / (fs * w.iter().map(|v| v * v).sum::<f64>());
    let step = nperseg / 2;
    let nbins = nperseg / 2 + 1;
    let mut psd = vec![0.0; nbins];
    let mut count = 0usize;
    let mut start = 0;
    while start + nperseg <= x.len() {
        let seg = &x[start..start + nperseg];
        let mean = seg.iter().sum::<f64>() / nperseg as f64;
        let tapered: Vec<f64> = seg.iter().zip(&w).map(|(v, h)| (v - mean) * h).collect();
        let spec = real_fft(&tapered, nperseg);
        for (k, p) in psd.iter_mut().enumerate() {
            let mut v = spec[k].norm_sqr() * scale;
            if k != 0 && !(nperseg.is_multiple_of(2) && k == nperseg / 2) {
                v *= 2.0;
            }
            *p += v;
        }
        count += 1;
        start += step;
    }
    if count > 0 {
        for p in &mut psd {
            *p /= count as f64;
        }
    }
    let freqs = (0..nbins).map(|k| k as f64 * fs / nperseg as f64).collect();
    (freqs, psd)
}

/// Piecewise-linear interpolation of `(xs, ys)` at `x`, clamped at the ends.
pub fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let i = xs.partition_point(|&v| v <= x) - 1;
    let f = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] * (1.0 - f) + ys[i + 1] * f
}

/// Smallest `2^k >= n`.
pub fn fft_len(n: usize) -> usize {
    n.next_power_of_two()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_of_cosine_is_flat() {
        let n = 1024;
        let x: Vec<f64> = (0..n).map(|i| 3.0 * (2.0 * std::f64::consts::PI * 64.0 * i as f64 / n as f64).cos()).collect();
        for e in envelope(&x) {
            assert!((e - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn welch_of_white_noise_matches_variance() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..20_000).map(|_| Normal::new(0.0, 2.0).unwrap().sample(&mut rng)).collect();
        let fs = 100.0;
        let (f, p) = welch(&x, fs, 128);
        let df = f[1] - f[0];
        let total: f64 = p.iter().sum::<f64>() * df;
        assert!((total - 4.0).abs() < 0.2, "{total}");
    }

    #[test]
    fn interp_clamps_and_blends() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [0.0, 10.0, 0.0];
        assert_eq!(interp(&xs, &ys, -1.0), 0.0);
        assert_eq!(interp(&xs, &ys, 0.5), 5.0);
        assert_eq!(interp(&xs, &ys, 1.5), 5.0);
        assert_eq!(interp(&xs, &ys, 9.0), 0.0);
    }
}
