//! Filter design and multirate primitives shared by the converters and the
//! channel simulator.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let y = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= y / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Linear-phase Kaiser-windowed sinc lowpass with unity DC gain.
///
/// Frequencies are in Hz at `rate`. The tap count is always odd so the group
/// delay is an integer number of samples.
pub fn kaiser_lowpass(pass_hz: f64, stop_hz: f64, atten_db: f64, rate: f64) -> Vec<f64> {
    assert!(stop_hz > pass_hz && pass_hz >= 0.0, "bad band edges");
    let transition = (stop_hz - pass_hz) / rate;
    let beta = if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db > 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    };
    let mut n = ((atten_db - 7.95) / (14.36 * transition)).ceil() as usize + 1;
    if n % 2 == 0 {
        n += 1;
    }
    let fc = (pass_hz + stop_hz) / 2.0 / rate;
    let mid = (n - 1) as f64 / 2.0;
    let norm = bessel_i0(beta);
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * t).sin() / (std::f64::consts::PI * t)
            };
            let r = t / mid;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm;
            sinc * w
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Zero-stuffing interpolation by `factor` through a polyphase filter.
///
/// The output is aligned with the input (filter delay removed) and has length
/// `input.len() * factor`. Passband gain is unity.
pub fn interpolate(input: &[Complex64], factor: usize, taps: &[f64]) -> Vec<Complex64> {
    let delay = (taps.len() - 1) / 2;
    let n_out = input.len() * factor;
    let gain = factor as f64;
    let mut out = vec![Complex64::new(0.0, 0.0); n_out];
    for (n, y) in out.iter_mut().enumerate() {
        let m = n + delay;
        let mut acc = Complex64::new(0.0, 0.0);
        let mut k = m % factor;
        while k < taps.len() && k <= m {
            let idx = (m - k) / factor;
            if idx < input.len() {
                acc += input[idx] * taps[k];
            }
            k += factor;
        }
        *y = acc * gain;
    }
    out
}

/// Filters then keeps every `factor`-th sample, starting at sample 0.
///
/// Output length is `input.len() / factor`, aligned with the input.
pub fn decimate(input: &[Complex64], factor: usize, taps: &[f64]) -> Vec<Complex64> {
    let delay = (taps.len() - 1) / 2;
    let n_out = input.len() / factor;
    (0..n_out)
        .map(|m| {
            let center = m * factor + delay;
            let mut acc = Complex64::new(0.0, 0.0);
            let k_lo = center.saturating_sub(input.len() - 1);
            let k_hi = center.min(taps.len() - 1);
            if k_lo <= k_hi {
                for k in k_lo..=k_hi {
                    acc += input[center - k] * taps[k];
                }
            }
            acc
        })
        .collect()
}

/// Full linear convolution of real sequences using FFT blocks.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    let fft_len = (2 * h.len()).next_power_of_two().max(1024);
    let block = fft_len - h.len() + 1;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let inv = planner.plan_fft_inverse(fft_len);

    let mut hf: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    hf.resize(fft_len, Complex64::new(0.0, 0.0));
    fwd.process(&mut hf);

    let scale = 1.0 / fft_len as f64;
    let mut out = vec![0.0; out_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
    for (b, chunk) in x.chunks(block).enumerate() {
        buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (d, &s) in buf.iter_mut().zip(chunk) {
            d.re = s;
        }
        fwd.process(&mut buf);
        buf.iter_mut().zip(&hf).for_each(|(a, b)| *a *= b);
        inv.process(&mut buf);
        let start = b * block;
        let valid = (chunk.len() + h.len() - 1).min(out_len - start);
        for (o, v) in out[start..start + valid].iter_mut().zip(&buf) {
            *o += v.re * scale;
        }
    }
    out
}

/// Linear convolution that only visits nonzero taps.
pub fn sparse_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; x.len() + h.len() - 1];
    for (k, &g) in h.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (o, &s) in out[k..k + x.len()].iter_mut().zip(x) {
            *o += g * s;
        }
    }
    out
}

/// Picks sparse or FFT convolution by tap density.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let nonzero = h.iter().filter(|v| **v != 0.0).count();
    if nonzero <= 64 || x.len() < 4 * h.len().min(1 << 16) && nonzero <= 256 {
        sparse_convolve(x, h)
    } else {
        fft_convolve(x, h)
    }
}

/// Magnitude response of a real FIR at `freq_hz`.
pub fn fir_response(taps: &[f64], freq_hz: f64, rate: f64) -> Complex64 {
    let w = -2.0 * std::f64::consts::PI * freq_hz / rate;
    taps.iter()
        .enumerate()
        .map(|(k, &h)| Complex64::from_polar(h, w * k as f64))
        .sum()
}
