//! Digital up- and down-conversion between complex baseband and real passband.
//!
//! `up_convert` interpolates by the integer rate ratio and emits
//! `sqrt(2) * Re{x(t) e^{j 2 pi F_C t}}`, so passband mean power equals
//! baseband mean power. `down_convert` mixes by `sqrt(2) e^{-j 2 pi F_C t}`,
//! low-pass filters and decimates. Both remove the filter delay, so a
//! round trip returns sample-aligned output. Time zero is the first sample of
//! each buffer.

use crate::config::{integer_ratio, OfdmConfig};
use crate::dsp::{decimate, interpolate, kaiser_lowpass};
use crate::iq::{BasebandBuffer, PassbandBuffer};
use num_complex::Complex64;
use std::f64::consts::{PI, SQRT_2};

/// Stopband attenuation of the rate-change filters.
pub const CONVERSION_ATTEN_DB: f64 = 75.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConvertError {
    #[error("passband rate {passband} is not an integer multiple of baseband rate {baseband}")]
    RateRatio { passband: f64, baseband: f64 },
    #[error("passband rate {rate} is below the Nyquist requirement {required}")]
    Nyquist { rate: f64, required: f64 },
}

/// Lowpass used on both sides of the converter, designed at the passband rate.
pub fn conversion_filter(cfg: &OfdmConfig, passband_rate: f64) -> Vec<f64> {
    let d = cfg.derive();
    let pass = d.occupied_bandwidth / 2.0 + d.subcarrier_spacing;
    let stop = cfg.sample_rate - pass;
    kaiser_lowpass(pass, stop, CONVERSION_ATTEN_DB, passband_rate)
}

fn check_rates(cfg: &OfdmConfig, baseband_rate: f64, passband_rate: f64) -> Result<usize, ConvertError> {
    let ratio = integer_ratio(passband_rate, baseband_rate).ok_or(ConvertError::RateRatio {
        passband: passband_rate,
        baseband: baseband_rate,
    })?;
    let required = 2.0 * (cfg.center_frequency + cfg.derive().occupied_bandwidth / 2.0);
    if passband_rate < required {
        return Err(ConvertError::Nyquist {
            rate: passband_rate,
            required,
        });
    }
    Ok(ratio)
}

pub fn up_convert(
    bb: &BasebandBuffer,
    cfg: &OfdmConfig,
    passband_rate: f64,
) -> Result<PassbandBuffer, ConvertError> {
    let ratio = check_rates(cfg, bb.sample_rate, passband_rate)?;
    let taps = conversion_filter(cfg, passband_rate);
    let up = interpolate(&bb.samples, ratio, &taps);
    let w = 2.0 * PI * cfg.center_frequency / passband_rate;
    let samples = up
        .iter()
        .enumerate()
        .map(|(n, x)| {
            let (s, c) = (w * n as f64).sin_cos();
            SQRT_2 * (x.re * c - x.im * s)
        })
        .collect();
    Ok(PassbandBuffer::new(samples, passband_rate))
}

pub fn down_convert(pb: &PassbandBuffer, cfg: &OfdmConfig) -> Result<BasebandBuffer, ConvertError> {
    let ratio = check_rates(cfg, cfg.sample_rate, pb.sample_rate)?;
    let taps = conversion_filter(cfg, pb.sample_rate);
    let w = -2.0 * PI * cfg.center_frequency / pb.sample_rate;
    let mixed: Vec<Complex64> = pb
        .samples
        .iter()
        .enumerate()
        .map(|(n, &y)| Complex64::from_polar(SQRT_2 * y, w * n as f64))
        .collect();
    Ok(BasebandBuffer::new(
        decimate(&mixed, ratio, &taps),
        cfg.sample_rate,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::random_bits;
    use crate::tx::{build_frame, ofdm_modulate};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rustfft::FftPlanner;

    fn std16() -> OfdmConfig {
        OfdmConfig::preset("std-16qam").unwrap()
    }

    /// Blackman-Harris windowed magnitude spectrum in dB relative to the peak.
    fn spectrum_db(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut buf: Vec<Complex64> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let t = 2.0 * PI * i as f64 / n as f64;
                let w = 0.35875 - 0.48829 * t.cos() + 0.14128 * (2.0 * t).cos()
                    - 0.01168 * (3.0 * t).cos();
                Complex64::new(v * w, 0.0)
            })
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let mags: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm()).collect();
        let peak = mags.iter().cloned().fold(0.0, f64::max);
        mags.iter().map(|m| 20.0 * (m / peak).max(1e-12).log10()).collect()
    }

    #[test]
    fn tone_lands_at_carrier_plus_offset_with_images_suppressed() {
        let cfg = std16();
        let fs = cfg.sample_rate;
        let fpb = cfg.passband_rate;
        let n_bb = 1250;
        let f0 = 100e3;
        let bb = BasebandBuffer::new(
            (0..n_bb)
                .map(|n| Complex64::from_polar(1.0, 2.0 * PI * f0 * n as f64 / fs))
                .collect(),
            fs,
        );
        let pb = up_convert(&bb, &cfg, fpb).unwrap();
        let spec = spectrum_db(&pb.samples);
        let bin_hz = fpb / pb.len() as f64;
        let want = ((cfg.center_frequency + f0) / bin_hz).round() as usize;
        let mirror = ((cfg.center_frequency - f0) / bin_hz).round() as usize;
        assert!(spec[want] > -0.1);
        assert!(spec[mirror] < -60.0, "mirror {}", spec[mirror]);
        // everything more than a few bins from the wanted tone
        let worst = spec
            .iter()
            .enumerate()
            .filter(|(k, _)| (*k as i64 - want as i64).abs() > 4)
            .map(|(_, v)| *v)
            .fold(f64::MIN, f64::max);
        assert!(worst < -60.0, "worst spur {worst} dB");
    }

    #[test]
    fn zero_in_zero_out() {
        let cfg = std16();
        let bb = BasebandBuffer::new(vec![Complex64::new(0.0, 0.0); 100], cfg.sample_rate);
        let pb = up_convert(&bb, &cfg, 12.5e6).unwrap();
        assert!(pb.samples.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn standard_mode_passes_nyquist() {
        let cfg = std16();
        assert!(2.0 * (2.4e6 + 0.46875e6) < 12.5e6);
        let bb = BasebandBuffer::new(vec![Complex64::new(1.0, 0.0); 8], cfg.sample_rate);
        assert!(up_convert(&bb, &cfg, 12.5e6).is_ok());
        assert!(matches!(
            up_convert(&bb, &cfg, 5.0e6),
            Err(ConvertError::Nyquist { .. })
        ));
        assert!(matches!(
            up_convert(&bb, &cfg, 12.6e6),
            Err(ConvertError::RateRatio { .. })
        ));
    }

    #[test]
    fn round_trip_residual_below_minus_50_db() {
        for name in ["std-16qam", "wide-256qam"] {
            let cfg = OfdmConfig::preset(name).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let bits = random_bits(cfg.bits_per_ofdm_symbol() * 3, &mut rng);
            let bb = ofdm_modulate(&build_frame(&bits, &cfg).unwrap(), &cfg).unwrap();
            let back = down_convert(&up_convert(&bb, &cfg, cfg.passband_rate).unwrap(), &cfg).unwrap();
            assert_eq!(back.len(), bb.len());
            // skip filter edge transients
            let guard = 200;
            let range = guard..bb.len() - guard;
            let err: f64 = range
                .clone()
                .map(|i| (back.samples[i] - bb.samples[i]).norm_sqr())
                .sum();
            let sig: f64 = range.map(|i| bb.samples[i].norm_sqr()).sum();
            let db = 10.0 * (err / sig).log10();
            assert!(db < -50.0, "{name}: {db} dB");
        }
    }

    #[test]
    fn carrier_tone_maps_to_dc_and_offset_tone_to_offset() {
        let cfg = std16();
        let fpb = cfg.passband_rate;
        let df = cfg.derive().subcarrier_spacing;
        for (offset, expect) in [(0.0, 0.0), (df, df)] {
            let pb = PassbandBuffer::new(
                (0..125_000)
                    .map(|n| (2.0 * PI * (cfg.center_frequency + offset) * n as f64 / fpb).cos() * SQRT_2)
                    .collect(),
                fpb,
            );
            let bb = down_convert(&pb, &cfg).unwrap();
            let mid = &bb.samples[1000..bb.len() - 1000];
            let lag = 1000;
            let corr: Complex64 = mid.iter().zip(&mid[lag..]).map(|(a, b)| b * a.conj()).sum();
            let f = corr.arg() / (2.0 * PI * lag as f64) * cfg.sample_rate;
            assert!((f - expect).abs() < 0.01, "measured {f} want {expect}");
            assert!(mid.iter().all(|v| (v.norm() - 1.0).abs() < 1e-3));
        }
    }
}
