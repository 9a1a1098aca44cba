//! Multipath channel simulation for a linear receive array.
//!
//! Each receive element gets its own real FIR at the passband rate plus a
//! geometric delay. Synthetic FIRs are a direct-path tap followed by
//! Poisson-arriving reflections under an exponentially decaying power
//! envelope. The direct-path power is then solved so the power-weighted RMS
//! delay spread equals the profile target, and the FIR is scaled to unit
//! energy. Measured FIRs can replace synthesis through the tap file format.

use crate::dsp::convolve;
use crate::iq::PassbandBuffer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Longest FIR accepted, seconds.
pub const MAX_FIR_DURATION: f64 = 1.5e-3;

/// Mixed into the master seed so tap synthesis and noise never share a stream.
const SYNTH_DOMAIN: u64 = 0x5EED_C4A7_0F1A_0001;

pub const PROFILE_NAMES: [&str; 3] = ["ideal", "default", "phantom-like"];

#[derive(Debug, thiserror::Error)]
pub enum ChannelError {
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("unknown profile {0:?}")]
    UnknownProfile(String),
    #[error("need at least one receive element")]
    NoElements,
    #[error("invalid channel model: {0}")]
    Model(String),
    #[error("signal rate {signal} differs from channel rate {channel}")]
    RateMismatch { signal: f64, channel: f64 },
    #[error("transmit buffer is empty")]
    EmptyInput,
    #[error("Eb/N0 requested with zero bits per buffer")]
    ZeroBits,
    #[error("Eb/N0 must be finite, got {0}")]
    NonFiniteEbN0(f64),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Macro parameters shared by every element of a synthetic channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelProfile {
    /// Target power-weighted RMS delay spread, seconds.
    pub rms_delay_spread: f64,
    /// Latest reflection arrival, seconds after the direct path.
    pub max_excess_delay: f64,
    /// Mean reflection arrivals per second of excess delay. Zero gives a
    /// line-of-sight channel.
    pub reflection_density: f64,
    /// Power decay constant of the reflection envelope, seconds.
    pub decay_constant: f64,
    /// Receive element spacing, metres.
    pub element_pitch: f64,
    /// Axial distance from the source to the array, metres.
    pub source_depth: f64,
    /// Lateral source position relative to the array centre, metres.
    pub source_lateral: f64,
    /// Metres per second.
    pub sound_speed: f64,
    /// Rate the FIR taps are generated at, samples/s.
    pub passband_rate: f64,
}

impl Default for ChannelProfile {
    fn default() -> Self {
        ChannelProfile {
            rms_delay_spread: 200e-6,
            max_excess_delay: 1e-3,
            reflection_density: 100e3,
            decay_constant: 400e-6,
            element_pitch: 0.3e-3,
            source_depth: 65e-3,
            source_lateral: 0.0,
            sound_speed: 1540.0,
            passband_rate: crate::config::DEFAULT_PASSBAND_RATE,
        }
    }
}

impl ChannelProfile {
    pub fn preset(name: &str) -> Result<Self, ChannelError> {
        let base = ChannelProfile::default();
        match name {
            "default" => Ok(base),
            "ideal" => Ok(ChannelProfile {
                rms_delay_spread: 0.0,
                reflection_density: 0.0,
                ..base
            }),
            "phantom-like" => Ok(ChannelProfile {
                rms_delay_spread: 60e-6,
                reflection_density: 200e3,
                decay_constant: 100e-6,
                ..base
            }),
            _ => Err(ChannelError::UnknownProfile(name.to_string())),
        }
    }

    /// Resolves a preset name or a JSON file path.
    pub fn load(name_or_path: &str) -> Result<Self, ChannelError> {
        if PROFILE_NAMES.contains(&name_or_path) {
            return Self::preset(name_or_path);
        }
        let text = std::fs::read_to_string(name_or_path)?;
        let p: ChannelProfile = serde_json::from_str(&text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: &str| Err(ChannelError::Profile(m.to_string()));
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.rms_delay_spread) {
            return bad("rms_delay_spread must be finite and non-negative");
        }
        if !finite_nonneg(self.max_excess_delay) || self.max_excess_delay > MAX_FIR_DURATION {
            return bad("max_excess_delay must lie in [0, 1.5 ms]");
        }
        if !finite_nonneg(self.reflection_density) {
            return bad("reflection_density must be finite and non-negative");
        }
        if !(self.decay_constant.is_finite() && self.decay_constant > 0.0) {
            return bad("decay_constant must be positive");
        }
        if !(self.element_pitch.is_finite() && self.element_pitch > 0.0) {
            return bad("element_pitch must be positive");
        }
        if !finite_nonneg(self.source_depth) || !self.source_lateral.is_finite() {
            return bad("source position must be finite with non-negative depth");
        }
        if !(self.sound_speed.is_finite() && self.sound_speed > 0.0) {
            return bad("sound_speed must be positive");
        }
        if !(self.passband_rate.is_finite() && self.passband_rate > 0.0) {
            return bad("passband_rate must be positive");
        }
        Ok(())
    }
}

/// Per-element FIRs and geometric delays, plus the noise seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub element_firs: Vec<Vec<f64>>,
    /// Seconds, non-negative.
    pub element_delays: Vec<f64>,
    pub rng_seed: u64,
    pub passband_rate: f64,
}

/// JSON sidecar accompanying a binary tap file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSidecar {
    pub format: String,
    pub passband_rate: f64,
    pub element_delays: Vec<f64>,
    pub rng_seed: u64,
    pub tap_counts: Vec<usize>,
    pub taps_file: String,
}

const TAP_FORMAT: &str = "f64le-channel-major";

impl ChannelModel {
    pub fn n_elements(&self) -> usize {
        self.element_firs.len()
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: String| Err(ChannelError::Model(m));
        if self.element_firs.is_empty() {
            return Err(ChannelError::NoElements);
        }
        if self.element_delays.len() != self.element_firs.len() {
            return bad(format!(
                "{} delays for {} elements",
                self.element_delays.len(),
                self.element_firs.len()
            ));
        }
        if !(self.passband_rate.is_finite() && self.passband_rate > 0.0) {
            return bad("passband_rate must be positive".into());
        }
        for (j, fir) in self.element_firs.iter().enumerate() {
            if !fir.iter().any(|&t| t != 0.0) || fir.iter().any(|t| !t.is_finite()) {
                return bad(format!("element {j} FIR needs a finite nonzero tap"));
            }
            let duration = fir.len() as f64 / self.passband_rate;
            if duration > MAX_FIR_DURATION + 0.5 / self.passband_rate {
                return bad(format!("element {j} FIR lasts {duration} s"));
            }
        }
        if self.element_delays.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return bad("element delays must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Keeps only the listed elements, in the given order.
    pub fn subset(&self, elements: &[usize]) -> ChannelModel {
        ChannelModel {
            element_firs: elements.iter().map(|&j| self.element_firs[j].clone()).collect(),
            element_delays: elements.iter().map(|&j| self.element_delays[j]).collect(),
            rng_seed: self.rng_seed,
            passband_rate: self.passband_rate,
        }
    }

    pub fn delay_samples(&self, element: usize) -> usize {
        (self.element_delays[element] * self.passband_rate).round() as usize
    }

    /// Single-tap unit channel on `n` elements with no delays.
    pub fn identity(n: usize, passband_rate: f64) -> ChannelModel {
        ChannelModel {
            element_firs: vec![vec![1.0]; n],
            element_delays: vec![0.0; n],
            rng_seed: 0,
            passband_rate,
        }
    }

    /// Writes `<path>` (JSON sidecar) and a `.taps` file next to it.
    pub fn save(&self, sidecar_path: impl AsRef<Path>) -> Result<(), ChannelError> {
        let sidecar_path = sidecar_path.as_ref();
        let taps_path = sidecar_path.with_extension("taps");
        let mut bytes = Vec::new();
        for fir in &self.element_firs {
            for t in fir {
                bytes.extend_from_slice(&t.to_le_bytes());
            }
        }
        std::fs::write(&taps_path, bytes)?;
        let sidecar = ChannelSidecar {
            format: TAP_FORMAT.to_string(),
            passband_rate: self.passband_rate,
            element_delays: self.element_delays.clone(),
            rng_seed: self.rng_seed,
            tap_counts: self.element_firs.iter().map(Vec::len).collect(),
            taps_file: taps_path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(sidecar_path: impl AsRef<Path>) -> Result<ChannelModel, ChannelError> {
        let sidecar_path = sidecar_path.as_ref();
        let sidecar: ChannelSidecar =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)?;
        if sidecar.format != TAP_FORMAT {
            return Err(ChannelError::Model(format!("unknown tap format {:?}", sidecar.format)));
        }
        let taps_path: PathBuf = sidecar_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&sidecar.taps_file);
        let bytes = std::fs::read(taps_path)?;
        let total: usize = sidecar.tap_counts.iter().sum();
        if bytes.len() != total * 8 {
            return Err(ChannelError::Model(format!(
                "tap file holds {} bytes, sidecar expects {}",
                bytes.len(),
                total * 8
            )));
        }
        let mut taps = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let element_firs = sidecar
            .tap_counts
            .iter()
            .map(|&n| taps.by_ref().take(n).collect())
            .collect();
        let model = ChannelModel {
            element_firs,
            element_delays: sidecar.element_delays,
            rng_seed: sidecar.rng_seed,
            passband_rate: sidecar.passband_rate,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Linear-array geometric delays relative to the closest element.
pub fn array_delays(n_elements: usize, profile: &ChannelProfile) -> Vec<f64> {
    let centre = (n_elements as f64 - 1.0) / 2.0;
    let paths: Vec<f64> = (0..n_elements)
        .map(|j| {
            let x = (j as f64 - centre) * profile.element_pitch - profile.source_lateral;
            (profile.source_depth.powi(2) + x * x).sqrt()
        })
        .collect();
    let nearest = paths.iter().cloned().fold(f64::INFINITY, f64::min);
    paths
        .iter()
        .map(|p| (p - nearest) / profile.sound_speed)
        .collect()
}

fn element_rng(seed: u64, element: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(element as u64);
    rng
}

/// Direct-path power that brings the RMS delay spread to `target`, given the
/// reflections' total power and first two power-weighted delay moments.
fn solve_direct_power(power: f64, m1: f64, m2: f64, target: f64) -> f64 {
    // rms^2 = m2/W - (m1/W)^2 with W = p0 + power; take the larger root in W.
    let t2 = target * target;
    let disc = m2 * m2 - 4.0 * t2 * m1 * m1;
    if disc < 0.0 {
        // unreachable target: take the direct power that maximizes the spread
        return (2.0 * m1 * m1 / m2 - power).max(0.0);
    }
    let w = (m2 + disc.sqrt()) / (2.0 * t2);
    (w - power).max(0.0)
}

fn synthesize_fir(profile: &ChannelProfile, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let rate = profile.passband_rate;
    let max_idx = (profile.max_excess_delay * rate).floor() as usize;
    if profile.reflection_density == 0.0 || profile.rms_delay_spread == 0.0 || max_idx == 0 {
        return vec![1.0];
    }
    let mut fir = vec![0.0; max_idx + 1];
    let gap = Exp::new(profile.reflection_density).expect("positive density");
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        if t > profile.max_excess_delay {
            break;
        }
        let idx = ((t * rate).round() as usize).clamp(1, max_idx);
        let g: f64 = rng.sample(StandardNormal);
        fir[idx] += g * (-t / profile.decay_constant).exp().sqrt();
    }
    let (mut power, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (k, &h) in fir.iter().enumerate().skip(1) {
        let p = h * h;
        let tau = k as f64 / rate;
        power += p;
        m1 += p * tau;
        m2 += p * tau * tau;
    }
    if power == 0.0 {
        return vec![1.0];
    }
    fir[0] = solve_direct_power(power, m1, m2, profile.rms_delay_spread).sqrt();
    let last = fir.iter().rposition(|v| *v != 0.0).unwrap_or(0);
    fir.truncate(last + 1);
    let norm = fir.iter().map(|v| v * v).sum::<f64>().sqrt();
    fir.iter_mut().for_each(|v| *v /= norm);
    fir
}

pub fn synthesize_channel(
    n_elements: usize,
    profile: &ChannelProfile,
    seed: u64,
) -> Result<ChannelModel, ChannelError> {
    if n_elements == 0 {
        return Err(ChannelError::NoElements);
    }
    profile.validate()?;
    let element_firs = (0..n_elements)
        .map(|j| synthesize_fir(profile, &mut element_rng(seed ^ SYNTH_DOMAIN, j)))
        .collect();
    Ok(ChannelModel {
        element_firs,
        element_delays: array_delays(n_elements, profile),
        rng_seed: seed,
        passband_rate: profile.passband_rate,
    })
}

/// Noiseless per-element outputs, zero padded to a common length.
pub fn propagate(tx: &PassbandBuffer, ch: &ChannelModel) -> Result<Vec<PassbandBuffer>, ChannelError> {
    ch.validate()?;
    if tx.is_empty() {
        return Err(ChannelError::EmptyInput);
    }
    if (tx.sample_rate - ch.passband_rate).abs() > 1e-9 * ch.passband_rate {
        return Err(ChannelError::RateMismatch {
            signal: tx.sample_rate,
            channel: ch.passband_rate,
        });
    }
    let out_len = (0..ch.n_elements())
        .map(|j| ch.delay_samples(j) + tx.len() + ch.element_firs[j].len() - 1)
        .max()
        .unwrap_or(0);
    Ok((0..ch.n_elements())
        .into_par_iter()
        .map(|j| {
            let mut y = vec![0.0; ch.delay_samples(j)];
            y.extend(convolve(&tx.samples, &ch.element_firs[j]));
            y.resize(out_len, 0.0);
            PassbandBuffer::new(y, tx.sample_rate)
        })
        .collect())
}

/// Real-noise standard deviation giving `ebn0_db` for a received signal with
/// the given sum of squared samples carrying `bits` payload bits.
///
/// With one-sided density `N0 = 2 sigma^2 / fs` and energy `E = sum / fs`,
/// `(E / bits) / N0 = ebn0` gives `sigma^2 = sum / (2 bits ebn0)`.
pub fn noise_sigma_for_ebn0(sum_sq: f64, bits: usize, ebn0_db: f64) -> f64 {
    let ebn0 = 10f64.powf(ebn0_db / 10.0);
    (sum_sq / (2.0 * bits as f64 * ebn0)).sqrt()
}

/// Adds independent white Gaussian noise to each element. Element `j` draws
/// from stream `j` of `seed`, so results do not depend on scheduling.
pub fn add_noise(buffers: &mut [PassbandBuffer], sigmas: &[f64], seed: u64) {
    buffers
        .par_iter_mut()
        .zip(sigmas.par_iter())
        .enumerate()
        .for_each(|(j, (buf, &sigma))| {
            if sigma == 0.0 {
                return;
            }
            let mut rng = element_rng(seed, j);
            for v in buf.samples.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *v += sigma * n;
            }
        });
}

/// Convolves, delays and (optionally) adds noise calibrated so each element's
/// received energy per payload bit over N0 equals `ebn0_db`.
pub fn apply_channel(
    tx: &PassbandBuffer,
    ch: &ChannelModel,
    ebn0_db: Option<f64>,
    bits_per_buffer: usize,
) -> Result<Vec<PassbandBuffer>, ChannelError> {
    apply_channel_seeded(tx, ch, ebn0_db, bits_per_buffer, ch.rng_seed)
}

/// As [`apply_channel`] with an explicit noise seed.
pub fn apply_channel_seeded(
    tx: &PassbandBuffer,
    ch: &ChannelModel,
    ebn0_db: Option<f64>,
    bits_per_buffer: usize,
    noise_seed: u64,
) -> Result<Vec<PassbandBuffer>, ChannelError> {
    if let Some(db) = ebn0_db {
        if !db.is_finite() {
            return Err(ChannelError::NonFiniteEbN0(db));
        }
        if bits_per_buffer == 0 {
            return Err(ChannelError::ZeroBits);
        }
    }
    let mut out = propagate(tx, ch)?;
    if let Some(db) = ebn0_db {
        let sigmas: Vec<f64> = out
            .iter()
            .map(|b| noise_sigma_for_ebn0(b.energy(), bits_per_buffer, db))
            .collect();
        add_noise(&mut out, &sigmas, noise_seed);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms_spread_oracle(fir: &[f64], rate: f64) -> f64 {
        let p: Vec<f64> = fir.iter().map(|h| h * h).collect();
        let total: f64 = p.iter().sum();
        let mean: f64 = p.iter().enumerate().map(|(k, v)| v * k as f64).sum::<f64>() / total;
        let var: f64 = p
            .iter()
            .enumerate()
            .map(|(k, v)| v * (k as f64 - mean).powi(2))
            .sum::<f64>()
            / total;
        var.sqrt() / rate
    }

    #[test]
    fn line_of_sight_has_one_tap() {
        let p = ChannelProfile {
            reflection_density: 0.0,
            ..ChannelProfile::default()
        };
        let ch = synthesize_channel(8, &p, 1).unwrap();
        assert!(ch.element_firs.iter().all(|f| f.len() == 1 && f[0] != 0.0));
    }

    #[test]
    fn deterministic() {
        let p = ChannelProfile::default();
        assert_eq!(
            synthesize_channel(4, &p, 42).unwrap(),
            synthesize_channel(4, &p, 42).unwrap()
        );
        assert_ne!(
            synthesize_channel(4, &p, 42).unwrap().element_firs,
            synthesize_channel(4, &p, 43).unwrap().element_firs
        );
    }

    #[test]
    fn rms_delay_spread_over_seeds() {
        let p = ChannelProfile::default();
        let mut sum = 0.0;
        for seed in 0..100 {
            let ch = synthesize_channel(1, &p, seed).unwrap();
            let fir = &ch.element_firs[0];
            let s = rms_spread_oracle(fir, p.passband_rate);
            assert!((s - 200e-6).abs() <= 0.25 * 200e-6, "seed {seed}: {s}");
            assert!(fir.len() as f64 / p.passband_rate <= 1e-3 + 1e-7);
            sum += s;
        }
        assert!((sum / 100.0 - 200e-6).abs() < 0.05 * 200e-6);
    }

    #[test]
    fn elements_are_independent_realizations() {
        let ch = synthesize_channel(2, &ChannelProfile::default(), 9).unwrap();
        assert_ne!(ch.element_firs[0], ch.element_firs[1]);
    }

    #[test]
    fn bad_profiles_rejected() {
        let p = ChannelProfile {
            rms_delay_spread: -1.0,
            ..Default::default()
        };
        assert!(synthesize_channel(1, &p, 0).is_err());
        let p = ChannelProfile {
            element_pitch: 0.0,
            ..Default::default()
        };
        assert!(synthesize_channel(1, &p, 0).is_err());
        assert!(matches!(
            synthesize_channel(0, &ChannelProfile::default(), 0),
            Err(ChannelError::NoElements)
        ));
    }

    #[test]
    fn array_geometry() {
        let p = ChannelProfile::default();
        let d = array_delays(64, &p);
        assert!(d.iter().all(|v| *v >= 0.0));
        assert!(d[31] < 1e-12 || d[32] < 1e-12);
        assert!((d[0] - d[63]).abs() < 1e-15);
        assert!(d[0] > d[16]);
    }

    #[test]
    fn identity_channel_delays_exactly() {
        let tx = PassbandBuffer::new((0..50).map(|i| (i as f64).sin()).collect(), 1e6);
        let ch = ChannelModel {
            element_firs: vec![vec![1.0]],
            element_delays: vec![7e-6],
            rng_seed: 0,
            passband_rate: 1e6,
        };
        let out = apply_channel(&tx, &ch, None, 0).unwrap();
        assert_eq!(&out[0].samples[..7], &[0.0; 7]);
        assert_eq!(&out[0].samples[7..], &tx.samples[..]);
    }

    #[test]
    fn noiseless_path_is_linear() {
        let tx = PassbandBuffer::new((0..500).map(|i| ((i * 37) % 11) as f64 - 5.0).collect(), 12.5e6);
        let ch = synthesize_channel(3, &ChannelProfile::default(), 5).unwrap();
        let a = apply_channel(&tx, &ch, None, 0).unwrap();
        let b = apply_channel(&tx.scaled(-2.5), &ch, None, 0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.samples.iter().zip(&y.samples) {
                assert!((q + 2.5 * p).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn calibrated_ebn0_is_reestimated() {
        let tx = PassbandBuffer::new(
            (0..200_000).map(|i| (0.37 * i as f64).sin() * 1.3).collect(),
            12.5e6,
        );
        let ch = ChannelModel::identity(1, 12.5e6);
        let bits = 10_000;
        let out = apply_channel(&tx, &ch, Some(20.0), bits).unwrap();
        let resid: f64 = out[0]
            .samples
            .iter()
            .zip(&tx.samples)
            .map(|(y, x)| (y - x).powi(2))
            .sum();
        let sigma2 = resid / tx.len() as f64;
        let n0 = 2.0 * sigma2 / tx.sample_rate;
        let eb = tx.energy() / tx.sample_rate / bits as f64;
        let measured = 10.0 * (eb / n0).log10();
        assert!((measured - 20.0).abs() < 0.2, "{measured}");
    }

    #[test]
    fn delay_difference_shows_in_cross_correlation() {
        let tx = PassbandBuffer::new(
            (0..4000).map(|i| (((i * 7919) % 1013) as f64 / 1013.0) - 0.5).collect(),
            12.5e6,
        );
        let ch = ChannelModel {
            element_firs: vec![vec![1.0], vec![1.0]],
            element_delays: vec![3.0 / 12.5e6, 20.0 / 12.5e6],
            rng_seed: 0,
            passband_rate: 12.5e6,
        };
        let out = apply_channel(&tx, &ch, None, 0).unwrap();
        let (a, b) = (&out[0].samples, &out[1].samples);
        let best = (0..60)
            .max_by(|&l1, &l2| {
                let c = |l: usize| a.iter().zip(&b[l..]).map(|(x, y)| x * y).sum::<f64>();
                c(l1).partial_cmp(&c(l2)).unwrap()
            })
            .unwrap();
        assert_eq!(best, 17);
    }

    #[test]
    fn noise_streams_reproducible_and_independent() {
        let mut a = vec![PassbandBuffer::new(vec![0.0; 1_000_000], 1.0); 2];
        add_noise(&mut a, &[1.0, 1.0], 11);
        let mut b = vec![PassbandBuffer::new(vec![0.0; 1_000_000], 1.0); 2];
        add_noise(&mut b, &[1.0, 1.0], 11);
        assert_eq!(a, b);
        let n = a[0].len() as f64;
        let cross: f64 = a[0].samples.iter().zip(&a[1].samples).map(|(x, y)| x * y).sum::<f64>() / n;
        let p0 = a[0].mean_power();
        let p1 = a[1].mean_power();
        assert!((cross / (p0 * p1).sqrt()).abs() < 0.02);
    }

    #[test]
    fn errors() {
        let tx = PassbandBuffer::new(vec![1.0; 10], 12.5e6);
        let ch = ChannelModel::identity(1, 12.5e6);
        assert!(matches!(apply_channel(&tx, &ch, Some(10.0), 0), Err(ChannelError::ZeroBits)));
        let empty = PassbandBuffer::new(vec![], 12.5e6);
        assert!(matches!(apply_channel(&empty, &ch, None, 0), Err(ChannelError::EmptyInput)));
        let ch2 = ChannelModel::identity(1, 1e6);
        assert!(matches!(apply_channel(&tx, &ch2, None, 0), Err(ChannelError::RateMismatch { .. })));
    }

    #[test]
    fn tap_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ch = synthesize_channel(3, &ChannelProfile::default(), 2).unwrap();
        let path = dir.path().join("phantom.json");
        ch.save(&path).unwrap();
        assert!(dir.path().join("phantom.taps").exists());
        assert_eq!(ChannelModel::load(&path).unwrap(), ch);
    }
}
