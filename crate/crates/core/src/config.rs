//! Modem mode parameters and the quantities derived from them.

use serde::{Deserialize, Serialize};
use std::path::Path;

/// Passband simulation rate used when a config does not name one.
pub const DEFAULT_PASSBAND_RATE: f64 = 12.5e6;

/// Number of symbol periods the CP timing metric is averaged over.
pub const DEFAULT_SYNC_WINDOWS: usize = 8;

/// Names of the presets compiled into the crate.
pub const PRESET_NAMES: [&str; 3] = ["std-16qam", "std-256qam", "wide-256qam"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("fft_size must be a positive power of two, got {0}")]
    FftSize(usize),
    #[error("active_carriers must be positive and below fft_size ({fft_size}), got {active_carriers}")]
    ActiveCarriers {
        active_carriers: usize,
        fft_size: usize,
    },
    #[error("active_carriers must be even, got {0}")]
    ActiveCarriersOdd(usize),
    #[error("cp_len must be positive and below fft_size ({fft_size}), got {cp_len}")]
    CpLen { cp_len: usize, fft_size: usize },
    #[error("sample_rate must be positive and finite, got {0}")]
    SampleRate(f64),
    #[error("qam_order must be one of 4, 16, 64, 256, got {0}")]
    QamOrder(u32),
    #[error("center_frequency must be positive and finite, got {0}")]
    CenterFrequency(f64),
    #[error("pilot_period must be at least 2, got {0}")]
    PilotPeriod(usize),
    #[error("pn_seed must be 1 to 12 binary digits with at least one 1, got {0:?}")]
    PnSeed(String),
    #[error("passband_rate must be positive and finite, got {0}")]
    PassbandRate(f64),
    #[error("sync_windows must be at least 1")]
    SyncWindows,
    #[error("upper band edge {upper_edge_hz} Hz exceeds passband Nyquist {nyquist_hz} Hz")]
    Aliasing { upper_edge_hz: f64, nyquist_hz: f64 },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("config io: {0}")]
    Io(String),
    #[error("config json: {0}")]
    Json(String),
}

/// Full parameterization of one modem mode.
///
/// Serialized field-for-field as JSON. `passband_rate` and `sync_windows`
/// are optional in the document and take their defaults when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmConfig {
    /// FFT length in samples.
    pub fft_size: usize,
    /// Number of modulated subcarriers, split evenly either side of DC.
    pub active_carriers: usize,
    /// Cyclic prefix length in samples.
    pub cp_len: usize,
    /// Complex baseband sample rate, samples/s.
    pub sample_rate: f64,
    /// Constellation size (square QAM).
    pub qam_order: u32,
    /// Carrier frequency of the passband waveform, Hz.
    pub center_frequency: f64,
    /// A pilot symbol is sent every `pilot_period` OFDM symbols.
    pub pilot_period: usize,
    /// LFSR seed for the pilot sequence, as a string of binary digits.
    pub pn_seed: String,
    /// Real passband simulation rate, samples/s.
    #[serde(default = "default_passband_rate")]
    pub passband_rate: f64,
    /// Symbol periods averaged by the CP timing metric.
    #[serde(default = "default_sync_windows")]
    pub sync_windows: usize,
}

fn default_passband_rate() -> f64 {
    DEFAULT_PASSBAND_RATE
}

fn default_sync_windows() -> usize {
    DEFAULT_SYNC_WINDOWS
}

/// Quantities computed from a valid [`OfdmConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedParams {
    /// Hz.
    pub subcarrier_spacing: f64,
    /// Seconds, including the cyclic prefix.
    pub symbol_duration: f64,
    /// Hz.
    pub occupied_bandwidth: f64,
    /// Bits/s counting every symbol as data.
    pub raw_bit_rate: f64,
    /// Bits/s after pilot overhead.
    pub payload_bit_rate: f64,
}

impl OfdmConfig {
    /// Looks up one of the compiled-in presets.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let (sample_rate, qam_order, center_frequency) = match name {
            "std-16qam" => (1.25e6, 16, 2.4e6),
            "std-256qam" => (1.25e6, 256, 2.4e6),
            // 125 MSPS / 40
            "wide-256qam" => (3.125e6, 256, 3.2e6),
            _ => return Err(ConfigError::UnknownPreset(name.to_string())),
        };
        Ok(OfdmConfig {
            fft_size: 4096,
            active_carriers: 3072,
            cp_len: 512,
            sample_rate,
            qam_order,
            center_frequency,
            pilot_period: 12,
            pn_seed: "000000000001".to_string(),
            passband_rate: DEFAULT_PASSBAND_RATE,
            sync_windows: DEFAULT_SYNC_WINDOWS,
        })
    }

    /// Resolves either a preset name or a path to a JSON config.
    pub fn load(name_or_path: &str) -> Result<Self, ConfigError> {
        if PRESET_NAMES.contains(&name_or_path) {
            return Self::preset(name_or_path);
        }
        Self::from_json_file(name_or_path)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: OfdmConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
        cfg.validate()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(e.to_string()))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Returns the config unchanged when every invariant holds, otherwise the
    /// first violation found.
    pub fn validate(self) -> Result<Self, ConfigError> {
        if self.fft_size == 0 || !self.fft_size.is_power_of_two() {
            return Err(ConfigError::FftSize(self.fft_size));
        }
        if self.active_carriers == 0 || self.active_carriers >= self.fft_size {
            return Err(ConfigError::ActiveCarriers {
                active_carriers: self.active_carriers,
                fft_size: self.fft_size,
            });
        }
        if self.active_carriers % 2 != 0 {
            return Err(ConfigError::ActiveCarriersOdd(self.active_carriers));
        }
        if self.cp_len == 0 || self.cp_len >= self.fft_size {
            return Err(ConfigError::CpLen {
                cp_len: self.cp_len,
                fft_size: self.fft_size,
            });
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(ConfigError::SampleRate(self.sample_rate));
        }
        if !matches!(self.qam_order, 4 | 16 | 64 | 256) {
            return Err(ConfigError::QamOrder(self.qam_order));
        }
        if !(self.center_frequency.is_finite() && self.center_frequency > 0.0) {
            return Err(ConfigError::CenterFrequency(self.center_frequency));
        }
        if self.pilot_period < 2 {
            return Err(ConfigError::PilotPeriod(self.pilot_period));
        }
        parse_pn_seed(&self.pn_seed)?;
        if !(self.passband_rate.is_finite() && self.passband_rate > 0.0) {
            return Err(ConfigError::PassbandRate(self.passband_rate));
        }
        if self.sync_windows == 0 {
            return Err(ConfigError::SyncWindows);
        }
        let upper_edge_hz = self.center_frequency
            + (self.active_carriers / 2) as f64 * self.sample_rate / self.fft_size as f64;
        let nyquist_hz = self.passband_rate / 2.0;
        if upper_edge_hz > nyquist_hz {
            return Err(ConfigError::Aliasing {
                upper_edge_hz,
                nyquist_hz,
            });
        }
        Ok(self)
    }

    pub fn derive(&self) -> DerivedParams {
        let subcarrier_spacing = self.sample_rate / self.fft_size as f64;
        let symbol_duration = self.symbol_len() as f64 / self.sample_rate;
        let occupied_bandwidth = self.active_carriers as f64 * subcarrier_spacing;
        let raw_bit_rate =
            (self.active_carriers * self.bits_per_qam_symbol()) as f64 / symbol_duration;
        let payload_bit_rate =
            raw_bit_rate * (self.pilot_period - 1) as f64 / self.pilot_period as f64;
        DerivedParams {
            subcarrier_spacing,
            symbol_duration,
            occupied_bandwidth,
            raw_bit_rate,
            payload_bit_rate,
        }
    }

    /// Samples per OFDM symbol including the cyclic prefix.
    pub fn symbol_len(&self) -> usize {
        self.fft_size + self.cp_len
    }

    pub fn bits_per_qam_symbol(&self) -> usize {
        self.qam_order.trailing_zeros() as usize
    }

    /// Payload bits carried by one data OFDM symbol.
    pub fn bits_per_ofdm_symbol(&self) -> usize {
        self.active_carriers * self.bits_per_qam_symbol()
    }

    /// Cyclic prefix duration in seconds.
    pub fn cp_duration(&self) -> f64 {
        self.cp_len as f64 / self.sample_rate
    }

    /// Interpolation ratio between the passband and baseband rates, if integral.
    pub fn rate_ratio(&self) -> Option<usize> {
        integer_ratio(self.passband_rate, self.sample_rate)
    }

    pub fn pn_seed_value(&self) -> Result<u16, ConfigError> {
        parse_pn_seed(&self.pn_seed)
    }
}

/// `num / den` when it is a positive integer (within floating-point noise).
pub(crate) fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    if !(num > 0.0 && den > 0.0) {
        return None;
    }
    let r = num / den;
    let n = r.round();
    if n >= 1.0 && (r - n).abs() < 1e-9 * n {
        Some(n as usize)
    } else {
        None
    }
}

/// Parses a 1..=12 digit binary string into a nonzero LFSR state.
pub fn parse_pn_seed(seed: &str) -> Result<u16, ConfigError> {
    let bad = || ConfigError::PnSeed(seed.to_string());
    if seed.is_empty() || seed.len() > 12 {
        return Err(bad());
    }
    let mut v = 0u16;
    for c in seed.chars() {
        v = (v << 1)
            | match c {
                '0' => 0,
                '1' => 1,
                _ => return Err(bad()),
            };
    }
    if v == 0 {
        return Err(bad());
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std16() -> OfdmConfig {
        OfdmConfig::preset("std-16qam").unwrap()
    }

    #[test]
    fn presets_validate() {
        for name in PRESET_NAMES {
            OfdmConfig::preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn standard_mode_tuple_is_valid() {
        let cfg = std16();
        assert_eq!(
            (cfg.fft_size, cfg.active_carriers, cfg.cp_len, cfg.qam_order, cfg.pilot_period),
            (4096, 3072, 512, 16, 12)
        );
        assert_eq!(cfg.sample_rate, 1.25e6);
        assert_eq!(cfg.center_frequency, 2.4e6);
        assert_eq!(cfg.clone().validate(), Ok(cfg));
    }

    #[test]
    fn rejects_each_field() {
        let mut c = std16();
        c.active_carriers = 4096;
        assert!(matches!(c.validate(), Err(ConfigError::ActiveCarriers { .. })));

        let mut c = std16();
        c.cp_len = 4096;
        assert!(matches!(c.validate(), Err(ConfigError::CpLen { .. })));

        let mut c = std16();
        c.active_carriers = 3071;
        assert_eq!(c.validate(), Err(ConfigError::ActiveCarriersOdd(3071)));

        let mut c = std16();
        c.qam_order = 32;
        assert_eq!(c.validate(), Err(ConfigError::QamOrder(32)));

        let mut c = std16();
        c.pilot_period = 1;
        assert_eq!(c.validate(), Err(ConfigError::PilotPeriod(1)));

        let mut c = std16();
        c.pn_seed = "000000000000".into();
        assert!(matches!(c.validate(), Err(ConfigError::PnSeed(_))));

        let mut c = std16();
        c.center_frequency = 6.0e6;
        assert!(matches!(c.validate(), Err(ConfigError::Aliasing { .. })));

        let mut c = std16();
        c.sample_rate = -1.0;
        assert!(matches!(c.validate(), Err(ConfigError::SampleRate(_))));
    }

    #[test]
    fn derived_standard_mode() {
        let d = std16().derive();
        assert!((d.subcarrier_spacing - 305.17578125).abs() < 1e-9);
        assert!((d.occupied_bandwidth - 937_500.0).abs() < 1e-6);
        // 3072 * 4 * 11/12 / 3.6864 ms
        assert!((d.payload_bit_rate - 3_055_555.555_555).abs() < 1.0);
        assert!(d.payload_bit_rate < d.raw_bit_rate);
    }

    #[test]
    fn derived_wide_mode() {
        let d = OfdmConfig::preset("wide-256qam").unwrap().derive();
        // 3072 * 8 * 11/12 / 1.47456 ms
        let expect = 3072.0 * 8.0 * (11.0 / 12.0) / 1.47456e-3;
        assert!((d.payload_bit_rate - expect).abs() < 1e-3);
        assert!((d.payload_bit_rate / 1e6 - 15.28).abs() < 0.01);
        assert!((d.subcarrier_spacing - 762.939_453_125).abs() < 1e-9);
    }

    #[test]
    fn derive_is_pure() {
        let c = OfdmConfig::preset("std-256qam").unwrap();
        let a = c.derive();
        let b = c.derive();
        assert_eq!(a.payload_bit_rate.to_bits(), b.payload_bit_rate.to_bits());
        assert_eq!(a.symbol_duration.to_bits(), b.symbol_duration.to_bits());
    }

    #[test]
    fn cp_duration_matches_table_values() {
        let s = std16().cp_duration();
        let w = OfdmConfig::preset("wide-256qam").unwrap().cp_duration();
        assert!((s - 409e-6).abs() < 1e-6);
        assert!((w - 164e-6).abs() < 1e-6);
    }

    #[test]
    fn json_round_trip_and_defaults() {
        let c = std16();
        let back = OfdmConfig::from_json_str(&c.to_json_pretty()).unwrap();
        assert_eq!(back, c);

        let minimal = r#"{"fft_size":64,"active_carriers":48,"cp_len":16,"sample_rate":1e5,
            "qam_order":4,"center_frequency":2e5,"pilot_period":4,"pn_seed":"101"}"#;
        let m = OfdmConfig::from_json_str(minimal).unwrap();
        assert_eq!(m.passband_rate, DEFAULT_PASSBAND_RATE);
        assert_eq!(m.sync_windows, DEFAULT_SYNC_WINDOWS);
        assert_eq!(m.pn_seed_value().unwrap(), 0b101);
    }

    #[test]
    fn integer_ratio_checks() {
        assert_eq!(integer_ratio(12.5e6, 1.25e6), Some(10));
        assert_eq!(integer_ratio(12.5e6, 3.125e6), Some(4));
        assert_eq!(integer_ratio(12.5e6, 3.13e6), None);
    }
}
