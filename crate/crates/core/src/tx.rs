//! Transmitter: PN pilot generation, block-pilot frame layout and CP-OFDM
//! modulation.

use crate::config::{ConfigError, OfdmConfig};
use crate::iq::BasebandBuffer;
use crate::qam::{Constellation, QamError};
use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

/// Galois feedback mask for x^12 + x^6 + x^4 + x + 1.
const LFSR_MASK: u16 = 0x829;
const LFSR_BITS: u32 = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TxError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Qam(#[from] QamError),
    #[error("payload of {len} bits is not a whole number of {per_symbol}-bit OFDM symbols")]
    PayloadLength { len: usize, per_symbol: usize },
    #[error("grid has {got} columns, config expects {expected}")]
    GridShape { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SymbolKind {
    Pilot,
    Data,
}

/// Maximal-length LFSR over x^12 + x^6 + x^4 + x + 1.
#[derive(Debug, Clone)]
pub struct PnSequence {
    state: u16,
}

impl PnSequence {
    pub fn new(seed: u16) -> Option<Self> {
        let state = seed & ((1 << LFSR_BITS) - 1);
        (state != 0).then_some(PnSequence { state })
    }
}

impl Iterator for PnSequence {
    type Item = u8;

    fn next(&mut self) -> Option<u8> {
        let bit = (self.state & 1) as u8;
        self.state >>= 1;
        if bit == 1 {
            self.state ^= LFSR_MASK;
        }
        Some(bit)
    }
}

/// BPSK pilot vector, one chip per active subcarrier: bit 0 is +1, bit 1 is -1.
pub fn make_pilot(cfg: &OfdmConfig) -> Result<Vec<Complex64>, TxError> {
    let seed = cfg.pn_seed_value()?;
    let pn = PnSequence::new(seed).ok_or_else(|| ConfigError::PnSeed(cfg.pn_seed.clone()))?;
    Ok(pn
        .take(cfg.active_carriers)
        .map(|b| Complex64::new(1.0 - 2.0 * b as f64, 0.0))
        .collect())
}

/// Symbol kinds for a frame carrying `n_data` data symbols.
///
/// Pilots sit at every multiple of `pilot_period`; a trailing pilot closes the
/// last data block.
pub fn frame_layout(n_data: usize, pilot_period: usize) -> Vec<SymbolKind> {
    let mut kinds = vec![SymbolKind::Pilot];
    let mut remaining = n_data;
    while remaining > 0 {
        if kinds.len() % pilot_period == 0 {
            kinds.push(SymbolKind::Pilot);
        } else {
            kinds.push(SymbolKind::Data);
            remaining -= 1;
        }
    }
    if kinds.last() != Some(&SymbolKind::Pilot) {
        kinds.push(SymbolKind::Pilot);
    }
    kinds
}

/// Symbol kinds of a received frame of `n_symbols` symbols.
pub fn layout_for_length(n_symbols: usize, pilot_period: usize) -> Vec<SymbolKind> {
    (0..n_symbols)
        .map(|k| {
            if k % pilot_period == 0 || k + 1 == n_symbols {
                SymbolKind::Pilot
            } else {
                SymbolKind::Data
            }
        })
        .collect()
}

/// Number of OFDM symbols in a frame carrying `n_data` data symbols.
pub fn frame_symbol_count(n_data: usize, pilot_period: usize) -> usize {
    frame_layout(n_data, pilot_period).len()
}

/// Frequency-by-time grid of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGrid {
    /// `[n_symbols, active_carriers]`.
    pub symbols: Array2<Complex64>,
    pub kinds: Vec<SymbolKind>,
}

impl FrameGrid {
    pub fn n_symbols(&self) -> usize {
        self.kinds.len()
    }

    pub fn data_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == SymbolKind::Data)
            .map(|(i, _)| i)
    }

    pub fn pilot_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == SymbolKind::Pilot)
            .map(|(i, _)| i)
    }

    pub fn n_data(&self) -> usize {
        self.data_rows().count()
    }

    /// Data-row symbols in transmission order (subcarrier fastest).
    pub fn data_symbols(&self) -> Vec<Complex64> {
        self.data_rows()
            .flat_map(|r| self.symbols.row(r).to_vec())
            .collect()
    }

    /// Demaps the data rows back to payload bits.
    pub fn payload_bits(&self, cfg: &OfdmConfig) -> Result<Vec<u8>, TxError> {
        Ok(Constellation::new(cfg.qam_order)?.demap(&self.data_symbols()))
    }
}

pub fn build_frame(payload_bits: &[u8], cfg: &OfdmConfig) -> Result<FrameGrid, TxError> {
    let per_symbol = cfg.bits_per_ofdm_symbol();
    if payload_bits.len() % per_symbol != 0 {
        return Err(TxError::PayloadLength {
            len: payload_bits.len(),
            per_symbol,
        });
    }
    let constellation = Constellation::new(cfg.qam_order)?;
    let pilot = make_pilot(cfg)?;
    let n_data = payload_bits.len() / per_symbol;
    let kinds = frame_layout(n_data, cfg.pilot_period);
    let mut symbols = Array2::zeros((kinds.len(), cfg.active_carriers));
    let mut chunks = payload_bits.chunks_exact(per_symbol);
    for (r, kind) in kinds.iter().enumerate() {
        let mut row = symbols.row_mut(r);
        match kind {
            SymbolKind::Pilot => row.iter_mut().zip(&pilot).for_each(|(d, p)| *d = *p),
            SymbolKind::Data => {
                let bits = chunks.next().expect("layout matches data count");
                let pts = constellation.map(bits)?;
                row.iter_mut().zip(pts).for_each(|(d, p)| *d = p);
            }
        }
    }
    Ok(FrameGrid { symbols, kinds })
}

/// FFT bin of each active subcarrier, lowest frequency first.
///
/// Carriers occupy bins `-N_AC/2 ..= -1` and `1 ..= N_AC/2`; DC and the
/// band edges stay empty.
pub fn active_bins(cfg: &OfdmConfig) -> Vec<usize> {
    let half = cfg.active_carriers / 2;
    let n = cfg.fft_size;
    (0..cfg.active_carriers)
        .map(|i| if i < half { n - half + i } else { i - half + 1 })
        .collect()
}

/// Baseband frequency offset of each active subcarrier in units of the spacing.
pub fn active_offsets(cfg: &OfdmConfig) -> Vec<i64> {
    let half = (cfg.active_carriers / 2) as i64;
    (0..cfg.active_carriers as i64)
        .map(|i| if i < half { i - half } else { i - half + 1 })
        .collect()
}

/// Time-domain scale applied after the inverse FFT.
pub(crate) fn modulation_scale(cfg: &OfdmConfig) -> f64 {
    1.0 / (cfg.active_carriers as f64).sqrt()
}

/// CP-OFDM modulation of every grid row, scaled to unit mean sample power.
pub fn ofdm_modulate(grid: &FrameGrid, cfg: &OfdmConfig) -> Result<BasebandBuffer, TxError> {
    if grid.symbols.ncols() != cfg.active_carriers {
        return Err(TxError::GridShape {
            got: grid.symbols.ncols(),
            expected: cfg.active_carriers,
        });
    }
    let n = cfg.fft_size;
    let bins = active_bins(cfg);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let scale = modulation_scale(cfg);
    let mut out = Vec::with_capacity(grid.n_symbols() * cfg.symbol_len());
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for row in grid.symbols.rows() {
        buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (&b, &s) in bins.iter().zip(row) {
            buf[b] = s;
        }
        ifft.process(&mut buf);
        out.extend(buf[n - cfg.cp_len..].iter().map(|v| v * scale));
        out.extend(buf.iter().map(|v| v * scale));
    }
    Ok(BasebandBuffer::new(out, cfg.sample_rate))
}
