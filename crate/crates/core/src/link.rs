//! End-to-end link: payload bits through the transmitter, the array channel,
//! per-element receivers and the combiner.

use crate::channel::{add_noise, noise_sigma_for_ebn0, propagate, ChannelError, ChannelModel};
use crate::combine::{decode_link, select_elements, CombineError, CombineInput, CombineMode, ElementSelection, LinkReport};
use crate::config::{ConfigError, OfdmConfig};
use crate::convert::{up_convert, ConvertError};
use crate::iq::{IqError, PassbandBuffer};
use crate::qam::QamError;
use crate::rx::{receive_elements, RxError, RxOptions, SyncResult};
use crate::tx::{build_frame, ofdm_modulate, FrameGrid, TxError};
use crate::video::VideoError;

#[derive(Debug, thiserror::Error)]
pub enum LinkError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Qam(#[from] QamError),
    #[error(transparent)]
    Tx(#[from] TxError),
    #[error(transparent)]
    Convert(#[from] ConvertError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Rx(#[from] RxError),
    #[error(transparent)]
    Combine(#[from] CombineError),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Iq(#[from] IqError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Spec(String),
}

/// How receiver noise is set.
#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    Off,
    /// Each element's received Eb/N0, dB.
    EbN0(f64),
    /// Fixed per-element standard deviations, independent of signal level.
    Sigma(Vec<f64>),
}

/// A modulated frame ready for the channel.
#[derive(Debug, Clone)]
pub struct Transmission {
    pub bits: Vec<u8>,
    pub grid: FrameGrid,
    pub passband: PassbandBuffer,
}

pub fn transmit(bits: &[u8], cfg: &OfdmConfig) -> Result<Transmission, LinkError> {
    let grid = build_frame(bits, cfg)?;
    let bb = ofdm_modulate(&grid, cfg)?;
    let passband = up_convert(&bb, cfg, cfg.passband_rate)?;
    Ok(Transmission {
        bits: bits.to_vec(),
        grid,
        passband,
    })
}

/// Per-element noise deviations that give `ebn0_db` for `tx` sent at unit
/// amplitude through `ch`.
pub fn calibrate_noise(tx: &Transmission, ch: &ChannelModel, ebn0_db: f64) -> Result<Vec<f64>, LinkError> {
    Ok(propagate(&tx.passband, ch)?
        .iter()
        .map(|y| noise_sigma_for_ebn0(y.energy(), tx.bits.len(), ebn0_db))
        .collect())
}

/// Received passband buffers, one per channel element.
pub fn through_channel(
    tx: &Transmission,
    ch: &ChannelModel,
    amplitude: f64,
    noise: &Noise,
    noise_seed: u64,
) -> Result<Vec<PassbandBuffer>, LinkError> {
    let scaled = tx.passband.scaled(amplitude);
    let mut rx = propagate(&scaled, ch)?;
    let sigmas: Vec<f64> = match noise {
        Noise::Off => return Ok(rx),
        Noise::EbN0(db) => rx
            .iter()
            .map(|y| noise_sigma_for_ebn0(y.energy(), tx.bits.len(), *db))
            .collect(),
        Noise::Sigma(s) => {
            if s.len() != rx.len() {
                return Err(LinkError::Spec(format!("{} noise levels for {} elements", s.len(), rx.len())));
            }
            s.clone()
        }
    };
    add_noise(&mut rx, &sigmas, noise_seed);
    Ok(rx)
}

/// Receiver outputs of one frame across all elements.
#[derive(Debug, Clone)]
pub struct ReceivedFrame {
    pub input: CombineInput,
    pub syncs: Vec<SyncResult>,
    pub dropped_symbols: usize,
    pub worst_pilot_check: f64,
}

pub fn receive_frame(
    rx: &[PassbandBuffer],
    cfg: &OfdmConfig,
    opts: &RxOptions,
) -> Result<ReceivedFrame, LinkError> {
    let outs = receive_elements(rx, cfg, opts)?;
    Ok(ReceivedFrame {
        input: CombineInput::from_elements(&outs)?,
        syncs: outs.iter().map(|o| o.sync).collect(),
        dropped_symbols: outs.iter().map(|o| o.dropped_symbols).max().unwrap_or(0),
        worst_pilot_check: outs.iter().map(|o| o.pilot_check).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone)]
pub struct LinkSettings {
    pub amplitude: f64,
    pub noise: Noise,
    pub noise_seed: u64,
    pub rx: RxOptions,
    pub combine: CombineMode,
    /// Elements combined; `None` uses all of them.
    pub combine_count: Option<usize>,
    pub selection: ElementSelection,
}

impl Default for LinkSettings {
    fn default() -> Self {
        LinkSettings {
            amplitude: 1.0,
            noise: Noise::Off,
            noise_seed: 0,
            rx: RxOptions::default(),
            combine: CombineMode::default(),
            combine_count: None,
            selection: ElementSelection::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinkOutcome {
    pub bits: Vec<u8>,
    pub report: LinkReport,
    pub elements_used: Vec<usize>,
    pub frame: ReceivedFrame,
}

/// Sends `bits` as one frame and decodes it.
pub fn simulate_link(
    bits: &[u8],
    cfg: &OfdmConfig,
    ch: &ChannelModel,
    settings: &LinkSettings,
) -> Result<LinkOutcome, LinkError> {
    let tx = transmit(bits, cfg)?;
    // Centre selection never needs the unused elements.
    let (ch, offset) = match (settings.combine_count, settings.selection) {
        (Some(k), ElementSelection::Centre) if k <= ch.n_elements() && k > 0 => {
            let start = (ch.n_elements() - k) / 2;
            (ch.subset(&(start..start + k).collect::<Vec<_>>()), start)
        }
        _ => (ch.clone(), 0),
    };
    let noise = match &settings.noise {
        Noise::Sigma(s) if offset > 0 || s.len() != ch.n_elements() => {
            Noise::Sigma(s.iter().skip(offset).take(ch.n_elements()).copied().collect())
        }
        other => other.clone(),
    };
    let rx = through_channel(&tx, &ch, settings.amplitude, &noise, settings.noise_seed)?;
    let mut opts = settings.rx;
    opts.expected_symbols.get_or_insert(tx.grid.n_symbols());
    let frame = receive_frame(&rx, cfg, &opts)?;
    let count = settings.combine_count.unwrap_or(frame.input.n_elements()).min(frame.input.n_elements());
    let picked = select_elements(&frame.input, count, settings.selection)?;
    let (out, report) = decode_link(&frame.input.select(&picked), cfg, settings.combine, Some(bits))?;
    Ok(LinkOutcome {
        bits: out,
        report,
        elements_used: picked.iter().map(|j| j + offset).collect(),
        frame,
    })
}
