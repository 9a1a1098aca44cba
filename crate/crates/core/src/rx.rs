//! Per-element receiver: down-conversion, CP timing and frequency-offset
//! recovery, FFT demodulation, block-pilot channel estimation and
//! zero-forcing equalization.

use crate::config::OfdmConfig;
use crate::convert::{down_convert, ConvertError};
use crate::iq::{BasebandBuffer, PassbandBuffer};
use crate::tx::{active_bins, layout_for_length, make_pilot, modulation_scale, SymbolKind, TxError};
use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Bins whose channel magnitude falls below this fraction of the row median
/// are erased instead of equalized.
pub const ERASURE_RATIO: f64 = 1e-6;

/// Impulse-response taps weaker than this fraction of the strongest tap are
/// ignored when placing the FFT window.
const TAP_THRESHOLD: f64 = 0.01;
const MIN_CFO_UPDATE_HZ: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RxError {
    #[error("buffer of {len} samples is shorter than the {needed} needed")]
    TooShort { len: usize, needed: usize },
    #[error("need at least two pilot rows, found {0}")]
    TooFewPilots(usize),
    #[error("grid shapes differ: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error(transparent)]
    Convert(#[from] ConvertError),
    #[error(transparent)]
    Tx(#[from] TxError),
}

/// Symbol timing and frequency offset of one received buffer.
///
/// The FFT window of symbol `k` starts at
/// `symbol_start + cp_len - fft_backoff + k * (fft_size + cp_len)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SyncResult {
    pub symbol_start: usize,
    pub cfo_hz: f64,
    /// Samples the FFT window is moved back into the cyclic prefix.
    pub fft_backoff: usize,
}

/// Per-subcarrier channel response for every grid row.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub h: Array2<Complex64>,
    pub mag: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equalized {
    pub symbols: Array2<Complex64>,
    pub erased: Array2<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demodulated {
    pub grid: Array2<Complex64>,
    /// Trailing partial symbols discarded.
    pub dropped: usize,
}

/// CP correlation timing over `cfg.sync_windows` symbol periods.
///
/// For each candidate offset `d` in one symbol period the lag-`fft_size`
/// products over the CP length are summed coherently across windows. The
/// offset with the largest magnitude is the symbol start; the phase of that
/// sum gives the frequency offset.
pub fn estimate_sync(bb: &BasebandBuffer, cfg: &OfdmConfig) -> Result<SyncResult, RxError> {
    let n = cfg.fft_size;
    let cp = cfg.cp_len;
    let ns = cfg.symbol_len();
    let r = &bb.samples;
    if r.len() < 3 * ns {
        return Err(RxError::TooShort {
            len: r.len(),
            needed: 3 * ns,
        });
    }
    // window w at candidate d reads r[d + w*ns .. d + w*ns + cp + n]
    let fit = (r.len() - (ns - 1) - cp - n) / ns + 1;
    let windows = cfg.sync_windows.min(fit).max(1);
    let span = (ns - 1) + (windows - 1) * ns + cp;
    let q: Vec<Complex64> = (0..span).map(|i| r[i] * r[i + n].conj()).collect();
    let cumsum = |v: &mut dyn Iterator<Item = Complex64>| {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut out = vec![acc];
        for x in v {
            acc += x;
            out.push(acc);
        }
        out
    };
    let pq = cumsum(&mut q.iter().copied());
    let pe = cumsum(&mut (0..span + n).map(|i| Complex64::new(r[i].norm_sqr(), 0.0)));
    let sum = |p: &[Complex64], m: usize| p[m + cp] - p[m];
    // normalized so data-dependent symbol energy cannot favour a neighbour
    let mut best = (0usize, Complex64::new(0.0, 0.0), f64::MIN);
    for d in 0..ns {
        let mut p = Complex64::new(0.0, 0.0);
        let (mut e1, mut e2) = (0.0, 0.0);
        for w in 0..windows {
            let m = d + w * ns;
            p += sum(&pq, m);
            e1 += sum(&pe, m).re;
            e2 += sum(&pe, m + n).re;
        }
        let denom = (e1 * e2).sqrt();
        let metric = if denom > 0.0 { p.norm() / denom } else { 0.0 };
        if metric > best.2 {
            best = (d, p, metric);
        }
    }
    let spacing = cfg.derive().subcarrier_spacing;
    Ok(SyncResult {
        symbol_start: best.0,
        cfo_hz: -best.1.arg() / (2.0 * PI) * spacing,
        fft_backoff: 0,
    })
}

/// Multiplies sample `n` by `exp(-j 2 pi cfo n / fs)`.
pub fn compensate_cfo(bb: &BasebandBuffer, cfo_hz: f64) -> BasebandBuffer {
    let w = -2.0 * PI * cfo_hz / bb.sample_rate;
    BasebandBuffer::new(
        bb.samples
            .iter()
            .enumerate()
            .map(|(n, s)| s * Complex64::from_polar(1.0, w * n as f64))
            .collect(),
        bb.sample_rate,
    )
}

fn fft_window(
    bb: &BasebandBuffer,
    start: usize,
    cfg: &OfdmConfig,
    fft: &dyn rustfft::Fft<f64>,
    bins: &[usize],
) -> Vec<Complex64> {
    let mut buf = bb.samples[start..start + cfg.fft_size].to_vec();
    fft.process(&mut buf);
    let scale = 1.0 / (modulation_scale(cfg) * cfg.fft_size as f64);
    bins.iter().map(|&b| buf[b] * scale).collect()
}

/// Re-centres the FFT window using the impulse response seen on the first
/// pilot symbol.
///
/// CP correlation peaks near the energy centroid of the channel, which sits
/// late whenever reflections carry a large share of the power. Taps found in
/// the strongest CP-length stretch of the pilot impulse response bound the
/// window positions free of inter-symbol interference; the window is placed
/// midway between those bounds.
pub fn refine_timing(
    bb: &BasebandBuffer,
    coarse: &SyncResult,
    cfg: &OfdmConfig,
) -> Result<SyncResult, RxError> {
    let n = cfg.fft_size;
    let cp = cfg.cp_len;
    let w0 = coarse.symbol_start + cp - cp / 2;
    if w0 + n > bb.len() {
        return Err(RxError::TooShort {
            len: bb.len(),
            needed: w0 + n,
        });
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let bins = active_bins(cfg);
    let pilot = make_pilot(cfg)?;
    let rx = fft_window(bb, w0, cfg, fft.as_ref(), &bins);

    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    for ((&b, y), p) in bins.iter().zip(&rx).zip(&pilot) {
        spectrum[b] = y / p;
    }
    ifft.process(&mut spectrum);
    let power: Vec<f64> = spectrum.iter().map(|c| c.norm_sqr()).collect();

    // strongest circular stretch of cp taps
    let mut energy: f64 = (0..cp).map(|i| power[i]).sum();
    let mut best = (0usize, energy);
    for q in 1..n {
        energy += power[(q + cp - 1) % n] - power[q - 1];
        if energy > best.1 {
            best = (q, energy);
        }
    }
    let q = best.0;
    let peak = (0..cp).map(|i| power[(q + i) % n]).fold(0.0, f64::max);
    let strong: Vec<usize> = (0..cp)
        .filter(|&i| power[(q + i) % n] >= TAP_THRESHOLD * peak)
        .collect();
    let (lo, hi) = match (strong.first(), strong.last()) {
        (Some(&lo), Some(&hi)) => (lo as i64, hi as i64),
        _ => return Ok(*coarse),
    };
    let q_signed = if q > n / 2 { q as i64 - n as i64 } else { q as i64 };
    let lo_abs = q_signed + lo;
    let hi_abs = q_signed + hi;
    let shift = ((lo_abs + hi_abs - cp as i64) as f64 / 2.0).round() as i64;
    let shift = shift.clamp(-(cp as i64), cp as i64);
    let w = (w0 as i64 + shift).max(0) as usize;
    Ok(if w >= cp {
        SyncResult {
            symbol_start: w - cp,
            cfo_hz: coarse.cfo_hz,
            fft_backoff: 0,
        }
    } else {
        SyncResult {
            symbol_start: 0,
            cfo_hz: coarse.cfo_hz,
            fft_backoff: cp - w,
        }
    })
}

/// FFT of every complete symbol from `sync.symbol_start` onward; rows hold the
/// active subcarriers in transmit order.
pub fn demodulate_symbols(
    bb: &BasebandBuffer,
    sync: &SyncResult,
    cfg: &OfdmConfig,
) -> Result<Demodulated, RxError> {
    let ns = cfg.symbol_len();
    let start = sync.symbol_start;
    if start + ns > bb.len() {
        return Err(RxError::TooShort {
            len: bb.len(),
            needed: start + ns,
        });
    }
    let avail = bb.len() - start;
    let n_sym = avail / ns;
    let dropped = usize::from(avail % ns != 0);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let bins = active_bins(cfg);
    let mut grid = Array2::zeros((n_sym, cfg.active_carriers));
    let backoff = sync.fft_backoff.min(cfg.cp_len);
    for k in 0..n_sym {
        let w = start + cfg.cp_len - backoff + k * ns;
        let row = fft_window(bb, w, cfg, fft.as_ref(), &bins);
        grid.row_mut(k).iter_mut().zip(row).for_each(|(d, v)| *d = v);
    }
    Ok(Demodulated { grid, dropped })
}

/// Pilot-row division with per-subcarrier linear interpolation in time.
pub fn estimate_channel(rx_grid: &Array2<Complex64>, cfg: &OfdmConfig) -> Result<ChannelEstimate, RxError> {
    let (rows, cols) = rx_grid.dim();
    if cols != cfg.active_carriers {
        return Err(RxError::Shape((rows, cols), (rows, cfg.active_carriers)));
    }
    let kinds = layout_for_length(rows, cfg.pilot_period);
    let pilot_rows: Vec<usize> = (0..rows).filter(|&r| kinds[r] == SymbolKind::Pilot).collect();
    if pilot_rows.len() < 2 {
        return Err(RxError::TooFewPilots(pilot_rows.len()));
    }
    let pilot = make_pilot(cfg)?;
    let mut h = Array2::zeros((rows, cols));
    for &r in &pilot_rows {
        for i in 0..cols {
            h[[r, i]] = rx_grid[[r, i]] / pilot[i];
        }
    }
    for pair in pilot_rows.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let span = (b - a) as f64;
        for r in a + 1..b {
            let t = (r - a) as f64 / span;
            for i in 0..cols {
                h[[r, i]] = h[[a, i]] * (1.0 - t) + h[[b, i]] * t;
            }
        }
    }
    let mag = h.mapv(|c: Complex64| c.norm());
    Ok(ChannelEstimate { h, mag })
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Zero-forcing equalization. Near-zero bins are erased and output as zero.
pub fn equalize(rx_grid: &Array2<Complex64>, est: &ChannelEstimate) -> Result<Equalized, RxError> {
    if rx_grid.dim() != est.h.dim() {
        return Err(RxError::Shape(rx_grid.dim(), est.h.dim()));
    }
    let mut symbols = Array2::zeros(rx_grid.dim());
    let mut erased = Array2::from_elem(rx_grid.dim(), false);
    for r in 0..rx_grid.nrows() {
        let mut mags = est.mag.row(r).to_vec();
        let floor = ERASURE_RATIO * median(&mut mags);
        for i in 0..rx_grid.ncols() {
            let h = est.h[[r, i]];
            let m = est.mag[[r, i]];
            if !(m.is_finite() && m > 0.0 && m >= floor) {
                erased[[r, i]] = true;
                continue;
            }
            let v = rx_grid[[r, i]] / h;
            if v.re.is_finite() && v.im.is_finite() {
                symbols[[r, i]] = v;
            } else {
                erased[[r, i]] = true;
            }
        }
    }
    Ok(Equalized { symbols, erased })
}

/// How symbol timing is shared across elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimingMode {
    /// Each element runs its own timing recovery.
    #[default]
    PerElement,
    /// Element 0's timing and frequency offset are applied to all elements.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RxOptions {
    pub timing: TimingMode,
    /// Use the CP correlation peak as is, without pilot-based window placement.
    pub coarse_timing_only: bool,
    /// Number of OFDM symbols in the frame, when known.
    pub expected_symbols: Option<usize>,
}

/// Outputs of one receive element, restricted to data rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementOutput {
    pub sync: SyncResult,
    /// `[n_data, active_carriers]` equalized symbols.
    pub symbols: Array2<Complex64>,
    /// Channel magnitudes on the data rows.
    pub mag: Array2<f64>,
    pub erased: Array2<bool>,
    pub dropped_symbols: usize,
    /// Worst deviation of an equalized pilot from the transmitted pilot.
    pub pilot_check: f64,
    pub n_symbols: usize,
}

fn sync_element(bb: &BasebandBuffer, cfg: &OfdmConfig, opts: &RxOptions) -> Result<SyncResult, RxError> {
    let coarse = estimate_sync(bb, cfg)?;
    if opts.coarse_timing_only {
        return Ok(coarse);
    }
    refine_timing(&compensate_cfo(bb, coarse.cfo_hz), &coarse, cfg)
}

fn demodulate_corrected(
    bb: &BasebandBuffer,
    sync: &SyncResult,
    cfg: &OfdmConfig,
    opts: &RxOptions,
) -> Result<Demodulated, RxError> {
    let corrected = compensate_cfo(bb, sync.cfo_hz);
    let mut demod = demodulate_symbols(&corrected, sync, cfg)?;
    if let Some(expect) = opts.expected_symbols {
        if demod.grid.nrows() > expect {
            demod.dropped += demod.grid.nrows() - expect;
            demod.grid = demod.grid.slice(ndarray::s![..expect, ..]).to_owned();
        } else if demod.grid.nrows() < expect {
            return Err(RxError::TooShort {
                len: bb.len(),
                needed: sync.symbol_start + expect * cfg.symbol_len(),
            });
        }
    }
    Ok(demod)
}

/// Frequency offset left after CP-based correction, from the phase drift
/// between consecutive pilot symbols. Unambiguous within half the inverse
/// pilot spacing.
pub fn pilot_cfo_residual(rx_grid: &Array2<Complex64>, cfg: &OfdmConfig) -> Option<f64> {
    let kinds = layout_for_length(rx_grid.nrows(), cfg.pilot_period);
    let pilot_rows: Vec<usize> = (0..rx_grid.nrows()).filter(|&r| kinds[r] == SymbolKind::Pilot).collect();
    let mut phase = 0.0;
    let mut weight = 0.0;
    for pair in pilot_rows.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        // pilots are identical, so the product carries only channel drift
        let c: Complex64 = rx_grid
            .row(b)
            .iter()
            .zip(rx_grid.row(a).iter())
            .map(|(y1, y0)| y1 * y0.conj())
            .sum();
        if !c.is_finite() {
            return None;
        }
        phase += c.norm() * c.arg();
        weight += c.norm() * (b - a) as f64;
    }
    if weight == 0.0 {
        return None;
    }
    let per_symbol = phase / weight;
    Some(per_symbol / (2.0 * PI) * cfg.sample_rate / cfg.symbol_len() as f64)
}

/// Runs the receive chain on an already down-converted buffer.
pub fn receive_baseband(
    bb: &BasebandBuffer,
    sync: &SyncResult,
    cfg: &OfdmConfig,
    opts: &RxOptions,
) -> Result<ElementOutput, RxError> {
    let mut sync = *sync;
    let mut demod = demodulate_corrected(bb, &sync, cfg, opts)?;
    if let Some(residual) = pilot_cfo_residual(&demod.grid, cfg) {
        if residual.abs() > MIN_CFO_UPDATE_HZ {
            sync.cfo_hz += residual;
            demod = demodulate_corrected(bb, &sync, cfg, opts)?;
        }
    }
    let est = estimate_channel(&demod.grid, cfg)?;
    let eq = equalize(&demod.grid, &est)?;
    let n_symbols = demod.grid.nrows();
    let kinds = layout_for_length(n_symbols, cfg.pilot_period);
    let pilot = make_pilot(cfg)?;
    let mut pilot_check: f64 = 0.0;
    for r in (0..n_symbols).filter(|&r| kinds[r] == SymbolKind::Pilot) {
        for (i, p) in pilot.iter().enumerate() {
            if !eq.erased[[r, i]] {
                pilot_check = pilot_check.max((eq.symbols[[r, i]] - p).norm());
            }
        }
    }
    let data_rows: Vec<usize> = (0..n_symbols).filter(|&r| kinds[r] == SymbolKind::Data).collect();
    Ok(ElementOutput {
        sync,
        symbols: eq.symbols.select(Axis(0), &data_rows),
        mag: est.mag.select(Axis(0), &data_rows),
        erased: eq.erased.select(Axis(0), &data_rows),
        dropped_symbols: demod.dropped,
        pilot_check,
        n_symbols,
    })
}

/// Down-conversion through equalization for one element.
pub fn receive_element(
    pb: &PassbandBuffer,
    cfg: &OfdmConfig,
    opts: &RxOptions,
) -> Result<ElementOutput, RxError> {
    let bb = down_convert(pb, cfg)?;
    let sync = sync_element(&bb, cfg, opts)?;
    receive_baseband(&bb, &sync, cfg, opts)
}

/// Receives every element in parallel. Results are in element order.
pub fn receive_elements(
    pbs: &[PassbandBuffer],
    cfg: &OfdmConfig,
    opts: &RxOptions,
) -> Result<Vec<ElementOutput>, RxError> {
    let bbs: Vec<BasebandBuffer> = pbs
        .par_iter()
        .map(|pb| down_convert(pb, cfg))
        .collect::<Result<_, _>>()?;
    let shared = match (opts.timing, bbs.first()) {
        (TimingMode::Shared, Some(first)) => Some(sync_element(first, cfg, opts)?),
        _ => None,
    };
    bbs.par_iter()
        .map(|bb| {
            let sync = match shared {
                Some(s) => s,
                None => sync_element(bb, cfg, opts)?,
            };
            receive_baseband(bb, &sync, cfg, opts)
        })
        .collect()
}
