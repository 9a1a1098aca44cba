//! Experiment runner: BER sweeps, the image demo and plot dumps.
//!
//! Every output file starts with `#` comment lines carrying the schema
//! version and the full experiment spec, so a run can be repeated exactly.

use crate::bits::random_bits;
use crate::channel::{synthesize_channel, ChannelModel, ChannelProfile};
use crate::combine::{decode_link, select_elements, CombineMode, ElementSelection, LinkReport};
use crate::config::OfdmConfig;
use crate::link::{calibrate_noise, receive_frame, through_channel, transmit, LinkError, LinkSettings, Noise};
use crate::rx::{RxOptions, TimingMode};
use crate::video::{pack_frames, unpack_frames_expecting, UnpackStats, VideoFrame, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const SCHEMA_VERSION: u32 = 1;

/// Per-element Eb/N0 used when a spec does not give one.
pub const DEFAULT_EBN0_DB: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Transmit amplitude, 1.0 being full scale; the noise floor stays fixed.
    Amplitude,
    /// Per-element Eb/N0 in dB.
    Ebn0,
    /// Number of combined elements.
    NElements,
    /// Modulation order at a fixed noise floor.
    QamOrder,
}

fn default_profile() -> String {
    "ideal".into()
}
fn default_ebn0() -> f64 {
    DEFAULT_EBN0_DB
}
fn default_target_ber() -> f64 {
    1e-4
}
fn default_max_bits() -> u64 {
    20_000_000
}
fn default_data_symbols() -> usize {
    11
}
fn default_elements() -> Vec<usize> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Preset name or JSON path.
    pub config: String,
    /// Channel profile preset name or JSON path.
    #[serde(default = "default_profile")]
    pub profile: String,
    #[serde(default)]
    pub channel_seed: u64,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default)]
    pub payload_seed: u64,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Element counts evaluated at every sweep value (ignored for the
    /// `n_elements` axis).
    #[serde(default = "default_elements")]
    pub elements: Vec<usize>,
    /// Elements in the simulated array; defaults to the largest count used.
    #[serde(default)]
    pub array_elements: Option<usize>,
    /// Per-element Eb/N0 for axes other than `ebn0`; for `amplitude` and
    /// `qam_order` it sets the noise floor at unit amplitude in the base mode.
    #[serde(default = "default_ebn0")]
    pub ebn0_db: f64,
    #[serde(default = "default_target_ber")]
    pub target_ber: f64,
    #[serde(default = "default_max_bits")]
    pub max_bits: u64,
    /// Data symbols per simulated frame.
    #[serde(default = "default_data_symbols")]
    pub frame_data_symbols: usize,
    #[serde(default)]
    pub selection: ElementSelection,
    #[serde(default)]
    pub combine: CombineMode,
    #[serde(default)]
    pub timing: TimingMode,
    /// PPM or raw RGB565 input for the image demo; a test pattern otherwise.
    #[serde(default)]
    pub image: Option<String>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl ExperimentSpec {
    pub fn from_json_str(text: &str) -> Result<Self, LinkError> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LinkError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let bad = |m: String| Err(LinkError::Spec(m));
        if self.values.is_empty() {
            return bad("sweep values must be nonempty".into());
        }
        let up = self.values.windows(2).all(|w| w[1] > w[0]);
        let down = self.values.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) || self.values.iter().any(|v| !v.is_finite()) {
            return bad("sweep values must be finite and strictly monotone".into());
        }
        let integral = |v: f64| v >= 1.0 && v.fract() == 0.0;
        match self.axis {
            SweepAxis::NElements | SweepAxis::QamOrder if !self.values.iter().all(|&v| integral(v)) => {
                return bad("element counts and QAM orders must be positive integers".into());
            }
            SweepAxis::Amplitude if self.values.iter().any(|&v| v <= 0.0) => {
                return bad("amplitudes must be positive".into());
            }
            _ => {}
        }
        if self.elements.is_empty() || self.elements.contains(&0) {
            return bad("element counts must be nonempty and positive".into());
        }
        if let Some(a) = self.array_elements {
            if a < self.max_elements_used() {
                return bad(format!("array of {a} elements cannot supply {}", self.max_elements_used()));
            }
        }
        if !(self.target_ber > 0.0 && self.target_ber < 1.0) {
            return bad("target_ber must lie in (0, 1)".into());
        }
        if self.frame_data_symbols == 0 {
            return bad("frame_data_symbols must be positive".into());
        }
        if !self.ebn0_db.is_finite() {
            return bad("ebn0_db must be finite".into());
        }
        Ok(())
    }

    fn element_counts(&self) -> Vec<usize> {
        match self.axis {
            SweepAxis::NElements => self.values.iter().map(|&v| v as usize).collect(),
            _ => self.elements.clone(),
        }
    }

    fn max_elements_used(&self) -> usize {
        self.element_counts().into_iter().max().unwrap_or(1)
    }

    pub fn array_size(&self) -> usize {
        self.array_elements.unwrap_or_else(|| self.max_elements_used())
    }

    /// Bits needed per point for about ten expected errors at the target BER.
    pub fn bit_budget(&self) -> u64 {
        (10.0 / self.target_ber).ceil() as u64
    }

    pub fn base_config(&self) -> Result<OfdmConfig, LinkError> {
        Ok(OfdmConfig::load(&self.config)?)
    }

    pub fn channel(&self) -> Result<ChannelModel, LinkError> {
        let profile = ChannelProfile::load(&self.profile)?;
        Ok(synthesize_channel(self.array_size(), &profile, self.channel_seed)?)
    }

    fn rx_options(&self) -> RxOptions {
        RxOptions {
            timing: self.timing,
            ..Default::default()
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub schema_version: u32,
    pub axis: SweepAxis,
    pub value: f64,
    pub n_elements: usize,
    pub qam_order: u32,
    pub amplitude: f64,
    /// Per-element Eb/N0 actually delivered, averaged over elements.
    pub ebn0_db: f64,
    pub frames: usize,
    pub bits_total: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub ber_upper_bound: Option<f64>,
    pub evm_db: f64,
    pub erased_cells: u64,
    pub dropped_symbols: usize,
    pub wall_time_s: f64,
    /// `ok`, or why the point was skipped.
    pub status: String,
}

struct Point {
    value: f64,
    cfg: OfdmConfig,
    amplitude: f64,
    noise: NoisePlan,
}

enum NoisePlan {
    EbN0(f64),
    /// Floor calibrated on the base mode at unit amplitude.
    Floor(Vec<f64>),
}

fn payload(cfg: &OfdmConfig, n_data: usize, seed: u64) -> Vec<u8> {
    random_bits(n_data * cfg.bits_per_ofdm_symbol(), &mut ChaCha8Rng::seed_from_u64(seed))
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over the combined words
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn plan_points(spec: &ExperimentSpec, ch: &ChannelModel) -> Result<Vec<Point>, LinkError> {
    let base = spec.base_config()?;
    let floor = || -> Result<Vec<f64>, LinkError> {
        let tx = transmit(&payload(&base, spec.frame_data_symbols, spec.payload_seed), &base)?;
        calibrate_noise(&tx, ch, spec.ebn0_db)
    };
    Ok(match spec.axis {
        SweepAxis::Ebn0 => spec
            .values
            .iter()
            .map(|&v| Point {
                value: v,
                cfg: base.clone(),
                amplitude: 1.0,
                noise: NoisePlan::EbN0(v),
            })
            .collect(),
        SweepAxis::NElements => spec
            .values
            .iter()
            .map(|&v| Point {
                value: v,
                cfg: base.clone(),
                amplitude: 1.0,
                noise: NoisePlan::EbN0(spec.ebn0_db),
            })
            .collect(),
        SweepAxis::Amplitude => {
            let sigma = floor()?;
            spec.values
                .iter()
                .map(|&v| Point {
                    value: v,
                    cfg: base.clone(),
                    amplitude: v,
                    noise: NoisePlan::Floor(sigma.clone()),
                })
                .collect()
        }
        SweepAxis::QamOrder => {
            let sigma = floor()?;
            spec.values
                .iter()
                .map(|&v| {
                    let cfg = OfdmConfig {
                        qam_order: v as u32,
                        ..base.clone()
                    }
                    .validate()?;
                    Ok(Point {
                        value: v,
                        cfg,
                        amplitude: 1.0,
                        noise: NoisePlan::Floor(sigma.clone()),
                    })
                })
                .collect::<Result<_, LinkError>>()?
        }
    })
}

#[derive(Default, Clone)]
struct Tally {
    bits: u64,
    errors: u64,
    err_energy: f64,
    ref_energy: f64,
    erased: u64,
    ebn0_lin: f64,
    ebn0_count: usize,
}

fn run_point(spec: &ExperimentSpec, ch: &ChannelModel, index: usize, point: &Point) -> Result<Vec<SweepRow>, LinkError> {
    let start = Instant::now();
    let counts = match spec.axis {
        SweepAxis::NElements => vec![point.value as usize],
        _ => spec.elements.clone(),
    };
    let cfg = &point.cfg;
    let row = |n: usize, t: &Tally, frames: usize, dropped: usize, status: &str| {
        let ber = if t.bits > 0 { t.errors as f64 / t.bits as f64 } else { 0.0 };
        SweepRow {
            schema_version: SCHEMA_VERSION,
            axis: spec.axis,
            value: point.value,
            n_elements: n,
            qam_order: cfg.qam_order,
            amplitude: point.amplitude,
            ebn0_db: if t.ebn0_count > 0 {
                10.0 * (t.ebn0_lin / t.ebn0_count as f64).log10()
            } else {
                f64::NAN
            },
            frames,
            bits_total: t.bits,
            bit_errors: t.errors,
            ber,
            ber_upper_bound: (t.errors == 0 && t.bits > 0).then(|| 1.0 / t.bits as f64),
            evm_db: if t.ref_energy > 0.0 {
                (10.0 * (t.err_energy / t.ref_energy).log10()).max(crate::qam::EVM_FLOOR_DB)
            } else {
                f64::NAN
            },
            erased_cells: t.erased,
            dropped_symbols: dropped,
            wall_time_s: start.elapsed().as_secs_f64(),
            status: status.to_string(),
        }
    };
    let budget = spec.bit_budget();
    if budget > spec.max_bits {
        let status = format!("skipped: {budget} bits needed, max_bits is {}", spec.max_bits);
        return Ok(counts.iter().map(|&n| row(n, &Tally::default(), 0, 0, &status)).collect());
    }

    let largest = *counts.iter().max().unwrap_or(&1);
    // Receive only the elements some count needs.
    let (sub, sub_idx) = match spec.selection {
        ElementSelection::Centre => {
            let s = (ch.n_elements() - largest) / 2;
            let idx: Vec<usize> = (s..s + largest).collect();
            (ch.subset(&idx), idx)
        }
        ElementSelection::Best => (ch.clone(), (0..ch.n_elements()).collect()),
    };
    let noise = match &point.noise {
        NoisePlan::EbN0(db) => Noise::EbN0(*db),
        NoisePlan::Floor(s) => Noise::Sigma(sub_idx.iter().map(|&j| s[j]).collect()),
    };
    let c = crate::qam::Constellation::new(cfg.qam_order)?;
    let mut tallies = vec![Tally::default(); counts.len()];
    let mut frames = 0;
    let mut dropped = 0;
    let opts = spec.rx_options();
    while tallies[0].bits < budget {
        let seed = mix(spec.payload_seed, index as u64, frames as u64);
        let bits = payload(cfg, spec.frame_data_symbols, seed);
        let tx = transmit(&bits, cfg)?;
        let rx = through_channel(
            &tx,
            &sub,
            point.amplitude,
            &noise,
            mix(spec.noise_seed, index as u64, frames as u64),
        )?;
        let ebn0s: Vec<f64> = match &noise {
            Noise::EbN0(db) => vec![10f64.powf(db / 10.0); rx.len()],
            Noise::Sigma(s) => {
                let clean = through_channel(&tx, &sub, point.amplitude, &Noise::Off, 0)?;
                clean
                    .iter()
                    .zip(s)
                    .map(|(y, sig)| y.energy() / (2.0 * bits.len() as f64 * sig * sig))
                    .collect()
            }
            Noise::Off => Vec::new(),
        };
        let mut o = opts;
        o.expected_symbols = Some(tx.grid.n_symbols());
        let frame = receive_frame(&rx, cfg, &o)?;
        dropped += frame.dropped_symbols;
        let reference = c.map(&bits)?;
        for (t, &n) in tallies.iter_mut().zip(&counts) {
            let picked = select_elements(&frame.input, n, spec.selection)?;
            let (_, rep) = decode_link(&frame.input.select(&picked), cfg, spec.combine, Some(&bits))?;
            t.bits += rep.bits_total;
            t.errors += rep.bit_errors.unwrap_or(0);
            t.erased += rep.erased_cells;
            for (p, r) in rep.constellation.iter().zip(&reference) {
                t.err_energy += (p - r).norm_sqr();
                t.ref_energy += r.norm_sqr();
            }
            for &j in &picked {
                t.ebn0_lin += ebn0s[j];
                t.ebn0_count += 1;
            }
        }
        frames += 1;
    }
    Ok(counts
        .iter()
        .zip(&tallies)
        .map(|(&n, t)| row(n, t, frames, dropped, "ok"))
        .collect())
}

/// Runs every sweep point (concurrently) and returns rows in spec order.
pub fn run_ber_sweep(spec: &ExperimentSpec) -> Result<Vec<SweepRow>, LinkError> {
    spec.validate()?;
    let ch = spec.channel()?;
    let points = plan_points(spec, &ch)?;
    let rows: Vec<Vec<SweepRow>> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| run_point(spec, &ch, i, p))
        .collect::<Result<_, _>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn write_preamble<W: Write>(w: &mut W, spec: &ExperimentSpec) -> std::io::Result<()> {
    writeln!(w, "# schema_version={SCHEMA_VERSION}")?;
    writeln!(w, "# spec={}", spec.to_json())?;
    writeln!(
        w,
        "# seeds channel={} noise={} payload={}",
        spec.channel_seed, spec.noise_seed, spec.payload_seed
    )
}

pub fn write_sweep_csv<W: Write>(mut w: W, spec: &ExperimentSpec, rows: &[SweepRow]) -> Result<(), LinkError> {
    write_preamble(&mut w, spec)?;
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Two-column `I,Q` CSV behind the spec echo and an EVM line.
pub fn dump_constellation<W: Write>(mut w: W, spec: Option<&ExperimentSpec>, report: &LinkReport) -> Result<(), LinkError> {
    if let Some(s) = spec {
        write_preamble(&mut w, s)?;
    }
    report.write_constellation_csv(w)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageDemoResult {
    pub report: LinkReport,
    pub unpack: UnpackStats,
    pub differing_pixels: Option<usize>,
    pub total_pixels: usize,
    pub elements_used: Vec<usize>,
    #[serde(skip)]
    pub decoded: Option<VideoFrame>,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

pub fn load_image_input(spec: &ExperimentSpec) -> Result<VideoFrame, LinkError> {
    match &spec.image {
        None => Ok(VideoFrame::test_pattern(DEFAULT_WIDTH, DEFAULT_HEIGHT, 0)),
        Some(p) if p.ends_with(".ppm") || p.ends_with(".pnm") => Ok(VideoFrame::load_ppm(p, 0)?),
        Some(p) => Ok(crate::video::read_raw(p, DEFAULT_WIDTH, DEFAULT_HEIGHT)?
            .into_iter()
            .next()
            .expect("read_raw returns at least one frame")),
    }
}

/// Sends one image frame through the channel to `n` elements (the first
/// entry of `spec.elements`) at `spec.ebn0_db` and writes the results to
/// `spec.output_dir` when set.
pub fn run_image_demo(spec: &ExperimentSpec, noise: bool) -> Result<ImageDemoResult, LinkError> {
    spec.validate()?;
    let cfg = spec.base_config()?;
    let ch = spec.channel()?;
    let input = load_image_input(spec)?;
    let bits = pack_frames(std::slice::from_ref(&input), &cfg)?;
    let n = spec.elements[0];
    let settings = LinkSettings {
        noise: if noise { Noise::EbN0(spec.ebn0_db) } else { Noise::Off },
        noise_seed: spec.noise_seed,
        rx: spec.rx_options(),
        combine: spec.combine,
        combine_count: Some(n),
        selection: spec.selection,
        ..Default::default()
    };
    let out = crate::link::simulate_link(&bits, &cfg, &ch, &settings)?;
    let (frames, unpack) = unpack_frames_expecting(&out.bits, Some((input.width, input.height)));
    let decoded = frames.into_iter().next();
    let mut result = ImageDemoResult {
        differing_pixels: decoded.as_ref().map(|d| d.differing_pixels(&input)),
        total_pixels: input.pixels.len(),
        report: out.report,
        unpack,
        elements_used: out.elements_used,
        decoded,
        files: Vec::new(),
    };
    if let Some(dir) = &spec.output_dir {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir)?;
        let input_path = dir.join("input.ppm");
        input.save_ppm(&input_path)?;
        result.files.push(input_path);
        if let Some(d) = &result.decoded {
            let p = dir.join("decoded.ppm");
            d.save_ppm(&p)?;
            result.files.push(p);
        }
        let report_path = dir.join("image_report.json");
        let body = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "spec": spec,
            "result": &result,
        });
        std::fs::write(&report_path, serde_json::to_string_pretty(&body)?)?;
        result.files.push(report_path);
        let cons = dir.join("constellation.csv");
        dump_constellation(std::fs::File::create(&cons)?, Some(spec), &result.report)?;
        result.files.push(cons);
    }
    Ok(result)
}

/// A frozen channel, noise level and payload for the EVM comparison between
/// single elements and the full array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvmFixture {
    pub config: String,
    pub profile: String,
    pub n_elements: usize,
    pub channel_seed: u64,
    pub noise_seed: u64,
    pub payload_seed: u64,
    pub ebn0_db: f64,
    pub frame_data_symbols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvmComparison {
    /// Per-element EVM, dB, in element order.
    pub single_db: Vec<f64>,
    /// Median of `single_db`.
    pub single_median_db: f64,
    pub combined_db: f64,
    pub combined_ber: f64,
}

impl EvmFixture {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LinkError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn evaluate(&self) -> Result<EvmComparison, LinkError> {
        let cfg = OfdmConfig::load(&self.config)?;
        let profile = ChannelProfile::load(&self.profile)?;
        let ch = synthesize_channel(self.n_elements, &profile, self.channel_seed)?;
        let bits = payload(&cfg, self.frame_data_symbols, self.payload_seed);
        let settings = LinkSettings {
            noise: Noise::EbN0(self.ebn0_db),
            noise_seed: self.noise_seed,
            ..Default::default()
        };
        let out = crate::link::simulate_link(&bits, &cfg, &ch, &settings)?;
        let single_db = (0..self.n_elements)
            .map(|j| {
                let (_, r) = decode_link(&out.frame.input.select(&[j]), &cfg, CombineMode::Magnitude, Some(&bits))?;
                Ok(r.evm_db.unwrap_or(f64::NAN))
            })
            .collect::<Result<Vec<f64>, LinkError>>()?;
        let mut sorted = single_db.clone();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let single_median_db = if m % 2 == 1 {
            sorted[m / 2]
        } else {
            (sorted[m / 2 - 1] + sorted[m / 2]) / 2.0
        };
        Ok(EvmComparison {
            single_db,
            single_median_db,
            combined_db: out.report.evm_db.unwrap_or(f64::NAN),
            combined_ber: out.report.ber.unwrap_or(f64::NAN),
        })
    }
}
