use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sonolink::bits::{bits_to_bytes, bytes_to_bits, random_bits};
use sonolink::channel::{apply_channel, synthesize_channel, ChannelModel, ChannelProfile};
use sonolink::combine::{decode_link, select_elements, CombineInput, CombineMode, ElementSelection, LinkReport};
use sonolink::config::OfdmConfig;
use sonolink::experiment::{
    dump_constellation, run_ber_sweep, run_image_demo, write_sweep_csv, ExperimentSpec, SweepAxis, DEFAULT_EBN0_DB,
};
use sonolink::iq::IqFile;
use sonolink::link::transmit;
use sonolink::rx::{receive_elements, RxOptions, TimingMode};
use sonolink::tx::frame_symbol_count;
use sonolink::video::{pack_frames, read_raw, unpack_frames, VideoFrame, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "sonolink", version, about = "OFDM acoustic link simulator with multi-element MRC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Modulate a payload into a passband IQ file.
    Tx(TxArgs),
    /// Pass an IQ file through a synthetic or stored array channel.
    Channel(ChannelArgs),
    /// Demodulate, combine and decode a multi-element IQ file.
    Rx(RxArgs),
    /// Run a BER sweep described by a JSON experiment spec.
    Sweep(SweepArgs),
    /// Send an RGB565 image through the channel and decode it.
    ImageDemo(ImageArgs),
    /// Export constellation (and magnitude) CSVs from a saved report.
    Dump(DumpArgs),
}

#[derive(Args)]
struct TxArgs {
    /// Preset name or JSON file.
    #[arg(long, default_value = "std-16qam")]
    config: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random payload length in OFDM data symbols.
    #[arg(long, default_value_t = 11)]
    symbols: usize,
    /// Send this image (PPM, or raw 160x50 RGB565) instead of random bits.
    #[arg(long)]
    image: Option<PathBuf>,
    /// IQ output; the payload bits go next to it with a `.bits` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ChannelArgs {
    /// Channel profile preset name or JSON file.
    #[arg(long, default_value = "phantom-like")]
    profile: String,
    /// Use a stored channel (JSON sidecar) instead of synthesizing one.
    #[arg(long, conflicts_with = "profile")]
    taps: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    elements: usize,
    /// Per-element Eb/N0 in dB; omit for a noiseless channel.
    #[arg(long)]
    ebn0: Option<f64>,
    /// Payload bits file; defaults to the input with a `.bits` extension.
    #[arg(long)]
    payload: Option<PathBuf>,
    /// Save the synthesized channel (sidecar JSON plus `.taps`).
    #[arg(long)]
    save_taps: Option<PathBuf>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RxArgs {
    #[arg(long, default_value = "std-16qam")]
    config: String,
    #[arg(long = "in")]
    input: PathBuf,
    /// Elements to combine; all when omitted.
    #[arg(long)]
    elements: Option<usize>,
    /// Combine the strongest elements instead of a centred block.
    #[arg(long)]
    select_best: bool,
    /// |H|^2 weights instead of |H|.
    #[arg(long)]
    classic: bool,
    /// Reuse element 0's timing for every element.
    #[arg(long)]
    shared_timing: bool,
    /// Transmitted payload for BER and EVM.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Decoded payload bytes.
    #[arg(long)]
    bits_out: Option<PathBuf>,
    /// Treat the payload as video and write the first frame here (PPM).
    #[arg(long)]
    image_out: Option<PathBuf>,
    /// Report JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment spec JSON.
    spec: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the spec).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ImageArgs {
    /// Experiment spec JSON; flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    elements: Option<usize>,
    #[arg(long)]
    ebn0: Option<f64>,
    /// Skip noise entirely.
    #[arg(long)]
    noiseless: bool,
    #[arg(long)]
    image: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    /// Report JSON written by `rx`.
    #[arg(long)]
    report: PathBuf,
    /// Constellation CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-element, per-subcarrier channel magnitudes CSV.
    #[arg(long)]
    magnitudes: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Tx(a) => tx(a),
        Command::Channel(a) => channel(a),
        Command::Rx(a) => rx(a),
        Command::Sweep(a) => sweep(a),
        Command::ImageDemo(a) => image_demo(a),
        Command::Dump(a) => dump(a),
    }
}

fn bits_path(iq: &Path) -> PathBuf {
    iq.with_extension("bits")
}

fn tx(a: TxArgs) -> Result<()> {
    let cfg = OfdmConfig::load(&a.config)?;
    let bits = match &a.image {
        Some(p) => {
            let s = p.to_string_lossy();
            let frame = if s.ends_with(".ppm") || s.ends_with(".pnm") {
                VideoFrame::load_ppm(p, 0)?
            } else {
                read_raw(p, DEFAULT_WIDTH, DEFAULT_HEIGHT)?.remove(0)
            };
            pack_frames(&[frame], &cfg)?
        }
        None => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
            random_bits(a.symbols * cfg.bits_per_ofdm_symbol(), &mut rng)
        }
    };
    let t = transmit(&bits, &cfg)?;
    IqFile::Passband(vec![t.passband.clone()]).save(&a.out)?;
    std::fs::write(bits_path(&a.out), bits_to_bytes(&bits))?;
    eprintln!(
        "{} payload bits in {} symbols, {} samples at {} Hz -> {}",
        bits.len(),
        t.grid.n_symbols(),
        t.passband.len(),
        t.passband.sample_rate,
        a.out.display()
    );
    Ok(())
}

fn channel(a: ChannelArgs) -> Result<()> {
    let input = IqFile::load(&a.input)?.into_passband()?;
    let [tx] = <[_; 1]>::try_from(input).map_err(|v| anyhow::anyhow!("expected 1 channel, found {}", v.len()))?;
    let ch = match &a.taps {
        Some(p) => ChannelModel::load(p)?,
        None => synthesize_channel(a.elements, &ChannelProfile::load(&a.profile)?, a.seed)?,
    };
    if let Some(p) = &a.save_taps {
        ch.save(p)?;
    }
    let n_bits = match a.ebn0 {
        Some(_) => {
            let p = a.payload.clone().unwrap_or_else(|| bits_path(&a.input));
            8 * std::fs::metadata(&p).with_context(|| format!("payload file {}", p.display()))?.len() as usize
        }
        None => 0,
    };
    let out = apply_channel(&tx, &ch, a.ebn0, n_bits)?;
    IqFile::Passband(out).save(&a.out)?;
    eprintln!("{} elements -> {}", ch.n_elements(), a.out.display());
    Ok(())
}

fn rx(a: RxArgs) -> Result<()> {
    let cfg = OfdmConfig::load(&a.config)?;
    let buffers = IqFile::load(&a.input)?.into_passband()?;
    let truth = match &a.truth {
        Some(p) => Some(bytes_to_bits(&std::fs::read(p)?)),
        None => None,
    };
    let opts = RxOptions {
        timing: if a.shared_timing { TimingMode::Shared } else { TimingMode::PerElement },
        expected_symbols: truth
            .as_ref()
            .map(|t| frame_symbol_count(t.len() / cfg.bits_per_ofdm_symbol(), cfg.pilot_period)),
        ..Default::default()
    };
    let outs = receive_elements(&buffers, &cfg, &opts)?;
    let input = CombineInput::from_elements(&outs)?;
    let how = if a.select_best { ElementSelection::Best } else { ElementSelection::Centre };
    let picked = select_elements(&input, a.elements.unwrap_or(input.n_elements()), how)?;
    let mode = if a.classic { CombineMode::Classic } else { CombineMode::Magnitude };
    let (bits, report) = decode_link(&input.select(&picked), &cfg, mode, truth.as_deref())?;
    report.save_json(&a.out)?;
    if let Some(p) = &a.bits_out {
        std::fs::write(p, bits_to_bytes(&bits))?;
    }
    if let Some(p) = &a.image_out {
        let (frames, stats) = unpack_frames(&bits);
        eprintln!("video: {} recovered, {} dropped", stats.recovered, stats.dropped);
        match frames.first() {
            Some(f) => f.save_ppm(p)?,
            None => bail!("no video frame recovered"),
        }
    }
    print_report(&report, &picked);
    Ok(())
}

fn print_report(r: &LinkReport, elements: &[usize]) {
    println!("elements: {elements:?}");
    println!("bits: {}", r.bits_total);
    if let (Some(e), Some(b)) = (r.bit_errors, r.ber) {
        println!("bit errors: {e}");
        match r.ber_upper_bound {
            Some(ub) => println!("ber: < {ub:.3e} (no errors)"),
            None => println!("ber: {b:.3e}"),
        }
    }
    if let Some(e) = r.evm_db {
        println!("evm: {e:.2} dB");
    }
    if r.erased_cells > 0 {
        println!("erased cells: {}", r.erased_cells);
    }
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut spec = ExperimentSpec::load(&a.spec)?;
    if let Some(s) = a.seed {
        spec.channel_seed = s;
        spec.noise_seed = s.wrapping_add(1);
        spec.payload_seed = s.wrapping_add(2);
    }
    if let Some(o) = &a.out {
        spec.output_dir = Some(o.to_string_lossy().into_owned());
    }
    let rows = run_ber_sweep(&spec)?;
    let dir = PathBuf::from(spec.output_dir.clone().unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("sweep.csv");
    write_sweep_csv(BufWriter::new(File::create(&path)?), &spec, &rows)?;
    for r in &rows {
        let ber = match r.ber_upper_bound {
            Some(ub) => format!("<{ub:.2e}"),
            None => format!("{:.3e}", r.ber),
        };
        println!(
            "{:?}={:<8} N={:<3} M={:<3} Eb/N0={:6.2} dB  ber={ber:<10} evm={:7.2} dB  {}",
            r.axis, r.value, r.n_elements, r.qam_order, r.ebn0_db, r.evm_db, r.status
        );
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn image_demo(a: ImageArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec {
            config: "std-16qam".into(),
            profile: "phantom-like".into(),
            channel_seed: 0,
            noise_seed: 0,
            payload_seed: 0,
            axis: SweepAxis::Ebn0,
            values: vec![DEFAULT_EBN0_DB],
            elements: vec![10],
            array_elements: Some(64),
            ebn0_db: DEFAULT_EBN0_DB,
            target_ber: 1e-4,
            max_bits: 20_000_000,
            frame_data_symbols: 11,
            selection: ElementSelection::Centre,
            combine: CombineMode::Magnitude,
            timing: TimingMode::PerElement,
            image: None,
            output_dir: Some("out/image-demo".into()),
        },
    };
    if let Some(c) = a.config {
        spec.config = c;
    }
    if let Some(p) = a.profile {
        spec.profile = p;
    }
    if let Some(s) = a.seed {
        spec.channel_seed = s;
        spec.noise_seed = s.wrapping_add(1);
    }
    if let Some(n) = a.elements {
        spec.elements = vec![n];
        spec.array_elements = spec.array_elements.map(|m| m.max(n));
    }
    if let Some(e) = a.ebn0 {
        spec.ebn0_db = e;
        spec.values = vec![e];
    }
    if a.image.is_some() {
        spec.image = a.image;
    }
    if let Some(o) = a.out {
        spec.output_dir = Some(o.to_string_lossy().into_owned());
    }
    let res = run_image_demo(&spec, !a.noiseless)?;
    print_report(&res.report, &res.elements_used);
    println!(
        "frames: {} recovered, {} dropped",
        res.unpack.recovered, res.unpack.dropped
    );
    match res.differing_pixels {
        Some(d) => println!(
            "differing pixels: {d} / {} ({:.4}%)",
            res.total_pixels,
            100.0 * d as f64 / res.total_pixels as f64
        ),
        None => println!("image not recovered"),
    }
    for f in &res.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn dump(a: DumpArgs) -> Result<()> {
    let report: LinkReport = serde_json::from_str(&std::fs::read_to_string(&a.report)?)?;
    dump_constellation(BufWriter::new(File::create(&a.out)?), None, &report)?;
    if let Some(p) = &a.magnitudes {
        report.write_magnitude_csv(BufWriter::new(File::create(p)?))?;
    }
    Ok(())
}
