//! Raw RGB565 video framing for the modem bit stream.
//!
//! Each frame is an 8-byte header followed by little-endian pixels:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 1    | magic `0xA5`                            |
//! | 1      | 1    | frame index, modulo 256                 |
//! | 2      | 2    | width (LE)                              |
//! | 4      | 2    | height (LE)                             |
//! | 6      | 2    | CRC-16/IBM-3740 of bytes 0..6 (LE)      |

use crate::bits::{bits_to_bytes, bytes_to_bits};
use crate::config::OfdmConfig;
use crc::{Crc, CRC_16_IBM_3740};
use image::{ImageFormat, Rgb, RgbImage};
use std::path::Path;

pub const FRAME_MAGIC: u8 = 0xA5;
pub const HEADER_LEN: usize = 8;
pub const DEFAULT_WIDTH: usize = 160;
pub const DEFAULT_HEIGHT: usize = 50;

const HEADER_CRC: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

#[derive(Debug, thiserror::Error)]
pub enum VideoError {
    #[error("no frames to pack")]
    Empty,
    #[error("frame {index} is {got:?}, expected {want:?}")]
    Geometry {
        index: usize,
        got: (usize, usize),
        want: (usize, usize),
    },
    #[error("frame has {got} pixels, geometry needs {want}")]
    PixelCount { got: usize, want: usize },
    #[error("frame dimensions must be 1..=65535, got {0}x{1}")]
    Dimensions(usize, usize),
    #[error("raw file of {len} bytes is not a whole number of {width}x{height} frames")]
    RawLength { len: usize, width: usize, height: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB565.
    pub pixels: Vec<u16>,
    pub frame_index: u64,
}

pub fn rgb565_to_rgb8(p: u16) -> [u8; 3] {
    let r = ((p >> 11) & 0x1f) as u8;
    let g = ((p >> 5) & 0x3f) as u8;
    let b = (p & 0x1f) as u8;
    [(r << 3) | (r >> 2), (g << 2) | (g >> 4), (b << 3) | (b >> 2)]
}

pub fn rgb8_to_rgb565([r, g, b]: [u8; 3]) -> u16 {
    ((r as u16 >> 3) << 11) | ((g as u16 >> 2) << 5) | (b as u16 >> 3)
}

impl VideoFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u16>, frame_index: u64) -> Result<Self, VideoError> {
        if width == 0 || height == 0 || width > u16::MAX as usize || height > u16::MAX as usize {
            return Err(VideoError::Dimensions(width, height));
        }
        if pixels.len() != width * height {
            return Err(VideoError::PixelCount {
                got: pixels.len(),
                want: width * height,
            });
        }
        Ok(VideoFrame {
            width,
            height,
            pixels,
            frame_index,
        })
    }

    /// Colour bars with a moving diagonal, distinct per frame index.
    pub fn test_pattern(width: usize, height: usize, frame_index: u64) -> Self {
        let bars = [0xffffu16, 0xffe0, 0x07ff, 0x07e0, 0xf81f, 0xf800, 0x001f, 0x0000];
        let pixels = (0..height)
            .flat_map(|y| {
                (0..width).map(move |x| {
                    if (x + frame_index as usize) % width.max(1) == y * width / height.max(1) {
                        0x8410
                    } else {
                        bars[x * bars.len() / width]
                    }
                })
            })
            .collect();
        VideoFrame {
            width,
            height,
            pixels,
            frame_index,
        }
    }

    pub fn frame_bytes(&self) -> usize {
        HEADER_LEN + 2 * self.pixels.len()
    }

    fn header(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0] = FRAME_MAGIC;
        h[1] = self.frame_index as u8;
        h[2..4].copy_from_slice(&(self.width as u16).to_le_bytes());
        h[4..6].copy_from_slice(&(self.height as u16).to_le_bytes());
        let crc = HEADER_CRC.checksum(&h[..6]);
        h[6..8].copy_from_slice(&crc.to_le_bytes());
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.frame_bytes());
        out.extend_from_slice(&self.header());
        for p in &self.pixels {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Rgb(rgb565_to_rgb8(self.pixels[y as usize * self.width + x as usize]))
        })
    }

    pub fn from_image(img: &RgbImage, frame_index: u64) -> Result<Self, VideoError> {
        let pixels = img.pixels().map(|p| rgb8_to_rgb565(p.0)).collect();
        VideoFrame::new(img.width() as usize, img.height() as usize, pixels, frame_index)
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<(), VideoError> {
        self.to_image().save_with_format(path, ImageFormat::Pnm)?;
        Ok(())
    }

    pub fn load_ppm(path: impl AsRef<Path>, frame_index: u64) -> Result<Self, VideoError> {
        let img = image::ImageReader::open(path)?
            .with_guessed_format()?
            .decode()?
            .to_rgb8();
        VideoFrame::from_image(&img, frame_index)
    }

    /// Number of pixels that differ from `other` (all of them on a size mismatch).
    pub fn differing_pixels(&self, other: &VideoFrame) -> usize {
        if self.pixels.len() != other.pixels.len() {
            return self.pixels.len().max(other.pixels.len());
        }
        self.pixels.iter().zip(&other.pixels).filter(|(a, b)| a != b).count()
    }
}

/// Concatenated little-endian RGB565 frames with no headers.
pub fn write_raw(frames: &[VideoFrame], path: impl AsRef<Path>) -> Result<(), VideoError> {
    let bytes: Vec<u8> = frames
        .iter()
        .flat_map(|f| f.pixels.iter().flat_map(|p| p.to_le_bytes()))
        .collect();
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_raw(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Vec<VideoFrame>, VideoError> {
    let bytes = std::fs::read(path)?;
    let frame_len = 2 * width * height;
    if frame_len == 0 || bytes.is_empty() || bytes.len() % frame_len != 0 {
        return Err(VideoError::RawLength {
            len: bytes.len(),
            width,
            height,
        });
    }
    bytes
        .chunks(frame_len)
        .enumerate()
        .map(|(i, chunk)| {
            let pixels = chunk.chunks(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
            VideoFrame::new(width, height, pixels, i as u64)
        })
        .collect()
}

/// Serializes frames and zero-pads the stream to whole OFDM data symbols.
pub fn pack_frames(frames: &[VideoFrame], cfg: &OfdmConfig) -> Result<Vec<u8>, VideoError> {
    let first = frames.first().ok_or(VideoError::Empty)?;
    let want = (first.width, first.height);
    let mut bytes = Vec::new();
    for (index, f) in frames.iter().enumerate() {
        if (f.width, f.height) != want {
            return Err(VideoError::Geometry {
                index,
                got: (f.width, f.height),
                want,
            });
        }
        if f.pixels.len() != f.width * f.height {
            return Err(VideoError::PixelCount {
                got: f.pixels.len(),
                want: f.width * f.height,
            });
        }
        bytes.extend(f.to_bytes());
    }
    let mut bits = bytes_to_bits(&bytes);
    let per_symbol = cfg.bits_per_ofdm_symbol();
    let padded = bits.len().div_ceil(per_symbol) * per_symbol;
    bits.resize(padded, 0);
    Ok(bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct UnpackStats {
    pub recovered: usize,
    /// Frames inferred lost from stream gaps.
    pub dropped: usize,
    /// Bytes not covered by a recovered frame, excluding trailing padding.
    pub unparsed_bytes: usize,
}

fn parse_header(h: &[u8]) -> Option<(u8, usize, usize)> {
    if h[0] != FRAME_MAGIC {
        return None;
    }
    let crc = u16::from_le_bytes([h[6], h[7]]);
    if HEADER_CRC.checksum(&h[..6]) != crc {
        return None;
    }
    let w = u16::from_le_bytes([h[2], h[3]]) as usize;
    let hgt = u16::from_le_bytes([h[4], h[5]]) as usize;
    (w > 0 && hgt > 0).then_some((h[1], w, hgt))
}

/// Scans a decoded bit stream for frames. Pixel bit errors pass through;
/// frames whose header fails its checksum are skipped and counted.
pub fn unpack_frames(bits: &[u8]) -> (Vec<VideoFrame>, UnpackStats) {
    unpack_frames_expecting(bits, None)
}

/// As [`unpack_frames`], with a known frame geometry so losses can be
/// counted even when no header survives.
pub fn unpack_frames_expecting(bits: &[u8], geometry: Option<(usize, usize)>) -> (Vec<VideoFrame>, UnpackStats) {
    let usable = bits.len() / 8 * 8;
    let bytes = bits_to_bytes(&bits[..usable]);
    let mut frames: Vec<VideoFrame> = Vec::new();
    // (start, end) byte spans of recovered frames
    let mut spans = Vec::new();
    let mut p = 0;
    while p + HEADER_LEN <= bytes.len() {
        if let Some((idx, w, h)) = parse_header(&bytes[p..p + HEADER_LEN]) {
            let end = p + HEADER_LEN + 2 * w * h;
            if end <= bytes.len() {
                let pixels = bytes[p + HEADER_LEN..end]
                    .chunks(2)
                    .map(|b| u16::from_le_bytes([b[0], b[1]]))
                    .collect();
                let frame_index = match frames.last() {
                    Some(prev) => prev.frame_index + idx.wrapping_sub(prev.frame_index as u8).max(1) as u64,
                    None => idx as u64,
                };
                frames.push(VideoFrame {
                    width: w,
                    height: h,
                    pixels,
                    frame_index,
                });
                spans.push((p, end));
                p = end;
                continue;
            }
        }
        p += 1;
    }

    let mut stats = UnpackStats {
        recovered: frames.len(),
        ..Default::default()
    };
    let content_end = bytes.iter().rposition(|&b| b != 0).map_or(0, |i| i + 1);
    let frame_len = match (frames.first(), geometry) {
        (Some(f), _) => f.frame_bytes(),
        (None, Some((w, h))) => HEADER_LEN + 2 * w * h,
        (None, None) => {
            stats.unparsed_bytes = content_end;
            return (frames, stats);
        }
    };
    let mut gaps = Vec::new();
    let mut cursor = 0;
    for &(s, e) in &spans {
        gaps.push((s - cursor, false));
        cursor = e;
    }
    gaps.push((content_end.saturating_sub(cursor), true));
    for (len, trailing) in gaps {
        stats.unparsed_bytes += len;
        stats.dropped += if trailing {
            len.div_ceil(frame_len)
        } else {
            (len + frame_len / 2) / frame_len
        };
    }
    (frames, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn std16() -> OfdmConfig {
        OfdmConfig::preset("std-16qam").unwrap()
    }

    fn frames(n: usize) -> Vec<VideoFrame> {
        (0..n).map(|i| VideoFrame::test_pattern(160, 50, i as u64)).collect()
    }

    #[test]
    fn default_frame_size_and_padding() {
        let f = frames(1);
        assert_eq!(f[0].frame_bytes() * 8, 128_064);
        let bits = pack_frames(&f, &std16()).unwrap();
        assert_eq!(bits.len() / 12_288, 11);
        assert_eq!(bits.len() % 12_288, 0);
    }

    #[test]
    fn clean_round_trip() {
        let f = frames(3);
        let (back, stats) = unpack_frames(&pack_frames(&f, &std16()).unwrap());
        assert_eq!(back, f);
        assert_eq!(stats.dropped, 0);
        assert_eq!(stats.recovered, 3);
        assert_eq!(stats.unparsed_bytes, 0);
    }

    #[test]
    fn pixel_bit_flip_is_local() {
        let f = frames(2);
        let mut bits = pack_frames(&f, &std16()).unwrap();
        bits[(HEADER_LEN + 1234) * 8 + 3] ^= 1;
        let (back, stats) = unpack_frames(&bits);
        assert_eq!(stats.dropped, 0);
        assert_eq!(back[0].differing_pixels(&f[0]), 1);
        assert_eq!(back[1], f[1]);
    }

    #[test]
    fn corrupt_magic_drops_only_that_frame() {
        for victim in 0..3 {
            let f = frames(3);
            let mut bits = pack_frames(&f, &std16()).unwrap();
            bits[victim * f[0].frame_bytes() * 8] ^= 1;
            let (back, stats) = unpack_frames(&bits);
            assert_eq!(stats.recovered, 2);
            assert_eq!(stats.dropped, 1, "victim {victim}");
            let expect: Vec<_> = f.iter().filter(|x| x.frame_index != victim as u64).cloned().collect();
            assert_eq!(back, expect);
        }
    }

    #[test]
    fn garbage_yields_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bits: Vec<u8> = (0..40_000).map(|_| rng.gen_range(0..2)).collect();
        let (back, stats) = unpack_frames(&bits);
        assert!(back.is_empty());
        assert_eq!(stats.recovered, 0);
        assert!(unpack_frames(&[]).0.is_empty());

        let f = frames(2);
        let mut bits = pack_frames(&f, &std16()).unwrap();
        bits[0] ^= 1;
        bits[f[0].frame_bytes() * 8] ^= 1;
        assert_eq!(unpack_frames(&bits).1.dropped, 0);
        let (back, stats) = unpack_frames_expecting(&bits, Some((160, 50)));
        assert!(back.is_empty());
        assert_eq!(stats.dropped, 2);
    }

    #[test]
    fn index_unwraps_past_255() {
        let f: Vec<_> = (250..262).map(|i| VideoFrame::test_pattern(4, 2, i)).collect();
        let cfg = std16();
        let (back, _) = unpack_frames(&pack_frames(&f, &cfg).unwrap());
        let idx: Vec<u64> = back.iter().map(|x| x.frame_index).collect();
        assert_eq!(idx, (250..262).collect::<Vec<_>>());
    }

    #[test]
    fn pack_errors() {
        let cfg = std16();
        assert!(matches!(pack_frames(&[], &cfg), Err(VideoError::Empty)));
        let mixed = [VideoFrame::test_pattern(4, 2, 0), VideoFrame::test_pattern(2, 4, 1)];
        assert!(matches!(pack_frames(&mixed, &cfg), Err(VideoError::Geometry { .. })));
        assert!(VideoFrame::new(2, 2, vec![0; 3], 0).is_err());
    }

    #[test]
    fn pixel_error_rate_tracks_ber() {
        let cfg = std16();
        let f = frames(4);
        let clean = pack_frames(&f, &cfg).unwrap();
        let header_bits = HEADER_LEN * 8;
        let frame_bits = f[0].frame_bytes() * 8;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for ber in [1e-4, 1e-3] {
            let mut fractions = Vec::new();
            for _ in 0..20 {
                let mut bits = clean.clone();
                for (k, b) in bits.iter_mut().enumerate() {
                    // keep headers intact to measure the payload effect alone
                    if k % frame_bits >= header_bits && rng.gen::<f64>() < ber {
                        *b ^= 1;
                    }
                }
                let (back, _) = unpack_frames(&bits);
                for (a, b) in back.iter().zip(&f) {
                    fractions.push(a.differing_pixels(b) as f64 / b.pixels.len() as f64);
                }
            }
            let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
            let expect = 1.0 - (1.0 - ber).powi(16);
            assert!(mean <= 16.0 * ber * 1.2, "ber {ber}: {mean}");
            assert!((mean / expect - 1.0).abs() < 0.2, "ber {ber}: {mean} vs {expect}");
        }
    }

    #[test]
    fn rgb_conversion() {
        for p in [0u16, 0xffff, 0xf800, 0x07e0, 0x001f, 0x1234] {
            assert_eq!(rgb8_to_rgb565(rgb565_to_rgb8(p)), p);
        }
        assert_eq!(rgb565_to_rgb8(0xffff), [255, 255, 255]);
        assert_eq!(rgb565_to_rgb8(0xf800), [255, 0, 0]);
    }

    #[test]
    fn ppm_and_raw_files() {
        let dir = tempfile::tempdir().unwrap();
        let f = frames(2);
        let ppm = dir.path().join("f.ppm");
        f[1].save_ppm(&ppm).unwrap();
        assert_eq!(VideoFrame::load_ppm(&ppm, 1).unwrap(), f[1]);
        let raw = dir.path().join("f.rgb565");
        write_raw(&f, &raw).unwrap();
        assert_eq!(read_raw(&raw, 160, 50).unwrap(), f);
        assert!(read_raw(&raw, 7, 3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn pack_unpack_identity(w in 1usize..40, h in 1usize..20, n in 1usize..5, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f: Vec<VideoFrame> = (0..n)
                .map(|i| VideoFrame::new(w, h, (0..w * h).map(|_| rng.gen()).collect(), i as u64).unwrap())
                .collect();
            let (back, stats) = unpack_frames(&pack_frames(&f, &std16()).unwrap());
            prop_assert_eq!(stats.dropped, 0);
            prop_assert_eq!(back, f);
        }
    }
}
