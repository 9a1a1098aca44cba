//! Sample buffers and the binary IQ file format.
//!
//! File layout, all fields little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `IQF1`                            |
//! | 4      | 4    | `u32` channel count                     |
//! | 8      | 8    | `f64` sample rate, samples/s            |
//! | 16     | 1    | `u8` domain: 0 = baseband, 1 = passband |
//! | 17     | ...  | `f32` samples, channel-major            |
//!
//! Baseband samples are stored as interleaved I,Q pairs, passband samples as
//! single reals. Every channel holds the same number of samples; the count is
//! implied by the file length.

use num_complex::Complex64;
use std::io::{Read, Write};
use std::path::Path;

pub const IQ_MAGIC: [u8; 4] = *b"IQF1";
pub const IQ_HEADER_LEN: usize = 17;

#[derive(Debug, thiserror::Error)]
pub enum IqError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unknown domain byte {0}")]
    BadDomain(u8),
    #[error("file too short for header")]
    ShortHeader,
    #[error("sample payload of {bytes} bytes does not split into {channels} channels")]
    Ragged { bytes: usize, channels: usize },
    #[error("channels have different lengths")]
    UnequalChannels,
    #[error("sample rate must be positive, got {0}")]
    SampleRate(f64),
    #[error("expected a {expected:?} file, found {found:?}")]
    WrongDomain { expected: Domain, found: Domain },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Baseband,
    Passband,
}

impl Domain {
    fn to_byte(self) -> u8 {
        match self {
            Domain::Baseband => 0,
            Domain::Passband => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self, IqError> {
        match b {
            0 => Ok(Domain::Baseband),
            1 => Ok(Domain::Passband),
            other => Err(IqError::BadDomain(other)),
        }
    }
}

/// Complex baseband samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BasebandBuffer {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
}

/// Real passband samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PassbandBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl BasebandBuffer {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Self {
        assert!(sample_rate > 0.0, "sample rate must be positive");
        BasebandBuffer {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }
}

impl PassbandBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Self {
        assert!(sample_rate > 0.0, "sample rate must be positive");
        PassbandBuffer {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.energy() / self.samples.len() as f64
    }

    pub fn scaled(&self, gain: f64) -> PassbandBuffer {
        PassbandBuffer {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Multichannel contents of one IQ file.
#[derive(Debug, Clone, PartialEq)]
pub enum IqFile {
    Baseband(Vec<BasebandBuffer>),
    Passband(Vec<PassbandBuffer>),
}

impl IqFile {
    pub fn domain(&self) -> Domain {
        match self {
            IqFile::Baseband(_) => Domain::Baseband,
            IqFile::Passband(_) => Domain::Passband,
        }
    }

    pub fn channel_count(&self) -> usize {
        match self {
            IqFile::Baseband(c) => c.len(),
            IqFile::Passband(c) => c.len(),
        }
    }

    pub fn sample_rate(&self) -> f64 {
        match self {
            IqFile::Baseband(c) => c.first().map_or(0.0, |b| b.sample_rate),
            IqFile::Passband(c) => c.first().map_or(0.0, |b| b.sample_rate),
        }
    }

    pub fn into_passband(self) -> Result<Vec<PassbandBuffer>, IqError> {
        match self {
            IqFile::Passband(c) => Ok(c),
            IqFile::Baseband(_) => Err(IqError::WrongDomain {
                expected: Domain::Passband,
                found: Domain::Baseband,
            }),
        }
    }

    pub fn into_baseband(self) -> Result<Vec<BasebandBuffer>, IqError> {
        match self {
            IqFile::Baseband(c) => Ok(c),
            IqFile::Passband(_) => Err(IqError::WrongDomain {
                expected: Domain::Baseband,
                found: Domain::Passband,
            }),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), IqError> {
        let rate = self.sample_rate();
        let lens: Vec<usize> = match self {
            IqFile::Baseband(c) => c.iter().map(|b| b.len()).collect(),
            IqFile::Passband(c) => c.iter().map(|b| b.len()).collect(),
        };
        if lens.windows(2).any(|p| p[0] != p[1]) {
            return Err(IqError::UnequalChannels);
        }
        let mut header = Vec::with_capacity(IQ_HEADER_LEN);
        header.extend_from_slice(&IQ_MAGIC);
        header.extend_from_slice(&(self.channel_count() as u32).to_le_bytes());
        header.extend_from_slice(&rate.to_le_bytes());
        header.push(self.domain().to_byte());
        w.write_all(&header)?;

        let mut body = Vec::new();
        match self {
            IqFile::Baseband(chans) => {
                for ch in chans {
                    for s in &ch.samples {
                        body.extend_from_slice(&(s.re as f32).to_le_bytes());
                        body.extend_from_slice(&(s.im as f32).to_le_bytes());
                    }
                }
            }
            IqFile::Passband(chans) => {
                for ch in chans {
                    for s in &ch.samples {
                        body.extend_from_slice(&(*s as f32).to_le_bytes());
                    }
                }
            }
        }
        w.write_all(&body)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, IqError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IqError> {
        if bytes.len() < IQ_HEADER_LEN {
            return Err(IqError::ShortHeader);
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != IQ_MAGIC {
            return Err(IqError::BadMagic(magic));
        }
        let channels = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let rate = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
        if !(rate.is_finite() && rate > 0.0) {
            return Err(IqError::SampleRate(rate));
        }
        let domain = Domain::from_byte(bytes[16])?;
        let body = &bytes[IQ_HEADER_LEN..];
        let floats_per_sample = match domain {
            Domain::Baseband => 2,
            Domain::Passband => 1,
        };
        let per_sample = 4 * floats_per_sample;
        if channels == 0 {
            if !body.is_empty() {
                return Err(IqError::Ragged {
                    bytes: body.len(),
                    channels,
                });
            }
        } else if body.len() % (channels * per_sample) != 0 {
            return Err(IqError::Ragged {
                bytes: body.len(),
                channels,
            });
        }
        let n = if channels == 0 {
            0
        } else {
            body.len() / (channels * per_sample)
        };
        let floats: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(match domain {
            Domain::Baseband => IqFile::Baseband(
                floats
                    .chunks(2 * n.max(1))
                    .take(channels)
                    .map(|ch| {
                        BasebandBuffer::new(
                            ch.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect(),
                            rate,
                        )
                    })
                    .chain(std::iter::repeat_with(|| BasebandBuffer::new(Vec::new(), rate)))
                    .take(channels)
                    .collect(),
            ),
            Domain::Passband => IqFile::Passband(
                floats
                    .chunks(n.max(1))
                    .take(channels)
                    .map(|ch| PassbandBuffer::new(ch.to_vec(), rate))
                    .chain(std::iter::repeat_with(|| PassbandBuffer::new(Vec::new(), rate)))
                    .take(channels)
                    .collect(),
            ),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IqError> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IqError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let f = IqFile::Passband(vec![
            PassbandBuffer::new(vec![1.0, -0.5], 12.5e6),
            PassbandBuffer::new(vec![0.25, 2.0], 12.5e6),
        ]);
        let mut bytes = Vec::new();
        f.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[0..4], b"IQF1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &12.5e6f64.to_le_bytes());
        assert_eq!(bytes[16], 1);
        assert_eq!(bytes.len(), IQ_HEADER_LEN + 4 * 4);
        // channel-major
        assert_eq!(&bytes[17..21], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[25..29], &0.25f32.to_le_bytes());
        assert_eq!(IqFile::from_bytes(&bytes).unwrap(), f);
    }

    #[test]
    fn baseband_interleaved() {
        let f = IqFile::Baseband(vec![BasebandBuffer::new(
            vec![Complex64::new(0.5, -1.0), Complex64::new(3.0, 4.0)],
            1.25e6,
        )]);
        let mut bytes = Vec::new();
        f.write_to(&mut bytes).unwrap();
        assert_eq!(bytes[16], 0);
        assert_eq!(&bytes[17..21], &0.5f32.to_le_bytes());
        assert_eq!(&bytes[21..25], &(-1.0f32).to_le_bytes());
        assert_eq!(IqFile::from_bytes(&bytes).unwrap(), f);
    }

    #[test]
    fn rejects_malformed() {
        assert!(matches!(IqFile::from_bytes(b"IQF1"), Err(IqError::ShortHeader)));
        let mut bytes = Vec::new();
        IqFile::Passband(vec![PassbandBuffer::new(vec![1.0], 1.0)])
            .write_to(&mut bytes)
            .unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(IqFile::from_bytes(&bad), Err(IqError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[16] = 7;
        assert!(matches!(IqFile::from_bytes(&bad), Err(IqError::BadDomain(7))));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(IqFile::from_bytes(&bad), Err(IqError::Ragged { .. })));
        let uneven = IqFile::Passband(vec![
            PassbandBuffer::new(vec![1.0], 1.0),
            PassbandBuffer::new(vec![1.0, 2.0], 1.0),
        ]);
        assert!(matches!(uneven.write_to(Vec::new()), Err(IqError::UnequalChannels)));
    }
}
