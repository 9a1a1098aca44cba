//! Gray-coded square QAM mapping, hard-decision demapping and EVM.
//!
//! Bits are carried one per `u8` (values 0 or 1). The first half of each
//! symbol's bit group selects the in-phase level, the second half the
//! quadrature level, each MSB first. Levels along an axis are Gray coded so
//! horizontally or vertically adjacent points differ in one bit. Level index
//! 0 is the most negative amplitude, so with QPSK the pattern `00` maps to
//! `(-1 - 1j) / sqrt(2)` in the third quadrant.
//!
//! Points are scaled by `1 / sqrt(2 (M - 1) / 3)` for unit average energy:
//! `1/sqrt(2)`, `1/sqrt(10)`, `1/sqrt(42)` and `1/sqrt(170)` for M = 4, 16,
//! 64 and 256.

use num_complex::Complex64;

/// EVM reported when the error vector is exactly zero.
pub const EVM_FLOOR_DB: f64 = -100.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QamError {
    #[error("unsupported QAM order {0}")]
    UnsupportedOrder(u32),
    #[error("bit count {len} is not a multiple of {bits_per_symbol}")]
    BitLength { len: usize, bits_per_symbol: usize },
    #[error("EVM needs nonempty input")]
    Empty,
    #[error("received length {received} differs from reference length {reference}")]
    LengthMismatch { received: usize, reference: usize },
}

/// Square Gray-coded constellation of a given order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constellation {
    order: u32,
    side: usize,
    bits_per_axis: usize,
    scale: f64,
}

impl Constellation {
    pub fn new(order: u32) -> Result<Self, QamError> {
        if !matches!(order, 4 | 16 | 64 | 256) {
            return Err(QamError::UnsupportedOrder(order));
        }
        let bits = order.trailing_zeros() as usize;
        let side = 1usize << (bits / 2);
        Ok(Constellation {
            order,
            side,
            bits_per_axis: bits / 2,
            scale: (2.0 * (order as f64 - 1.0) / 3.0).sqrt(),
        })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        2 * self.bits_per_axis
    }

    /// Amplitude normalization divisor.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn level_amplitude(&self, index: usize) -> f64 {
        (2.0 * index as f64 - (self.side as f64 - 1.0)) / self.scale
    }

    /// Nearest level index on one axis. Exact midpoints resolve to the lower level.
    fn nearest_level(&self, x: f64) -> usize {
        let t = (x * self.scale + (self.side as f64 - 1.0)) / 2.0;
        let idx = (t - 0.5).ceil();
        if idx.is_nan() || idx <= 0.0 {
            0
        } else {
            (idx as usize).min(self.side - 1)
        }
    }

    fn axis_bits_to_level(&self, bits: &[u8]) -> usize {
        let gray = bits.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
        gray_decode(gray)
    }

    fn level_to_axis_bits(&self, level: usize, out: &mut Vec<u8>) {
        let gray = level ^ (level >> 1);
        for k in (0..self.bits_per_axis).rev() {
            out.push(((gray >> k) & 1) as u8);
        }
    }

    /// Maps one group of `bits_per_symbol` bits.
    pub fn map_group(&self, bits: &[u8]) -> Complex64 {
        let (i_bits, q_bits) = bits.split_at(self.bits_per_axis);
        Complex64::new(
            self.level_amplitude(self.axis_bits_to_level(i_bits)),
            self.level_amplitude(self.axis_bits_to_level(q_bits)),
        )
    }

    pub fn map(&self, bits: &[u8]) -> Result<Vec<Complex64>, QamError> {
        let k = self.bits_per_symbol();
        if bits.len() % k != 0 {
            return Err(QamError::BitLength {
                len: bits.len(),
                bits_per_symbol: k,
            });
        }
        Ok(bits.chunks_exact(k).map(|g| self.map_group(g)).collect())
    }

    /// Appends the bits of the constellation point nearest to `point`.
    pub fn demap_into(&self, point: Complex64, out: &mut Vec<u8>) {
        self.level_to_axis_bits(self.nearest_level(point.re), out);
        self.level_to_axis_bits(self.nearest_level(point.im), out);
    }

    pub fn demap(&self, points: &[Complex64]) -> Vec<u8> {
        let mut out = Vec::with_capacity(points.len() * self.bits_per_symbol());
        for &p in points {
            self.demap_into(p, &mut out);
        }
        out
    }

    /// Snaps a point onto the constellation grid.
    pub fn quantize(&self, point: Complex64) -> Complex64 {
        Complex64::new(
            self.level_amplitude(self.nearest_level(point.re)),
            self.level_amplitude(self.nearest_level(point.im)),
        )
    }

    /// All points in label order (label `k` written MSB first).
    pub fn points(&self) -> Vec<Complex64> {
        let k = self.bits_per_symbol();
        (0..self.order as usize)
            .map(|label| {
                let bits: Vec<u8> = (0..k).rev().map(|b| ((label >> b) & 1) as u8).collect();
                self.map_group(&bits)
            })
            .collect()
    }

    /// Half the distance between adjacent points.
    pub fn half_min_distance(&self) -> f64 {
        1.0 / self.scale
    }
}

fn gray_decode(mut g: usize) -> usize {
    let mut b = g;
    while g > 1 {
        g >>= 1;
        b ^= g;
    }
    b
}

pub fn qam_map(bits: &[u8], order: u32) -> Result<Vec<Complex64>, QamError> {
    Constellation::new(order)?.map(bits)
}

pub fn qam_demap(points: &[Complex64], order: u32) -> Result<Vec<u8>, QamError> {
    Ok(Constellation::new(order)?.demap(points))
}

/// Data-aided EVM: `10 log10(mean |r - s|^2 / mean |s|^2)`, floored at
/// [`EVM_FLOOR_DB`].
pub fn evm_db(received: &[Complex64], reference: &[Complex64]) -> Result<f64, QamError> {
    if received.is_empty() || reference.is_empty() {
        return Err(QamError::Empty);
    }
    if received.len() != reference.len() {
        return Err(QamError::LengthMismatch {
            received: received.len(),
            reference: reference.len(),
        });
    }
    let err: f64 = received
        .iter()
        .zip(reference)
        .map(|(r, s)| (r - s).norm_sqr())
        .sum();
    let sig: f64 = reference.iter().map(|s| s.norm_sqr()).sum();
    if err == 0.0 {
        return Ok(EVM_FLOOR_DB);
    }
    if sig == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((10.0 * (err / sig).log10()).max(EVM_FLOOR_DB))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ORDERS: [u32; 4] = [4, 16, 64, 256];

    fn label_bits(label: usize, k: usize) -> Vec<u8> {
        (0..k).rev().map(|b| ((label >> b) & 1) as u8).collect()
    }

    #[test]
    fn unit_average_energy_brute_force() {
        for m in ORDERS {
            let pts = Constellation::new(m).unwrap().points();
            let mean: f64 = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / pts.len() as f64;
            assert!((mean - 1.0).abs() < 1e-12, "M={m} mean={mean}");
        }
    }

    #[test]
    fn sixteen_patterns_give_sixteen_points() {
        let bits: Vec<u8> = (0..16).flat_map(|l| label_bits(l, 4)).collect();
        let pts = qam_map(&bits, 16).unwrap();
        for i in 0..16 {
            for j in 0..i {
                assert!((pts[i] - pts[j]).norm() > 0.1);
            }
        }
        let mean: f64 = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / 16.0;
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qpsk_zero_pattern_corner() {
        let p = qam_map(&[0, 0], 4).unwrap()[0];
        let s = 1.0 / 2f64.sqrt();
        assert!((p - Complex64::new(-s, -s)).norm() < 1e-15);
        assert!((p.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gray_neighbors_differ_in_one_bit() {
        for m in [4u32, 16, 256] {
            let c = Constellation::new(m).unwrap();
            let k = c.bits_per_symbol();
            let pts = c.points();
            let step = 2.0 / c.scale();
            let mut checked = 0;
            for a in 0..pts.len() {
                for b in 0..pts.len() {
                    let d = pts[a] - pts[b];
                    let horizontal = (d.re.abs() - step).abs() < 1e-9 && d.im.abs() < 1e-9;
                    let vertical = (d.im.abs() - step).abs() < 1e-9 && d.re.abs() < 1e-9;
                    if horizontal || vertical {
                        let diff = ((a ^ b) as u32).count_ones();
                        assert_eq!(diff, 1, "M={m} labels {a:0k$b} {b:0k$b}");
                        checked += 1;
                    }
                }
            }
            let side = (m as f64).sqrt() as usize;
            assert_eq!(checked, 2 * 2 * side * (side - 1));
        }
    }

    #[test]
    fn noiseless_round_trip_every_symbol() {
        for m in ORDERS {
            let c = Constellation::new(m).unwrap();
            let k = c.bits_per_symbol();
            let bits: Vec<u8> = (0..m as usize).flat_map(|l| label_bits(l, k)).collect();
            let back = qam_demap(&qam_map(&bits, m).unwrap(), m).unwrap();
            assert_eq!(back, bits);
        }
    }

    #[test]
    fn small_perturbation_is_corrected() {
        let c = Constellation::new(256).unwrap();
        let r = 0.99 * c.half_min_distance();
        let pts = c.points();
        for (label, p) in pts.iter().enumerate() {
            for dir in [(1.0, 0.0), (0.0, -1.0), (0.7, 0.7), (-0.7, 0.7)] {
                let q = p + Complex64::new(dir.0, dir.1) * r;
                let bits = c.demap(&[q]);
                assert_eq!(bits, label_bits(label, 8));
            }
        }
    }

    #[test]
    fn ties_go_to_smaller_coordinate() {
        let c = Constellation::new(16).unwrap();
        // midpoint between levels -1 and +1 on both axes is the origin
        let q = c.quantize(Complex64::new(0.0, 0.0));
        assert!(q.re < 0.0 && q.im < 0.0);
        let mid = Complex64::new(2.0 / c.scale(), -2.0 / c.scale());
        let q = c.quantize(mid);
        assert!((q.re - 1.0 / c.scale()).abs() < 1e-12);
        assert!((q.im + 3.0 / c.scale()).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(qam_map(&[0, 1, 0], 16), Err(QamError::BitLength { len: 3, bits_per_symbol: 4 }));
        assert_eq!(qam_map(&[0, 1], 8), Err(QamError::UnsupportedOrder(8)));
        assert_eq!(qam_demap(&[], 32), Err(QamError::UnsupportedOrder(32)));
        assert_eq!(evm_db(&[], &[]), Err(QamError::Empty));
        let one = [Complex64::new(1.0, 0.0)];
        assert!(matches!(evm_db(&one, &[one[0], one[0]]), Err(QamError::LengthMismatch { .. })));
    }

    #[test]
    fn evm_values() {
        let refs = qam_map(&[0, 0, 1, 1, 0, 1, 1, 0], 4).unwrap();
        assert_eq!(evm_db(&refs, &refs).unwrap(), EVM_FLOOR_DB);

        let off = Complex64::new(0.1, 0.0);
        let rx: Vec<_> = refs.iter().map(|s| s + off).collect();
        assert!((evm_db(&rx, &refs).unwrap() + 20.0).abs() < 1e-9);

        let rx2: Vec<_> = refs.iter().map(|s| s + off * 2.0).collect();
        let delta = evm_db(&rx2, &refs).unwrap() - evm_db(&rx, &refs).unwrap();
        assert!((delta - 20.0 * 2f64.log10()).abs() < 1e-9);
    }
}
