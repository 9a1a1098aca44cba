//! Magnitude-weighted maximum ratio combining across receive elements and
//! link metrics.

use crate::bits::count_bit_errors;
use crate::config::OfdmConfig;
use crate::qam::{evm_db, Constellation, QamError};
use crate::rx::ElementOutput;
use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CombineError {
    #[error("no elements to combine")]
    NoElements,
    #[error("tensor shapes differ: {0:?}")]
    Shape(Vec<(usize, usize, usize)>),
    #[error("grid has {got} subcarriers, configuration has {want}")]
    Carriers { got: usize, want: usize },
    #[error("truth has {got} bits, decoded stream has {want}")]
    TruthLength { got: usize, want: usize },
    #[error("cannot select {want} of {have} elements")]
    Selection { want: usize, have: usize },
    #[error(transparent)]
    Qam(#[from] QamError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Equalized symbols, channel magnitudes and erasures stacked as
/// `[element, data symbol, subcarrier]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombineInput {
    pub s: Array3<Complex64>,
    pub mag: Array3<f64>,
    pub erasure: Array3<bool>,
}

impl CombineInput {
    /// Builds the tensors, zeroing the magnitude of erased cells.
    pub fn new(s: Array3<Complex64>, mut mag: Array3<f64>, erasure: Array3<bool>) -> Result<Self, CombineError> {
        if s.dim() != mag.dim() || s.dim() != erasure.dim() {
            return Err(CombineError::Shape(vec![s.dim(), mag.dim(), erasure.dim()]));
        }
        if s.dim().0 == 0 {
            return Err(CombineError::NoElements);
        }
        mag.zip_mut_with(&erasure, |m, &e| {
            if e || !m.is_finite() || *m < 0.0 {
                *m = 0.0;
            }
        });
        Ok(CombineInput { s, mag, erasure })
    }

    pub fn from_elements(elements: &[ElementOutput]) -> Result<Self, CombineError> {
        let first = elements.first().ok_or(CombineError::NoElements)?;
        let (rows, cols) = first.symbols.dim();
        if elements.iter().any(|e| e.symbols.dim() != (rows, cols)) {
            return Err(CombineError::Shape(
                elements.iter().map(|e| (1, e.symbols.nrows(), e.symbols.ncols())).collect(),
            ));
        }
        let n = elements.len();
        let mut s = Array3::zeros((n, rows, cols));
        let mut mag = Array3::zeros((n, rows, cols));
        let mut erasure = Array3::from_elem((n, rows, cols), false);
        for (j, e) in elements.iter().enumerate() {
            s.index_axis_mut(Axis(0), j).assign(&e.symbols);
            mag.index_axis_mut(Axis(0), j).assign(&e.mag);
            erasure.index_axis_mut(Axis(0), j).assign(&e.erased);
        }
        CombineInput::new(s, mag, erasure)
    }

    pub fn n_elements(&self) -> usize {
        self.s.dim().0
    }

    pub fn n_symbols(&self) -> usize {
        self.s.dim().1
    }

    pub fn n_carriers(&self) -> usize {
        self.s.dim().2
    }

    /// Keeps the listed elements, in the given order.
    pub fn select(&self, elements: &[usize]) -> CombineInput {
        CombineInput {
            s: self.s.select(Axis(0), elements),
            mag: self.mag.select(Axis(0), elements),
            erasure: self.erasure.select(Axis(0), elements),
        }
    }

    /// Mean channel magnitude per element and subcarrier, `[N x B]`.
    pub fn per_subcarrier_mag(&self) -> Array2<f64> {
        self.mag
            .mean_axis(Axis(1))
            .unwrap_or_else(|| Array2::zeros((self.n_elements(), self.n_carriers())))
    }
}

/// Combining weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineMode {
    /// `C = sum(S |H|) / sum(|H|)` on equalized symbols.
    #[default]
    Magnitude,
    /// Classic MRC: `|H|^2` weights, equivalent to `sum(conj(H) Y) / sum(|H|^2)`.
    Classic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Combined {
    pub symbols: Array2<Complex64>,
    /// Cells where every element was erased; their symbol is zero.
    pub erased: Array2<bool>,
}

/// Weighted average over elements, accumulated in element order.
pub fn mrc_combine(input: &CombineInput, mode: CombineMode) -> Combined {
    let (n, rows, cols) = input.s.dim();
    let mut symbols = Array2::zeros((rows, cols));
    let mut erased = Array2::from_elem((rows, cols), false);
    for r in 0..rows {
        for i in 0..cols {
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = 0.0;
            for j in 0..n {
                if input.erasure[[j, r, i]] {
                    continue;
                }
                let m = input.mag[[j, r, i]];
                let w = match mode {
                    CombineMode::Magnitude => m,
                    CombineMode::Classic => m * m,
                };
                num += input.s[[j, r, i]] * w;
                den += w;
            }
            if den > 0.0 {
                symbols[[r, i]] = num / den;
            } else {
                erased[[r, i]] = true;
            }
        }
    }
    Combined { symbols, erased }
}

/// Which elements feed the combiner when fewer than all are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementSelection {
    /// A contiguous block centred in the array.
    #[default]
    Centre,
    /// The elements with the largest mean channel magnitude.
    Best,
}

/// Element indices (ascending) for combining `count` of `input`'s elements.
pub fn select_elements(
    input: &CombineInput,
    count: usize,
    how: ElementSelection,
) -> Result<Vec<usize>, CombineError> {
    let have = input.n_elements();
    if count == 0 || count > have {
        return Err(CombineError::Selection { want: count, have });
    }
    Ok(match how {
        ElementSelection::Centre => {
            let start = (have - count) / 2;
            (start..start + count).collect()
        }
        ElementSelection::Best => {
            let means: Vec<f64> = input
                .mag
                .outer_iter()
                .map(|m| m.mean().unwrap_or(0.0))
                .collect();
            let mut order: Vec<usize> = (0..have).collect();
            order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
            order.truncate(count);
            order.sort_unstable();
            order
        }
    })
}

/// Decoding result and link quality figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub n_elements: usize,
    pub bits_total: u64,
    /// Present when the transmitted bits are known.
    pub bit_errors: Option<u64>,
    pub ber: Option<f64>,
    /// `1 / bits_total` when no errors were observed.
    pub ber_upper_bound: Option<f64>,
    /// Against the transmitted symbols when known, otherwise against the
    /// nearest constellation points.
    pub evm_db: Option<f64>,
    pub erased_cells: u64,
    pub constellation: Vec<Complex64>,
    /// Mean `|H|` per element (rows) and subcarrier (columns).
    pub per_subcarrier_mag: Vec<Vec<f64>>,
}

impl LinkReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<(), CombineError> {
        std::fs::write(path, self.to_json_pretty())?;
        Ok(())
    }

    /// `I,Q` rows preceded by a comment line carrying the EVM.
    pub fn write_constellation_csv<W: Write>(&self, mut w: W) -> Result<(), CombineError> {
        match self.evm_db {
            Some(e) => writeln!(w, "# evm_db={e:.4}")?,
            None => writeln!(w, "# evm_db=nan")?,
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["I", "Q"])?;
        for p in &self.constellation {
            out.write_record([p.re.to_string(), p.im.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// One row per element: `element,sc0,sc1,...`.
    pub fn write_magnitude_csv<W: Write>(&self, w: W) -> Result<(), CombineError> {
        let mut out = csv::Writer::from_writer(w);
        let cols = self.per_subcarrier_mag.first().map_or(0, Vec::len);
        let mut header = vec!["element".to_string()];
        header.extend((0..cols).map(|i| format!("sc{i}")));
        out.write_record(&header)?;
        for (j, row) in self.per_subcarrier_mag.iter().enumerate() {
            let mut rec = vec![j.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Combines, demaps and scores one frame. Returns the decoded payload bits.
pub fn decode_link(
    input: &CombineInput,
    cfg: &OfdmConfig,
    mode: CombineMode,
    truth: Option<&[u8]>,
) -> Result<(Vec<u8>, LinkReport), CombineError> {
    if input.n_carriers() != cfg.active_carriers {
        return Err(CombineError::Carriers {
            got: input.n_carriers(),
            want: cfg.active_carriers,
        });
    }
    let c = Constellation::new(cfg.qam_order)?;
    let combined = mrc_combine(input, mode);
    let points: Vec<Complex64> = combined.symbols.iter().copied().collect();
    let bits = c.demap(&points);
    let bits_total = bits.len() as u64;

    let (bit_errors, evm) = match truth {
        Some(t) => {
            if t.len() != bits.len() {
                return Err(CombineError::TruthLength {
                    got: t.len(),
                    want: bits.len(),
                });
            }
            let reference = c.map(t)?;
            (Some(count_bit_errors(&bits, t)), evm_db(&points, &reference).ok())
        }
        None => {
            let reference: Vec<Complex64> = points.iter().map(|&p| c.quantize(p)).collect();
            (None, evm_db(&points, &reference).ok())
        }
    };
    let ber = bit_errors.map(|e| if bits_total == 0 { 0.0 } else { e as f64 / bits_total as f64 });
    let ber_upper_bound = match bit_errors {
        Some(0) if bits_total > 0 => Some(1.0 / bits_total as f64),
        _ => None,
    };
    let report = LinkReport {
        n_elements: input.n_elements(),
        bits_total,
        bit_errors,
        ber,
        ber_upper_bound,
        evm_db: evm,
        erased_cells: combined.erased.iter().filter(|e| **e).count() as u64,
        constellation: points,
        per_subcarrier_mag: input
            .per_subcarrier_mag()
            .outer_iter()
            .map(|r| r.to_vec())
            .collect(),
    };
    Ok((bits, report))
}
