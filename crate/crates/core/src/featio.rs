//! Feature-matrix data model and on-disk formats.
//!
//! FMAT layout (all little-endian):
//!
//! ```text
//! "FMAT" | version u32 = 1 | flags u32 (bit0 = labels) | n_rows u64 | n_cols u64
//!        | class_count u32 (0 = absent) | f32 * n_rows*n_cols | u32 * n_rows (iff bit0)
//! ```
//!
//! Selection manifests are JSON lines, one object per cycle.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FMAT_MAGIC: &[u8; 4] = b"FMAT";
pub const FMAT_VERSION: u32 = 1;
pub const FMAT_HEADER_LEN: usize = 32;
const FLAG_LABELS: u32 = 1;

/// Dense row-major `n_rows x n_cols` matrix of `f32` features with optional
/// per-row class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f32>,
    labels: Option<Vec<u32>>,
    class_count: Option<u32>,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f32>) -> Result<Self> {
        let expected = n_rows
            .checked_mul(n_cols)
            .ok_or_else(|| Error::Shape(format!("{n_rows} x {n_cols} overflows")))?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{n_rows} x {n_cols} matrix needs {expected} values, got {}",
                data.len()
            )));
        }
        check_finite(&data, n_cols)?;
        Ok(Self {
            n_rows,
            n_cols,
            data,
            labels: None,
            class_count: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} values, expected {n_cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), n_cols, data)
    }

    /// Attaches labels. Every label must be below `class_count`.
    pub fn with_labels(mut self, labels: Vec<u32>, class_count: u32) -> Result<Self> {
        validate_labels(self.n_rows, &labels, class_count)?;
        self.labels = Some(labels);
        self.class_count = Some(class_count);
        Ok(self)
    }

    /// Records a class count without attaching labels.
    pub fn with_class_count(mut self, class_count: u32) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::LabelMismatch("class_count must be positive".into()));
        }
        if let Some(labels) = &self.labels {
            validate_labels(self.n_rows, labels, class_count)?;
        }
        self.class_count = Some(class_count);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact panics on a zero chunk size
        (0..self.n_rows).map(move |i| self.row(i))
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<u32> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn class_count(&self) -> Option<u32> {
        self.class_count
    }

    /// Copy of this matrix with labels removed. The class count is kept.
    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    /// New matrix holding the given rows in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            if i >= self.n_rows {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.n_rows,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            n_rows: idx.len(),
            n_cols: self.n_cols,
            data,
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            class_count: self.class_count,
        })
    }
}

fn check_finite(data: &[f32], n_cols: usize) -> Result<()> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: pos / n_cols.max(1),
            col: pos % n_cols.max(1),
        });
    }
    Ok(())
}

fn validate_labels(n_rows: usize, labels: &[u32], class_count: u32) -> Result<()> {
    if class_count == 0 {
        return Err(Error::LabelMismatch("class_count must be positive".into()));
    }
    if labels.len() != n_rows {
        return Err(Error::LabelMismatch(format!(
            "{} labels for {n_rows} rows",
            labels.len()
        )));
    }
    if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
        return Err(Error::LabelMismatch(format!(
            "row {row} has label {l}, class_count is {class_count}"
        )));
    }
    Ok(())
}

pub fn encode_fmat(m: &FeatureMatrix) -> Vec<u8> {
    let label_bytes = m.labels.as_ref().map_or(0, |l| 4 * l.len());
    let mut out = Vec::with_capacity(FMAT_HEADER_LEN + 4 * m.data.len() + label_bytes);
    out.extend_from_slice(FMAT_MAGIC);
    out.extend_from_slice(&FMAT_VERSION.to_le_bytes());
    let flags = if m.labels.is_some() { FLAG_LABELS } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(m.n_rows as u64).to_le_bytes());
    out.extend_from_slice(&(m.n_cols as u64).to_le_bytes());
    out.extend_from_slice(&m.class_count.unwrap_or(0).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = &m.labels {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

pub fn decode_fmat(bytes: &[u8]) -> Result<FeatureMatrix> {
    let prefix = &bytes[..bytes.len().min(4)];
    if prefix != &FMAT_MAGIC[..prefix.len()] {
        return Err(Error::BadMagic {
            found: prefix.to_vec(),
        });
    }
    if bytes.len() < FMAT_HEADER_LEN {
        return Err(Error::Truncated {
            expected: FMAT_HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());

    let version = u32_at(4);
    if version != FMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let flags = u32_at(8);
    if flags & !FLAG_LABELS != 0 {
        return Err(Error::Shape(format!("unknown flag bits {flags:#x}")));
    }
    let has_labels = flags & FLAG_LABELS != 0;
    let n_rows = u64_at(12);
    let n_cols = u64_at(20);
    let class_count = u32_at(28);

    let overflow = || Error::Shape(format!("{n_rows} x {n_cols} overflows"));
    let payload = n_rows
        .checked_mul(n_cols)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(overflow)?;
    let label_len = if has_labels {
        n_rows.checked_mul(4).ok_or_else(overflow)?
    } else {
        0
    };
    let expected = (FMAT_HEADER_LEN as u64)
        .checked_add(payload)
        .and_then(|v| v.checked_add(label_len))
        .ok_or_else(overflow)?;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::Truncated { expected, found });
    }
    if found > expected {
        return Err(Error::TrailingBytes {
            extra: found - expected,
        });
    }

    let (n_rows, n_cols) = (n_rows as usize, n_cols as usize);
    let body = &bytes[FMAT_HEADER_LEN..];
    let (payload, label_bytes) = body.split_at(payload as usize);
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut m = FeatureMatrix::new(n_rows, n_cols, data)?;
    if has_labels {
        if class_count == 0 {
            return Err(Error::LabelMismatch(
                "labels present but class_count is 0".into(),
            ));
        }
        let labels = label_bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        m = m.with_labels(labels, class_count)?;
    } else if class_count > 0 {
        m = m.with_class_count(class_count)?;
    }
    Ok(m)
}

pub fn read_fmat(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    decode_fmat(&fs::read(path)?)
}

pub fn write_fmat(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_fmat(m))?;
    Ok(())
}

/// Parses a rectangular numeric CSV. With `has_label_column` the final
/// column holds integer class ids and `class_count` becomes `max + 1`.
pub fn parse_csv(text: &str, has_label_column: bool) -> Result<FeatureMatrix> {
    let mut width = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut n_rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::Csv {
                    line: line_no,
                    reason: format!("ragged row: {} cells, expected {w}", cells.len()),
                })
            }
            _ => {}
        }
        let (features, label) = if has_label_column {
            if cells.len() < 2 {
                return Err(Error::Csv {
                    line: line_no,
                    reason: "label column requires at least one feature column".into(),
                });
            }
            let (f, l) = cells.split_at(cells.len() - 1);
            (f, Some(l[0]))
        } else {
            (&cells[..], None)
        };
        for (col, cell) in features.iter().enumerate() {
            let v: f32 = cell.parse().map_err(|_| Error::Csv {
                line: line_no,
                reason: format!("non-numeric cell {cell:?} in column {col}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row: n_rows, col });
            }
            data.push(v);
        }
        if let Some(l) = label {
            labels.push(l.parse::<u32>().map_err(|_| Error::Csv {
                line: line_no,
                reason: format!("label {l:?} is not a non-negative integer"),
            })?);
        }
        n_rows += 1;
    }
    let Some(width) = width else {
        return Err(Error::Csv {
            line: 0,
            reason: "empty file".into(),
        });
    };
    let n_cols = if has_label_column { width - 1 } else { width };
    let m = FeatureMatrix::new(n_rows, n_cols, data)?;
    if has_label_column {
        let class_count = labels.iter().max().map_or(1, |&l| l + 1);
        m.with_labels(labels, class_count)
    } else {
        Ok(m)
    }
}

pub fn read_csv(path: impl AsRef<Path>, has_label_column: bool) -> Result<FeatureMatrix> {
    parse_csv(&fs::read_to_string(path)?, has_label_column)
}

/// Record of one cycle's selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionManifest {
    pub cycle: usize,
    pub beta: f64,
    pub subpool_start: usize,
    pub subpool_end: usize,
    pub selected: Vec<usize>,
    pub scores: Vec<f64>,
}

impl SelectionManifest {
    pub fn subpool_bounds(&self) -> (usize, usize) {
        (self.subpool_start, self.subpool_end)
    }
}

pub fn write_manifest(manifests: &[SelectionManifest], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for m in manifests {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<SelectionManifest>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
