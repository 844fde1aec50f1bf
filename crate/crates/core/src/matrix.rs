//! Dense per-instance feature matrices and the RNEM v1 container.
//!
//! RNEM layout (all integers little-endian):
//!
//! ```text
//! b"RNEM" | version: u32 = 1 | rows: u32 | cols: u32
//! rows × { id_len: u32 | id: UTF-8 bytes | cols × f32 }
//! ```
//!
//! Rows are stored in row-major order. Values are persisted as `f32`, so a
//! matrix read from disk re-exports byte-identically.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"RNEM";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("row count mismatch: {0} vs {1}")]
    RowMismatch(usize, usize),
    #[error("instance ids do not match: {0}")]
    IdMismatch(String),
    #[error("corrupt matrix file: {0}")]
    CorruptFile(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which data source a matrix was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Diagnosis,
    Tags,
    Image,
    Fused,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Diagnosis => "diagnosis",
            Source::Tags => "tags",
            Source::Image => "image",
            Source::Fused => "fused",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Source {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "diagnosis" => Ok(Source::Diagnosis),
            "tags" => Ok(Source::Tags),
            "image" => Ok(Source::Image),
            "fused" => Ok(Source::Fused),
            other => Err(format!("unknown source '{other}'")),
        }
    }
}

/// Row-major `n × d` matrix whose rows are aligned to `ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub ids: Vec<String>,
    pub source: Source,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, source: Source, cols: usize, data: Vec<f64>) -> Result<Self, MatrixError> {
        let rows = ids.len();
        if data.len() != rows * cols {
            return Err(MatrixError::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(MatrixError::NonFiniteInput {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { ids, source, rows, cols, data })
    }

    /// Builds a matrix from row vectors. All rows must have equal length.
    pub fn from_rows(ids: Vec<String>, source: Source, rows: &[Vec<f64>]) -> Result<Self, MatrixError> {
        if ids.len() != rows.len() {
            return Err(MatrixError::RowMismatch(ids.len(), rows.len()));
        }
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(MatrixError::DimensionMismatch { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(ids, source, cols, data)
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so zero-width matrices yield empty rows explicitly
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn into_parts(self) -> (Vec<String>, Source, usize, Vec<f64>) {
        (self.ids, self.source, self.cols, self.data)
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }

    /// Selects a subset of rows by position, preserving the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        let mut ids = Vec::with_capacity(idx.len());
        for &i in idx {
            ids.push(self.ids[i].clone());
            data.extend_from_slice(self.row(i));
        }
        Self { ids, source: self.source, rows: idx.len(), cols: self.cols, data }
    }

    /// Reorders rows to follow `expected`. Missing or extra ids are errors.
    pub fn align_to(&self, expected: &[String]) -> Result<Self, MatrixError> {
        let index: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        if index.len() != self.ids.len() {
            return Err(MatrixError::IdMismatch("duplicate ids in matrix".into()));
        }
        let mut order = Vec::with_capacity(expected.len());
        for id in expected {
            match index.get(id.as_str()) {
                Some(&i) => order.push(i),
                None => return Err(MatrixError::IdMismatch(format!("id '{id}' missing from matrix"))),
            }
        }
        if expected.len() != self.ids.len() {
            return Err(MatrixError::IdMismatch(format!(
                "matrix has {} rows but {} ids were expected",
                self.ids.len(),
                expected.len()
            )));
        }
        Ok(self.select_rows(&order))
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(ids: Vec<String>, source: Source, m: &nalgebra::DMatrix<f64>) -> Result<Self, MatrixError> {
        if ids.len() != m.nrows() {
            return Err(MatrixError::RowMismatch(ids.len(), m.nrows()));
        }
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self::new(ids, source, m.ncols(), data)
    }

    /// Serializes into RNEM v1 bytes.
    pub fn write_rnem<W: Write>(&self, mut w: W) -> Result<(), MatrixError> {
        let too_big = |what: &str| MatrixError::CorruptFile(format!("{what} exceeds u32"));
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&u32::try_from(self.rows).map_err(|_| too_big("row count"))?.to_le_bytes())?;
        w.write_all(&u32::try_from(self.cols).map_err(|_| too_big("column count"))?.to_le_bytes())?;
        for (i, id) in self.ids.iter().enumerate() {
            let bytes = id.as_bytes();
            w.write_all(&u32::try_from(bytes.len()).map_err(|_| too_big("id length"))?.to_le_bytes())?;
            w.write_all(bytes)?;
            for &v in self.row(i) {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_rnem_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + self.rows * (self.cols * 4 + 16));
        self.write_rnem(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Parses RNEM v1 bytes.
    pub fn read_rnem<R: Read>(mut r: R, source: Source) -> Result<Self, MatrixError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_rnem_bytes(&bytes, source)
    }

    pub fn from_rnem_bytes(bytes: &[u8], source: Source) -> Result<Self, MatrixError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(MatrixError::CorruptFile("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(MatrixError::CorruptFile(format!("unsupported version {version}")));
        }
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        let mut ids = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows.saturating_mul(cols).min(1 << 28));
        for _ in 0..rows {
            let len = cur.u32()? as usize;
            let id = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| MatrixError::CorruptFile("id is not valid UTF-8".into()))?;
            ids.push(id.to_owned());
            for _ in 0..cols {
                let raw: [u8; 4] = cur.take(4)?.try_into().expect("4 bytes");
                data.push(f64::from(f32::from_le_bytes(raw)));
            }
        }
        if cur.pos != bytes.len() {
            return Err(MatrixError::CorruptFile("trailing bytes".into()));
        }
        Self::new(ids, source, cols, data)
    }

    pub fn save(&self, path: &Path) -> Result<(), MatrixError> {
        std::fs::write(path, self.to_rnem_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path, source: Source) -> Result<Self, MatrixError> {
        let bytes = std::fs::read(path)?;
        Self::from_rnem_bytes(&bytes, source)
    }

    /// Reads a small CSV matrix: header row, first column `instance_id`,
    /// remaining columns numeric.
    pub fn read_csv<R: Read>(r: R, source: Source) -> Result<Self, MatrixError> {
        let mut reader = csv::Reader::from_reader(r);
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| MatrixError::CorruptFile(e.to_string()))?;
            let mut it = rec.iter();
            let id = it.next().ok_or_else(|| MatrixError::CorruptFile("empty record".into()))?;
            ids.push(id.to_owned());
            let row = it
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| MatrixError::CorruptFile(e.to_string()))?;
            rows.push(row);
        }
        Self::from_rows(ids, source, &rows)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), MatrixError> {
        let mut writer = csv::Writer::from_writer(w);
        let mut header = vec!["instance_id".to_string()];
        header.extend((0..self.cols).map(|j| format!("f{j}")));
        writer.write_record(&header).map_err(|e| MatrixError::CorruptFile(e.to_string()))?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            writer.write_record(&rec).map_err(|e| MatrixError::CorruptFile(e.to_string()))?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Loads an externally produced embedding file (RNEM, or CSV when the path
/// ends in `.csv`) and re-aligns its rows to `expected_ids`.
pub fn import_embeddings(path: &Path, expected_ids: &[String], source: Source) -> Result<EmbeddingMatrix, MatrixError> {
    let m = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        EmbeddingMatrix::read_csv(std::fs::File::open(path)?, source)?
    } else {
        EmbeddingMatrix::load(path, source)?
    };
    m.align_to(expected_ids)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MatrixError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| MatrixError::CorruptFile("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, MatrixError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
