//! On-disk formats.
//!
//! JSON documents use `serde_json`, whose float printing is shortest
//! round-trip. CSV files hold bare numeric rows without a header and print
//! floats with `{:?}`, which is also shortest round-trip.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsdError};
use crate::ss_matrix::{LowerTriangularMatrix, MaskVector};
use crate::ssm::{DiagonalSsm, SequenceData};

pub(crate) fn rows_to_matrix(what: &'static str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(SsdError::ShapeMismatch {
            what,
            expected: format!("{width} columns"),
            got: format!("{} columns in row {}", row.len(), i + 1),
        });
    }
    Ok(DMatrix::from_fn(height, width, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// `{"T": int, "rows": [[...], ...]}`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixFile {
    #[serde(rename = "T")]
    pub size: usize,
    pub rows: Vec<Vec<f64>>,
}

impl From<&LowerTriangularMatrix> for MatrixFile {
    fn from(m: &LowerTriangularMatrix) -> Self {
        Self {
            size: m.size(),
            rows: m.to_rows(),
        }
    }
}

impl TryFrom<MatrixFile> for LowerTriangularMatrix {
    type Error = SsdError;
    fn try_from(f: MatrixFile) -> Result<Self> {
        if f.rows.len() != f.size {
            return Err(SsdError::ShapeMismatch {
                what: "matrix rows",
                expected: f.size.to_string(),
                got: f.rows.len().to_string(),
            });
        }
        LowerTriangularMatrix::from_rows(&f.rows)
    }
}

/// `{"a": [...]}`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskFile {
    pub a: Vec<f64>,
}

impl TryFrom<MaskFile> for MaskVector {
    type Error = SsdError;
    fn try_from(f: MaskFile) -> Result<Self> {
        MaskVector::new(f.a)
    }
}

impl From<&MaskVector> for MaskFile {
    fn from(m: &MaskVector) -> Self {
        Self { a: m.as_slice().to_vec() }
    }
}

/// `{"T":int,"N":int,"A_diag":[[...]],"b":[[...]],"c":[[...]]}`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SsmFile {
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "N")]
    pub modes: usize,
    #[serde(rename = "A_diag")]
    pub gains: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl TryFrom<SsmFile> for DiagonalSsm {
    type Error = SsdError;
    fn try_from(f: SsmFile) -> Result<Self> {
        for (what, rows) in [("A_diag", &f.gains), ("b", &f.b), ("c", &f.c)] {
            if rows.len() != f.steps || rows.iter().any(|r| r.len() != f.modes) {
                return Err(SsdError::ShapeMismatch {
                    what,
                    expected: format!("{}x{}", f.steps, f.modes),
                    got: format!("{} rows", rows.len()),
                });
            }
        }
        DiagonalSsm::new(
            rows_to_matrix("A_diag", &f.gains)?,
            rows_to_matrix("b", &f.b)?,
            rows_to_matrix("c", &f.c)?,
        )
    }
}

impl From<DiagonalSsm> for SsmFile {
    fn from(s: DiagonalSsm) -> Self {
        Self {
            steps: s.steps(),
            modes: s.state_dim(),
            gains: matrix_to_rows(s.gains()),
            b: matrix_to_rows(s.input_weights()),
            c: matrix_to_rows(s.output_weights()),
        }
    }
}

/// `{"X": [[...]]}`; outputs written by the CLI use the key `"Y"`, which is
/// accepted on input as well.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceFile {
    #[serde(rename = "X", alias = "Y")]
    pub rows: Vec<Vec<f64>>,
}

impl TryFrom<SequenceFile> for SequenceData {
    type Error = SsdError;
    fn try_from(f: SequenceFile) -> Result<Self> {
        SequenceData::new(rows_to_matrix("sequence", &f.rows)?)
    }
}

impl From<SequenceData> for SequenceFile {
    fn from(s: SequenceData) -> Self {
        Self { rows: s.to_rows() }
    }
}

/// Reads headerless numeric CSV rows.
pub fn read_csv_rows(reader: impl Read) -> Result<Vec<Vec<f64>>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let record = record.map_err(|e| SsdError::Parse(format!("csv row {}: {e}", i + 1)))?;
        let row = record
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .map_err(|e| SsdError::Parse(format!("csv row {}: {field:?}: {e}", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_csv_rows(writer: impl Write, rows: &[Vec<f64>]) -> Result<()> {
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for row in rows {
        csv.write_record(row.iter().map(|v| format!("{v:?}")))
            .map_err(|e| SsdError::Parse(e.to_string()))?;
    }
    csv.flush().map_err(|e| SsdError::Parse(e.to_string()))
}

pub fn matrix_from_csv(reader: impl Read) -> Result<LowerTriangularMatrix> {
    LowerTriangularMatrix::from_rows(&read_csv_rows(reader)?)
}

pub fn matrix_to_csv(m: &LowerTriangularMatrix) -> Result<String> {
    let mut out = Vec::new();
    write_csv_rows(&mut out, &m.to_rows())?;
    Ok(String::from_utf8(out).expect("csv output is utf-8"))
}

pub fn sequence_from_csv(reader: impl Read) -> Result<SequenceData> {
    SequenceData::new(rows_to_matrix("sequence", &read_csv_rows(reader)?)?)
}

pub fn sequence_to_csv(s: &SequenceData) -> Result<String> {
    let mut out = Vec::new();
    write_csv_rows(&mut out, &s.to_rows())?;
    Ok(String::from_utf8(out).expect("csv output is utf-8"))
}

pub fn matrix_to_json(m: &LowerTriangularMatrix) -> String {
    serde_json::to_string(&MatrixFile::from(m)).expect("plain data serializes")
}

pub fn matrix_from_json(text: &str) -> Result<LowerTriangularMatrix> {
    let file: MatrixFile = serde_json::from_str(text).map_err(|e| SsdError::Parse(e.to_string()))?;
    file.try_into()
}
