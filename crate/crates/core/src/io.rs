//! Feature and logit matrices on disk.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "KPCF"
//! 4       2     version (1)
//! 6       1     dtype (0 = f32)
//! 7       1     role (0 = features, 1 = logits)
//! 8       8     rows
//! 16      8     cols
//! 24      4*r*c payload, f32 row-major
//! ```
//!
//! CSV files hold one sample per line, comma-separated, without a header.

use std::fs;
use std::ops::Deref;
use std::path::Path;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MATRIX_MAGIC: &[u8; 4] = b"KPCF";
pub const MATRIX_VERSION: u16 = 1;
pub const MATRIX_HEADER_LEN: usize = 24;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Features,
    Logits,
}

impl Role {
    fn code(self) -> u8 {
        match self {
            Role::Features => 0,
            Role::Logits => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Role::Features),
            1 => Ok(Role::Logits),
            other => Err(Error::Format(format!("unknown role code {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Binary,
    Csv,
}

impl MatrixFormat {
    /// `.csv` files are CSV, everything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::Binary,
        }
    }
}

/// A non-empty, finite sample matrix (rows are samples) tagged with its role.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    matrix: Matrix,
    role: Role,
}

impl FeatureMatrix {
    pub fn new(matrix: Matrix, role: Role) -> Result<Self> {
        if matrix.rows() == 0 || matrix.cols() == 0 {
            return Err(Error::Length(format!(
                "matrix must be non-empty, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        for (i, row) in matrix.row_iter().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
        Ok(Self { matrix, role })
    }

    pub fn features(matrix: Matrix) -> Result<Self> {
        Self::new(matrix, Role::Features)
    }

    pub fn logits(matrix: Matrix) -> Result<Self> {
        Self::new(matrix, Role::Logits)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.matrix.select_rows(indices), self.role)
    }
}

impl Deref for FeatureMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.matrix
    }
}

pub fn encode_matrix(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(MATRIX_MAGIC);
    w.u16(MATRIX_VERSION);
    w.u8(DTYPE_F32);
    w.u8(m.role().code());
    w.usize(m.rows());
    w.usize(m.cols());
    for (i, row) in m.row_iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let narrowed = v as f32;
            if !narrowed.is_finite() {
                return Err(Error::Data(format!(
                    "value {v:e} at row {i}, column {j} does not fit in f32"
                )));
            }
            w.bytes(&narrowed.to_le_bytes());
        }
    }
    Ok(w.into_bytes())
}

pub fn decode_matrix(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut r = ByteReader::new(bytes);
    if r.take(4).map_err(|_| Error::Format("file too short for magic".into()))? != MATRIX_MAGIC {
        return Err(Error::Format("bad magic, expected \"KPCF\"".into()));
    }
    let version = r.u16()?;
    if version != MATRIX_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dtype = r.u8()?;
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype {dtype}")));
    }
    let role = Role::from_code(r.u8()?)?;
    let rows = r.usize()?;
    let cols = r.usize()?;
    if rows == 0 || cols == 0 {
        return Err(Error::Length(format!("empty matrix {rows}x{cols} in header")));
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Length(format!("{rows}x{cols} payload overflows")))?;
    if r.remaining() < expected {
        return Err(Error::Length(format!(
            "payload truncated: {rows}x{cols} needs {expected} bytes, found {}",
            r.remaining()
        )));
    }
    let payload = r.take(expected)?;
    r.finish()?;
    let mut data = Vec::with_capacity(rows * cols);
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(Error::NonFinite {
                row: k / cols,
                col: k % cols,
            });
        }
        data.push(v as f64);
    }
    FeatureMatrix::new(Matrix::new(rows, cols, data)?, role)
}

fn parse_csv(text: &str, role: Role) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                // stored values are single precision, as in the binary format
                let v = field.parse::<f32>().map_err(|_| {
                    Error::Format(format!("row {}, column {j}: cannot parse {field:?}", rows.len()))
                })? as f64;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite { row: rows.len(), col: j })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!(
                    "row {} has {} fields, expected {}",
                    rows.len(),
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Length("CSV file holds no rows".into()));
    }
    FeatureMatrix::new(Matrix::from_rows(&rows)?, role)
}

fn format_csv(m: &FeatureMatrix) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 12);
    for row in m.row_iter() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&(*v as f32).to_string());
        }
        out.push('\n');
    }
    out
}

/// Reads a matrix. Binary files carry their role; CSV files are tagged
/// with `csv_role`.
pub fn read_matrix_as(path: &Path, format: MatrixFormat, csv_role: Role) -> Result<FeatureMatrix> {
    let attach = |e: Error| e.context(path.display().to_string());
    match format {
        MatrixFormat::Binary => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_matrix(&bytes).map_err(attach)
        }
        MatrixFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_csv(&text, csv_role).map_err(attach)
        }
    }
}

pub fn read_matrix(path: &Path, format: MatrixFormat) -> Result<FeatureMatrix> {
    read_matrix_as(path, format, Role::Features)
}

pub fn write_matrix(m: &FeatureMatrix, path: &Path, format: MatrixFormat) -> Result<()> {
    let bytes = match format {
        MatrixFormat::Binary => encode_matrix(m)?,
        MatrixFormat::Csv => format_csv(m).into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
