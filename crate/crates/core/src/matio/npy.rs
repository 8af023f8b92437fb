//! NPY version 1.0 matrices: 2-D, C order, little-endian `f4`/`f8` only.

use std::path::Path;

use nalgebra::DMatrix;

use super::{io_err, MatioError};

pub const MAGIC: [u8; 6] = *b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn parse(s: &str) -> Option<Dtype> {
        match s {
            "f32" | "float32" | "<f4" => Some(Dtype::F32),
            "f64" | "float64" | "<f8" => Some(Dtype::F64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// Row-major 2-D matrix as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix2D {
    rows: usize,
    cols: usize,
    data: MatrixData,
}

impl Matrix2D {
    pub fn new(rows: usize, cols: usize, data: MatrixData) -> Result<Self, MatioError> {
        let len = match &data {
            MatrixData::F32(v) => v.len(),
            MatrixData::F64(v) => v.len(),
        };
        if rows.checked_mul(cols) != Some(len) {
            return Err(MatioError::ShapeMismatch { rows, cols, len });
        }
        Ok(Matrix2D { rows, cols, data })
    }

    pub fn from_f64(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MatioError> {
        Self::new(rows, cols, MatrixData::F64(data))
    }

    pub fn from_f32(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, MatioError> {
        Self::new(rows, cols, MatrixData::F32(data))
    }

    /// Store a dense matrix with the given element type.
    pub fn from_dmatrix(m: &DMatrix<f64>, dtype: Dtype) -> Self {
        let (rows, cols) = m.shape();
        let row_major = m.transpose();
        let data = match dtype {
            Dtype::F64 => MatrixData::F64(row_major.as_slice().to_vec()),
            Dtype::F32 => MatrixData::F32(row_major.as_slice().iter().map(|v| *v as f32).collect()),
        };
        Matrix2D { rows, cols, data }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        match &self.data {
            MatrixData::F64(v) => DMatrix::from_row_slice(self.rows, self.cols, v),
            MatrixData::F32(v) => DMatrix::from_row_iterator(
                self.rows,
                self.cols,
                v.iter().map(|x| f64::from(*x)),
            ),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            MatrixData::F32(_) => Dtype::F32,
            MatrixData::F64(_) => Dtype::F64,
        }
    }

    pub fn data(&self) -> &MatrixData {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let i = row * self.cols + col;
        match &self.data {
            MatrixData::F32(v) => f64::from(v[i]),
            MatrixData::F64(v) => v[i],
        }
    }

    fn first_nonfinite(&self) -> Option<usize> {
        match &self.data {
            MatrixData::F32(v) => v.iter().position(|x| !x.is_finite()),
            MatrixData::F64(v) => v.iter().position(|x| !x.is_finite()),
        }
    }
}

fn header_dict(dtype: Dtype, rows: usize, cols: usize) -> String {
    format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({}, {}), }}",
        dtype.descr(),
        rows,
        cols
    )
}

/// Serialize to NPY bytes. The header is space-padded so the payload starts
/// on a 64-byte boundary.
pub fn encode_matrix(m: &Matrix2D) -> Vec<u8> {
    let dict = header_dict(m.dtype(), m.rows, m.cols);
    let unpadded = PREAMBLE_LEN + dict.len() + 1;
    let total = unpadded.div_ceil(ALIGN) * ALIGN;
    let header_len = total - PREAMBLE_LEN;
    let mut out = Vec::with_capacity(total + m.rows * m.cols * m.dtype().size());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.resize(total - 1, b' ');
    out.push(b'\n');
    match &m.data {
        MatrixData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        MatrixData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

#[derive(Debug)]
enum Value {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

struct DictParser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> DictParser<'a> {
    fn err(&self, what: &str) -> MatioError {
        MatioError::MalformedHeader(format!("{what} at byte {}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.s.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), MatioError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn string(&mut self) -> Result<String, MatioError> {
        self.skip_ws();
        let quote = match self.s.get(self.pos) {
            Some(q @ (b'\'' | b'"')) => *q,
            _ => return Err(self.err("expected string")),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos >= self.s.len() {
            return Err(self.err("unterminated string"));
        }
        let out = std::str::from_utf8(&self.s[start..self.pos])
            .map_err(|_| self.err("non-UTF-8 string"))?
            .to_string();
        self.pos += 1;
        Ok(out)
    }

    fn word(&mut self) -> &'a [u8] {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        &self.s[start..self.pos]
    }

    fn value(&mut self) -> Result<Value, MatioError> {
        self.skip_ws();
        match self.s.get(self.pos) {
            Some(b'\'' | b'"') => Ok(Value::Str(self.string()?)),
            Some(b'(') => {
                self.pos += 1;
                let mut dims = Vec::new();
                loop {
                    if self.eat(b')') {
                        break;
                    }
                    let w = self.word();
                    let text = std::str::from_utf8(w).map_err(|_| self.err("bad dimension"))?;
                    let dim: usize = text.parse().map_err(|_| self.err("bad dimension"))?;
                    dims.push(dim);
                    if !self.eat(b',') {
                        self.expect(b')')?;
                        break;
                    }
                }
                Ok(Value::Tuple(dims))
            }
            _ => match self.word() {
                b"True" => Ok(Value::Bool(true)),
                b"False" => Ok(Value::Bool(false)),
                _ => Err(self.err("unexpected value")),
            },
        }
    }

    fn parse(mut self) -> Result<Vec<(String, Value)>, MatioError> {
        self.expect(b'{')?;
        let mut items = Vec::new();
        loop {
            if self.eat(b'}') {
                break;
            }
            let key = self.string()?;
            self.expect(b':')?;
            let value = self.value()?;
            items.push((key, value));
            if !self.eat(b',') {
                self.expect(b'}')?;
                break;
            }
        }
        self.skip_ws();
        if self.pos != self.s.len() {
            return Err(self.err("trailing characters after header dict"));
        }
        Ok(items)
    }
}

struct Header {
    dtype: Dtype,
    rows: usize,
    cols: usize,
    payload_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, MatioError> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(MatioError::BadMagic);
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(MatioError::Truncated {
            expected: PREAMBLE_LEN,
            found: bytes.len(),
        });
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(MatioError::UnsupportedVersion(major, minor));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let payload_offset = PREAMBLE_LEN + header_len;
    if bytes.len() < payload_offset {
        return Err(MatioError::Truncated {
            expected: payload_offset,
            found: bytes.len(),
        });
    }
    let raw = &bytes[PREAMBLE_LEN..payload_offset];
    if raw.last() != Some(&b'\n') {
        return Err(MatioError::MalformedHeader(
            "header does not end in a newline".into(),
        ));
    }
    if !raw.is_ascii() {
        return Err(MatioError::MalformedHeader("header is not ASCII".into()));
    }
    let items = DictParser { s: raw, pos: 0 }.parse()?;

    let (mut descr, mut fortran, mut shape) = (None, None, None);
    for (key, value) in items {
        let seen = match key.as_str() {
            "descr" => descr.is_some(),
            "fortran_order" => fortran.is_some(),
            "shape" => shape.is_some(),
            _ => false,
        };
        if seen {
            return Err(MatioError::MalformedHeader(format!("duplicate key {key:?}")));
        }
        match (key.as_str(), value) {
            ("descr", Value::Str(s)) => descr = Some(s),
            ("fortran_order", Value::Bool(b)) => fortran = Some(b),
            ("shape", Value::Tuple(t)) => shape = Some(t),
            (k, v) => {
                return Err(MatioError::MalformedHeader(format!(
                    "unexpected entry {k:?}: {v:?}"
                )))
            }
        }
    }
    let descr = descr.ok_or_else(|| MatioError::MalformedHeader("missing 'descr'".into()))?;
    let fortran =
        fortran.ok_or_else(|| MatioError::MalformedHeader("missing 'fortran_order'".into()))?;
    let shape = shape.ok_or_else(|| MatioError::MalformedHeader("missing 'shape'".into()))?;

    let dtype = match descr.as_str() {
        "<f4" => Dtype::F32,
        "<f8" => Dtype::F64,
        ">f4" | ">f8" => return Err(MatioError::BigEndian(descr)),
        _ => return Err(MatioError::UnsupportedDtype(descr)),
    };
    if fortran {
        return Err(MatioError::FortranOrder);
    }
    let [rows, cols] = shape[..] else {
        return Err(MatioError::UnsupportedShape(shape));
    };
    Ok(Header {
        dtype,
        rows,
        cols,
        payload_offset,
    })
}

/// Parse NPY bytes. Non-finite values are rejected unless `allow_nonfinite`.
pub fn decode_matrix(bytes: &[u8], allow_nonfinite: bool) -> Result<Matrix2D, MatioError> {
    let h = parse_header(bytes)?;
    let payload = &bytes[h.payload_offset..];
    let expected = h
        .rows
        .checked_mul(h.cols)
        .and_then(|n| n.checked_mul(h.dtype.size()))
        .ok_or_else(|| MatioError::MalformedHeader("shape overflows".into()))?;
    if payload.len() < expected {
        return Err(MatioError::Truncated {
            expected: h.payload_offset + expected,
            found: bytes.len(),
        });
    }
    if payload.len() > expected {
        return Err(MatioError::TrailingData {
            expected: h.payload_offset + expected,
            found: bytes.len(),
        });
    }
    let data = match h.dtype {
        Dtype::F32 => MatrixData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        Dtype::F64 => MatrixData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
                .collect(),
        ),
    };
    let m = Matrix2D::new(h.rows, h.cols, data)?;
    if !allow_nonfinite {
        if let Some(i) = m.first_nonfinite() {
            return Err(MatioError::NonFinite {
                row: i / h.cols.max(1),
                col: i % h.cols.max(1),
            });
        }
    }
    Ok(m)
}

pub fn read_matrix(path: &Path) -> Result<Matrix2D, MatioError> {
    read_matrix_with(path, false)
}

pub fn read_matrix_with(path: &Path, allow_nonfinite: bool) -> Result<Matrix2D, MatioError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode_matrix(&bytes, allow_nonfinite)
}

pub fn write_matrix(path: &Path, m: &Matrix2D) -> Result<(), MatioError> {
    super::write_atomic(path, &encode_matrix(m))
}
