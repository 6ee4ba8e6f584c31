//! Serialization helpers shared by every emitted artifact.
//!
//! Matrices are written row-major with explicit dimensions. JSON floats are
//! written with 17 significant digits so artifacts round-trip bit-exactly.

use std::io::Write;
use std::path::Path;

use serde::ser::{SerializeStruct, Serializer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numkernel::Mat;

/// Row-major matrix record as it appears in JSON artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Mat> for MatrixRecord {
    fn from(m: &Mat) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        MatrixRecord { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl MatrixRecord {
    pub fn to_matrix(&self) -> Result<Mat> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::dim("matrix record", self.rows * self.cols, self.data.len()));
        }
        Ok(Mat::from_row_slice(self.rows, self.cols, &self.data))
    }
}

pub fn ser_mat<S: Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rec = MatrixRecord::from(m);
    let mut st = s.serialize_struct("Matrix", 3)?;
    st.serialize_field("rows", &rec.rows)?;
    st.serialize_field("cols", &rec.cols)?;
    st.serialize_field("data", &rec.data)?;
    st.end()
}

pub fn ser_mats<S: Serializer>(ms: &[Mat], s: S) -> std::result::Result<S::Ok, S::Error> {
    let recs: Vec<MatrixRecord> = ms.iter().map(MatrixRecord::from).collect();
    recs.serialize(s)
}

/// Non-finite values become the strings `"inf"`, `"-inf"` or `"nan"`.
pub fn ser_f64_lossless<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

struct SeventeenDigits;

impl serde_json::ser::Formatter for SeventeenDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{}", fmt_f64(value))
    }
}

/// 17 significant digits in scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SeventeenDigits);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Numerical(format!("json encoding: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("json output is utf-8"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_file(path: &Path, contents: &str) -> Result<String> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(sha256_hex(contents.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_floats_have_seventeen_digits() {
        let s = to_json_string(&vec![0.1f64, 1.0 / 3.0]).unwrap();
        assert_eq!(s.trim(), "[1.0000000000000001e-1,3.3333333333333331e-1]");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![0.1, 1.0 / 3.0]);
    }

    #[test]
    fn matrix_record_is_row_major() {
        let m = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let r = MatrixRecord::from(&m);
        assert_eq!(r.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(r.to_matrix().unwrap(), m);
    }
}
