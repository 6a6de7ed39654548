//! Binary layout shared by dense matrices and parameter checkpoints.
//!
//! ```text
//! offset 0        u64 little-endian: header length H in bytes
//! offset 8        H bytes of UTF-8 JSON header
//! offset 8 + H    f64 little-endian payload, row-major
//! ```
//!
//! Dense matrices use the header `{"rows": r, "cols": c, "names": [...],
//! "row_names": [...]}` where `names` labels the columns and both name lists
//! may be empty. The payload must hold exactly `r * c` values.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

/// Upper bound on the JSON header, to reject absurd length prefixes early.
pub const MAX_HEADER_BYTES: u64 = 1 << 30;

pub fn encode_framed(header: &[u8], payload: impl IntoIterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + header.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Split a framed buffer into its header bytes and decoded payload.
pub fn decode_framed(bytes: &[u8]) -> Result<(&[u8], Vec<f64>)> {
    let ctx = "binary frame";
    if bytes.len() < 8 {
        return Err(CoreError::parse(ctx, "shorter than the length prefix"));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
    if len > MAX_HEADER_BYTES || len > (bytes.len() - 8) as u64 {
        return Err(CoreError::parse(ctx, format!("header length {len} out of range")));
    }
    let split = 8 + len as usize;
    let header = &bytes[8..split];
    let body = &bytes[split..];
    if body.len() % 8 != 0 {
        return Err(CoreError::parse(ctx, "payload is not a whole number of f64 values"));
    }
    let payload = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, payload))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub names: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub row_names: Vec<String>,
}

/// A dense matrix with optional column and row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub values: Array2<f64>,
    pub names: Vec<String>,
    pub row_names: Vec<String>,
}

impl LabeledMatrix {
    pub fn encode(&self) -> Vec<u8> {
        let (rows, cols) = self.values.dim();
        let header = MatrixHeader {
            rows,
            cols,
            names: self.names.clone(),
            row_names: self.row_names.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        encode_framed(&json, self.values.iter().copied())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = decode_framed(bytes)?;
        let h: MatrixHeader = serde_json::from_slice(header)
            .map_err(|e| CoreError::parse("matrix header", e.to_string()))?;
        let expected = h
            .rows
            .checked_mul(h.cols)
            .ok_or_else(|| CoreError::parse("matrix header", "rows*cols overflows"))?;
        if payload.len() != expected {
            return Err(CoreError::parse(
                "matrix payload",
                format!("{} values for a {}x{} matrix", payload.len(), h.rows, h.cols),
            ));
        }
        if !h.names.is_empty() && h.names.len() != h.cols {
            return Err(CoreError::parse("matrix header", "names do not match cols"));
        }
        if !h.row_names.is_empty() && h.row_names.len() != h.rows {
            return Err(CoreError::parse("matrix header", "row_names do not match rows"));
        }
        let values = Array2::from_shape_vec((h.rows, h.cols), payload)
            .map_err(|e| CoreError::parse("matrix payload", e.to_string()))?;
        Ok(Self {
            values,
            names: h.names,
            row_names: h.row_names,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| CoreError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Dense CSV with a header of column names (genes as columns).
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let names: Vec<String> = if self.names.is_empty() {
            (0..self.values.ncols()).map(|c| format!("c{c}")).collect()
        } else {
            self.names.clone()
        };
        s.push_str(&names.join(","));
        s.push('\n');
        for row in self.values.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}
