//! Matrix Market coordinate files holding non-negative integer counts.
//!
//! Files follow the 10x convention: rows are genes, columns are barcodes,
//! indices are 1-based. Both `integer` and `real` fields are accepted on
//! read, but every value must be a non-negative integer.

use std::fmt::Write as _;

use crate::{CoreError, Result};

/// Parsed coordinate matrix: `(rows, cols, entries)` with 0-based indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MtxData {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, u64)>,
}

fn err(line: usize, detail: impl Into<String>) -> CoreError {
    CoreError::parse(format!("matrix market line {line}"), detail)
}

/// Parse a value that must be a non-negative integer, allowing a real
/// representation such as `3.0` or `3e0`.
fn parse_count(tok: &str, line: usize) -> Result<u64> {
    if let Ok(v) = tok.parse::<u64>() {
        return Ok(v);
    }
    if tok.starts_with('-') && tok.parse::<i64>().is_ok() {
        return Err(err(line, format!("negative entry {tok}")));
    }
    let x: f64 = tok
        .parse()
        .map_err(|_| err(line, format!("bad value {tok:?}")))?;
    if !x.is_finite() {
        return Err(err(line, format!("non-finite entry {tok}")));
    }
    if x < 0.0 {
        return Err(err(line, format!("negative entry {tok}")));
    }
    if x.fract() != 0.0 {
        return Err(err(line, format!("non-integer entry {tok}")));
    }
    if x > u64::MAX as f64 {
        return Err(err(line, format!("entry {tok} overflows")));
    }
    Ok(x as u64)
}

pub fn parse_mtx(text: &str) -> Result<MtxData> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file"))?;
    let fields: Vec<String> = header
        .split_whitespace()
        .map(|s| s.to_ascii_lowercase())
        .collect();
    if fields.len() < 5 || fields[0] != "%%matrixmarket" {
        return Err(err(1, "missing %%MatrixMarket banner"));
    }
    if fields[1] != "matrix" || fields[2] != "coordinate" {
        return Err(err(1, "only 'matrix coordinate' files are supported"));
    }
    if fields[3] != "integer" && fields[3] != "real" {
        return Err(err(1, format!("unsupported field type {}", fields[3])));
    }
    if fields[4] != "general" {
        return Err(err(1, format!("unsupported symmetry {}", fields[4])));
    }

    let mut size: Option<(usize, usize, usize)> = None;
    let mut entries = Vec::new();
    for (i, raw) in lines {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match size {
            None => {
                if toks.len() != 3 {
                    return Err(err(lineno, "size line needs rows cols nnz"));
                }
                let p = |t: &str| {
                    t.parse::<usize>()
                        .map_err(|_| err(lineno, format!("bad size field {t:?}")))
                };
                let (r, c, n) = (p(toks[0])?, p(toks[1])?, p(toks[2])?);
                if r.checked_mul(c).is_none() {
                    return Err(err(lineno, "dimensions overflow"));
                }
                // Cap the preallocation; the declared count is untrusted.
                entries.reserve(n.min(1 << 20));
                size = Some((r, c, n));
            }
            Some((r, c, _)) => {
                if toks.len() != 3 {
                    return Err(err(lineno, "entry needs row col value"));
                }
                let idx = |t: &str, max: usize| -> Result<usize> {
                    let v: usize = t
                        .parse()
                        .map_err(|_| err(lineno, format!("bad index {t:?}")))?;
                    if v == 0 || v > max {
                        return Err(err(lineno, format!("index {v} outside 1..={max}")));
                    }
                    Ok(v - 1)
                };
                let row = idx(toks[0], r)?;
                let col = idx(toks[1], c)?;
                let v = parse_count(toks[2], lineno)?;
                entries.push((row, col, v));
            }
        }
    }
    let (rows, cols, nnz) = size.ok_or_else(|| err(0, "missing size line"))?;
    if entries.len() != nnz {
        return Err(err(
            0,
            format!("declared {nnz} entries, found {}", entries.len()),
        ));
    }
    Ok(MtxData {
        rows,
        cols,
        entries,
    })
}

/// Serialize as `integer general`, entries in the given order.
pub fn write_mtx(data: &MtxData) -> String {
    let mut out = String::new();
    out.push_str("%%MatrixMarket matrix coordinate integer general\n");
    let _ = writeln!(out, "{} {} {}", data.rows, data.cols, data.entries.len());
    for &(r, c, v) in &data.entries {
        let _ = writeln!(out, "{} {} {}", r + 1, c + 1, v);
    }
    out
}
