//! File formats: dense matrices (CSV or the `CFMX` binary layout), label
//! lists, and JSON documents.
//!
//! The binary layout is the 4-byte magic `CFMX`, then `u32` rows and `u32`
//! columns, then `rows * cols` row-major little-endian `f64` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"CFMX";

pub fn encode_matrix(m: &DMatrix<f64>) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.nrows()).map_err(|_| Error::Argument("matrix too tall".into()))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| Error::Argument("matrix too wide".into()))?;
    let mut out = Vec::with_capacity(12 + 8 * m.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> std::result::Result<DMatrix<f64>, String> {
    if bytes.len() < 12 || &bytes[..4] != MATRIX_MAGIC {
        return Err("missing CFMX header".into());
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or("matrix size overflows")?;
    let body = &bytes[12..];
    if body.len() != expected {
        return Err(format!(
            "header declares {rows}x{cols} ({expected} bytes) but body has {} bytes",
            body.len()
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn parse_csv_matrix(text: &str) -> std::result::Result<DMatrix<f64>, String> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| format!("line {}: cannot parse {:?} as a number", lineno + 1, field.trim()))?;
            values.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(format!("line {}: expected {c} columns, found {count}", lineno + 1));
            }
            _ => {}
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols.unwrap_or(0), &values))
}

pub fn format_csv_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Reads a matrix, choosing the binary decoder when the file starts with `CFMX`.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parsed = if bytes.starts_with(MATRIX_MAGIC) {
        decode_matrix(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::load(path, "not UTF-8 CSV and no CFMX header"))?;
        parse_csv_matrix(&text)
    };
    parsed.map_err(|msg| Error::load(path, msg))
}

/// Writes binary for `.cfmx`/`.bin` paths and CSV otherwise.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let binary = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("cfmx") | Some("bin")
    );
    let bytes = if binary {
        encode_matrix(m)?
    } else {
        format_csv_matrix(m).into_bytes()
    };
    write_bytes(path, &bytes)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_labels(text: &str) -> std::result::Result<Vec<u32>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<u32>()
                .map_err(|_| format!("line {}: {:?} is not a class id", i + 1, l.trim()))
        })
        .collect()
}

pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    parse_labels(&read_text(path)?).map_err(|m| Error::load(path, m))
}

pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    let mut s = String::with_capacity(labels.len() * 3);
    for l in labels {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::load(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_parses_rows() {
        let m = parse_csv_matrix("1,2\n3.5, -4\n\n5e-1,6\n").unwrap();
        assert_eq!(m.shape(), (3, 2));
        assert_eq!(m[(1, 0)], 3.5);
        assert_eq!(m[(2, 0)], 0.5);
    }

    #[test]
    fn ragged_csv_rejected() {
        let err = parse_csv_matrix("1,2\n3\n").unwrap_err();
        assert!(err.contains("line 2"));
    }

    #[test]
    fn truncated_binary_rejected() {
        let mut b = encode_matrix(&DMatrix::from_element(2, 2, 1.0)).unwrap();
        b.pop();
        assert!(decode_matrix(&b).is_err());
    }

    #[test]
    fn labels_reject_garbage() {
        assert_eq!(parse_labels("1\n2\n\n3\n").unwrap(), vec![1, 2, 3]);
        assert!(parse_labels("1\nx\n").is_err());
    }

    proptest! {
        #[test]
        fn binary_roundtrip_is_bit_identical(
            rows in 0usize..6,
            cols in 0usize..6,
            seed in any::<u64>(),
        ) {
            let mut state = seed;
            let m = DMatrix::from_fn(rows, cols, |_, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f64::from_bits(state >> 2)
            });
            let back = decode_matrix(&encode_matrix(&m).unwrap()).unwrap();
            prop_assert_eq!(back.shape(), m.shape());
            for (a, b) in back.iter().zip(m.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn csv_roundtrip_is_exact(values in proptest::collection::vec(-1e6f64..1e6, 1..24)) {
            let m = DMatrix::from_row_slice(1, values.len(), &values);
            let back = parse_csv_matrix(&format_csv_matrix(&m)).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
