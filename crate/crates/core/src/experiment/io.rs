//! Matrix files: the `ATNM` binary layout and headered CSV.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! "ATNM"  u16 version (= 1)  u32 rows  u32 cols  rows·cols × f64 (row-major)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const MAGIC: &[u8; 4] = b"ATNM";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 4 + 4;

pub fn encode(m: &DenseMatrix) -> Result<Vec<u8>> {
    let (rows, cols) = m.shape();
    let rows32 = u32::try_from(rows).map_err(|_| Error::Shape(format!("{rows} rows exceed u32")))?;
    let cols32 = u32::try_from(cols).map_err(|_| Error::Shape(format!("{cols} cols exceed u32")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&rows32.to_le_bytes());
    out.extend_from_slice(&cols32.to_le_bytes());
    for x in m.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<DenseMatrix> {
    let fail = |offset: usize, message: String| Error::Format {
        offset: offset as u64,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), format!("truncated header ({} of {HEADER_LEN} bytes)", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[0..4]))));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols) = (word(6), word(10));
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| fail(6, format!("{rows}×{cols} overflows")))?;
    let expected = count
        .checked_mul(8)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| fail(6, format!("{rows}×{cols} overflows")))?;
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected),
            format!("payload length {} does not match {rows}×{cols} header", bytes.len() - HEADER_LEN),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for (k, chunk) in bytes[HEADER_LEN..].chunks_exact(8).enumerate() {
        let x = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        if !x.is_finite() {
            return Err(fail(HEADER_LEN + 8 * k, format!("non-finite entry {x}")));
        }
        data.push(x);
    }
    DenseMatrix::new(rows, cols, data)
}

pub fn write_matrix_file(path: &Path, m: &DenseMatrix) -> Result<()> {
    fs::File::create(path)?.write_all(&encode(m)?)?;
    Ok(())
}

pub fn read_matrix_file(path: &Path) -> Result<DenseMatrix> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// CSV with a `c0,c1,…` header; values use Rust's shortest round-trip form.
pub fn write_csv<W: Write>(out: W, m: &DenseMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..m.cols()).map(|c| format!("c{c}")))?;
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|x| format!("{x:?}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<DenseMatrix> {
    let mut r = csv::Reader::from_reader(input);
    let cols = r.headers()?.len();
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        let offset = record.position().map_or(0, |p| p.byte());
        let row = record
            .iter()
            .map(|field| {
                let x: f64 = field.trim().parse().map_err(|_| Error::Format {
                    offset,
                    message: format!("cannot parse {field:?} as a number"),
                })?;
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::Format {
                        offset,
                        message: format!("non-finite entry {field:?}"),
                    })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Ok(DenseMatrix::zeros(0, cols));
    }
    DenseMatrix::from_rows(&rows)
}

/// Reads either format, chosen by the leading magic bytes.
pub fn load_matrix(path: &Path) -> Result<DenseMatrix> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        decode(&bytes)
    } else {
        read_csv(bytes.as_slice())
    }
}
