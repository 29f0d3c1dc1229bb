//! Matrix containers: a raw little-endian binary format and CSV.
//!
//! Binary layout: 8-byte magic `GEDGMAT1`, `p` and `n` as little-endian
//! `u32`, then `p·n` little-endian `f64` values in row-major order.
//!
//! CSV layout: one row per coordinate, one column per sample, with an
//! optional leading `# p=<p>,n=<n>` comment line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GEDGMAT1";

pub fn write_matrix_bin<W: Write>(mut out: W, m: &DMatrix<f64>) -> Result<()> {
    let (p, n) = m.shape();
    let p32 = u32::try_from(p)
        .map_err(|_| Error::InvalidShape(format!("{p} rows do not fit the header")))?;
    let n32 = u32::try_from(n)
        .map_err(|_| Error::InvalidShape(format!("{n} columns do not fit the header")))?;
    out.write_all(MAGIC)?;
    out.write_all(&p32.to_le_bytes())?;
    out.write_all(&n32.to_le_bytes())?;
    for i in 0..p {
        for j in 0..n {
            out.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_bin<R: Read>(mut input: R) -> Result<DMatrix<f64>> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header).map_err(|_| Error::Parse {
        row: 0,
        msg: "truncated header".into(),
    })?;
    if &header[..8] != MAGIC {
        return Err(Error::Parse {
            row: 0,
            msg: "bad magic".into(),
        });
    }
    let p = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut m = DMatrix::zeros(p, n);
    let mut buf = [0u8; 8];
    for i in 0..p {
        for j in 0..n {
            input.read_exact(&mut buf).map_err(|_| Error::Parse {
                row: i + 1,
                msg: format!("truncated data at column {}", j + 1),
            })?;
            m[(i, j)] = f64::from_le_bytes(buf);
        }
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Parse {
            row: p,
            msg: "trailing bytes after matrix data".into(),
        });
    }
    Ok(m)
}

pub fn write_matrix_csv<W: Write>(mut out: W, m: &DMatrix<f64>) -> Result<()> {
    let (p, n) = m.shape();
    writeln!(out, "# p={p},n={n}")?;
    for i in 0..p {
        let row: Vec<String> = (0..n).map(|j| format!("{:e}", m[(i, j)])).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let body = line.trim_start_matches('#').trim();
    let mut p = None;
    let mut n = None;
    for part in body.split(',') {
        let (key, value) = part.split_once('=')?;
        match key.trim() {
            "p" => p = value.trim().parse().ok(),
            "n" => n = value.trim().parse().ok(),
            _ => {}
        }
    }
    Some((p?, n?))
}

/// Rows are numbered from 1, counting only data rows.
pub fn read_matrix_csv<R: BufRead>(input: R) -> Result<DMatrix<f64>> {
    let mut declared = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in input.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            if rows.is_empty() && declared.is_none() {
                declared = parse_header(trimmed);
            }
            continue;
        }
        let row_no = rows.len() + 1;
        let values = trimmed
            .split(',')
            .enumerate()
            .map(|(j, field)| {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    row: row_no,
                    msg: format!("column {} is not a number: {:?}", j + 1, field.trim()),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Parse {
                        row: row_no,
                        msg: format!("column {} is not finite", j + 1),
                    })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if values.len() != first.len() {
                return Err(Error::Parse {
                    row: row_no,
                    msg: format!("expected {} columns, found {}", first.len(), values.len()),
                });
            }
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            row: 0,
            msg: "no data rows".into(),
        });
    }
    let (p, n) = (rows.len(), rows[0].len());
    if let Some((dp, dn)) = declared {
        if (dp, dn) != (p, n) {
            return Err(Error::Parse {
                row: 0,
                msg: format!("header declares {dp}x{dn} but data is {p}x{n}"),
            });
        }
    }
    Ok(DMatrix::from_fn(p, n, |i, j| rows[i][j]))
}

/// Reads either format, choosing by the leading magic bytes.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = BufReader::new(File::open(path)?);
    let is_bin = reader.fill_buf()?.starts_with(MAGIC);
    if is_bin {
        read_matrix_bin(reader)
    } else {
        read_matrix_csv(reader)
    }
}

/// Writes the binary format for `.bin` paths and CSV otherwise.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let out = BufWriter::new(File::create(path)?);
    if path.extension().is_some_and(|e| e == "bin") {
        write_matrix_bin(out, m)
    } else {
        write_matrix_csv(out, m)
    }
}
