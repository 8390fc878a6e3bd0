//! `fvecs` / `ivecs` containers.
//!
//! Both are little-endian sequences of records: an `i32` length `d`, then `d`
//! payload values (`f32` or `i32`). Every record in a file has the same `d`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::dataset::Dataset;
use crate::error::{malformed, Error, Result};

/// Reads the record header, `None` on a clean end of file.
fn read_header<R: Read>(r: &mut R) -> Result<Option<i32>> {
    let mut buf = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(malformed("truncated record header")),
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Some(i32::from_le_bytes(buf)))
}

fn read_payload<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => malformed("truncated record payload"),
        _ => Error::Io(e),
    })
}

fn record_width(header: i32, expected: Option<usize>) -> Result<usize> {
    if header <= 0 {
        return Err(malformed(format!("invalid record length {header}")));
    }
    let d = header as usize;
    match expected {
        Some(e) if e != d => Err(malformed(format!("inconsistent record length: expected {e}, got {d}"))),
        _ => Ok(d),
    }
}

/// Parses an `fvecs` stream. Doc ids are assigned `0..n` in file order.
pub fn read_fvecs<R: Read>(mut r: R) -> Result<Dataset> {
    let mut dim = None;
    let mut data = Vec::new();
    let mut buf = Vec::new();
    while let Some(header) = read_header(&mut r)? {
        let d = record_width(header, dim)?;
        dim = Some(d);
        buf.resize(d * 4, 0);
        read_payload(&mut r, &mut buf)?;
        data.extend(
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
    }
    let dim = dim.ok_or_else(|| malformed("empty fvecs input: dimension is unknown"))?;
    Dataset::from_flat(dim, data)
}

pub fn load_fvecs(path: impl AsRef<Path>) -> Result<Dataset> {
    read_fvecs(BufReader::new(File::open(path)?))
}

pub fn write_fvecs<W: Write>(w: W, dataset: &Dataset) -> Result<()> {
    write_f32_rows(w, dataset.as_flat().chunks_exact(dataset.dim()))
}

pub fn save_fvecs(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_fvecs(BufWriter::new(File::create(path)?), dataset)
}

/// Writes `f32` rows without the finiteness checks of [`Dataset`]; used for
/// result distance files, which pad short rows with `+inf`.
pub fn write_f32_rows<'a, W, I>(mut w: W, rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut width = None;
    for row in rows {
        check_row_width(&mut width, row.len())?;
        w.write_all(&(row.len() as i32).to_le_bytes())?;
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_f32_rows(rows: &[Vec<f32>], path: impl AsRef<Path>) -> Result<()> {
    write_f32_rows(BufWriter::new(File::create(path)?), rows.iter().map(Vec::as_slice))
}

/// Parses an `ivecs` stream into rows. An empty stream is zero rows.
pub fn read_ivecs<R: Read>(mut r: R) -> Result<Vec<Vec<i32>>> {
    let mut width = None;
    let mut rows = Vec::new();
    let mut buf = Vec::new();
    while let Some(header) = read_header(&mut r)? {
        let d = record_width(header, width)?;
        width = Some(d);
        buf.resize(d * 4, 0);
        read_payload(&mut r, &mut buf)?;
        rows.push(
            buf.chunks_exact(4)
                .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        );
    }
    Ok(rows)
}

pub fn load_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    read_ivecs(BufReader::new(File::open(path)?))
}

pub fn write_ivecs<W: Write>(mut w: W, rows: &[Vec<i32>]) -> Result<()> {
    let mut width = None;
    for row in rows {
        check_row_width(&mut width, row.len())?;
        w.write_all(&(row.len() as i32).to_le_bytes())?;
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_ivecs(rows: &[Vec<i32>], path: impl AsRef<Path>) -> Result<()> {
    write_ivecs(BufWriter::new(File::create(path)?), rows)
}

fn check_row_width(width: &mut Option<usize>, len: usize) -> Result<()> {
    if len == 0 || len > i32::MAX as usize {
        return Err(Error::Io(io::Error::new(
            ErrorKind::InvalidInput,
            format!("cannot write a record of length {len}"),
        )));
    }
    match *width {
        Some(w) if w != len => Err(Error::Io(io::Error::new(
            ErrorKind::InvalidInput,
            format!("rows must share one length: {w} vs {len}"),
        ))),
        _ => {
            *width = Some(len);
            Ok(())
        }
    }
}
