//! Pool and labeled-data ingestion.
//!
//! CSV files have no header, comma separators and one observation per row;
//! labeled files carry the response in the last column. The binary pool
//! format is a 16-byte header (`b"MSSL"`, `u32` m, `u32` p, 4 zero bytes)
//! followed by the `m x p` matrix in column-major little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::{LabeledSet, UnlabeledPool};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MSSL";
const HEADER_LEN: usize = 16;

fn read_rows<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    let mut width = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("row {}: {e}", i + 1)))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row: Vec<f64> = rec
            .iter()
            .enumerate()
            .map(|(j, f)| f.parse::<f64>().map_err(|_| Error::Parse(format!("row {}, column {}: {f:?} is not a number", i + 1, j + 1))))
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse(format!("row {} has {} fields, expected {w}", i + 1, row.len())));
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }
    Ok(rows)
}

fn to_matrix(rows: &[Vec<f64>], cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

/// Pool from CSV text.
pub fn pool_from_csv<R: Read>(reader: R) -> Result<UnlabeledPool> {
    let rows = read_rows(reader)?;
    UnlabeledPool::new(to_matrix(&rows, rows[0].len()))
}

/// Labeled set from CSV text; the last column is the response.
pub fn labeled_from_csv<R: Read>(reader: R) -> Result<LabeledSet> {
    let rows = read_rows(reader)?;
    let w = rows[0].len();
    if w < 2 {
        return Err(Error::Parse("labeled rows need at least one covariate and a response".into()));
    }
    let x = to_matrix(&rows, w - 1);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r[w - 1]));
    LabeledSet::new(x, y)
}

pub fn read_labeled_csv(path: &Path) -> Result<LabeledSet> {
    labeled_from_csv(BufReader::new(File::open(path)?))
}

pub fn read_pool_csv(path: &Path) -> Result<UnlabeledPool> {
    pool_from_csv(BufReader::new(File::open(path)?))
}

/// Write a matrix as headerless CSV.
pub fn write_matrix_csv<W: Write>(writer: W, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Write a labeled set as headerless CSV with the response last.
pub fn write_labeled_csv<W: Write>(writer: W, data: &LabeledSet) -> Result<()> {
    let mut full = data.x().clone().insert_column(data.p(), 0.0);
    full.set_column(data.p(), data.y());
    write_matrix_csv(writer, &full)
}

pub fn write_pool_binary<W: Write>(writer: W, pool: &UnlabeledPool) -> Result<()> {
    let (m, p) = (pool.m(), pool.p());
    let (m32, p32) = match (u32::try_from(m), u32::try_from(p)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err(Error::domain("pool dimensions exceed the binary header range")),
    };
    let mut w = BufWriter::new(writer);
    w.write_all(MAGIC)?;
    w.write_all(&m32.to_le_bytes())?;
    w.write_all(&p32.to_le_bytes())?;
    w.write_all(&[0u8; 4])?;
    for v in pool.z().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn pool_from_binary<R: Read>(mut reader: R) -> Result<UnlabeledPool> {
    let mut header = [0u8; HEADER_LEN];
    reader.read_exact(&mut header).map_err(|_| Error::Parse("binary pool shorter than its header".into()))?;
    if &header[..4] != MAGIC {
        return Err(Error::Parse("missing MSSL magic".into()));
    }
    let m = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let p = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != m * p * 8 {
        return Err(Error::Parse(format!("expected {} payload bytes for {m}x{p}, found {}", m * p * 8, bytes.len())));
    }
    let data: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    UnlabeledPool::new(DMatrix::from_vec(m, p, data))
}

/// Pool from a file, binary when it starts with the magic bytes and CSV otherwise.
pub fn read_pool(path: &Path) -> Result<UnlabeledPool> {
    let mut f = File::open(path)?;
    let mut head = [0u8; 4];
    let got = f.read(&mut head)?;
    drop(f);
    if got == 4 && &head == MAGIC {
        pool_from_binary(BufReader::new(File::open(path)?))
    } else {
        read_pool_csv(path)
    }
}
