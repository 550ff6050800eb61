//! Persistence: the `GTM1` binary matrix container, shot-dataset CSV with a
//! JSON header, and matrix CSV export.
//!
//! `GTM1` layout: magic bytes `GTM1`, `u32` rows, `u32` cols, `u8` dtype tag
//! (0 = f64, 1 = interleaved complex f64 pairs), then the row-major payload,
//! all little-endian.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::simulator::{ShotDataset, ShotRecord};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"GTM1";
const DTYPE_F64: u8 = 0;
const DTYPE_C64: u8 = 1;

/// Version tag stamped into every sidecar and header this crate writes.
pub const FORMAT_VERSION: u32 = 1;

fn write_header<W: Write>(w: &mut W, rows: usize, cols: usize, dtype: u8) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(rows as u32).to_le_bytes())?;
    w.write_all(&(cols as u32).to_le_bytes())?;
    w.write_all(&[dtype])?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<(usize, usize, u8)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Io("not a GTM1 matrix file".into()));
    }
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    let rows = u32::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)?;
    let cols = u32::from_le_bytes(buf) as usize;
    let mut dtype = [0u8; 1];
    r.read_exact(&mut dtype)?;
    Ok((rows, cols, dtype[0]))
}

/// Write a real matrix in the binary container.
pub fn write_matrix_f64(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut file, m.nrows(), m.ncols(), DTYPE_F64)?;
    for row in m.rows() {
        for &v in row {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Write a complex matrix in the binary container.
pub fn write_matrix_c64(path: &Path, m: &Array2<Complex64>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut file, m.nrows(), m.ncols(), DTYPE_C64)?;
    for row in m.rows() {
        for v in row {
            file.write_all(&v.re.to_le_bytes())?;
            file.write_all(&v.im.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a real matrix from the binary container.
pub fn read_matrix_f64(path: &Path) -> Result<Array2<f64>> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let (rows, cols, dtype) = read_header(&mut file)?;
    if dtype != DTYPE_F64 {
        return Err(Error::Io(format!("expected f64 payload, found tag {dtype}")));
    }
    let mut data = Vec::with_capacity(rows * cols);
    let mut buf = [0u8; 8];
    for _ in 0..rows * cols {
        file.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::Io(format!("shape error: {e}")))
}

/// Read a complex matrix from the binary container.
pub fn read_matrix_c64(path: &Path) -> Result<Array2<Complex64>> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let (rows, cols, dtype) = read_header(&mut file)?;
    if dtype != DTYPE_C64 {
        return Err(Error::Io(format!("expected c64 payload, found tag {dtype}")));
    }
    let mut data = Vec::with_capacity(rows * cols);
    let mut buf = [0u8; 8];
    for _ in 0..rows * cols {
        file.read_exact(&mut buf)?;
        let re = f64::from_le_bytes(buf);
        file.read_exact(&mut buf)?;
        let im = f64::from_le_bytes(buf);
        data.push(Complex64::new(re, im));
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::Io(format!("shape error: {e}")))
}

/// Export a complex matrix as CSV with `re`/`im` column pairs.
pub fn export_matrix_csv(path: &Path, m: &Array2<Complex64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let mut header = Vec::new();
    for j in 0..m.ncols() {
        header.push(format!("re_{j}"));
        header.push(format!("im_{j}"));
    }
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for row in m.rows() {
        let mut rec = Vec::with_capacity(2 * m.ncols());
        for v in row {
            rec.push(format!("{:.17e}", v.re));
            rec.push(format!("{:.17e}", v.im));
        }
        w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// JSON header accompanying a dataset CSV.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub seed: u64,
    pub ensemble_hash: String,
    pub n_total: usize,
    pub records: usize,
}

/// Write a dataset as `r,s,n_0..n_{Ntot-1}` CSV plus a JSON header file.
pub fn write_dataset(csv_path: &Path, header_path: &Path, ds: &ShotDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path).map_err(|e| Error::Io(e.to_string()))?;
    let mut header = vec!["r".to_string(), "s".to_string()];
    header.extend((0..ds.n_total).map(|j| format!("n_{j}")));
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for (r, rec) in ds.records.iter().enumerate() {
        let mut row = vec![r.to_string(), rec.s.to_string()];
        row.extend(rec.occupations.iter().map(|b| b.to_string()));
        w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    let meta = DatasetHeader {
        format_version: FORMAT_VERSION,
        seed: ds.seed,
        ensemble_hash: ds.ensemble_hash.clone(),
        n_total: ds.n_total,
        records: ds.records.len(),
    };
    std::fs::write(header_path, serde_json::to_string_pretty(&meta).unwrap())?;
    Ok(())
}

/// Read a dataset written by [`write_dataset`] (or external data with the
/// same schema).
pub fn read_dataset(csv_path: &Path, header_path: &Path) -> Result<ShotDataset> {
    let meta: DatasetHeader = serde_json::from_str(&std::fs::read_to_string(header_path)?)
        .map_err(|e| Error::Io(format!("bad dataset header: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Io(format!(
            "dataset format version {} is not supported (expected {FORMAT_VERSION})",
            meta.format_version
        )));
    }
    let mut rd = csv::Reader::from_path(csv_path).map_err(|e| Error::Io(e.to_string()))?;
    let mut records = Vec::new();
    for row in rd.records() {
        let row = row.map_err(|e| Error::Io(e.to_string()))?;
        if row.len() != meta.n_total + 2 {
            return Err(Error::Io(format!(
                "dataset row has {} fields, expected {}",
                row.len(),
                meta.n_total + 2
            )));
        }
        let s: u32 = row[1]
            .parse()
            .map_err(|e| Error::Io(format!("bad member label: {e}")))?;
        let occupations: std::result::Result<Vec<u8>, _> =
            (2..row.len()).map(|k| row[k].parse::<u8>()).collect();
        let occupations = occupations.map_err(|e| Error::Io(format!("bad occupation: {e}")))?;
        if occupations.iter().any(|&b| b > 1) {
            return Err(Error::Io("occupations must be 0 or 1".into()));
        }
        records.push(ShotRecord { s, occupations });
    }
    if records.len() != meta.records {
        return Err(Error::Io(format!(
            "header promises {} records, file has {}",
            meta.records,
            records.len()
        )));
    }
    Ok(ShotDataset {
        records,
        seed: meta.seed,
        ensemble_hash: meta.ensemble_hash,
        n_total: meta.n_total,
    })
}

/// Write a real vector as a single-column GTM1 matrix.
pub fn write_vector_f64(path: &Path, v: &Array1<f64>) -> Result<()> {
    let m = v.clone().into_shape_with_order((v.len(), 1)).unwrap();
    write_matrix_f64(path, &m)
}
