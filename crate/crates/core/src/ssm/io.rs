//! Binary model format, all little-endian:
//!
//! ```text
//! magic   8 bytes  "DLDSSM\0\0"
//! version u32
//! M, D, K u64 each
//! u       M*D f64
//! H       M*D*K f64, column-major
//! lambda  K f64
//! crc32   u32 over every preceding byte
//! ```

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::ShapeModel;
use crate::error::{Error, Result};
use crate::fmt_num;

pub const MODEL_MAGIC: &[u8; 8] = b"DLDSSM\0\0";
pub const MODEL_VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 4 + 3 * 8;

pub fn write_model<W: Write>(model: &ShapeModel, mut out: W) -> Result<()> {
    let (m, d, k) = (model.landmarks(), model.dim(), model.modes());
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * (m * d * (k + 1) + k) + 4);
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for v in [m, d, k] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    let floats = model.mean().iter().chain(model.variations().iter()).chain(model.eigenvalues().iter());
    for v in floats {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_model<R: Read>(mut input: R) -> Result<ShapeModel> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    if buf.len() < HEADER_LEN + 4 {
        return Err(Error::ModelFormat(format!("truncated header ({} bytes)", buf.len())));
    }
    if &buf[..8] != MODEL_MAGIC {
        return Err(Error::ModelFormat("bad magic".into()));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!("version {version} not supported (expected {MODEL_VERSION})")));
    }
    let dims: Vec<usize> =
        (0..3).map(|i| u64::from_le_bytes(buf[12 + 8 * i..20 + 8 * i].try_into().unwrap()) as usize).collect();
    let (m, d, k) = (dims[0], dims[1], dims[2]);
    let floats = m
        .checked_mul(d)
        .and_then(|md| md.checked_mul(k + 1))
        .and_then(|x| x.checked_add(k))
        .ok_or_else(|| Error::ModelFormat("header sizes overflow".into()))?;
    let expected = floats
        .checked_mul(8)
        .and_then(|x| x.checked_add(HEADER_LEN + 4))
        .ok_or_else(|| Error::ModelFormat("header sizes overflow".into()))?;
    if buf.len() != expected {
        return Err(Error::ModelFormat(format!(
            "truncated or oversized payload: {} bytes, expected {expected}",
            buf.len()
        )));
    }
    let body_end = buf.len() - 4;
    let stored = u32::from_le_bytes(buf[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&buf[..body_end]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut values = buf[HEADER_LEN..body_end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let md = m * d;
    let mean = DVector::from_iterator(md, values.by_ref().take(md));
    let variations = DMatrix::from_iterator(md, k, values.by_ref().take(md * k));
    let eigenvalues = DVector::from_iterator(k, values.take(k));
    ShapeModel::new(mean, variations, eigenvalues, d)
}

pub fn save_model(model: &ShapeModel, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_model(model, std::io::BufWriter::new(file))
}

pub fn load_model(path: &Path) -> Result<ShapeModel> {
    read_model(std::fs::File::open(path)?)
}

/// Plain-text dump for inspection: a header line, then the mean (one
/// landmark per line), the eigenvalues, and each column of `H` as `M`
/// lines of `D` numbers.
pub fn export_text(model: &ShapeModel) -> String {
    let d = model.dim();
    let mut s = format!("# shape-model M={} D={} K={}\n# mean\n", model.landmarks(), d, model.modes());
    let row = |vals: &[f64]| vals.iter().map(|&v| fmt_num(v)).collect::<Vec<_>>().join(" ");
    for chunk in model.mean().as_slice().chunks(d) {
        s.push_str(&row(chunk));
        s.push('\n');
    }
    s.push_str("# eigenvalues\n");
    s.push_str(&row(model.eigenvalues().as_slice()));
    s.push('\n');
    for (k, col) in model.variations().column_iter().enumerate() {
        s.push_str(&format!("# variation {k}\n"));
        for chunk in col.as_slice().chunks(d) {
            s.push_str(&row(chunk));
            s.push('\n');
        }
    }
    s
}
