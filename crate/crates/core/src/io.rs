//! Portable binary tensor blocks.
//!
//! Layout, all integers little-endian u64:
//!
//! ```text
//! magic   8 bytes  "LCBLK001"
//! count   u64
//! count times:
//!   name_len u64, name (utf-8, name_len bytes)
//!   rows u64, cols u64
//!   rows*cols f64 little-endian
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LCBLK001";

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Block {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "block '{name}' is {rows}x{cols} but holds {} values",
                data.len()
            )));
        }
        Ok(Self { name, rows, cols, data })
    }
}

pub fn write_blocks_to(w: &mut impl Write, blocks: &[Block]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(blocks.len() as u64).to_le_bytes())?;
    for b in blocks {
        w.write_all(&(b.name.len() as u64).to_le_bytes())?;
        w.write_all(b.name.as_bytes())?;
        w.write_all(&(b.rows as u64).to_le_bytes())?;
        w.write_all(&(b.cols as u64).to_le_bytes())?;
        for v in &b.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_blocks_from(r: &mut impl Read) -> Result<Vec<Block>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Io("not a tensor block file (bad magic)".into()));
    }
    let count = read_u64(r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = read_u64(r)? as usize;
        if len > 1 << 16 {
            return Err(Error::Io(format!("implausible name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Io(e.to_string()))?;
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|n| *n < 1 << 34)
            .ok_or_else(|| Error::Io(format!("implausible block shape {rows}x{cols}")))?;
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push(Block { name, rows, cols, data });
    }
    Ok(out)
}

pub fn write_blocks(path: &Path, blocks: &[Block]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_blocks_to(&mut w, blocks)?;
    w.flush()?;
    Ok(())
}

pub fn read_blocks(path: &Path) -> Result<Vec<Block>> {
    read_blocks_from(&mut BufReader::new(File::open(path)?))
}
