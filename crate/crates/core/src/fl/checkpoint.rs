//! Flat binary model checkpoints.
//!
//! Layout, all little-endian: magic `CFLW`, format version (u32), dimension,
//! round and cluster (u64 each), then `dimension` f64 weights.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ModelParams;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CFLW";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub round: u64,
    pub cluster: u64,
}

pub fn write_checkpoint(path: &Path, model: &ModelParams, round: u64, cluster: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(model.len() as u64).to_le_bytes())?;
    w.write_all(&round.to_le_bytes())?;
    w.write_all(&cluster.to_le_bytes())?;
    for v in model.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Parse("checkpoint is truncated".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Parse("not a model checkpoint (bad magic)".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v).map_err(truncated)?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let dim = read_u64(&mut r)? as usize;
    let round = read_u64(&mut r)?;
    let cluster = read_u64(&mut r)?;
    let mut weights = Vec::with_capacity(dim.min(1 << 24));
    for _ in 0..dim {
        weights.push(f64::from_bits(read_u64(&mut r)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Parse("trailing bytes after checkpoint weights".into()));
    }
    Ok(Checkpoint {
        model: ModelParams::new(weights)?,
        round,
        cluster,
    })
}
