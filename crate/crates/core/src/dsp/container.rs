//! Flat binary tensor container.
//!
//! Layout (little-endian): magic `AEF1`, `u32` dimension count, one `u32` per
//! dimension, then `f32` values in row-major order (for feature maps:
//! map-major, band-major, frame-minor).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"AEF1";

pub fn write_tensor_to<W: Write>(mut out: W, dims: &[usize], data: &[f32]) -> std::io::Result<()> {
    assert_eq!(dims.iter().product::<usize>(), data.len(), "dims do not match data");
    out.write_all(TENSOR_MAGIC)?;
    out.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_tensor(path: &Path, dims: &[usize], data: &[f32]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_tensor_to(&mut out, dims, data).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Parse("truncated tensor container".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensor_from<R: Read>(mut r: R) -> Result<(Vec<usize>, Vec<f32>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Parse("truncated tensor container".into()))?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format("not an AEF1 tensor container".into()));
    }
    let ndims = read_u32(&mut r)? as usize;
    if ndims > 16 {
        return Err(Error::Parse(format!("implausible dimension count {ndims}")));
    }
    let dims = (0..ndims)
        .map(|_| read_u32(&mut r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = dims.iter().product();
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::Parse(e.to_string()))?;
    if bytes.len() != 4 * n {
        return Err(Error::Parse(format!(
            "payload has {} bytes, dims need {}",
            bytes.len(),
            4 * n
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((dims, data))
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensor_from(std::io::BufReader::new(file))
}
