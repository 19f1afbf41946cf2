//! Checkpoint container.
//!
//! Layout (little-endian): magic `AEN1`, `u32` byte length + UTF-8 arch id,
//! `u32` class count, `u32` input frames, `u32` record count, then per
//! record: `u32` length + UTF-8 name, `u32` dimension count, `u32` per
//! dimension and the `f32` payload.

use std::io::{Read, Write};
use std::path::Path;

use super::{Network, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AEN1";

/// Architecture id, geometry and named parameters of a trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: String,
    pub n_classes: usize,
    pub input_frames: usize,
    pub params: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_network(arch: &str, n_classes: usize, input_frames: usize, net: &Network<f32>) -> Self {
        Self {
            arch: arch.to_string(),
            n_classes,
            input_frames,
            params: net.param_names().into_iter().zip(net.params().into_iter().cloned()).collect(),
        }
    }

    /// Copy the stored parameters into `net`, which must have the same
    /// names and shapes.
    pub fn load_into(&self, net: &mut Network<f32>) -> Result<()> {
        let names = net.param_names();
        if names.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameter tensors, network expects {}",
                self.params.len(),
                names.len()
            )));
        }
        for ((dst, name), (src_name, src)) in net.params_mut().into_iter().zip(&names).zip(&self.params) {
            if name != src_name || dst.shape() != src.shape() {
                return Err(Error::Format(format!(
                    "parameter {src_name} {:?} does not match {name} {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())
}

pub fn write_checkpoint<W: Write>(mut w: W, ck: &Checkpoint) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_str(&mut w, &ck.arch)?;
    put_u32(&mut w, ck.n_classes)?;
    put_u32(&mut w, ck.input_frames)?;
    put_u32(&mut w, ck.params.len())?;
    for (name, t) in &ck.params {
        put_str(&mut w, name)?;
        put_u32(&mut w, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut w, d)?;
        }
        let mut buf = Vec::with_capacity(4 * t.len());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn truncated() -> Error {
    Error::Parse("truncated checkpoint".into())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| truncated())?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_str<R: Read>(r: &mut R) -> Result<String> {
    let n = get_u32(r)?;
    if n > 1 << 16 {
        return Err(Error::Parse(format!("implausible string length {n}")));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(|_| truncated())?;
    String::from_utf8(b).map_err(|_| Error::Parse("non-UTF-8 string in checkpoint".into()))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| truncated())?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not an AEN1 checkpoint".into()));
    }
    let arch = get_str(&mut r)?;
    let n_classes = get_u32(&mut r)?;
    let input_frames = get_u32(&mut r)?;
    let count = get_u32(&mut r)?;
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name = get_str(&mut r)?;
        let nd = get_u32(&mut r)?;
        if nd > 8 {
            return Err(Error::Parse(format!("implausible dimension count {nd}")));
        }
        let dims = (0..nd).map(|_| get_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut bytes = vec![0u8; 4 * n];
        r.read_exact(&mut bytes).map_err(|_| truncated())?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        params.push((name, Tensor::from_vec(&dims, data)));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::Parse(e.to_string()))? != 0 {
        return Err(Error::Parse("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint { arch, n_classes, input_frames, params })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, ck).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}
