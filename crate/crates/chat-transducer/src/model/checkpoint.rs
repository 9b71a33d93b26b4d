//! Bit-exact checkpoint serialization.
//!
//! Layout, all integers little-endian:
//!   magic "CHATCKPT" | u32 version = 1 | u32 entry count
//!   per entry: u16 name length | name bytes (utf-8) |
//!              u8 ndim | ndim x u32 dims | raw little-endian f64 values
//!
//! `load(save(p))` reproduces `p` bitwise (names, order, shapes, values).

use std::fs;
use std::path::Path;

use super::ModelParams;
use crate::numerics::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CHATCKPT";
const VERSION: u32 = 1;

pub fn save_checkpoint_bytes(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(tensor.shape().len() as u8);
        for &dim in tensor.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &value in tensor.data() {
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
    out
}

pub fn load_checkpoint_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::CheckpointBadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::CheckpointBadVersion(version));
    }
    let count = r.u32("entry count")?;
    let mut params = ModelParams::new();
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::CheckpointTruncated("name (invalid utf-8)"))?
            .to_string();
        let ndim = r.take(1, "ndim")?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8, "values")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        params.insert(&name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::CheckpointTrailingBytes(bytes.len() - r.pos));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, save_checkpoint_bytes(params))?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    load_checkpoint_bytes(&fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CheckpointTruncated(what));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}
