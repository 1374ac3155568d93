//! Binary checkpoint format.
//!
//! ```text
//! "KWSM" | u32 version
//! u32 in_height | u32 in_width | u32 c1 | u32 c2 | u32 c3 | u32 d_emb | u32 tap
//! per tensor: u32 rank | u32 dims[rank] | f64 values (row-major)
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{Architecture, EmbeddingTap, ModelParams, Tensor};
use crate::error::{KwsError, Result};

const MAGIC: &[u8; 4] = b"KWSM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let a = &params.arch;
    let mut out = Vec::with_capacity(64 + params.num_params() * 8);
    out.extend_from_slice(MAGIC);
    let header = [
        CHECKPOINT_VERSION,
        a.in_height as u32,
        a.in_width as u32,
        a.channels[0] as u32,
        a.channels[1] as u32,
        a.channels[2] as u32,
        a.d_emb as u32,
        a.tap.code(),
    ];
    for v in header {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for t in params.tensors() {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| KwsError::format("checkpoint truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| KwsError::format("not a checkpoint"))? != MAGIC {
        return Err(KwsError::format("bad checkpoint magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(KwsError::format(format!(
            "checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let arch = Architecture {
        in_height: dims[0],
        in_width: dims[1],
        channels: [dims[2], dims[3], dims[4]],
        d_emb: dims[5],
        tap: EmbeddingTap::from_code(r.u32()?)?,
    };
    arch.validate().map_err(|e| KwsError::format(format!("bad descriptor: {e}")))?;
    let mut tensors = Vec::new();
    for expected in arch.param_shapes() {
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 4 {
            return Err(KwsError::format(format!("tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape != expected {
            return Err(KwsError::shape(format!(
                "checkpoint tensor {shape:?} where descriptor implies {expected:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let data = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::from_vec(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(KwsError::format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    ModelParams::from_tensors(arch, tensors)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params)).map_err(|e| KwsError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| KwsError::io(path, e))?;
    decode_checkpoint(&bytes)
}
