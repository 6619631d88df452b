// SPDX-License-Identifier: Apache-2.0

//! Weight checkpoints.
//!
//! Little-endian binary container:
//!
//! ```text
//! magic    b"BNNBETCK"
//! version  u32 (= 1)
//! arch     u32 length + JSON architecture
//! z        i32
//! blocks   u32
//! per block:
//!   rank u32, dims u64 * rank
//!   words u64 count, packed binary weights u64 * count
//!   latent weights f64 * numel
//!   channels u32, gamma, beta, running_mean, running_var f64 * channels
//!   eps f64, momentum f64
//! ```
//!
//! A JSON sidecar (`<name>.json`) carries run metadata: preset, seed and
//! training configuration.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Architecture, BatchNorm, Network};
use crate::tensor::{BinaryTensor, RealTensor, Shape};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"BNNBETCK";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_bytes(net: &Network) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let arch = serde_json::to_vec(net.architecture())?;
    out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
    out.extend_from_slice(&arch);
    out.extend_from_slice(&net.z().to_le_bytes());
    out.extend_from_slice(&(net.blocks().len() as u32).to_le_bytes());
    for b in net.blocks() {
        let dims = b.binary().shape().dims();
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(b.binary().words().len() as u64).to_le_bytes());
        for w in b.binary().words() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for v in b.latent().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let bn = &b.bn;
        out.extend_from_slice(&(bn.channels() as u32).to_le_bytes());
        for arr in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
            for v in arr.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&bn.eps.to_le_bytes());
        out.extend_from_slice(&bn.momentum.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", "truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Network> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let arch_len = r.u32()? as usize;
    let arch: Architecture = serde_json::from_slice(r.take(arch_len)?)?;
    let z = r.i32()?;
    let mut net = Network::new(arch, z, 0)?;
    let n_blocks = r.u32()? as usize;
    if n_blocks != net.blocks().len() {
        return Err(Error::format("checkpoint", "block count does not match architecture"));
    }
    for l in 0..n_blocks {
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let shape = Shape::new(dims)?;
        let n_words = r.u64()? as usize;
        if n_words != shape.numel().div_ceil(64) {
            return Err(Error::format("checkpoint", "word count does not match shape"));
        }
        let words = (0..n_words).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let binary = BinaryTensor::from_words(shape.clone(), words)?;
        let latent = RealTensor::new(shape.clone(), r.f64s(shape.numel())?)?;
        let ch = r.u32()? as usize;
        let bn = BatchNorm {
            gamma: r.f64s(ch)?,
            beta: r.f64s(ch)?,
            running_mean: r.f64s(ch)?,
            running_var: r.f64s(ch)?,
            eps: r.f64()?,
            momentum: r.f64()?,
        };
        if ch != net.blocks()[l].units() {
            return Err(Error::format("checkpoint", "batch norm width does not match layer"));
        }
        let block = &mut net.blocks_mut()[l];
        block.set_latent(latent)?;
        block.set_binary(binary)?;
        block.bn = bn;
    }
    if r.pos != buf.len() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    Ok(net)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the checkpoint and, when given, its JSON sidecar.
pub fn save(path: &Path, net: &Network, meta: Option<&serde_json::Value>) -> Result<()> {
    fs::write(path, to_bytes(net)?).map_err(|e| Error::io(path, e))?;
    if let Some(meta) = meta {
        let side = sidecar_path(path);
        let text = serde_json::to_string_pretty(meta)?;
        fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))?;
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<Network> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

pub fn load_sidecar(path: &Path) -> Result<Option<serde_json::Value>> {
    let side = sidecar_path(path);
    match fs::read(&side) {
        Ok(b) => Ok(Some(serde_json::from_slice(&b)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(side, e)),
    }
}
