//! Binary parameter checkpoints.
//!
//! Little-endian layout: `"TENG"`, version `u32 = 1`, dims `u32`, layer-width
//! count `u32` followed by one `u32` per width, param count `u64`, then the
//! parameters as binary64.

use std::path::Path;

use teng_core::{NetworkArch, ParamVector};

use crate::error::{CliError, Result};

const MAGIC: &[u8; 4] = b"TENG";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub dims: u32,
    pub layer_widths: Vec<u32>,
    pub theta: ParamVector,
}

impl CheckpointFile {
    pub fn new(arch: &NetworkArch, theta: ParamVector) -> Self {
        Self {
            dims: arch.input_dim as u32,
            layer_widths: arch.layer_widths().iter().map(|&w| w as u32).collect(),
            theta,
        }
    }

    /// Whether the stored shape is that of `arch`.
    pub fn matches(&self, arch: &NetworkArch) -> bool {
        let widths: Vec<u32> = arch.layer_widths().iter().map(|&w| w as u32).collect();
        self.dims as usize == arch.input_dim && self.layer_widths == widths && self.theta.len() == arch.param_count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.layer_widths.len() + 8 * self.theta.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.dims.to_le_bytes());
        out.extend_from_slice(&(self.layer_widths.len() as u32).to_le_bytes());
        for w in &self.layer_widths {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&(self.theta.len() as u64).to_le_bytes());
        for v in self.theta.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err("not a parameter checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let dims = r.u32()?;
        let n_widths = r.u32()? as usize;
        let layer_widths = (0..n_widths).map(|_| r.u32()).collect::<std::result::Result<_, _>>()?;
        let n = r.u64()? as usize;
        let theta = r.f64s(n)?;
        r.finish()?;
        Ok(Self {
            dims,
            layer_widths,
            theta: ParamVector::new(theta),
        })
    }
}

pub fn save_checkpoint(path: &Path, arch: &NetworkArch, theta: &ParamVector) -> Result<()> {
    let bytes = CheckpointFile::new(arch, theta.clone()).to_bytes();
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Reads a checkpoint and checks it was written for `arch`.
pub fn load_checkpoint(path: &Path, arch: &NetworkArch) -> Result<ParamVector> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let ck = CheckpointFile::from_bytes(&bytes).map_err(|m| CliError::format(path, m))?;
    if !ck.matches(arch) {
        return Err(CliError::format(
            path,
            format!(
                "architecture mismatch: file has dims {} and widths {:?}, expected dims {} and widths {:?}",
                ck.dims,
                ck.layer_widths,
                arch.input_dim,
                arch.layer_widths()
            ),
        ));
    }
    Ok(ck.theta)
}

/// Cursor over a little-endian byte buffer.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated file: needed {n} bytes at offset {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("length overflow")?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn finish(&self) -> std::result::Result<(), String> {
        if self.pos != self.bytes.len() {
            return Err(format!("{} trailing bytes", self.bytes.len() - self.pos));
        }
        Ok(())
    }
}
