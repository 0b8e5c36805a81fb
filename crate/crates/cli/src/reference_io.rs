//! Binary reference solutions.
//!
//! Little-endian layout: `"TREF"`, version `u32 = 1`, dims `u32`, grid points
//! per dimension `u32`, kmax `u32`, dt_ref `f64`, time count `u64`, the times
//! as binary64, then one `grid_n^dims` binary64 field per time.

use std::path::Path;

use teng_core::ReferenceSolution;

use crate::checkpoint::Reader;
use crate::error::{CliError, Result};

const MAGIC: &[u8; 4] = b"TREF";
const VERSION: u32 = 1;

pub fn encode_reference(r: &ReferenceSolution) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(r.dims as u32).to_le_bytes());
    out.extend_from_slice(&(r.grid_n as u32).to_le_bytes());
    out.extend_from_slice(&(r.kmax as u32).to_le_bytes());
    out.extend_from_slice(&r.dt_ref.to_le_bytes());
    out.extend_from_slice(&(r.times.len() as u64).to_le_bytes());
    for t in &r.times {
        out.extend_from_slice(&t.to_le_bytes());
    }
    for f in &r.fields {
        for v in f {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_reference(bytes: &[u8]) -> std::result::Result<ReferenceSolution, String> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err("not a reference file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported reference version {version}"));
    }
    let dims = r.u32()? as usize;
    let grid_n = r.u32()? as usize;
    let kmax = r.u32()? as usize;
    let dt_ref = r.f64()?;
    let n_times = r.u64()? as usize;
    let times = r.f64s(n_times)?;
    let per_field = grid_n
        .checked_pow(dims as u32)
        .ok_or("grid size overflow")?;
    let fields = (0..n_times).map(|_| r.f64s(per_field)).collect::<std::result::Result<_, _>>()?;
    r.finish()?;
    Ok(ReferenceSolution {
        dims,
        kmax,
        grid_n,
        dt_ref,
        times,
        fields,
    })
}

pub fn save_reference(path: &Path, r: &ReferenceSolution) -> Result<()> {
    std::fs::write(path, encode_reference(r)).map_err(|e| CliError::io(path, e))
}

pub fn load_reference(path: &Path) -> Result<ReferenceSolution> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_reference(&bytes).map_err(|m| CliError::format(path, m))
}
