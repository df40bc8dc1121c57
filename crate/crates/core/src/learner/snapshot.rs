//! Weight snapshots for offline inspection.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "ASFLSNP1"
//! round      u64
//! n_clients  u32
//! n_layers   u32      M
//! cut        u32
//! widths     u32 x (M + 1)
//! then, for each client and each layer in order, the weights
//! (fan_out x fan_in, row-major) followed by the bias, as f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::SplitModel;
use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"ASFLSNP1";

/// A decoded snapshot: per-client flat parameter vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub round: u64,
    pub cut: usize,
    pub widths: Vec<usize>,
    pub params: Vec<Vec<f32>>,
}

pub fn write_snapshot(path: impl AsRef<Path>, model: &SplitModel, round: u64) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&round.to_le_bytes());
    buf.extend_from_slice(&(model.n_clients() as u32).to_le_bytes());
    buf.extend_from_slice(&(model.n_layers() as u32).to_le_bytes());
    buf.extend_from_slice(&(model.cut() as u32).to_le_bytes());
    for &w in model.widths() {
        buf.extend_from_slice(&(w as u32).to_le_bytes());
    }
    for n in 0..model.n_clients() {
        for layer in &model.client_model(n).layers {
            for &v in layer.params() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<Snapshot> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = || Error::ConfigParse(format!("{} is not a weight snapshot", path.display()));
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(bad)?;
        pos += n;
        Ok(s)
    };
    if take(8)? != SNAPSHOT_MAGIC {
        return Err(bad());
    }
    let round = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let mut u32_at = || -> Result<usize> { Ok(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize) };
    let n_clients = u32_at()?;
    let m = u32_at()?;
    let cut = u32_at()?;
    let widths: Vec<usize> = (0..=m).map(|_| u32_at()).collect::<Result<_>>()?;
    let per_client: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let mut params = Vec::with_capacity(n_clients);
    for _ in 0..n_clients {
        let raw = take(4 * per_client)?;
        params.push(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    Ok(Snapshot {
        round,
        cut,
        widths,
        params,
    })
}
