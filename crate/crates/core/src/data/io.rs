//! Dataset file format.
//!
//! ```text
//! "IMPD" | u16 version | u32 l, d, k, H, n | u64 seed, fingerprint
//! | str policy | str context | u32 n_val, n_val × u32 | per trajectory:
//!   u64 tag, latents, observations, actions (row-major f64)
//! | u32 crc32 of everything before
//! ```
//! All integers and floats are little-endian; strings are `u32` length plus
//! UTF-8 bytes.

use std::fs;
use std::path::Path;

use super::{ContextTag, DatasetHandle, Provenance, Trajectory};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"IMPD";
pub const FORMAT_VERSION: u16 = 1;

pub fn to_bytes(ds: &DatasetHandle) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, FORMAT_VERSION);
    for v in [ds.latent_dim(), ds.obs_dim(), ds.action_dim(), ds.horizon(), ds.len()] {
        w.u32(v as u32);
    }
    w.u64(ds.provenance.seed);
    w.u64(ds.provenance.mdp_fingerprint);
    w.str(&ds.provenance.policy);
    w.str(&ds.provenance.context);
    w.u32(ds.val.len() as u32);
    for &i in &ds.val {
        w.u32(i as u32);
    }
    for t in &ds.trajectories {
        w.u64(t.context_tag.0);
        w.mat(&t.latents);
        w.mat(&t.observations);
        w.mat(&t.actions);
    }
    w.finish()
}

pub fn from_bytes(bytes: &[u8]) -> Result<DatasetHandle> {
    let mut r = Reader::open(bytes, MAGIC, FORMAT_VERSION)?;
    let l = r.u32()? as usize;
    let d = r.u32()? as usize;
    let k = r.u32()? as usize;
    let h = r.u32()? as usize;
    let n = r.u32()? as usize;
    let seed = r.u64()?;
    let mdp_fingerprint = r.u64()?;
    let policy = r.str()?;
    let context = r.str()?;
    let n_val = r.u32()? as usize;
    let mut val = Vec::with_capacity(n_val);
    for _ in 0..n_val {
        val.push(r.u32()? as usize);
    }
    let mut trajectories = Vec::with_capacity(n);
    for _ in 0..n {
        let tag = ContextTag(r.u64()?);
        let latents = r.mat(h + 1, l)?;
        let observations = r.mat(h + 1, d)?;
        let actions = r.mat(h, k)?;
        trajectories.push(Trajectory { observations, actions, latents, context_tag: tag });
    }
    r.done()?;
    let train = (0..n).filter(|i| !val.contains(i)).collect();
    DatasetHandle::with_split(trajectories, train, val, Provenance { mdp_fingerprint, policy, context, seed })
}

pub fn save(ds: &DatasetHandle, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(ds)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<DatasetHandle> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
