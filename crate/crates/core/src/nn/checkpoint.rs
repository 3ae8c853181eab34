//! Network checkpoints: `"IMPN" | u16 version | str tag | u64 step |
//! str spec-json | parameters (row-major f64) | crc32`.

use std::fs;
use std::path::Path;

use super::{Network, NetworkSpec};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IMPN";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tag: String,
    pub step: u64,
    pub network: Network,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        w.str(&self.tag);
        w.u64(self.step);
        w.str(&serde_json::to_string(&self.network.spec).expect("spec serializes"));
        for p in &self.network.params {
            w.mat(p);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let tag = r.str()?;
        let step = r.u64()?;
        let spec: NetworkSpec =
            serde_json::from_str(&r.str()?).map_err(|e| Error::Truncated(format!("unreadable network spec: {e}")))?;
        spec.validate()?;
        let params = spec.param_shapes().into_iter().map(|(rows, cols)| r.mat(rows, cols)).collect::<Result<_>>()?;
        r.done()?;
        Ok(Checkpoint { tag, step, network: Network::from_params(spec, params)? })
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ck.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
