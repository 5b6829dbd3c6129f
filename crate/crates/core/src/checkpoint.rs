//! Parameter snapshots on disk.
//!
//! ```text
//! "OMD1" | version: u32 | epoch: u64 | n_segments: u32
//! per segment: name_len: u32 | name utf-8 | ndims: u32 | dims: u64 * ndims
//! n_values: u64 | values: f64 * n_values | config digest: 32 bytes
//! ```
//!
//! Little-endian throughout. The digest is the SHA-256 of the training
//! configuration that produced the snapshot.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::{Layout, ParamVector, Segment};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OMD1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub type ConfigDigest = [u8; 32];

pub fn digest_bytes(bytes: &[u8]) -> ConfigDigest {
    Sha256::digest(bytes).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub epoch: u64,
    pub config_digest: ConfigDigest,
}

pub fn encode_checkpoint(theta: &ParamVector, meta: &CheckpointMeta) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + theta.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&meta.epoch.to_le_bytes());
    let segs = theta.layout().segments();
    out.extend_from_slice(&(segs.len() as u32).to_le_bytes());
    for s in segs {
        out.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
        out.extend_from_slice(s.name.as_bytes());
        out.extend_from_slice(&(s.shape.len() as u32).to_le_bytes());
        for &d in &s.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    out.extend_from_slice(&(theta.len() as u64).to_le_bytes());
    for v in theta.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&meta.config_digest);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated checkpoint ({what})")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParamVector, CheckpointMeta)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let epoch = c.u64("epoch")?;
    let n_segs = c.u32("segment count")? as usize;
    let mut segs = Vec::with_capacity(n_segs.min(1024));
    for _ in 0..n_segs {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Format("segment name is not utf-8".into()))?
            .to_string();
        let nd = c.u32("rank")? as usize;
        let shape = (0..nd)
            .map(|_| c.u64("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        segs.push(Segment::new(name, shape));
    }
    let layout = Layout::new(segs).map_err(|e| Error::Format(e.to_string()))?;
    let n = c.u64("value count")? as usize;
    if n != layout.size() {
        return Err(Error::Format(format!(
            "{n} values stored for layout of size {}",
            layout.size()
        )));
    }
    let raw = c.take(
        n.checked_mul(8)
            .ok_or_else(|| Error::Format("value count overflow".into()))?,
        "values",
    )?;
    let values = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let digest: ConfigDigest = c.take(32, "digest")?.try_into().unwrap();
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let theta = ParamVector::new(values, layout)?;
    Ok((
        theta,
        CheckpointMeta {
            epoch,
            config_digest: digest,
        },
    ))
}

pub fn save_checkpoint(path: &Path, theta: &ParamVector, meta: &CheckpointMeta) -> Result<()> {
    fs::write(path, encode_checkpoint(theta, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamVector, CheckpointMeta)> {
    decode_checkpoint(&fs::read(path)?)
}

/// Loads and checks the layout, and the digest when one is given.
pub fn load_checkpoint_checked(
    path: &Path,
    layout: &Layout,
    digest: Option<&ConfigDigest>,
) -> Result<(ParamVector, CheckpointMeta)> {
    let (theta, meta) = load_checkpoint(path)?;
    if theta.layout() != layout {
        return Err(Error::Layout(format!(
            "checkpoint has {}, expected {layout}",
            theta.layout()
        )));
    }
    if let Some(d) = digest {
        if &meta.config_digest != d {
            return Err(Error::Format("config digest mismatch".into()));
        }
    }
    Ok((theta, meta))
}
