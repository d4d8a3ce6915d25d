//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SCARCEGAN1" | u32 version
//! u64 len | config text (UTF-8)
//! u32 count | count × (u32 name len | name | u8 dtype | u32 ndim | ndim × u64 dim | raw data)
//! u64 len | state JSON (UTF-8)
//! ```
//!
//! dtype 0 is f64, the only one written.

use std::path::Path;

use scarcegan_autodiff::Array;
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::params::ParamSet;

pub const CHECKPOINT_MAGIC: &[u8; 10] = b"SCARCEGAN1";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Canonical config text of the run.
    pub config: String,
    /// Named tensors; names carry a group prefix such as `g/` or `ema/`.
    pub tensors: Vec<(String, Array)>,
    /// Serialized training state.
    pub state: String,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(bad(format!("truncated while reading {what} at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, wide: bool, what: &str) -> Result<usize> {
        let n = if wide { self.u64(what)? } else { self.u32(what)? as u64 };
        usize::try_from(n).map_err(|_| bad(format!("{what} length {n} too large")))
    }

    fn text(&mut self, wide: bool, what: &str) -> Result<String> {
        let n = self.len(wide, what)?;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| bad(format!("{what} is not UTF-8")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, a) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            out.extend_from_slice(&(a.ndim() as u32).to_le_bytes());
            for &d in a.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in a.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.state.len() as u64).to_le_bytes());
        out.extend_from_slice(self.state.as_bytes());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let config = r.text(true, "config")?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.text(false, "tensor name")?;
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F64 {
                return Err(bad(format!("`{name}`: unknown dtype {dtype}")));
            }
            let ndim = r.u32("ndim")? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(r.len(true, "dimension")?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| bad(format!("`{name}`: shape overflows")))?;
            let bytes = r.take(n.checked_mul(8).ok_or_else(|| bad("tensor too large"))?, &name)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Array::new(shape, data)?));
        }
        let state = r.text(true, "state")?;
        if r.pos != buf.len() {
            return Err(bad(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self { config, tensors, state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// SHA-256 of the serialized bytes, hex.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn push_group(&mut self, prefix: &str, set: &ParamSet) {
        for (n, a) in set.iter() {
            self.tensors.push((format!("{prefix}/{n}"), a.clone()));
        }
    }

    /// Tensors under `prefix/`, with the prefix stripped, in stored order.
    pub fn group(&self, prefix: &str) -> ParamSet {
        let head = format!("{prefix}/");
        let mut set = ParamSet::new();
        for (n, a) in &self.tensors {
            if let Some(rest) = n.strip_prefix(&head) {
                set.insert(rest, a.clone());
            }
        }
        set
    }
}
