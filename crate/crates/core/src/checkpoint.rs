//! Self-describing binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"RVDQCKPT"
//! u32    format version
//! u64    step, u64 seed, f64 lr, f64 best interval loss, u64 bad intervals,
//! u64    nfe, u64 n, then n × f64 pending interval losses
//! u32    tensor count, then per tensor:
//!        u32 name length, name bytes (UTF-8), u8 precision bits,
//!        u32 rank, rank × u64 dims, element count × f64
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::lab::{Model, TrainState};
use crate::tensor::{Precision, Tensor};

pub const MAGIC: &[u8; 8] = b"RVDQCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub step: u64,
    pub seed: u64,
    pub lr: f64,
    pub best_interval_loss: f64,
    pub bad_intervals: u64,
    pub nfe: u64,
    pub pending_losses: Vec<f64>,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState) -> Self {
        Self {
            tensors: state.model.named_params(),
            step: state.step as u64,
            seed: state.seed,
            lr: state.lr,
            best_interval_loss: state.best_interval_loss,
            bad_intervals: state.bad_intervals as u64,
            nfe: state.nfe as u64,
            pending_losses: state.recent_losses.clone(),
        }
    }

    pub fn to_state(&self) -> Result<TrainState> {
        Ok(TrainState {
            model: Model::from_named_params(&self.tensors)?,
            step: self.step as usize,
            lr: self.lr,
            recent_losses: self.pending_losses.clone(),
            best_interval_loss: self.best_interval_loss,
            bad_intervals: self.bad_intervals as usize,
            nfe: self.nfe as usize,
            seed: self.seed,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.step, self.seed] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.lr.to_le_bytes());
        out.extend_from_slice(&self.best_interval_loss.to_le_bytes());
        for v in [self.bad_intervals, self.nfe, self.pending_losses.len() as u64] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.pending_losses {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.precision().bits() as u8);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let step = r.u64()?;
        let seed = r.u64()?;
        let lr = r.f64()?;
        let best_interval_loss = r.f64()?;
        let bad_intervals = r.u64()?;
        let nfe = r.u64()?;
        let pending = r.u64()? as usize;
        let pending_losses = (0..pending).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let precision = match r.take(1)?[0] {
                32 => Precision::Single,
                64 => Precision::Double,
                other => return Err(Error::Checkpoint(format!("unknown precision tag {other}"))),
            };
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push((name, Tensor::new(shape, data, precision)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            tensors,
            step,
            seed,
            lr,
            best_interval_loss,
            bad_intervals,
            nfe,
            pending_losses,
        })
    }

    /// Atomic write: temporary sibling file, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
