//! Binary checkpoints.
//!
//! Layout (little-endian): magic, `u32` version, `u32` architecture tag,
//! `u64` window width, `u64` width divisor, `u64` tensor count, then per
//! tensor a `u32` name length, the UTF-8 name, a `u32` rank, `u64` dims and
//! the `f64` data.

use super::{build_model, Arch, Model, ModelSpec};
use crate::nn::Params;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BVADCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

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
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size overflow".into()))
    }
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.spec();
        let tensors = self.named_tensors();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&spec.arch.tag().to_le_bytes());
        out.extend_from_slice(&(spec.w as u64).to_le_bytes());
        out.extend_from_slice(&(spec.width_divisor as u64).to_le_bytes());
        out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
        for (name, t) in &tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
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

    /// Rebuild a model from [`Model::to_bytes`] output. The layer layout
    /// implied by the header must match the stored tensors exactly.
    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let arch = Arch::from_tag(r.u32()?)?;
        let w = r.usize()?;
        let width_divisor = r.usize()?;
        let count = r.usize()?;
        let spec = ModelSpec {
            arch,
            w,
            width_divisor,
        };
        let mut model = build_model(spec, 0)?;
        let expected = model.named_tensors();
        if count != expected.len() {
            return Err(Error::Checkpoint(format!(
                "{count} tensors stored, {arch} expects {}",
                expected.len()
            )));
        }
        let mut values = Vec::with_capacity(model.param_count());
        for (want_name, want) in &expected {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            if name != want_name || dims != want.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} {dims:?} does not match expected {want_name:?} {:?}",
                    want.shape()
                )));
            }
            for _ in 0..want.len() {
                values.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        model.unflatten(&values);
        Ok(model)
    }
}
