//! Little-endian binary checkpoints.
//!
//! Layout: magic `GCNGRASP`, `u32` version, `u32` length plus UTF-8 config
//! text, `u32` array count, then per array: `u32` name length, name, `u32`
//! rank, `u64` extents, `f64` values.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{GcnGraspModel, ModelConfig};
use crate::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"GCNGRASP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub arrays: Vec<(String, Tensor)>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ckpt.config.len() as u32).to_le_bytes());
    out.extend_from_slice(ckpt.config.as_bytes());
    out.extend_from_slice(&(ckpt.arrays.len() as u32).to_le_bytes());
    for (name, t) in &ckpt.arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

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
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config = r.string()?;
    let count = r.u32()? as usize;
    let mut arrays = Vec::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("extent overflow".into()))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("array {name} is too large")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("array {name}: {e}")))?;
        arrays.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { config, arrays })
}

impl GcnGraspModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let names = GcnGraspModel::param_names(self.config());
        Checkpoint {
            config: self.config().to_text(),
            arrays: names.into_iter().zip(self.params().iter().cloned()).collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_text(&ckpt.config)?;
        let names = GcnGraspModel::param_names(&config);
        if names.len() != ckpt.arrays.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} arrays, found {}",
                names.len(),
                ckpt.arrays.len()
            )));
        }
        for (want, (got, _)) in names.iter().zip(&ckpt.arrays) {
            if want != got {
                return Err(Error::Checkpoint(format!("expected array {want}, found {got}")));
            }
        }
        GcnGraspModel::from_params(config, ckpt.arrays.iter().map(|(_, t)| t.clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_stable() {
        let m = GcnGraspModel::new(ModelConfig::desk(), 4).unwrap();
        let bytes = encode_checkpoint(&m.to_checkpoint());
        let back = GcnGraspModel::from_checkpoint(&decode_checkpoint(&bytes).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_checkpoint(&back.to_checkpoint()), bytes);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let m = GcnGraspModel::new(ModelConfig::desk(), 4).unwrap();
        let bytes = encode_checkpoint(&m.to_checkpoint());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
