//! Binary checkpoint format.
//!
//! Little-endian layout, version 1:
//!
//! ```text
//! magic   8 bytes   "SEGKCKPT"
//! version u32
//! count   u32
//! count x record:
//!   name_len u32, name (UTF-8)
//!   ndim u32, dims (u64 each)
//!   values (f64 each, product(dims) of them)
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a save/load cycle is bit-exact.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"SEGKCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Record {
    pub fn new(name: &str, shape: Vec<usize>, values: Vec<f64>) -> Self {
        Record { name: name.to_string(), shape, values }
    }

    pub fn from_tensor(name: &str, t: &Tensor) -> Self {
        Record::new(name, t.shape().to_vec(), t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.values.clone()).map_err(|e| Error::Checkpoint {
            version: VERSION,
            detail: format!("record {}: {e}", self.name),
        })
    }
}

fn corrupt(detail: impl Into<String>) -> Error {
    Error::Checkpoint { version: VERSION, detail: detail.into() }
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &r.values {
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
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
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
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(corrupt("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint {
            version,
            detail: format!("unsupported version, this build reads v{VERSION}"),
        });
    }
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| corrupt("record name is not UTF-8"))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| corrupt(format!("record {name}: shape overflows")))?;
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| corrupt("record too large"))?)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        records.push(Record { name, shape, values });
    }
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes after last record"));
    }
    Ok(records)
}

pub fn save(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(records)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(
            values in prop::collection::vec(prop::num::f64::ANY, 0..40),
            name in "[a-z.0-9]{1,20}",
        ) {
            let records = vec![
                Record::new(&name, vec![values.len()], values.clone()),
                Record::new("meta.x", vec![1, 1], vec![3.0]),
            ];
            let back = decode(&encode(&records)).unwrap();
            prop_assert_eq!(back.len(), 2);
            prop_assert_eq!(&back[0].name, &name);
            let bits: Vec<u64> = back[0].values.iter().map(|v| v.to_bits()).collect();
            let orig: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits, orig);
        }
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        assert!(decode(b"NOTACKPT\x01\0\0\0\0\0\0\0").is_err());
        let mut bytes = encode(&[]);
        bytes[8] = 9;
        match decode(&bytes) {
            Err(Error::Checkpoint { version, .. }) => assert_eq!(version, 9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_truncation() {
        let bytes = encode(&[Record::new("a", vec![2], vec![1.0, 2.0])]);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }
}
