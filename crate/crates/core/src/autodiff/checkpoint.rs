use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSVAECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Layout: magic, `u32` version, `u64` header length, JSON header, then
/// every tensor's values as little-endian `f64` in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint has no tensor named {0}")]
    Missing(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct Header {
    metadata: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value) -> Self {
        Checkpoint { metadata, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::Missing(name.to_owned()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = Entry { name: name.clone(), shape: t.shape().to_vec(), offset };
                offset += t.numel();
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header { metadata: self.metadata.clone(), tensors: entries })?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for (_, t) in &self.tensors {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b)?;
        let version = u32::from_le_bytes(u32b);
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b)?;
        let header_len = usize::try_from(u64::from_le_bytes(u64b))
            .map_err(|_| CheckpointError::Corrupt("header length".into()))?;
        let mut header = Vec::new();
        r.by_ref().take(header_len as u64).read_to_end(&mut header)?;
        if header.len() != header_len {
            return Err(CheckpointError::Corrupt("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&header)?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() % 8 != 0 {
            return Err(CheckpointError::Corrupt("payload is not a whole number of f64 values".into()));
        }
        let values: Vec<f64> =
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        let mut expected_offset = 0;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            if e.offset != expected_offset || e.offset + n > values.len() {
                return Err(CheckpointError::Corrupt(format!("tensor {} has a bad offset", e.name)));
            }
            let t = Tensor::new(e.shape, values[e.offset..e.offset + n].to_vec())
                .map_err(|err| CheckpointError::Corrupt(err.to_string()))?;
            tensors.push((e.name, t));
            expected_offset += n;
        }
        if expected_offset != values.len() {
            return Err(CheckpointError::Corrupt("trailing payload".into()));
        }
        Ok(Checkpoint { metadata: header.metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new(serde_json::json!({"vocab": ["C", "<end>"], "epoch": 3}));
        c.push("w", Tensor::new(vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap());
        c.push("b", Tensor::vector(vec![0.1]));
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        assert_eq!(back.metadata, c.metadata);
        for ((n1, t1), (n2, t2)) in back.tensors.iter().zip(&c.tensors) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(t1), bits(t2));
        }
        assert!(matches!(back.get("nope"), Err(CheckpointError::Missing(_))));
    }

    #[test]
    fn damaged_files_are_rejected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read_from(&bad[..]), Err(CheckpointError::BadMagic)));
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(Checkpoint::read_from(&bad[..]), Err(CheckpointError::Version(9))));
        let truncated = &buf[..buf.len() - 8];
        assert!(matches!(Checkpoint::read_from(truncated), Err(CheckpointError::Corrupt(_))));
        let mut extra = buf;
        extra.extend_from_slice(&0f64.to_le_bytes());
        assert!(matches!(Checkpoint::read_from(&extra[..]), Err(CheckpointError::Corrupt(_))));
    }
}
