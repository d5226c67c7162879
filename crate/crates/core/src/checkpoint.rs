//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"SPAMCKPT"  u16 version (= 1)
//! u32 text length, UTF-8 text: network config lines followed by metadata lines
//! per tensor, in parameter order: u8 rank, rank x u32 extents, f32 values
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{Model, NetConfig, Params};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SPAMCKPT";
pub const VERSION: u16 = 1;

/// Training provenance stored next to the weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    /// Backprojection ratio chosen on validation data.
    pub ratio: f64,
    /// Validation classification AP of this epoch.
    pub val_ap: f64,
    pub loss_history: Vec<f64>,
}

impl CheckpointMeta {
    fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "epoch = {}", self.epoch);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "ratio = {}", self.ratio);
        let _ = writeln!(s, "val_ap = {}", self.val_ap);
        let hist: Vec<String> = self.loss_history.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "loss_history = {}", hist.join(","));
        s
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut m = CheckpointMeta::default();
        for line in text.lines() {
            let Some((k, v)) = line.split_once('=') else { continue };
            let (k, v) = (k.trim(), v.trim());
            let bad = || Error::format(format!("checkpoint metadata line {line:?}"));
            match k {
                "epoch" => m.epoch = v.parse().map_err(|_| bad())?,
                "seed" => m.seed = v.parse().map_err(|_| bad())?,
                "ratio" => m.ratio = v.parse().map_err(|_| bad())?,
                "val_ap" => m.val_ap = v.parse().map_err(|_| bad())?,
                "loss_history" => {
                    m.loss_history = if v.is_empty() {
                        Vec::new()
                    } else {
                        v.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
                    }
                }
                _ => {}
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(model: Model, meta: CheckpointMeta) -> Self {
        Self { model, meta }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let text = format!("{}{}", self.model.config.to_text(), self.meta.to_text());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for t in &self.model.params.tensors {
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "checkpoint magic")?;
        if magic != MAGIC {
            return Err(Error::format(format!(
                "bad checkpoint magic {:?}, expected {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(MAGIC)
            )));
        }
        let version = u16::from_le_bytes(r.take(2, "checkpoint version")?.try_into().expect("2 bytes"));
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: VERSION,
            });
        }
        let len = r.u32("config length")? as usize;
        let text = std::str::from_utf8(r.take(len, "config text")?)
            .map_err(|_| Error::format("checkpoint config text is not UTF-8"))?;
        let config = NetConfig::from_text(text)?;
        let meta = CheckpointMeta::from_text(text)?;
        let shapes = config.param_shapes()?;
        let mut tensors = Vec::with_capacity(shapes.len());
        for (i, expected) in shapes.iter().enumerate() {
            let rank = r.take(1, &format!("tensor {i} rank"))?[0] as usize;
            if rank == 0 || rank > 4 {
                return Err(Error::format(format!("tensor {i} has rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32(&format!("tensor {i} extent"))? as usize);
            }
            if &dims != expected {
                return Err(Error::format(format!(
                    "tensor {i} has shape {dims:?}, the config needs {expected:?}"
                )));
            }
            let n: usize = dims.iter().product();
            let raw = r.take(4 * n, &format!("tensor {i} values"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Tensor::from_vec(&dims, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(format!(
                "{} trailing bytes after the last tensor at offset {}",
                bytes.len() - r.pos,
                r.pos
            )));
        }
        let model = Model::new(config, Params { tensors })?;
        Ok(Self { model, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::from(e).in_file(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::from_bytes(&bytes).map_err(|e| e.in_file(path))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let found = self.bytes.len() - self.pos;
        if found < n {
            return Err(Error::Length {
                what: what.to_string(),
                offset: self.pos,
                expected: n,
                found,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pooling::PoolingName;

    fn sample() -> Checkpoint {
        let model = Model::init(NetConfig::mnist128(PoolingName::Spam), 5).unwrap();
        Checkpoint::new(
            model,
            CheckpointMeta {
                epoch: 3,
                seed: 42,
                ratio: 0.4,
                val_ap: 0.9875,
                loss_history: vec![0.69, 0.3, 0.1],
            },
        )
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..10], &[1, 0]);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupted_magic_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn version_two_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 2;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("unsupported version 2"));
    }

    #[test]
    fn truncation_is_length_error() {
        let bytes = sample().to_bytes();
        for cut in [5, 11, 40, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Length { .. })), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Format(_))));
    }
}
