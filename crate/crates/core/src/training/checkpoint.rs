//! Little-endian checkpoint files.
//!
//! Layout: magic, format version, dtype tag, length-prefixed config JSON,
//! global step, RNG state, then parameter blobs in path order, each
//! followed by a CRC-32. An optional optimizer section repeats the blob
//! layout for both moment arrays. A CRC-32 of everything before it closes
//! the file, so header fields are covered too.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;

use super::optim::{AdamW, OptimizerState};
use crate::error::{Error, Result};
use crate::fsutil::{read, write_atomic};
use crate::model::{ModelConfig, ParameterStore, Seq2Seq};
use crate::tensor::{DType, Scalar, Tensor};

const MAGIC: &[u8; 8] = b"TINYT5CK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Snapshot of a ChaCha8 generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: Seq2Seq<T>,
    /// Absent in evaluation-only checkpoints.
    pub optimizer: Option<OptimizerState<T>>,
    pub step: u64,
    pub rng: RngState,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(T::DTYPE.tag());
        let config = serde_json::to_vec(&self.model.config)?;
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&(self.model.params.len() as u32).to_le_bytes());
        for (path, t) in self.model.params.iter() {
            write_blob(&mut out, path, t.shape(), t.data());
        }
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                for x in [opt.hyper.beta1, opt.hyper.beta2, opt.hyper.eps, opt.hyper.weight_decay] {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                out.extend_from_slice(&opt.step.to_le_bytes());
                for (path, t) in self.model.params.iter() {
                    let shape = t.shape();
                    let m = opt
                        .m
                        .get(path)
                        .ok_or_else(|| Error::MissingAttribute(format!("first moment of {path}")))?;
                    let v = opt
                        .v
                        .get(path)
                        .ok_or_else(|| Error::MissingAttribute(format!("second moment of {path}")))?;
                    write_blob(&mut out, path, shape, m);
                    write_blob(&mut out, path, shape, v);
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path: path.to_path_buf(),
        };
        if r.take(8)? != MAGIC {
            return Err(r.corrupt_at(0, "not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let at = r.pos;
        let tag = r.u8()?;
        match DType::from_tag(tag) {
            Some(d) if d == T::DTYPE => {}
            Some(d) => {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint stores {d:?} parameters, {:?} requested",
                    T::DTYPE
                )))
            }
            None => return Err(r.corrupt_at(at as u64, &format!("unknown dtype tag {tag}"))),
        }
        let len = r.u32()? as usize;
        let at = r.pos;
        let config: ModelConfig =
            serde_json::from_slice(r.take(len)?).map_err(|e| r.corrupt_at(at as u64, &format!("config: {e}")))?;
        config
            .validate()
            .map_err(|e| r.corrupt_at(at as u64, &format!("config: {e}")))?;
        let step = r.u64()?;
        let mut seed = [0u8; 32];
        seed.copy_from_slice(r.take(32)?);
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let (name, shape, data) = r.blob::<T>()?;
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        let at = r.pos;
        let params =
            ParameterStore::from_tensors(&config, tensors).map_err(|e| r.corrupt_at(at as u64, &e.to_string()))?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let mut h = [0f64; 4];
                for x in &mut h {
                    *x = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
                }
                let hyper = AdamW {
                    beta1: h[0],
                    beta2: h[1],
                    eps: h[2],
                    weight_decay: h[3],
                };
                let opt_step = r.u64()?;
                let mut m = BTreeMap::new();
                let mut v = BTreeMap::new();
                for (path, t) in params.iter() {
                    for target in [&mut m, &mut v] {
                        let at = r.pos;
                        let (name, shape, data) = r.blob::<T>()?;
                        if &name != path || shape != t.shape() {
                            return Err(
                                r.corrupt_at(at as u64, &format!("optimizer moment for {name}, expected {path}"))
                            );
                        }
                        target.insert(name, data);
                    }
                }
                Some(OptimizerState {
                    hyper,
                    step: opt_step,
                    m,
                    v,
                })
            }
            other => return Err(r.corrupt_at((r.pos - 1) as u64, &format!("bad optimizer flag {other}"))),
        };
        let body = r.pos;
        if r.u32()? != crc32fast::hash(&bytes[..body]) {
            return Err(r.corrupt_at(body as u64, "file checksum mismatch"));
        }
        if r.pos != bytes.len() {
            return Err(r.corrupt_at(r.pos as u64, "trailing bytes"));
        }
        Ok(Checkpoint {
            model: Seq2Seq { config, params },
            optimizer,
            step,
            rng: RngState { seed, stream, word_pos },
        })
    }
}

fn write_blob<T: Scalar>(out: &mut Vec<u8>, path: &str, shape: &[usize], data: &[T]) {
    let start = out.len();
    out.extend_from_slice(&(path.len() as u32).to_le_bytes());
    out.extend_from_slice(path.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in data {
        x.append_le_bytes(out);
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> Reader<'a> {
    fn corrupt_at(&self, offset: u64, reason: &str) -> Error {
        Error::Corrupt {
            path: self.path.clone(),
            offset,
            reason: reason.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt_at(self.bytes.len() as u64, &format!("truncated: needed {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn blob<T: Scalar>(&mut self) -> Result<(String, Vec<usize>, Vec<T>)> {
        let start = self.pos;
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| self.corrupt_at(start as u64, "parameter path is not UTF-8"))?;
        let rank = self.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = self.u64()? as usize;
            numel = numel
                .checked_mul(d)
                .filter(|&n| n <= self.bytes.len())
                .ok_or_else(|| self.corrupt_at(start as u64, "implausible tensor shape"))?;
            shape.push(d);
        }
        let size = T::DTYPE.size();
        let raw = self.take(numel * size)?;
        let crc_expected = crc32fast::hash(&self.bytes[start..self.pos]);
        let crc = self.u32()?;
        if crc != crc_expected {
            return Err(self.corrupt_at(start as u64, &format!("checksum mismatch in blob {name}")));
        }
        let data = raw.chunks_exact(size).map(T::from_le_slice).collect();
        Ok((name, shape, data))
    }
}

/// Writes `checkpoint` atomically.
pub fn save_checkpoint<T: Scalar>(path: &Path, checkpoint: &Checkpoint<T>) -> Result<()> {
    write_atomic(path, &checkpoint.to_bytes()?)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    Checkpoint::from_bytes(&read(path)?, path)
}
