//! Versioned binary checkpoint of a full training state.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "HCKP" | version u32
//! config hash (64 hex bytes) | config text (u32 length + utf8)
//! seed u64 | step u64
//! tensors: count u32, then per tensor name (u32 length + utf8),
//!          rank u32, dims u64 x rank, f32 payload
//! optimizer: step u64, then per tensor decay u8, first and second
//!            moment payloads (shaped like the tensor)
//! queues v, w: capacity u32, dim u32, len u32, f32 payload
//! sha256 of everything above (32 bytes)
//! ```

use std::path::Path;

use hieralign_core::autodiff::Tensor;
use hieralign_core::losses::FeatureQueue;
use hieralign_core::model::ModelParams;
use hieralign_core::optim::OptState;
use hieralign_core::trainer::TrainState;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::write_file;

pub const MAGIC: [u8; 4] = *b"HCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(&MAGIC);
        put_u32(&mut w, VERSION);
        w.extend_from_slice(self.config.hash().as_bytes());
        put_bytes(&mut w, self.config.canonical().as_bytes());
        put_u64(&mut w, self.config.seed);
        put_u64(&mut w, self.state.step);
        let p = &self.state.params;
        put_u32(&mut w, p.tensors.len() as u32);
        for (name, t) in p.names.iter().zip(&p.tensors) {
            put_bytes(&mut w, name.as_bytes());
            put_u32(&mut w, t.rank() as u32);
            for &d in t.shape() {
                put_u64(&mut w, d as u64);
            }
            put_f32s(&mut w, t.data());
        }
        let o = &self.state.opt;
        put_u64(&mut w, o.step);
        for i in 0..p.tensors.len() {
            w.push(o.decay[i] as u8);
            put_f32s(&mut w, o.first_moment[i].data());
            put_f32s(&mut w, o.second_moment[i].data());
        }
        for q in [&self.state.queue_v, &self.state.queue_w] {
            put_u32(&mut w, q.capacity as u32);
            put_u32(&mut w, q.dim as u32);
            put_u32(&mut w, q.len() as u32);
            for item in q.iter() {
                put_f32s(&mut w, item);
            }
        }
        let digest = Sha256::digest(&w);
        w.extend_from_slice(&digest);
        w
    }

    /// Decodes `bytes`; when `expected_hash` is given the stored config
    /// hash must equal it.
    pub fn decode(bytes: &[u8], expected_hash: Option<&str>, path: &Path) -> Result<Checkpoint> {
        let bad = |msg: &str| Error::format(path, msg.to_string());
        if bytes.len() < 8 || bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Mismatch {
                what: "checkpoint version",
                expected: VERSION.to_string(),
                found: version.to_string(),
            });
        }
        if bytes.len() < 8 + 32 {
            return Err(bad("truncated"));
        }
        let (payload, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(payload).as_slice() != digest {
            return Err(bad("checksum mismatch (truncated or corrupted)"));
        }
        let mut r = Reader {
            b: payload,
            at: 8,
            path,
        };
        let stored_hash = String::from_utf8(r.take(64)?.to_vec()).map_err(|_| bad("bad config hash"))?;
        if let Some(want) = expected_hash {
            if want != stored_hash {
                return Err(Error::Mismatch {
                    what: "checkpoint config hash",
                    expected: want.into(),
                    found: stored_hash,
                });
            }
        }
        let n = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(n)?).map_err(|_| bad("config text is not utf8"))?;
        let config = RunConfig::parse(text)?;
        if config.hash() != stored_hash {
            return Err(Error::Mismatch {
                what: "embedded config hash",
                expected: stored_hash,
                found: config.hash(),
            });
        }
        let seed = r.u64()?;
        if seed != config.seed {
            return Err(bad("seed disagrees with the embedded config"));
        }
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut named = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("tensor name is not utf8"))?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
            let numel = dims.iter().product();
            named.push((name, Tensor::new(&dims, r.f32s(numel)?)?));
        }
        let params = ModelParams::from_named(config.train.model, named)?;
        let opt_step = r.u64()?;
        let (mut first, mut second, mut decay) = (Vec::new(), Vec::new(), Vec::new());
        for t in &params.tensors {
            decay.push(match r.take(1)?[0] {
                0 => false,
                1 => true,
                _ => return Err(bad("bad decay flag")),
            });
            first.push(Tensor::new(t.shape(), r.f32s(t.numel())?)?);
            second.push(Tensor::new(t.shape(), r.f32s(t.numel())?)?);
        }
        let opt = OptState {
            step: opt_step,
            first_moment: first,
            second_moment: second,
            decay,
            hyper: config.train.hyper(),
        };
        let mut queues = Vec::new();
        for _ in 0..2 {
            let capacity = r.u32()? as usize;
            let dim = r.u32()? as usize;
            let len = r.u32()? as usize;
            let items = (0..len).map(|_| r.f32s(dim)).collect::<Result<Vec<_>>>()?;
            queues.push(FeatureQueue::restore(capacity, dim, items)?);
        }
        if r.at != payload.len() {
            return Err(bad("trailing bytes after the queues"));
        }
        let queue_w = queues.pop().unwrap();
        let queue_v = queues.pop().unwrap();
        Ok(Checkpoint {
            config,
            state: TrainState {
                params,
                opt,
                queue_v,
                queue_w,
                step,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode())
    }

    pub fn load(path: &Path, expected_hash: Option<&str>) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes, expected_hash, path)
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(w: &mut Vec<u8>, b: &[u8]) {
    put_u32(w, b.len() as u32);
    w.extend_from_slice(b);
}

fn put_f32s(w: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        w.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.b.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated"))?;
        let s = &self.b[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::format(self.path, "size overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
