//! Binary checkpoint container.
//!
//! ```text
//! "DRHD" | u32 version | u32 count | entries...
//! entry: u16 name_len | name (utf-8) | u8 ndim | u32 dims[ndim] | u8 dtype | payload
//! ```
//!
//! All integers little-endian. dtype 0 is `f32`, 1 is `u64`. Payload length
//! is the product of dims times the element size.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Weights;
use crate::tensor::{Shape, Tensor};
use crate::train::adam::Adam;

pub const MAGIC: &[u8; 4] = b"DRHD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U64(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<u32>,
    pub payload: Payload,
}

impl Entry {
    pub fn tensor(name: impl Into<String>, t: &Tensor) -> Entry {
        let s = t.shape();
        Entry {
            name: name.into(),
            dims: [s.n, s.c, s.h, s.w].iter().map(|&d| d as u32).collect(),
            payload: Payload::F32(t.data().to_vec()),
        }
    }

    pub fn u64s(name: impl Into<String>, v: Vec<u64>) -> Entry {
        Entry {
            name: name.into(),
            dims: vec![v.len() as u32],
            payload: Payload::U64(v),
        }
    }

    fn to_tensor(&self) -> Result<Tensor> {
        let Payload::F32(data) = &self.payload else {
            return Err(Error::Dataset(format!("checkpoint entry `{}` is not f32", self.name)));
        };
        let mut d = [1usize; 4];
        if self.dims.len() > 4 {
            return Err(Error::Dataset(format!("checkpoint entry `{}` has {} dims", self.name, self.dims.len())));
        }
        let off = 4 - self.dims.len();
        for (i, &v) in self.dims.iter().enumerate() {
            d[off + i] = v as usize;
        }
        Tensor::new(Shape::new(d[0], d[1], d[2], d[3]), data.clone())
    }

    fn as_u64s(&self) -> Result<&[u64]> {
        match &self.payload {
            Payload::U64(v) => Ok(v),
            _ => Err(Error::Dataset(format!("checkpoint entry `{}` is not u64", self.name))),
        }
    }
}

pub fn encode(entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(e.dims.len() as u8);
        for d in &e.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &e.payload {
            Payload::F32(v) => {
                out.push(0);
                v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
            Payload::U64(v) => {
                out.push(1);
                v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bad(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            format: "checkpoint",
            offset: self.pos,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.bad(format!("truncated, wanted {n} more bytes")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<Entry>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        r.pos = 0;
        return Err(r.bad("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Unsupported(format!("checkpoint version {version}")));
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count.min(4096) as usize);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format {
                format: "checkpoint",
                offset: at,
                detail: "entry name is not utf-8".into(),
            })?
            .to_string();
        let ndim = r.u8()? as usize;
        let dims = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d as usize));
        let n = n.ok_or_else(|| r.bad(format!("entry `{name}` is too large")))?;
        let dtype = r.u8()?;
        let payload = match dtype {
            0 => {
                let raw = r.take(n.checked_mul(4).ok_or_else(|| r.bad("entry too large"))?)?;
                Payload::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
            }
            1 => {
                let raw = r.take(n.checked_mul(8).ok_or_else(|| r.bad("entry too large"))?)?;
                Payload::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
            }
            d => {
                r.pos -= 1;
                return Err(r.bad(format!("unknown dtype {d}")));
            }
        };
        out.push(Entry { name, dims, payload });
    }
    if r.pos != buf.len() {
        return Err(r.bad("trailing bytes"));
    }
    Ok(out)
}

/// Where a run stands, enough to continue it bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub weights: Weights,
    pub adam: Adam,
    /// Optimiser steps taken so far.
    pub step: u64,
    pub epoch: u64,
    /// Batches of `epoch` already consumed.
    pub step_in_epoch: u64,
    /// Sampler state at the start of `epoch`.
    pub rng: ChaCha8Rng,
    pub best_psnr_mu: f64,
}

fn rng_words(rng: &ChaCha8Rng) -> Vec<u64> {
    let seed = rng.get_seed();
    let mut v: Vec<u64> = seed.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
    let pos = rng.get_word_pos();
    v.push(pos as u64);
    v.push((pos >> 64) as u64);
    v.push(rng.get_stream());
    v
}

fn rng_from_words(w: &[u64]) -> Result<ChaCha8Rng> {
    if w.len() != 7 {
        return Err(Error::Dataset(format!("meta/rng has {} words, expected 7", w.len())));
    }
    let mut seed = [0u8; 32];
    for (i, x) in w[..4].iter().enumerate() {
        seed[i * 8..i * 8 + 8].copy_from_slice(&x.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(w[6]);
    rng.set_word_pos(w[4] as u128 | (w[5] as u128) << 64);
    Ok(rng)
}

impl TrainState {
    pub fn to_entries(&self) -> Vec<Entry> {
        let mut e = Vec::new();
        for (k, t) in &self.weights {
            e.push(Entry::tensor(format!("weight/{k}"), t));
        }
        for (k, t) in &self.adam.m {
            e.push(Entry::tensor(format!("adam.m/{k}"), t));
        }
        for (k, t) in &self.adam.v {
            e.push(Entry::tensor(format!("adam.v/{k}"), t));
        }
        e.push(Entry::u64s("meta/step", vec![self.step]));
        e.push(Entry::u64s("meta/adam_step", vec![self.adam.step]));
        e.push(Entry::u64s("meta/epoch", vec![self.epoch]));
        e.push(Entry::u64s("meta/step_in_epoch", vec![self.step_in_epoch]));
        e.push(Entry::u64s("meta/rng", rng_words(&self.rng)));
        e.push(Entry::u64s("meta/best_psnr_mu", vec![self.best_psnr_mu.to_bits()]));
        e
    }

    pub fn from_entries(entries: &[Entry]) -> Result<TrainState> {
        let mut weights = Weights::new();
        let mut adam = Adam::default();
        let mut meta = std::collections::BTreeMap::new();
        for e in entries {
            if let Some(k) = e.name.strip_prefix("weight/") {
                weights.insert(k.to_string(), e.to_tensor()?);
            } else if let Some(k) = e.name.strip_prefix("adam.m/") {
                adam.m.insert(k.to_string(), e.to_tensor()?);
            } else if let Some(k) = e.name.strip_prefix("adam.v/") {
                adam.v.insert(k.to_string(), e.to_tensor()?);
            } else if let Some(k) = e.name.strip_prefix("meta/") {
                meta.insert(k.to_string(), e.as_u64s()?.to_vec());
            } else {
                return Err(Error::Dataset(format!("unknown checkpoint entry `{}`", e.name)));
            }
        }
        let one = |k: &str| -> Result<u64> {
            match meta.get(k).map(|v| v.as_slice()) {
                Some([x]) => Ok(*x),
                _ => Err(Error::Dataset(format!("checkpoint lacks meta/{k}"))),
            }
        };
        adam.step = one("adam_step")?;
        let rng = rng_from_words(meta.get("rng").ok_or_else(|| Error::Dataset("checkpoint lacks meta/rng".into()))?)?;
        Ok(TrainState {
            weights,
            step: one("step")?,
            epoch: one("epoch")?,
            step_in_epoch: one("step_in_epoch")?,
            best_psnr_mu: f64::from_bits(one("best_psnr_mu")?),
            rng,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_entries(path, &self.to_entries())
    }

    pub fn load(path: &Path) -> Result<TrainState> {
        TrainState::from_entries(&read_entries(path)?)
    }
}

pub fn write_entries(path: &Path, entries: &[Entry]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(entries)).map_err(|e| Error::io(path, e))
}

pub fn read_entries(path: &Path) -> Result<Vec<Entry>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf).map_err(|e| e.context(path.display().to_string()))
}

/// Weights from a checkpoint, ignoring optimiser state.
pub fn load_weights(path: &Path) -> Result<Weights> {
    let mut w = Weights::new();
    for e in read_entries(path)? {
        if let Some(k) = e.name.strip_prefix("weight/") {
            w.insert(k.to_string(), e.to_tensor()?);
        }
    }
    if w.is_empty() {
        return Err(Error::Dataset(format!("{} holds no weights", path.display())));
    }
    Ok(w)
}

/// Writes a weights-only checkpoint.
pub fn save_weights(path: &Path, weights: &Weights) -> Result<()> {
    let e: Vec<Entry> = weights.iter().map(|(k, t)| Entry::tensor(format!("weight/{k}"), t)).collect();
    write_entries(path, &e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn state() -> TrainState {
        let mut weights = Weights::new();
        weights.insert("a.w".into(), Tensor::from_fn(Shape::new(2, 1, 3, 3), |n, _, y, x| (n * 9 + y * 3 + x) as f32 - 4.5));
        weights.insert("a.b".into(), Tensor::full(Shape::new(1, 2, 1, 1), 0.25));
        let mut adam = Adam::default();
        let grads = weights.iter().map(|(k, t)| (k.clone(), t.map(|v| v * 0.1))).collect();
        adam.step(&mut weights, &grads, 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        rng.next_u64();
        TrainState {
            weights,
            adam,
            step: 17,
            epoch: 2,
            step_in_epoch: 5,
            rng,
            best_psnr_mu: 31.25,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let s = state();
        let back = TrainState::from_entries(&decode(&encode(&s.to_entries())).unwrap()).unwrap();
        assert_eq!(back, s);
        let (mut a, mut b) = (s.rng.clone(), back.rng.clone());
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn header_layout() {
        let e = vec![Entry::u64s("x", vec![7])];
        let b = encode(&e);
        assert_eq!(&b[..4], b"DRHD");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), VERSION);
        // count, name len, name, ndim, dim, dtype, payload
        assert_eq!(b.len(), 8 + 4 + 2 + 1 + 1 + 4 + 1 + 8);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let b = encode(&state().to_entries());
        assert!(decode(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = b;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
