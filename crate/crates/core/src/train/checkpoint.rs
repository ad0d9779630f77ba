//! Training checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field     | encoding                                                       |
//! |-----------|----------------------------------------------------------------|
//! | magic     | 8 bytes `LADCKPT1`                                             |
//! | version   | `u32`, currently 1                                             |
//! | dtype     | `u8`: 1 = f32, 2 = f64                                         |
//! | config    | `u64` byte length, then the training config as UTF-8 JSON      |
//! | iteration | `u64` completed iterations                                     |
//! | rng       | `u64` seed, `u128` ChaCha8 word position                       |
//! | tensors   | `u32` count; each: `u32` name length, name, `u32` ndim, `u32` dims, values |
//! | running   | `u32` layers; each: `u32` units, `units` means, `units` variances |
//! | adam      | `u64` step; per tensor in order: first moments, second moments |
//! | losses    | `u64` count; each: three `f64` (supervised, reconstruction, total) |
//!
//! Values use the checkpoint dtype except loss records, which are always f64.

use std::path::Path;

use super::adam::AdamState;
use super::config::TrainConfig;
use super::LossRecord;
use crate::error::{Error, Result};
use crate::hsi::format::write_atomic;
use crate::ladder::LadderParams;
use crate::real::{DType, Real};
use crate::rng::{Rng, RngState};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LADCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Element type of the checkpoint at `path`, read from its header.
pub fn peek_dtype(path: &Path) -> Result<DType> {
    use std::io::Read;
    let mut head = [0u8; 13];
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    f.read_exact(&mut head)
        .map_err(|_| Error::format(path, "truncated header"))?;
    if &head[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "missing LADCKPT1 magic"));
    }
    DType::from_code(head[12])
        .filter(|d| *d != DType::U8)
        .ok_or_else(|| Error::format(path, format!("unsupported dtype code {}", head[12])))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    /// Serialized [`TrainConfig`], kept verbatim.
    pub config_json: String,
    pub iteration: u64,
    pub rng: RngState,
    pub params: LadderParams<T>,
    pub adam: AdamState<T>,
    pub losses: Vec<LossRecord>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }
    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> std::result::Result<u128, String> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn values<T: Real>(&mut self, n: usize) -> std::result::Result<Vec<T>, String> {
        let size = T::DTYPE.size();
        let raw = self.take(n.checked_mul(size).ok_or("length overflow")?)?;
        Ok(raw.chunks_exact(size).map(T::read_le).collect())
    }
}

fn put_values<T: Real>(out: &mut Vec<u8>, v: &[T]) {
    for &x in v {
        x.write_le(out);
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn config(&self) -> Result<TrainConfig> {
        serde_json::from_str(&self.config_json).map_err(|e| Error::Config(format!("checkpoint config: {e}")))
    }

    pub fn rng(&self) -> Rng {
        Rng::from_state(self.rng)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(T::DTYPE.code());
        out.extend_from_slice(&(self.config_json.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config_json.as_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.rng.seed.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        let named = self.params.named();
        out.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, t) in &named {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_values(&mut out, t.data());
        }
        out.extend_from_slice(&(self.params.running.len() as u32).to_le_bytes());
        for r in &self.params.running {
            out.extend_from_slice(&(r.mean.len() as u32).to_le_bytes());
            put_values(&mut out, &r.mean);
            put_values(&mut out, &r.var);
        }
        out.extend_from_slice(&self.adam.t.to_le_bytes());
        for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
            put_values(&mut out, m);
            put_values(&mut out, v);
        }
        out.extend_from_slice(&(self.losses.len() as u64).to_le_bytes());
        for l in &self.losses {
            for x in [l.c_super, l.c_recon, l.c_total] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        Self::parse(bytes).map_err(|m| Error::format(path, m))
    }

    fn parse(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err("missing LADCKPT1 magic".into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let code = r.u8()?;
        if DType::from_code(code) != Some(T::DTYPE) {
            return Err(format!(
                "checkpoint dtype code {code} does not match requested {:?}",
                T::DTYPE
            ));
        }
        let len = r.u64()? as usize;
        let config_json = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| e.to_string())?;
        let config: TrainConfig = serde_json::from_str(&config_json).map_err(|e| format!("config: {e}"))?;
        let iteration = r.u64()?;
        let rng = RngState {
            seed: r.u64()?,
            word_pos: r.u128()?,
        };
        let mut params = LadderParams::<T>::init(&config.ladder, &mut Rng::new(0)).map_err(|e| e.to_string())?;
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        let count = r.u32()? as usize;
        if count != names.len() {
            return Err(format!("{count} tensors stored, model has {}", names.len()));
        }
        for (slot, expected) in params.tensors_mut().into_iter().zip(&names) {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|e| e.to_string())?;
            if &name != expected {
                return Err(format!("tensor {name} found where {expected} was expected"));
            }
            let ndim = r.u32()? as usize;
            let dims = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if dims != slot.shape() {
                return Err(format!(
                    "tensor {name} has dims {dims:?}, model expects {:?}",
                    slot.shape()
                ));
            }
            let data = r.values::<T>(slot.numel())?;
            *slot = Tensor::new(&dims, data).map_err(|e| format!("{name}: {e}"))?;
        }
        let layers = r.u32()? as usize;
        if layers != params.running.len() {
            return Err(format!(
                "{layers} running-stat layers, model has {}",
                params.running.len()
            ));
        }
        for (i, rs) in params.running.iter_mut().enumerate() {
            let units = r.u32()? as usize;
            if units != rs.mean.len() {
                return Err(format!("running stats of layer {} have {units} units", i + 1));
            }
            rs.mean = r.values(units)?;
            rs.var = r.values(units)?;
        }
        let t = r.u64()?;
        let sizes: Vec<usize> = params.named().iter().map(|(_, t)| t.numel()).collect();
        let mut adam = AdamState::new(&sizes);
        adam.t = t;
        for (i, &n) in sizes.iter().enumerate() {
            adam.m[i] = r.values(n)?;
            adam.v[i] = r.values(n)?;
        }
        let n_losses = r.u64()? as usize;
        let mut losses = Vec::with_capacity(n_losses.min(1 << 24));
        for _ in 0..n_losses {
            losses.push(LossRecord {
                c_super: r.f64()?,
                c_recon: r.f64()?,
                c_total: r.f64()?,
            });
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Checkpoint {
            config_json,
            iteration,
            rng,
            params,
            adam,
            losses,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
