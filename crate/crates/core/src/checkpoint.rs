//! Versioned binary checkpoints. All integers little-endian:
//!
//! ```text
//! magic      8 bytes  "BOOSTCKP"
//! version    u32
//! dtype      u8       0 = f32, 1 = f64
//! iteration  u64      completed optimizer steps
//! total      u64      optimizer schedule length
//! config     u64 length + canonical JSON bytes
//! hash       64 bytes lowercase hex SHA-256 of the config JSON
//! count      u32      number of parameters
//! per parameter, in registration order:
//!   name     u32 length + UTF-8 bytes
//!   decay    u8
//!   value    tensor record
//!   velocity tensor record
//! ```

use std::io::Read;
use std::path::Path;

use boostnet_autodiff::dump::{encode, read_tensor};
use boostnet_autodiff::{DType, OptimizerState, Real};

use crate::boostnet::BoostNet;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::synth::sha256_hex;
use crate::train::Trainer;

pub const MAGIC: &[u8; 8] = b"BOOSTCKP";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint<T: Real>(trainer: &Trainer<T>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.extend_from_slice(&trainer.iteration.to_le_bytes());
    out.extend_from_slice(&trainer.optim.config.total_iters.to_le_bytes());
    let json = trainer.config.to_json();
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    out.extend_from_slice(sha256_hex(json.as_bytes()).as_bytes());
    let entries = trainer.model.params.entries();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (e, v) in entries.iter().zip(&trainer.optim.velocity) {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.decay as u8);
        encode(&e.value, &mut out);
        encode(v, &mut out);
    }
    out
}

/// Writes atomically through a sibling temporary file.
pub fn save<T: Real>(trainer: &Trainer<T>, path: &Path) -> Result<String> {
    let bytes = encode_checkpoint(trainer);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Header fields readable without knowing the dtype.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub dtype: DType,
    pub iteration: u64,
    pub total_iters: u64,
    pub config: RunConfig,
}

fn take<const N: usize>(r: &mut &[u8]) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn take_vec(r: &mut &[u8], n: usize) -> std::io::Result<Vec<u8>> {
    if n > r.len() {
        return Err(std::io::ErrorKind::UnexpectedEof.into());
    }
    let (head, rest) = r.split_at(n);
    *r = rest;
    Ok(head.to_vec())
}

fn read_header(path: &Path, r: &mut &[u8]) -> Result<Header> {
    let bad = |msg: String| Error::data(path, msg);
    let eof = |e: std::io::Error| Error::data(path, format!("truncated checkpoint: {e}"));
    if &take::<8>(r).map_err(eof)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(r).map_err(eof)?);
    if version != VERSION {
        return Err(bad(format!("checkpoint version {version}, expected {VERSION}")));
    }
    let [code] = take::<1>(r).map_err(eof)?;
    let dtype = DType::from_code(code).ok_or_else(|| bad(format!("unknown dtype code {code}")))?;
    let iteration = u64::from_le_bytes(take(r).map_err(eof)?);
    let total_iters = u64::from_le_bytes(take(r).map_err(eof)?);
    let len = u64::from_le_bytes(take(r).map_err(eof)?) as usize;
    let json = take_vec(r, len).map_err(eof)?;
    let hash = take_vec(r, 64).map_err(eof)?;
    if sha256_hex(&json).as_bytes() != hash.as_slice() {
        return Err(bad("embedded configuration does not match its hash".into()));
    }
    let json = String::from_utf8(json).map_err(|_| bad("configuration is not UTF-8".into()))?;
    let config = RunConfig::from_json(&json).map_err(|e| bad(e.to_string()))?;
    Ok(Header {
        dtype,
        iteration,
        total_iters,
        config,
    })
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn peek(path: &Path) -> Result<Header> {
    let bytes = read_bytes(path)?;
    read_header(path, &mut bytes.as_slice())
}

/// Rebuilds the trainer state; parameters are matched by name and shape.
pub fn decode_checkpoint<T: Real>(path: &Path, bytes: &[u8]) -> Result<Trainer<T>> {
    let r = &mut &bytes[..];
    let header = read_header(path, r)?;
    if header.dtype != T::DTYPE {
        return Err(Error::data(
            path,
            format!("checkpoint holds {} tensors, requested {}", header.dtype.name(), T::DTYPE.name()),
        ));
    }
    let bad = |msg: String| Error::data(path, msg);
    let eof = |e: std::io::Error| Error::data(path, format!("truncated checkpoint: {e}"));
    let mut model = BoostNet::<T>::new(&header.config.model, header.config.seed)?;
    let mut optim = OptimizerState::new(header.config.optim.sgd(header.total_iters), &model.params)?;
    let count = u32::from_le_bytes(take(r).map_err(eof)?) as usize;
    if count != model.params.len() {
        return Err(bad(format!("{count} parameters stored, model has {}", model.params.len())));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let len = u32::from_le_bytes(take(r).map_err(eof)?) as usize;
        let name = String::from_utf8(take_vec(r, len).map_err(eof)?).map_err(|_| bad("parameter name is not UTF-8".into()))?;
        let [decay] = take::<1>(r).map_err(eof)?;
        let value = read_tensor::<T>(r).map_err(|e| bad(format!("`{name}`: {e}")))?;
        let velocity = read_tensor::<T>(r).map_err(|e| bad(format!("`{name}` momentum: {e}")))?;
        let id = model.params.id(&name).ok_or_else(|| bad(format!("unknown parameter `{name}`")))?;
        let entry = &mut model.params.entries_mut()[id.index()];
        if seen[id.index()] || entry.value.shape() != value.shape() || velocity.shape() != value.shape() {
            return Err(bad(format!("parameter `{name}` repeated or has the wrong shape")));
        }
        if entry.decay != (decay != 0) {
            return Err(bad(format!("parameter `{name}` has the wrong decay flag")));
        }
        seen[id.index()] = true;
        entry.value = value;
        optim.velocity[id.index()] = velocity;
    }
    if !r.is_empty() {
        return Err(bad(format!("{} trailing bytes", r.len())));
    }
    Ok(Trainer {
        config: header.config,
        model,
        optim,
        iteration: header.iteration,
    })
}

pub fn load<T: Real>(path: &Path) -> Result<Trainer<T>> {
    decode_checkpoint(path, &read_bytes(path)?)
}

/// SHA-256 of a checkpoint file.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}
