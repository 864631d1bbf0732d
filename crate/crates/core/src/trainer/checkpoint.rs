//! Binary checkpoint container.
//!
//! ```text
//! magic "GAQNCKPT" | version u32 | config hash [32] | config JSON (u32 len)
//! step u64 | rng seed [32], stream u64, word position u128
//! recent ELBO count u32, f64 each | Adam counters (encoder, decoder, discriminator) u64
//! array count u32, then per array: name (u16 len, UTF-8), rank u8, dims u32, f32 data
//! CRC32 of everything above, u32
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use gaqn_autograd::Tensor;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{Adam, TrainConfig, TrainState};
use crate::params::ParamSet;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GAQNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn sets(state: &TrainState) -> [(&'static str, &ParamSet<f32>, &Adam); 3] {
    [
        ("encoder", &state.encoder.params, &state.adam_encoder),
        ("draw", &state.draw.params, &state.adam_draw),
        ("disc", &state.disc.params, &state.adam_disc),
    ]
}

fn put_array(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(super) fn encode(state: &TrainState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&state.config.hash());
    let json = serde_json::to_string(&state.config).expect("config serializes");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&state.rng.get_seed());
    out.extend_from_slice(&state.rng.get_stream().to_le_bytes());
    out.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
    out.extend_from_slice(&(state.recent_elbo.len() as u32).to_le_bytes());
    for v in &state.recent_elbo {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (_, _, adam) in sets(state) {
        out.extend_from_slice(&adam.t.to_le_bytes());
    }
    let count: usize = sets(state).iter().map(|(_, p, _)| 3 * p.len()).sum();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (prefix, params, adam) in sets(state) {
        for (i, (name, t)) in params.iter().enumerate() {
            put_array(&mut out, &format!("{prefix}/{name}"), t);
            put_array(&mut out, &format!("adam.m/{prefix}/{name}"), &adam.m[i]);
            put_array(&mut out, &format!("adam.v/{prefix}/{name}"), &adam.v[i]);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Writes `state` to `path` and returns the CRC32 stored in the trailer.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<u32> {
    let bytes = encode(state);
    let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(Error::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(Error::io(path))?;
    Ok(crc)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

pub(super) fn decode(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let hash: [u8; 32] = r.array()?;
    let len = r.u32()? as usize;
    let config: TrainConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    if config.hash() != hash {
        return Err(Error::Checkpoint("stored config does not match its hash".into()));
    }
    let mut state = TrainState::new(config)?;
    state.step = r.u64()?;
    let seed: [u8; 32] = r.array()?;
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.array()?);
    state.rng = ChaCha8Rng::from_seed(seed);
    state.rng.set_stream(stream);
    state.rng.set_word_pos(word_pos);
    let recent = r.u32()? as usize;
    state.recent_elbo = (0..recent).map(|_| Ok(f64::from_le_bytes(r.array()?))).collect::<Result<_>>()?;
    state.adam_encoder.t = r.u64()?;
    state.adam_draw.t = r.u64()?;
    state.adam_disc.t = r.u64()?;
    let count = r.u32()? as usize;
    let mut filled = 0;
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?.to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let slot = locate(&mut state, &name).ok_or_else(|| Error::Checkpoint(format!("unknown array {name}")))?;
        if slot.shape() != shape {
            return Err(Error::Checkpoint(format!("array {name} has shape {shape:?}, expected {:?}", slot.shape())));
        }
        *slot = Tensor::from_vec(&shape, data)?;
        filled += 1;
    }
    let expected: usize = sets(&state).iter().map(|(_, p, _)| 3 * p.len()).sum();
    if filled != expected || r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{filled} arrays read, {expected} expected")));
    }
    Ok(state)
}

fn locate<'a>(state: &'a mut TrainState, name: &str) -> Option<&'a mut Tensor<f32>> {
    let (kind, rest) = match name.split_once('/')? {
        (k @ ("adam.m" | "adam.v"), rest) => (k, rest),
        _ => ("param", name),
    };
    let (set, param) = rest.split_once('/')?;
    let (params, adam) = match set {
        "encoder" => (&mut state.encoder.params, &mut state.adam_encoder),
        "draw" => (&mut state.draw.params, &mut state.adam_draw),
        "disc" => (&mut state.disc.params, &mut state.adam_disc),
        _ => return None,
    };
    let i = params.names().iter().position(|n| n == param)?;
    match kind {
        "adam.m" => adam.m.get_mut(i),
        "adam.v" => adam.v.get_mut(i),
        _ => params.tensors_mut().get_mut(i),
    }
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    decode(&std::fs::read(path).map_err(Error::io(path))?)
}

/// Loads a checkpoint written under `expected` (ignoring step budget and
/// checkpoint cadence, which are taken from `expected`).
pub fn load_checkpoint_expecting(path: &Path, expected: &TrainConfig) -> Result<TrainState> {
    let mut state = load_checkpoint(path)?;
    if state.config.hash() != expected.hash() {
        return Err(Error::Checkpoint("config hash mismatch".into()));
    }
    state.config.steps = expected.steps;
    state.config.checkpoint_every = expected.checkpoint_every;
    Ok(state)
}
