//! `HZCK` checkpoint files.
//!
//! Layout (little-endian): magic, `u32` format version, `u32` length plus JSON
//! run settings, then per network in [`NetId::ALL`] order its parameter
//! tensors, then the six Adam states, both latent buffers, the iteration
//! counter, the noise stream position and the loss history. A SHA-256 of
//! everything before it closes the file.

use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{write_atomic, LatentBuffer, RunSettings, TrainState};
use crate::autodiff::{AdamState, Tensor};
use crate::losses::LossReport;
use crate::nets::{HazeModel, ModelError, NetId, NetParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HZCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: checkpoint format version {found}, this build reads version {expected}")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: checksum mismatch, file is corrupt")]
    Checksum { path: PathBuf },
    #[error("{path}: truncated checkpoint")]
    Truncated { path: PathBuf },
    #[error("{path}: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Model { path: PathBuf, source: ModelError },
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn len(&mut self, n: usize) {
        self.u64(n as u64);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Truncated {
            path: self.path.to_path_buf(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        let n = self.u64()?;
        // A length can never exceed the bytes left to hold it.
        if n > self.bytes.len() as u64 {
            return Err(self.malformed(format!("implausible length {n}")));
        }
        Ok(n as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.malformed("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn malformed(&self, detail: String) -> CheckpointError {
        CheckpointError::Malformed {
            path: self.path.to_path_buf(),
            detail,
        }
    }
}

/// Serializes `state` to the `HZCK` byte layout.
pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    let json = serde_json::to_vec(&state.settings).expect("settings serialize");
    w.len(json.len());
    w.0.extend_from_slice(&json);

    for id in NetId::ALL {
        let net = state.model.net(id);
        w.len(net.tensors.len());
        for t in &net.tensors {
            w.len(t.shape().len());
            for &d in t.shape() {
                w.len(d);
            }
            w.f64s(t.data());
        }
    }
    for adam in &state.adam {
        w.u64(adam.t);
        for (m, v) in adam.m.iter().zip(&adam.v) {
            w.f64s(m);
            w.f64s(v);
        }
    }
    for b in &state.buffers {
        w.len(b.len());
        for e in b.entries() {
            w.f64s(e);
        }
    }
    w.u64(state.iteration);
    w.0.extend_from_slice(&state.rng.get_seed());
    w.u64(state.rng.get_stream());
    w.0.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
    w.len(state.history.len());
    for r in &state.history {
        w.u64(r.iteration);
        w.f64s(&r.terms());
        w.f64s(&[r.total]);
    }
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

/// Parses bytes produced by [`encode_checkpoint`]; `path` only labels errors.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<TrainState, CheckpointError> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(CheckpointError::BadMagic { path: path.to_path_buf() });
    }
    let found = r.u32()?;
    if found != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            path: path.to_path_buf(),
            found,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < 8 + DIGEST_LEN {
        return Err(CheckpointError::Truncated { path: path.to_path_buf() });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Checksum { path: path.to_path_buf() });
    }
    let mut r = Reader { bytes: body, pos: 8, path };

    let json_len = r.len()?;
    let settings: RunSettings =
        serde_json::from_slice(r.take(json_len)?).map_err(|e| r.malformed(format!("settings: {e}")))?;
    let model_err = |source| CheckpointError::Model {
        path: path.to_path_buf(),
        source,
    };
    let archs = [
        settings.model.encoder(),
        settings.model.encoder(),
        settings.model.generator(),
        settings.model.generator(),
        settings.model.discriminator(),
        settings.model.discriminator(),
    ];

    let mut nets = Vec::with_capacity(6);
    for arch in archs {
        let arch = arch.map_err(model_err)?;
        let count = r.len()?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let ndim = r.len()?;
            let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| r.malformed("tensor size overflow".into()))?;
            let data = r.f64s(n)?;
            tensors.push(Tensor::new(shape, data).map_err(|e| r.malformed(e.to_string()))?);
        }
        nets.push(NetParams::from_tensors(arch, tensors).map_err(model_err)?);
    }
    let nets: [NetParams; 6] = nets.try_into().expect("six networks");

    let mut adam = Vec::with_capacity(6);
    for net in &nets {
        let mut state = AdamState::new(settings.adam, &net.tensors);
        state.t = r.u64()?;
        for (i, t) in net.tensors.iter().enumerate() {
            state.m[i] = r.f64s(t.len())?;
            state.v[i] = r.f64s(t.len())?;
        }
        adam.push(state);
    }

    let l = settings.model.latent_dim;
    let cap = settings.buffer_capacity;
    let mut buffers = Vec::with_capacity(2);
    for _ in 0..2 {
        let n = r.len()?;
        if n > cap {
            return Err(r.malformed(format!("latent buffer holds {n} entries, capacity {cap}")));
        }
        let entries = (0..n).map(|_| r.f64s(l)).collect::<Result<Vec<_>, _>>()?;
        buffers.push(LatentBuffer::from_entries(cap, l, entries));
    }
    let buffers: [LatentBuffer; 2] = buffers.try_into().expect("two buffers");

    let iteration = r.u64()?;
    let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let count = r.len()?;
    let mut history = Vec::with_capacity(count);
    for _ in 0..count {
        let it = r.u64()?;
        let v = r.f64s(7)?;
        history.push(LossReport {
            iteration: it,
            vae_i: v[0],
            vae_j: v[1],
            gan_i: v[2],
            gan_j: v[3],
            cc_i: v[4],
            cc_j: v[5],
            total: v[6],
        });
    }
    if r.pos != body.len() {
        return Err(r.malformed(format!("{} trailing bytes", body.len() - r.pos)));
    }
    if history.len() as u64 != iteration {
        return Err(r.malformed(format!("{} history rows for iteration {iteration}", history.len())));
    }
    Ok(TrainState {
        model: HazeModel {
            config: settings.model.clone(),
            nets,
        },
        adam,
        buffers,
        iteration,
        rng,
        history,
        settings,
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<(), CheckpointError> {
    write_atomic(path, &encode_checkpoint(state)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes, path)
}
