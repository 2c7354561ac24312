//! Versioned binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic     8 bytes  "TQNCKPT\0"
//! version   u32      = 1
//! params    u32 count, then per tensor:
//!             u32 name length, UTF-8 name, u32 ndim, u64 × ndim dims, f64 × numel data
//! optimizer u8 present flag; if 1: u64 step count, then one f64 array per
//!             param (same order and shapes as params)
//! aux       u32 count, tensors encoded like params
//! metadata  u64 length, UTF-8 bytes (free-form, usually JSON)
//! ```
//!
//! Floats are stored as raw bit patterns, so a save/load round trip is exact.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::{ParamStore, RmsPropState, Tensor};

pub const MAGIC: &[u8; 8] = b"TQNCKPT\0";
pub const VERSION: u32 = 1;

// Guards against absurd allocations from corrupt headers.
const MAX_NAME_LEN: u32 = 4096;
const MAX_NDIM: u32 = 8;
const MAX_NUMEL: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<RmsPropState>,
    /// Extra named tensors (e.g. a target network).
    pub aux: Vec<(String, Tensor)>,
    pub metadata: String,
}

fn named(store: &ParamStore) -> Vec<(String, Tensor)> {
    store
        .iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect()
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, optimizer: Option<&RmsPropState>) -> Self {
        Checkpoint {
            params: named(store),
            optimizer: optimizer.cloned(),
            aux: Vec::new(),
            metadata: String::new(),
        }
    }

    /// Append every tensor of `store` to the aux section under `prefix`.
    pub fn push_aux_store(&mut self, prefix: &str, store: &ParamStore) {
        for (name, t) in named(store) {
            self.aux.push((format!("{prefix}{name}"), t));
        }
    }

    /// Copy parameter values into `store`, checking names and shapes.
    pub fn restore_params(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        restore(&self.params, store, "")
    }

    /// Copy aux tensors stored under `prefix` into `store`.
    pub fn restore_aux_store(
        &self,
        prefix: &str,
        store: &mut ParamStore,
    ) -> Result<(), CheckpointError> {
        let subset: Vec<(String, Tensor)> = self
            .aux
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(n, t)| (n[prefix.len()..].to_string(), t.clone()))
            .collect();
        restore(&subset, store, prefix)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        write_tensors(w, &self.params)?;
        match &self.optimizer {
            None => w.write_u8(0)?,
            Some(state) => {
                if state.square_avg.len() != self.params.len() {
                    return Err(CheckpointError::Mismatch(format!(
                        "optimizer has {} accumulators for {} params",
                        state.square_avg.len(),
                        self.params.len()
                    )));
                }
                w.write_u8(1)?;
                w.write_u64::<LittleEndian>(state.steps)?;
                for (v, (name, p)) in state.square_avg.iter().zip(&self.params) {
                    if v.shape() != p.shape() {
                        return Err(CheckpointError::Mismatch(format!(
                            "optimizer shape for {name}"
                        )));
                    }
                    for x in v.data() {
                        w.write_f64::<LittleEndian>(*x)?;
                    }
                }
            }
        }
        write_tensors(w, &self.aux)?;
        w.write_u64::<LittleEndian>(self.metadata.len() as u64)?;
        w.write_all(self.metadata.as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let params = read_tensors(r)?;
        let optimizer = match r.read_u8()? {
            0 => None,
            1 => {
                let steps = r.read_u64::<LittleEndian>()?;
                let mut square_avg = Vec::with_capacity(params.len());
                for (_, p) in &params {
                    let mut data = vec![0.0; p.numel()];
                    r.read_f64_into::<LittleEndian>(&mut data)?;
                    square_avg.push(Tensor::new(p.shape().to_vec(), data));
                }
                Some(RmsPropState { square_avg, steps })
            }
            flag => return Err(CheckpointError::Malformed(format!("optimizer flag {flag}"))),
        };
        let aux = read_tensors(r)?;
        let len = r.read_u64::<LittleEndian>()?;
        let mut meta = Vec::new();
        r.take(len).read_to_end(&mut meta)?;
        if meta.len() as u64 != len {
            return Err(CheckpointError::Malformed("truncated metadata".into()));
        }
        let metadata = String::from_utf8(meta)
            .map_err(|_| CheckpointError::Malformed("metadata is not UTF-8".into()))?;
        Ok(Checkpoint {
            params,
            optimizer,
            aux,
            metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        Checkpoint::read_from(&mut r)
    }
}

fn restore(
    entries: &[(String, Tensor)],
    store: &mut ParamStore,
    prefix: &str,
) -> Result<(), CheckpointError> {
    if entries.len() != store.len() {
        return Err(CheckpointError::Mismatch(format!(
            "{} tensors under '{prefix}' but the model has {} parameters",
            entries.len(),
            store.len()
        )));
    }
    for ((name, t), id) in entries.iter().zip(store.ids().collect::<Vec<_>>()) {
        if store.name(id) != name {
            return Err(CheckpointError::Mismatch(format!(
                "expected parameter {} but found {name}",
                store.name(id)
            )));
        }
        if store.value(id).shape() != t.shape() {
            return Err(CheckpointError::Mismatch(format!(
                "{name}: shape {:?} vs model {:?}",
                t.shape(),
                store.value(id).shape()
            )));
        }
        store.value_mut(id).data_mut().copy_from_slice(t.data());
    }
    Ok(())
}

fn write_tensors<W: Write>(w: &mut W, tensors: &[(String, Tensor)]) -> io::Result<()> {
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for (name, t) in tensors {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(t.ndim() as u32)?;
        for d in t.shape() {
            w.write_u64::<LittleEndian>(*d as u64)?;
        }
        for x in t.data() {
            w.write_f64::<LittleEndian>(*x)?;
        }
    }
    Ok(())
}

fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let count = r.read_u32::<LittleEndian>()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>()?;
        if len > MAX_NAME_LEN {
            return Err(CheckpointError::Malformed(format!("name length {len}")));
        }
        let mut name = vec![0u8; len as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
        let ndim = r.read_u32::<LittleEndian>()?;
        if ndim > MAX_NDIM {
            return Err(CheckpointError::Malformed(format!("{name}: ndim {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim as usize);
        let mut numel: u64 = 1;
        for _ in 0..ndim {
            let d = r.read_u64::<LittleEndian>()?;
            numel = numel.saturating_mul(d);
            shape.push(d as usize);
        }
        if numel > MAX_NUMEL {
            return Err(CheckpointError::Malformed(format!(
                "{name}: {numel} elements"
            )));
        }
        let mut data = vec![0.0; numel as usize];
        r.read_f64_into::<LittleEndian>(&mut data)?;
        out.push((name, Tensor::new(shape, data)));
    }
    Ok(out)
}
