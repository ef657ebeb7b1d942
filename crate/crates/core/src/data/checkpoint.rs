//! Binary checkpoints: model parameters, optimizer moments, generator states
//! and the run position, preceded by the full config so a checkpoint is
//! self-describing. Fixed-endian encoding keeps files portable.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use indexmap::IndexMap;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::optim::AdamW;
use crate::rng::RngState;

const MAGIC: &[u8; 8] = b"HOICKPT\n";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_toml: String,
    pub params: IndexMap<String, Tensor>,
    pub adam_m: IndexMap<String, Tensor>,
    pub adam_v: IndexMap<String, Tensor>,
    pub adam_step: u64,
    pub rng_data: RngState,
    pub rng_gumbel: RngState,
    /// Next epoch to run.
    pub epoch: u64,
    /// Optimizer steps taken so far.
    pub step: u64,
}

impl Checkpoint {
    /// Snapshots the current training state.
    pub fn capture(
        config_toml: &str,
        store: &ParamStore,
        opt: &AdamW,
        rng_data: RngState,
        rng_gumbel: RngState,
        epoch: u64,
        step: u64,
    ) -> Self {
        Checkpoint {
            config_toml: config_toml.to_string(),
            params: store
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
            adam_m: opt.m.clone(),
            adam_v: opt.v.clone(),
            adam_step: opt.step,
            rng_data,
            rng_gumbel,
            epoch,
            step,
        }
    }

    /// Copies the saved parameters back into a store initialized with the
    /// same architecture. Missing names or shape changes are errors.
    pub fn restore_params(&self, store: &mut ParamStore) -> Result<()> {
        for (name, tensor) in &self.params {
            if !store.contains(name) {
                return Err(Error::Config(format!(
                    "checkpoint parameter {name:?} does not exist in this model"
                )));
            }
            let slot = store.get_mut(name);
            if slot.shape() != tensor.shape() {
                return Err(Error::Config(format!(
                    "checkpoint parameter {name:?} is {:?} but the model wants {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = tensor.clone();
        }
        let missing: Vec<&str> = store
            .iter()
            .map(|(n, _)| n)
            .filter(|n| !self.params.contains_key(*n))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "checkpoint is missing parameters: {missing:?}"
            )));
        }
        Ok(())
    }

    pub fn restore_optimizer(&self, opt: &mut AdamW) {
        opt.m = self.adam_m.clone();
        opt.v = self.adam_v.clone();
        opt.step = self.adam_step;
    }
}

fn write_string<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(s.len() as u64)?;
    w.write_all(s.as_bytes())
}

fn read_string<R: Read>(r: &mut R) -> std::io::Result<String> {
    let len = r.read_u64::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
}

fn write_tensors<W: Write>(w: &mut W, tensors: &IndexMap<String, Tensor>) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(tensors.len() as u64)?;
    for (name, t) in tensors {
        write_string(w, name)?;
        w.write_u64::<LittleEndian>(t.rows as u64)?;
        w.write_u64::<LittleEndian>(t.cols as u64)?;
        for &v in &t.data {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

fn read_tensors<R: Read>(r: &mut R) -> std::io::Result<IndexMap<String, Tensor>> {
    let count = r.read_u64::<LittleEndian>()? as usize;
    let mut out = IndexMap::with_capacity(count);
    for _ in 0..count {
        let name = read_string(r)?;
        let rows = r.read_u64::<LittleEndian>()? as usize;
        let cols = r.read_u64::<LittleEndian>()? as usize;
        if rows == 0 || cols == 0 || rows.saturating_mul(cols) > (1 << 28) {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("tensor {name:?} has implausible shape {rows}x{cols}"),
            ));
        }
        let mut data = vec![0.0; rows * cols];
        for v in data.iter_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
        out.insert(name, Tensor::from_vec(rows, cols, data));
    }
    Ok(out)
}

fn write_rng<W: Write>(w: &mut W, s: &RngState) -> std::io::Result<()> {
    w.write_all(&s.seed)?;
    w.write_u64::<LittleEndian>(s.stream)?;
    w.write_u64::<LittleEndian>((s.word_pos & u64::MAX as u128) as u64)?;
    w.write_u64::<LittleEndian>((s.word_pos >> 64) as u64)
}

fn read_rng<R: Read>(r: &mut R) -> std::io::Result<RngState> {
    let mut seed = [0u8; 32];
    r.read_exact(&mut seed)?;
    let stream = r.read_u64::<LittleEndian>()?;
    let lo = r.read_u64::<LittleEndian>()? as u128;
    let hi = r.read_u64::<LittleEndian>()? as u128;
    Ok(RngState {
        seed,
        stream,
        word_pos: (hi << 64) | lo,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let io_err = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut buf = Vec::new();
    buf.write_all(MAGIC).map_err(io_err)?;
    buf.write_u32::<LittleEndian>(VERSION).map_err(io_err)?;
    write_string(&mut buf, &ckpt.config_toml).map_err(io_err)?;
    write_tensors(&mut buf, &ckpt.params).map_err(io_err)?;
    write_tensors(&mut buf, &ckpt.adam_m).map_err(io_err)?;
    write_tensors(&mut buf, &ckpt.adam_v).map_err(io_err)?;
    buf.write_u64::<LittleEndian>(ckpt.adam_step).map_err(io_err)?;
    write_rng(&mut buf, &ckpt.rng_data).map_err(io_err)?;
    write_rng(&mut buf, &ckpt.rng_gumbel).map_err(io_err)?;
    buf.write_u64::<LittleEndian>(ckpt.epoch).map_err(io_err)?;
    buf.write_u64::<LittleEndian>(ckpt.step).map_err(io_err)?;
    std::fs::write(path, buf).map_err(io_err)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let fail = |m: String| Error::Config(format!("checkpoint {}: {m}", path.display()));
    let mut r = std::io::Cursor::new(&bytes);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| fail(e.to_string()))?;
    if &magic != MAGIC {
        return Err(fail("not a checkpoint file (bad magic)".into()));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|e| fail(e.to_string()))?;
    if version != VERSION {
        return Err(fail(format!(
            "version {version} is not supported (expected {VERSION})"
        )));
    }
    let config_toml = read_string(&mut r).map_err(|e| fail(e.to_string()))?;
    let params = read_tensors(&mut r).map_err(|e| fail(e.to_string()))?;
    let adam_m = read_tensors(&mut r).map_err(|e| fail(e.to_string()))?;
    let adam_v = read_tensors(&mut r).map_err(|e| fail(e.to_string()))?;
    let adam_step = r
        .read_u64::<LittleEndian>()
        .map_err(|e| fail(e.to_string()))?;
    let rng_data = read_rng(&mut r).map_err(|e| fail(e.to_string()))?;
    let rng_gumbel = read_rng(&mut r).map_err(|e| fail(e.to_string()))?;
    let epoch = r
        .read_u64::<LittleEndian>()
        .map_err(|e| fail(e.to_string()))?;
    let step = r
        .read_u64::<LittleEndian>()
        .map_err(|e| fail(e.to_string()))?;
    if r.position() != bytes.len() as u64 {
        return Err(fail(format!(
            "{} trailing bytes",
            bytes.len() as u64 - r.position()
        )));
    }
    Ok(Checkpoint {
        config_toml,
        params,
        adam_m,
        adam_v,
        adam_step,
        rng_data,
        rng_gumbel,
        epoch,
        step,
    })
}
