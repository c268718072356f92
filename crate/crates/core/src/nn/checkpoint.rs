//! Binary checkpoints.
//!
//! Layout, all integers little-endian: the magic `SPSTCKPT`, a `u32` version, the model
//! config as `key = value` text and the graph text (each a `u64` byte length followed by
//! UTF-8), a `u64` block count, then per block a `u32` name length, the name, a `u32`
//! rank, `u64` dimensions and the `f64` values in row-major order. Running statistics
//! are stored as blocks named `<layer>.running_mean` and `<layer>.running_var`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, ArrayD, IxDyn};

use super::model::{Model, ModelConfig};
use crate::graph::GraphSpec;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SPSTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn write_text(out: &mut impl Write, text: &str) -> std::io::Result<()> {
    out.write_all(&(text.len() as u64).to_le_bytes())?;
    out.write_all(text.as_bytes())
}

fn write_block(out: &mut impl Write, name: &str, value: &ArrayD<f64>) -> std::io::Result<()> {
    out.write_all(&(name.len() as u32).to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    out.write_all(&(value.ndim() as u32).to_le_bytes())?;
    for &d in value.shape() {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in value.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint(model: &Model, mut out: impl Write) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    write_text(&mut out, &model.config().to_kv())?;
    write_text(&mut out, &model.graph().to_text())?;
    let params = model.params();
    let count = params.len() + 2 * model.running_stats().len();
    out.write_all(&(count as u64).to_le_bytes())?;
    for (name, value) in params.names().iter().zip(params.values()) {
        write_block(&mut out, name, value)?;
    }
    for (name, stats) in model.running_names().iter().zip(model.running_stats()) {
        write_block(&mut out, &format!("{name}.running_mean"), &stats.mean.clone().into_dyn())?;
        write_block(&mut out, &format!("{name}.running_var"), &stats.var.clone().into_dyn())?;
    }
    out.flush()
}

struct Reader<'a, R> {
    input: R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn bad(&self, reason: impl Into<String>) -> Error {
        Error::BadBinary { path: self.path.to_path_buf(), reason: reason.into() }
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.input.read_exact(&mut buf).map_err(|_| self.bad("truncated checkpoint"))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, limit: u64) -> Result<usize> {
        let n = self.u64()?;
        if n > limit {
            return Err(self.bad(format!("length {n} exceeds limit {limit}")));
        }
        Ok(n as usize)
    }

    fn text(&mut self) -> Result<String> {
        let n = self.len(1 << 20)?;
        String::from_utf8(self.bytes(n)?).map_err(|_| self.bad("text section is not UTF-8"))
    }

    fn block(&mut self) -> Result<(String, ArrayD<f64>)> {
        let name_len = self.u32()? as usize;
        if name_len > 4096 {
            return Err(self.bad("block name too long"));
        }
        let name = String::from_utf8(self.bytes(name_len)?).map_err(|_| self.bad("block name is not UTF-8"))?;
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(self.bad(format!("block `{name}` has rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.len(1 << 32)).collect::<Result<Vec<_>>>()?;
        let total = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let total = total.filter(|&t| t <= 1 << 28).ok_or_else(|| self.bad(format!("block `{name}` too large")))?;
        let raw = self.bytes(total * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let value = ArrayD::from_shape_vec(IxDyn(&shape), data).expect("length matches shape");
        Ok((name, value))
    }
}

pub fn read_checkpoint(input: impl Read, path: &Path) -> Result<Model> {
    let mut r = Reader { input, path };
    if r.bytes(8)? != MAGIC {
        return Err(r.bad("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.bad(format!("unsupported checkpoint version {version}")));
    }
    let config = ModelConfig::from_kv(&r.text()?)?;
    let graph = GraphSpec::from_text(&r.text()?)?;
    let mut model = Model::new(config, graph, 0)?;
    let count = r.len(1 << 20)?;
    let mut blocks = std::collections::HashMap::with_capacity(count);
    for _ in 0..count {
        let (name, value) = r.block()?;
        if blocks.insert(name.clone(), value).is_some() {
            return Err(r.bad(format!("duplicate block `{name}`")));
        }
    }
    let mut take = |name: &str, shape: &[usize]| -> Result<ArrayD<f64>> {
        let value = blocks.remove(name).ok_or_else(|| r.bad(format!("missing block `{name}`")))?;
        if value.shape() != shape {
            return Err(r.bad(format!("block `{name}` has shape {:?}, expected {shape:?}", value.shape())));
        }
        Ok(value)
    };
    let names = model.params().names().to_vec();
    for (name, slot) in names.iter().zip(model.params_mut().values_mut()) {
        *slot = take(name, &slot.shape().to_vec())?;
    }
    let running_names = model.running_names().to_vec();
    for (name, stats) in running_names.iter().zip(model.running_stats_mut()) {
        let c = stats.mean.len();
        let as1 = |a: ArrayD<f64>| Array1::from(a.into_raw_vec_and_offset().0);
        stats.mean = as1(take(&format!("{name}.running_mean"), &[c])?);
        stats.var = as1(take(&format!("{name}.running_var"), &[c])?);
    }
    if let Some(extra) = blocks.keys().next() {
        return Err(r.bad(format!("unexpected block `{extra}`")));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file), path)
}
