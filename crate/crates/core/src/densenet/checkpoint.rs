//! Binary checkpoint format.
//!
//! ```text
//! "DACN" | u32 version | u32 len | config JSON
//! u32 count | count x tensor      (trainable parameters)
//! u32 count | count x tensor      (buffers: running stats, caller extras)
//! tensor = u32 name_len | name | u32 ndims | ndims x u64 | f64 LE values
//! ```
//! All integers are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{DenseNet, DenseNetConfig};
use crate::error::{Error, Result};
use crate::tensor::RunningStats;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DACN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A named tensor stored alongside the network, e.g. input normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: DenseNet,
    pub extras: Vec<NamedTensor>,
}

fn write_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn stats_tensors(net: &DenseNet) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    for (name, s) in net.running_stats() {
        let c = s.mean.len();
        out.push(NamedTensor { name: format!("{name}.norm.running_mean"), dims: vec![c], values: s.mean });
        out.push(NamedTensor { name: format!("{name}.norm.running_var"), dims: vec![c], values: s.var });
        out.push(NamedTensor { name: format!("{name}.norm.updates"), dims: vec![1], values: vec![s.updates as f64] });
    }
    out
}

pub fn encode_checkpoint(net: &DenseNet, extras: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let json = net.config().to_canonical_json();
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    let params = net.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in &params {
        write_tensor(&mut out, &p.name, &p.dims, p.values);
    }
    let buffers = stats_tensors(net);
    out.extend_from_slice(&((buffers.len() + extras.len()) as u32).to_le_bytes());
    for b in buffers.iter().chain(extras) {
        write_tensor(&mut out, &b.name, &b.dims, &b.values);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!(
                "checkpoint truncated reading {what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<NamedTensor> {
        let len = self.u32("tensor name length")? as usize;
        let name = String::from_utf8(self.take(len, "tensor name")?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let ndims = self.u32("dim count")? as usize;
        let mut dims = Vec::with_capacity(ndims.min(8));
        for _ in 0..ndims {
            dims.push(self.u64("dims")? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| Error::Format(format!("tensor {name} dims {dims:?} overflow")))?;
        let raw = self.take(count, &name)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(NamedTensor { name, dims, values })
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a DACN checkpoint (bad magic)".into()));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format version {version} is not supported; this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let len = cur.u32("config length")? as usize;
    let config: DenseNetConfig = serde_json::from_slice(cur.take(len, "config")?)?;
    let mut network = DenseNet::new(config, 0)?;

    let count = cur.u32("parameter count")? as usize;
    let expected: Vec<(String, Vec<usize>)> = network.params().into_iter().map(|p| (p.name, p.dims)).collect();
    if count != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} parameter tensors, its config implies {}",
            expected.len()
        )));
    }
    let mut loaded = Vec::with_capacity(count);
    for (name, dims) in &expected {
        let t = cur.tensor()?;
        if &t.name != name || &t.dims != dims {
            return Err(Error::Format(format!("expected parameter {name} {dims:?}, found {} {:?}", t.name, t.dims)));
        }
        loaded.push(t.values);
    }
    network.visit_params_mut(|i, v| v.copy_from_slice(&loaded[i]));

    let nbuf = cur.u32("buffer count")? as usize;
    let mut buffers = Vec::with_capacity(nbuf.min(4096));
    for _ in 0..nbuf {
        buffers.push(cur.tensor()?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - cur.pos)));
    }
    let mut take = |name: &str, len: usize| -> Result<Vec<f64>> {
        let i = buffers
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing buffer {name}")))?;
        let b = buffers.remove(i);
        if b.values.len() != len {
            return Err(Error::Format(format!("buffer {name} has {} values, expected {len}", b.values.len())));
        }
        Ok(b.values)
    };
    let mut stats = Vec::new();
    for (name, s) in network.running_stats() {
        let c = s.mean.len();
        let mean = take(&format!("{name}.norm.running_mean"), c)?;
        let var = take(&format!("{name}.norm.running_var"), c)?;
        let updates = take(&format!("{name}.norm.updates"), 1)?[0] as u64;
        stats.push(RunningStats { mean, var, updates });
    }
    network.set_running_stats(stats)?;
    Ok(Checkpoint { network, extras: buffers })
}

pub fn write_checkpoint(mut w: impl Write, net: &DenseNet, extras: &[NamedTensor]) -> Result<()> {
    w.write_all(&encode_checkpoint(net, extras))?;
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

pub fn save_checkpoint(path: &Path, net: &DenseNet, extras: &[NamedTensor]) -> Result<()> {
    fs::write(path, encode_checkpoint(net, extras))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
