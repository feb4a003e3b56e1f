//! `RNCK` checkpoints: magic, version, length-prefixed JSON config block,
//! then named f64 tensors (row-major), all little-endian.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{Network, NetworkConfig, NetworkParams, NeuralError};
use crate::Real;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    network: NetworkConfig,
    #[serde(default)]
    meta: serde_json::Value,
}

pub fn to_bytes<T: Real>(net: &Network<T>, meta: &serde_json::Value) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        network: net.config.clone(),
        meta: meta.clone(),
    })
    .expect("config serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let tensors = net.params.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, _, t) in tensors {
        write_tensor(&mut out, &name, t.shape(), t.iter().map(|v| v.as_f64()));
    }
    out
}

/// Appends one named tensor: name length, name, rank, u64 dims, f64 data.
pub(crate) fn write_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: impl Iterator<Item = f64>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) struct Reader<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], NeuralError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| NeuralError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32, NeuralError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, NeuralError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads one tensor written by [`write_tensor`].
    pub fn tensor(&mut self) -> Result<(String, ArrayD<f64>), NeuralError> {
        let nlen = self.u32()? as usize;
        let name = String::from_utf8(self.take(nlen)?.to_vec()).map_err(|e| NeuralError::Corrupt(e.to_string()))?;
        let ndim = self.u32()? as usize;
        if ndim > 4 {
            return Err(NeuralError::Corrupt(format!("tensor {name} has {ndim} dimensions")));
        }
        let dims = (0..ndim).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| NeuralError::Corrupt(format!("tensor {name} is too large")))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| NeuralError::Corrupt("size overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| NeuralError::Corrupt(e.to_string()))?;
        Ok((name, arr))
    }
}

/// Parses a checkpoint; the network is only built once every tensor has
/// been read and shape-checked.
pub fn from_bytes(bytes: &[u8]) -> Result<(Network<f64>, serde_json::Value), NeuralError> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(NeuralError::Corrupt("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NeuralError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| NeuralError::Corrupt(e.to_string()))?;
    header.network.validate()?;
    let count = r.u32()? as usize;
    let mut found: HashMap<String, ArrayD<f64>> = HashMap::new();
    for _ in 0..count {
        let (name, arr) = r.tensor()?;
        if found.insert(name.clone(), arr).is_some() {
            return Err(NeuralError::Corrupt(format!("duplicate tensor {name}")));
        }
    }
    if !r.at_end() {
        return Err(NeuralError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut params = NetworkParams::<f64>::zeros(&header.network);
    let expected = params.tensors().len();
    if found.len() != expected {
        return Err(NeuralError::Corrupt(format!("expected {expected} tensors, found {}", found.len())));
    }
    for (name, _, mut t) in params.tensors_mut() {
        let src = found
            .get(&name)
            .ok_or_else(|| NeuralError::Corrupt(format!("missing tensor {name}")))?;
        if src.shape() != t.shape() {
            return Err(NeuralError::Shape {
                name,
                expected: t.shape().to_vec(),
                found: src.shape().to_vec(),
            });
        }
        t.assign(src);
    }
    if !params.is_finite() {
        return Err(NeuralError::Corrupt("non-finite parameter".into()));
    }
    Ok((Network::new(header.network, params)?, header.meta))
}

pub fn save_params<T: Real>(net: &Network<T>, meta: &serde_json::Value, path: impl AsRef<Path>) -> Result<(), NeuralError> {
    std::fs::write(path, to_bytes(net, meta))?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<(Network<f64>, serde_json::Value), NeuralError> {
    from_bytes(&std::fs::read(path)?)
}

/// [`load_params`] that also requires the stored architecture to equal
/// `config`.
pub fn load_params_expecting(
    path: impl AsRef<Path>,
    config: &NetworkConfig,
) -> Result<(Network<f64>, serde_json::Value), NeuralError> {
    let (net, meta) = load_params(path)?;
    let want = NetworkParams::<f64>::zeros(config);
    for ((na, _, ta), (_, _, tb)) in want.tensors().iter().zip(net.params.tensors()) {
        if ta.shape() != tb.shape() {
            return Err(NeuralError::Shape {
                name: na.clone(),
                expected: ta.shape().to_vec(),
                found: tb.shape().to_vec(),
            });
        }
    }
    if net.config != *config {
        return Err(NeuralError::Config(format!(
            "checkpoint architecture {:?} differs from the requested one",
            net.config
        )));
    }
    Ok((net, meta))
}
