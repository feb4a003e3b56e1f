//! Datasets on disk: a record stream (magic `RNDS`, version, record count,
//! then per sample six named f64 tensors in the checkpoint encoding) and a
//! JSON sidecar `<path>.json` holding metadata and world provenance.

use std::path::{Path, PathBuf};

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta, Sample, TrainError, WorldRecord};
use crate::neural::checkpoint::{write_tensor, Reader};
use crate::neural::{NeuralError, GOAL_FEATURES};

pub const DATASET_MAGIC: &[u8; 4] = b"RNDS";
pub const DATASET_VERSION: u32 = 1;

const FIELDS: [&str; 6] = ["rays", "goal", "label", "world", "position", "seq"];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    version: u32,
    samples: u64,
    meta: DatasetMeta,
    worlds: Vec<WorldRecord>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

pub fn records_to_bytes(samples: &[Sample]) -> Vec<u8> {
    let n_rays = samples.first().map_or(0, |s| s.rays.len());
    let mut out = Vec::with_capacity(16 + samples.len() * (n_rays * 8 + 300));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        write_tensor(&mut out, FIELDS[0], &[s.rays.len()], s.rays.iter().map(|&v| v as f64));
        write_tensor(&mut out, FIELDS[1], &[GOAL_FEATURES], s.goal.iter().map(|&v| v as f64));
        write_tensor(&mut out, FIELDS[2], &[1], std::iter::once(s.label as f64));
        write_tensor(&mut out, FIELDS[3], &[1], std::iter::once(s.world as f64));
        write_tensor(&mut out, FIELDS[4], &[3], s.position.iter().copied());
        let seq = s.seq.map_or([-1.0, -1.0], |(q, t)| [q as f64, t as f64]);
        write_tensor(&mut out, FIELDS[5], &[2], seq.into_iter());
    }
    out
}

fn corrupt(e: NeuralError) -> TrainError {
    match e {
        NeuralError::Corrupt(m) => TrainError::Corrupt(m),
        other => TrainError::Neural(other),
    }
}

fn as_f32(v: f64, what: &str) -> Result<f32, TrainError> {
    let f = v as f32;
    if f as f64 != v || !v.is_finite() {
        return Err(TrainError::Corrupt(format!("{what} value {v} is not a finite f32")));
    }
    Ok(f)
}

fn as_u32(v: f64, what: &str) -> Result<u32, TrainError> {
    if !(v >= 0.0 && v <= u32::MAX as f64 && v.fract() == 0.0) {
        return Err(TrainError::Corrupt(format!("{what} value {v} is not an index")));
    }
    Ok(v as u32)
}

pub fn records_from_bytes(bytes: &[u8], n_rays: usize) -> Result<Vec<Sample>, TrainError> {
    let mut r = Reader::new(bytes);
    if r.take(4).map_err(corrupt)? != DATASET_MAGIC {
        return Err(TrainError::Corrupt("bad magic".into()));
    }
    let version = r.u32().map_err(corrupt)?;
    if version != DATASET_VERSION {
        return Err(TrainError::Version {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let count = r.u64().map_err(corrupt)?;
    let mut samples = Vec::with_capacity(count.min(1 << 20) as usize);
    for k in 0..count {
        let mut t: Vec<ArrayD<f64>> = Vec::with_capacity(FIELDS.len());
        for (name, len) in FIELDS.iter().zip([n_rays, GOAL_FEATURES, 1, 1, 3, 2]) {
            let (found, arr) = r.tensor().map_err(corrupt)?;
            if found != *name || arr.shape() != [len] {
                return Err(TrainError::Corrupt(format!(
                    "record {k}: expected tensor {name}[{len}], found {found}{:?}",
                    arr.shape()
                )));
            }
            t.push(arr);
        }
        let rays = t[0].iter().map(|&v| as_f32(v, "ray")).collect::<Result<Vec<_>, _>>()?;
        let mut goal = [0f32; GOAL_FEATURES];
        for (g, &v) in goal.iter_mut().zip(t[1].iter()) {
            *g = as_f32(v, "goal")?;
        }
        let label = as_u32(t[2][[0]], "label")?;
        if label as usize >= n_rays {
            return Err(TrainError::Corrupt(format!("record {k}: label {label} out of range")));
        }
        let position = [t[4][[0]], t[4][[1]], t[4][[2]]];
        if position.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Corrupt(format!("record {k}: non-finite position")));
        }
        let seq = match (t[5][[0]], t[5][[1]]) {
            (a, b) if a == -1.0 && b == -1.0 => None,
            (a, b) => Some((as_u32(a, "sequence")?, as_u32(b, "step")?)),
        };
        samples.push(Sample {
            rays,
            goal,
            label,
            world: as_u32(t[3][[0]], "world")?,
            position,
            seq,
        });
    }
    if !r.at_end() {
        return Err(TrainError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(samples)
}

/// Writes the record stream to `path` and the sidecar next to it.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), TrainError> {
    let path = path.as_ref();
    if ds.samples.iter().any(|s| s.rays.len() != ds.meta.n_rays) {
        return Err(TrainError::Corrupt("sample ray count differs from metadata".into()));
    }
    std::fs::write(path, records_to_bytes(&ds.samples))?;
    let side = Sidecar {
        version: DATASET_VERSION,
        samples: ds.len() as u64,
        meta: ds.meta.clone(),
        worlds: ds.worlds.clone(),
    };
    let text = serde_json::to_string_pretty(&side).map_err(|e| TrainError::Corrupt(e.to_string()))?;
    std::fs::write(sidecar_path(path), text)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, TrainError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(sidecar_path(path))?;
    let side: Sidecar = serde_json::from_str(&text).map_err(|e| TrainError::Corrupt(e.to_string()))?;
    if side.version != DATASET_VERSION {
        return Err(TrainError::Version {
            found: side.version,
            expected: DATASET_VERSION,
        });
    }
    let samples = records_from_bytes(&std::fs::read(path)?, side.meta.n_rays)?;
    if samples.len() as u64 != side.samples {
        return Err(TrainError::Corrupt(format!(
            "sidecar lists {} samples, records hold {}",
            side.samples,
            samples.len()
        )));
    }
    if let Some(s) = samples.iter().find(|s| s.world as usize >= side.worlds.len()) {
        return Err(TrainError::Corrupt(format!("world index {} out of range", s.world)));
    }
    Ok(Dataset {
        meta: side.meta,
        worlds: side.worlds,
        samples,
    })
}
