//! Binary dataset container plus JSON manifest.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   4 bytes  "GMWD"
//! version u32      1
//! w       u32
//! n       u32      states per row
//! counts  3 x u64  train / val / test sample counts
//! samples ...      meta u64, mask n bytes, inputs w*n f64, target w*n f64
//! digest  32 bytes SHA-256 of everything above
//! ```

use super::{DatasetError, DatasetSplit, WindowSample};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"GMWD";
const VERSION: u32 = 1;

/// Sidecar metadata describing how a dataset was produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub w: usize,
    pub n_states: usize,
    pub awgn_sigma: f64,
    pub counts: (usize, usize, usize),
    pub fractions: (f64, f64, f64),
    pub input_shape: (usize, usize),
    pub attack: serde_json::Value,
    pub skipped_hours: Vec<usize>,
}

pub fn save_dataset(path: &Path, split: &DatasetSplit) -> Result<(), DatasetError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(VERSION)?;
    buf.write_u32::<LittleEndian>(split.w() as u32)?;
    buf.write_u32::<LittleEndian>(split.n_states() as u32)?;
    buf.write_u64::<LittleEndian>(split.train.len() as u64)?;
    buf.write_u64::<LittleEndian>(split.val.len() as u64)?;
    buf.write_u64::<LittleEndian>(split.test.len() as u64)?;
    for sample in split.train.iter().chain(&split.val).chain(&split.test) {
        write_sample(&mut buf, sample)?;
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    std::fs::write(path, buf)?;
    Ok(())
}

fn write_sample(buf: &mut Vec<u8>, sample: &WindowSample) -> Result<(), DatasetError> {
    buf.write_u64::<LittleEndian>(sample.meta as u64)?;
    for &m in &sample.attack_mask {
        buf.push(m as u8);
    }
    for &v in &sample.inputs {
        buf.write_f64::<LittleEndian>(v)?;
    }
    for &v in &sample.target {
        buf.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<DatasetSplit, DatasetError> {
    let raw = std::fs::read(path)?;
    if raw.len() < 32 {
        return Err(DatasetError::Corrupt("file shorter than its digest".into()));
    }
    let (body, digest) = raw.split_at(raw.len() - 32);
    let expected = Sha256::digest(body);
    if digest != expected.as_slice() {
        return Err(DatasetError::Corrupt("checksum mismatch".into()));
    }
    let mut rd = body;
    let mut magic = [0u8; 4];
    rd.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DatasetError::Corrupt("bad magic".into()));
    }
    let version = rd.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(DatasetError::Version {
            expected: VERSION,
            got: version,
        });
    }
    let w = rd.read_u32::<LittleEndian>()? as usize;
    let n = rd.read_u32::<LittleEndian>()? as usize;
    let n_train = rd.read_u64::<LittleEndian>()? as usize;
    let n_val = rd.read_u64::<LittleEndian>()? as usize;
    let n_test = rd.read_u64::<LittleEndian>()? as usize;
    let mut read_block = |count: usize| -> Result<Vec<WindowSample>, DatasetError> {
        (0..count).map(|_| read_sample(&mut rd, w, n)).collect()
    };
    let train = read_block(n_train)?;
    let val = read_block(n_val)?;
    let test = read_block(n_test)?;
    let total = (n_train + n_val + n_test) as f64;
    Ok(DatasetSplit {
        fractions: (
            n_train as f64 / total,
            n_val as f64 / total,
            n_test as f64 / total,
        ),
        train,
        val,
        test,
    })
}

fn read_sample(rd: &mut &[u8], w: usize, n: usize) -> Result<WindowSample, DatasetError> {
    let meta = rd.read_u64::<LittleEndian>()? as usize;
    let mut mask = vec![0u8; n];
    rd.read_exact(&mut mask)?;
    let mut inputs = vec![0.0; w * n];
    rd.read_f64_into::<LittleEndian>(&mut inputs)?;
    let mut target = vec![0.0; w * n];
    rd.read_f64_into::<LittleEndian>(&mut target)?;
    Ok(WindowSample {
        inputs,
        target,
        attack_mask: mask.into_iter().map(|b| b != 0).collect(),
        meta,
    })
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<(), DatasetError> {
    let mut file = std::fs::File::create(path)?;
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| DatasetError::Corrupt(e.to_string()))?;
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Corrupt(e.to_string()))
}
