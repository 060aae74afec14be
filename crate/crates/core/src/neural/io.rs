//! Model weight file: little-endian binary with a dimension header, raw
//! row-major tensors, and a trailing SHA-256 digest.
//!
//! ```text
//! magic      4 bytes  "GMDA"
//! version    u32      1
//! w          u32
//! n_states   u32
//! enc1/enc2/dec1 units  3 x u32
//! activation u8       0 = relu, 1 = tanh
//! normalizer n f64 means, n f64 stds
//! tensors    row-major f64, fixed order (dims follow from the header)
//! digest     32 bytes SHA-256 of everything above
//! ```

use super::lstm::CellActivation;
use super::{DaeModel, LayerSizes, NeuralError};
use crate::dataset::Normalizer;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};
use std::io::Read;
use std::path::Path;

const MAGIC: &[u8; 4] = b"GMDA";
const VERSION: u32 = 1;

pub fn save_model(path: &Path, model: &DaeModel) -> Result<(), NeuralError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(VERSION)?;
    buf.write_u32::<LittleEndian>(model.w as u32)?;
    buf.write_u32::<LittleEndian>(model.n_states() as u32)?;
    let sizes = model.sizes();
    buf.write_u32::<LittleEndian>(sizes.enc1 as u32)?;
    buf.write_u32::<LittleEndian>(sizes.enc2 as u32)?;
    buf.write_u32::<LittleEndian>(sizes.dec1 as u32)?;
    buf.push(match model.activation() {
        CellActivation::Relu => 0,
        CellActivation::Tanh => 1,
    });
    for &m in &model.normalizer.mean {
        buf.write_f64::<LittleEndian>(m)?;
    }
    for &s in &model.normalizer.std {
        buf.write_f64::<LittleEndian>(s)?;
    }
    for tensor in model.tensors() {
        // Row-major for a stable on-disk layout.
        for r in 0..tensor.nrows() {
            for c in 0..tensor.ncols() {
                buf.write_f64::<LittleEndian>(tensor[(r, c)])?;
            }
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<DaeModel, NeuralError> {
    let raw = std::fs::read(path)?;
    if raw.len() < 32 {
        return Err(NeuralError::Corrupt("file shorter than its digest".into()));
    }
    let (body, digest) = raw.split_at(raw.len() - 32);
    if digest != Sha256::digest(body).as_slice() {
        return Err(NeuralError::Corrupt("checksum mismatch".into()));
    }
    let mut rd = body;
    let mut magic = [0u8; 4];
    rd.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NeuralError::Corrupt("bad magic".into()));
    }
    let version = rd.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(NeuralError::Version {
            expected: VERSION,
            got: version,
        });
    }
    let w = rd.read_u32::<LittleEndian>()? as usize;
    let n = rd.read_u32::<LittleEndian>()? as usize;
    let sizes = LayerSizes {
        enc1: rd.read_u32::<LittleEndian>()? as usize,
        enc2: rd.read_u32::<LittleEndian>()? as usize,
        dec1: rd.read_u32::<LittleEndian>()? as usize,
    };
    let mut act_byte = [0u8; 1];
    rd.read_exact(&mut act_byte)?;
    let activation = match act_byte[0] {
        0 => CellActivation::Relu,
        1 => CellActivation::Tanh,
        other => return Err(NeuralError::Corrupt(format!("unknown activation {other}"))),
    };
    let mut mean = vec![0.0; n];
    rd.read_f64_into::<LittleEndian>(&mut mean)?;
    let mut std = vec![0.0; n];
    rd.read_f64_into::<LittleEndian>(&mut std)?;
    let normalizer = Normalizer { mean, std };

    let mut model = DaeModel::new(w, n, sizes, activation, normalizer, 0);
    for tensor in model.tensors_mut() {
        for r in 0..tensor.nrows() {
            for c in 0..tensor.ncols() {
                tensor[(r, c)] = rd.read_f64::<LittleEndian>()?;
            }
        }
    }
    if !rd.is_empty() {
        return Err(NeuralError::Corrupt(format!(
            "{} trailing bytes after tensors",
            rd.len()
        )));
    }
    Ok(model)
}
