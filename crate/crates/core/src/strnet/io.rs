//! Weights file: `STRN1\n`, a little-endian u32 header length, a JSON header
//! (configuration echo plus tensor names, shapes and dtype), then raw
//! little-endian f32 buffers in declared order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NamedTensor, Network, NetworkConfig, Result, StrnetError, Weights};
use crate::tensor::{Scalar, Tensor};

pub const WEIGHTS_MAGIC: &[u8; 6] = b"STRN1\n";
const DTYPE: &str = "f32le";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    tensors: Vec<TensorEntry>,
}

/// Serializes a network; values are stored as f32.
pub fn write_weights<T: Scalar>(net: &Network<T>) -> Result<Vec<u8>> {
    let header = Header {
        config: net.config().clone(),
        tensors: net
            .weights()
            .entries
            .iter()
            .map(|e| TensorEntry {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
                dtype: DTYPE.into(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| StrnetError::Header(e.to_string()))?;
    let header_len = u32::try_from(header.len()).map_err(|_| StrnetError::Header("header too large".into()))?;
    let mut out = Vec::with_capacity(WEIGHTS_MAGIC.len() + 4 + header.len() + 4 * net.weights().parameter_count());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    for t in net.weights().tensors() {
        for &v in t.data() {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_weights(bytes: &[u8]) -> Result<Network<f32>> {
    let rest = bytes.strip_prefix(WEIGHTS_MAGIC.as_slice()).ok_or(StrnetError::BadMagic)?;
    let (len, rest) = rest
        .split_first_chunk::<4>()
        .ok_or_else(|| StrnetError::Header("missing header length".into()))?;
    let header_len = u32::from_le_bytes(*len) as usize;
    if rest.len() < header_len {
        return Err(StrnetError::Header(format!(
            "header length {header_len} exceeds remaining {} bytes",
            rest.len()
        )));
    }
    let (header, payload) = rest.split_at(header_len);
    let header: Header = serde_json::from_slice(header).map_err(|e| StrnetError::Header(e.to_string()))?;

    let mut expected = 0usize;
    for t in &header.tensors {
        if t.dtype != DTYPE {
            return Err(StrnetError::Header(format!("unsupported dtype {:?} for {}", t.dtype, t.name)));
        }
        expected += 4 * t.shape.iter().product::<usize>();
    }
    if expected != payload.len() {
        return Err(StrnetError::LengthMismatch {
            expected,
            actual: payload.len(),
        });
    }

    let mut entries = Vec::with_capacity(header.tensors.len());
    let mut offset = 0;
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        let data = payload[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        offset += 4 * n;
        entries.push(NamedTensor {
            tensor: Tensor::from_vec(&t.shape, data)?,
            name: t.name,
        });
    }
    Network::from_parts(header.config, Weights { entries })
}

/// Writes via a sibling temporary file and rename.
pub fn save_weights<T: Scalar>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_weights(net)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Network<f32>> {
    read_weights(&fs::read(path)?)
}
