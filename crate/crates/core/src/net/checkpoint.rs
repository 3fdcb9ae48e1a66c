//! Binary checkpoint files.
//!
//! Layout: the 8 magic bytes `FCNSCKPT`, a little-endian `u32` header length,
//! a UTF-8 JSON header, then the tensors as raw little-endian `f32`. Each
//! header entry gives `shape`, `dtype` (always `"f32"`), and the byte `offset`
//! and `length` of the tensor within the data section.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::NetConfig;
use super::params::ParameterSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FCNSCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub net_config: NetConfig,
    pub params: BTreeMap<String, TensorEntry>,
}

pub fn encode_checkpoint(params: &ParameterSet) -> Result<Vec<u8>> {
    let mut entries = BTreeMap::new();
    let mut data = Vec::new();
    for (name, t) in params.iter() {
        let offset = data.len() as u64;
        for v in t.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
        entries.insert(
            name.clone(),
            TensorEntry {
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset,
                length: data.len() as u64 - offset,
            },
        );
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        net_config: params.config().clone(),
        params: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("header too large".into()))?;
    let mut out = Vec::with_capacity(12 + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParameterSet, NetConfig)> {
    if bytes.len() < 12 {
        return Err(Error::Format("file shorter than the fixed preamble".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_bytes = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(header_bytes).map_err(|e| Error::Format(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format_version {}",
            header.format_version
        )));
    }
    let data = &bytes[12 + hlen..];
    let mut tensors = BTreeMap::new();
    for (name, e) in &header.params {
        if e.dtype != "f32" {
            return Err(Error::Format(format!("{name}: unsupported dtype {}", e.dtype)));
        }
        let count: usize = e.shape.iter().product();
        if e.length != 4 * count as u64 {
            return Err(Error::Format(format!(
                "{name}: length {} does not match shape {:?}",
                e.length, e.shape
            )));
        }
        let start = usize::try_from(e.offset).map_err(|_| Error::Format(format!("{name}: bad offset")))?;
        let raw = start
            .checked_add(e.length as usize)
            .and_then(|end| data.get(start..end))
            .ok_or_else(|| Error::Format(format!("{name}: data truncated")))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.insert(name.clone(), Tensor::new(e.shape.clone(), values)?);
    }
    let params = ParameterSet::from_tensors(header.net_config.clone(), tensors)
        .map_err(|e| Error::Format(format!("header does not match its net_config: {e}")))?;
    Ok((params, header.net_config))
}

pub fn save_checkpoint(params: &ParameterSet, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(params)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    // write-then-rename so a concurrent reader never sees a partial file
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParameterSet, NetConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::build_model;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = build_model(&NetConfig::desk(5), 3).unwrap();
        // include values whose bit patterns matter
        p.get_mut("fc.bias").unwrap().data_mut()[..4].copy_from_slice(&[
            -0.0,
            f32::MIN_POSITIVE / 2.0,
            f32::MAX,
            1e-45,
        ]);
        let (q, cfg) = decode_checkpoint(&encode_checkpoint(&p).unwrap()).unwrap();
        assert_eq!(&cfg, p.config());
        for ((na, a), (nb, b)) in p.iter().zip(q.iter()) {
            assert_eq!(na, nb);
            let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb, "{na}");
        }
    }

    #[test]
    fn corrupt_files() {
        let p = build_model(&NetConfig::desk(3), 0).unwrap();
        let bytes = encode_checkpoint(&p).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        assert!(matches!(decode_checkpoint(&bytes[..20]), Err(Error::Format(_))));
    }
}
