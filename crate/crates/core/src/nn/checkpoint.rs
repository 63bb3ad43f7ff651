//! Tensor container used for network checkpoints and dataset caches.
//!
//! ```text
//! "JDEC" | version: u16 LE | header_len: u32 LE | header: UTF-8 JSON | payload
//! ```
//!
//! The JSON header is `{"meta": <any>, "tensors": [{"name", "shape", "offset"}]}`
//! where `offset` is the byte offset of the tensor inside the payload. The
//! payload is every tensor's data as little-endian f64, in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::arch::ArchSpec;
use super::network::{build_multihead, HeadConfig, MultiHeadNetwork};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"JDEC";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: Value,
    tensors: Vec<ManifestEntry>,
}

pub fn encode_container(meta: &Value, tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let manifest = tensors
        .iter()
        .map(|(name, t)| {
            let e = ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 8 * t.numel() as u64;
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        meta: meta.clone(),
        tensors: manifest,
    })?;
    let mut out = Vec::with_capacity(10 + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8]) -> Result<(Value, Vec<(String, Tensor)>)> {
    if bytes.len() < 10 {
        return Err(Error::format(0, "file too short for a JDEC header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"JDEC\""));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported container version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let payload_start = 10 + hlen;
    if bytes.len() < payload_start {
        return Err(Error::format(10, "truncated JSON header"));
    }
    let header: Header = serde_json::from_slice(&bytes[10..payload_start])
        .map_err(|e| Error::format(10, format!("invalid header JSON: {e}")))?;
    let payload = &bytes[payload_start..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 8 * n;
        if end > payload.len() {
            return Err(Error::format(
                (payload_start + start) as u64,
                format!("tensor {} runs past end of file", e.name),
            ));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(e.shape, data).map_err(|err| {
            Error::format((payload_start + start) as u64, format!("tensor {}: {err}", e.name))
        })?;
        tensors.push((e.name, t));
    }
    Ok((header.meta, tensors))
}

/// Extra information stored next to a network's tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub arch: ArchSpec,
    pub heads: HeadConfig,
    /// Joint-decision settings the network was trained with: α_1, k, μ.
    pub alpha1: f64,
    pub k: f64,
    pub mu: f64,
    /// Per-channel normalization applied to inputs.
    pub channel_mean: Vec<f64>,
    pub channel_std: Vec<f64>,
    pub code_version: String,
}

pub fn save_network(path: &Path, net: &MultiHeadNetwork, meta: &CheckpointMeta) -> Result<()> {
    let bytes = encode_container(&serde_json::to_value(meta)?, &net.named_tensors())?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn decode_network(bytes: &[u8]) -> Result<(MultiHeadNetwork, CheckpointMeta)> {
    let (meta, tensors) = decode_container(bytes)?;
    let meta: CheckpointMeta = serde_json::from_value(meta)
        .map_err(|e| Error::format(10, format!("checkpoint metadata: {e}")))?;
    if meta.kind != "network" {
        return Err(Error::format(10, format!("container holds {:?}, not a network", meta.kind)));
    }
    let mut net = build_multihead(&meta.arch, meta.heads.m, meta.heads.order, 0)
        .map_err(|e| Error::format(10, format!("checkpoint architecture: {e}")))?;
    let expected = net.named_tensors().len();
    if tensors.len() != expected {
        return Err(Error::format(
            10,
            format!("checkpoint has {} tensors, architecture needs {expected}", tensors.len()),
        ));
    }
    for (name, t) in tensors {
        net.assign(&name, t)?;
    }
    Ok((net, meta))
}

pub fn load_network(path: &Path) -> Result<(MultiHeadNetwork, CheckpointMeta)> {
    decode_network(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::HeadOrder;

    fn meta_for(net: &MultiHeadNetwork) -> CheckpointMeta {
        CheckpointMeta {
            kind: "network".into(),
            arch: net.arch().clone(),
            heads: net.head_config(),
            alpha1: 1.0,
            k: 1.0,
            mu: 0.5,
            channel_mean: vec![0.1, 0.2, 0.3],
            channel_std: vec![1.0, 1.1, 1.2],
            code_version: "test".into(),
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_container(&Value::Null, &[("a".into(), Tensor::scalar(1.5))]).unwrap();
        assert_eq!(&bytes[..4], b"JDEC");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let header: Value = serde_json::from_slice(&bytes[10..10 + hlen]).unwrap();
        assert_eq!(header["tensors"][0]["offset"], 0);
        assert_eq!(&bytes[10 + hlen..], &1.5f64.to_le_bytes());
    }

    #[test]
    fn network_round_trip_is_exact() {
        let arch = ArchSpec::res_tiny(3, 16, 3);
        let mut net = build_multihead(&arch, 3, HeadOrder::DeepFirst, 21).unwrap();
        net.running_stats_mut()[2].mean[1] = 0.123456789;
        let meta = meta_for(&net);
        let bytes = encode_container(&serde_json::to_value(&meta).unwrap(), &net.named_tensors()).unwrap();
        let (back, meta2) = decode_network(&bytes).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(back.params(), net.params());
        assert_eq!(back.running_stats(), net.running_stats());
    }

    #[test]
    fn corrupt_bytes_are_format_errors() {
        let arch = ArchSpec::res_tiny(3, 16, 3);
        let net = build_multihead(&arch, 1, HeadOrder::DeepFirst, 2).unwrap();
        let bytes = encode_container(&serde_json::to_value(meta_for(&net)).unwrap(), &net.named_tensors()).unwrap();
        assert!(matches!(decode_network(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_network(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_network(&bytes[..6]), Err(Error::Format { .. })));
    }
}
