//! Binary checkpoint format shared by predictors and policies.
//!
//! Layout: 8-byte magic `SLIDECK1`, a little-endian `u32` header length, a
//! JSON header (format version, kind, per-network layer sizes and
//! activation, free-form metadata), then every network's parameters as one
//! flat block of little-endian `f64`, networks in header order, each layer
//! as row-major weights followed by biases.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::NetError;
use crate::nn::{Activation, Mlp};

pub const MAGIC: &[u8; 8] = b"SLIDECK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NetHeader {
    name: String,
    sizes: Vec<usize>,
    activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    nets: Vec<NetHeader>,
    meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub nets: Vec<(String, Mlp)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self { kind: kind.into(), nets: Vec::new(), meta }
    }

    pub fn with_net(mut self, name: impl Into<String>, net: Mlp) -> Self {
        self.nets.push((name.into(), net));
        self
    }

    pub fn net(&self, name: &str) -> Result<&Mlp, NetError> {
        self.nets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| NetError::Checkpoint(format!("network `{name}` missing from checkpoint")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            nets: self
                .nets
                .iter()
                .map(|(name, m)| NetHeader { name: name.clone(), sizes: m.sizes(), activation: m.activation })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 8 * self.nets.iter().map(|(_, m)| m.num_params()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, m) in &self.nets {
            for p in m.params_flat() {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        let bad = |msg: &str| NetError::Checkpoint(msg.to_string());
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let hend = 12 + hlen;
        if bytes.len() < hend {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[12..hend]).map_err(|e| bad(&format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {}", header.format_version)));
        }
        let mut cursor = hend;
        let mut nets = Vec::with_capacity(header.nets.len());
        for nh in header.nets {
            if nh.sizes.len() < 2 {
                return Err(bad("network needs at least two layer sizes"));
            }
            let mut net = Mlp::zeros(&nh.sizes, nh.activation);
            let n = net.num_params();
            let end = cursor + 8 * n;
            if bytes.len() < end {
                return Err(bad("truncated parameter block"));
            }
            let flat: Vec<f64> = bytes[cursor..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            net.set_params_flat(&flat);
            cursor = end;
            nets.push((nh.name, net));
        }
        if cursor != bytes.len() {
            return Err(bad("trailing bytes after parameter block"));
        }
        Ok(Checkpoint { kind: header.kind, nets, meta: header.meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ck = Checkpoint::new("test", serde_json::json!({"modes": 5, "horizon": 10}))
            .with_net("a", Mlp::new(&[3, 4, 2], Activation::Relu, &mut rng))
            .with_net("b", Mlp::new(&[2, 2], Activation::Tanh, &mut rng));
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"hello world!").is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ck = Checkpoint::new("t", serde_json::Value::Null).with_net("a", Mlp::new(&[3, 2], Activation::Relu, &mut rng));
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn parameter_block_is_little_endian_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[1, 1], Activation::Relu, &mut rng);
        let ck = Checkpoint::new("t", serde_json::Value::Null).with_net("a", net.clone());
        let bytes = ck.to_bytes();
        let tail = &bytes[bytes.len() - 16..];
        let w = f64::from_le_bytes(tail[..8].try_into().unwrap());
        assert_eq!(w, net.layers[0].w[[0, 0]]);
    }
}
