//! Self-describing checkpoint container.
//!
//! Layout: an 8-byte magic, a little-endian u64 header length, a JSON
//! header listing tensor names/shapes plus metadata (epoch, loss, network
//! specs), then the raw little-endian f64 payload in header order. Loading
//! validates the shape of every entry against a freshly constructed
//! network, and rejects non-finite values, missing entries and strays.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use crate::globalnet::{AttentionNet, AttentionSpec, GlobalNet, GlobalNetSpec};
use crate::localnet::{LocalNet, LocalNetSpec};
use crate::nn::layers::Params;
use crate::nn::Tensor;

const MAGIC: &[u8; 8] = b"SNCKPT01";

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: u64,
    pub loss: f64,
    /// Network specs keyed by parameter group ("local", "global", "attention").
    pub specs: BTreeMap<String, serde_json::Value>,
}

/// Named weight tensors plus checkpoint metadata; the serialized view of
/// one or more networks.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub meta: CheckpointMeta,
    pub entries: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
struct HeaderTensor {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<HeaderTensor>,
}

impl ModelParams {
    pub fn from_net(net: &dyn Params, meta: CheckpointMeta) -> Self {
        let mut entries = Vec::new();
        net.visit(&mut |name, t| entries.push((name.to_string(), t.clone())));
        ModelParams { meta, entries }
    }

    /// Append another network's parameters (e.g. attention alongside global).
    pub fn extend_from(&mut self, net: &dyn Params) {
        net.visit(&mut |name, t| self.entries.push((name.to_string(), t.clone())));
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in &self.entries {
            if !t.all_finite() {
                return Err(Error::Numeric(format!(
                    "parameter {} contains non-finite values",
                    name
                )));
            }
        }
        Ok(())
    }

    /// Copy entries into a network, validating shape and coverage.
    pub fn load_into(&self, net: &mut dyn Params) -> Result<()> {
        let map: BTreeMap<&str, &Tensor> =
            self.entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut missing = Vec::new();
        let mut seen = Vec::new();
        let mut shape_err: Option<Error> = None;
        net.visit_mut(&mut |name, t| {
            if shape_err.is_some() {
                return;
            }
            match map.get(name) {
                Some(src) => {
                    if src.shape() != t.shape() {
                        shape_err = Some(Error::shape(
                            format!("checkpoint entry {}", name),
                            format!("{:?}", t.shape()),
                            format!("{:?}", src.shape()),
                        ));
                        return;
                    }
                    *t = (*src).clone();
                    seen.push(name.to_string());
                }
                None => missing.push(name.to_string()),
            }
        });
        if let Some(e) = shape_err {
            return Err(e);
        }
        if !missing.is_empty() {
            return Err(Error::config(format!(
                "checkpoint is missing parameters: {}",
                missing.join(", ")
            )));
        }
        // Strays within the groups this net owns indicate a spec mismatch.
        if let Some(prefix) = seen.first().and_then(|n| n.split('/').next()) {
            let seen_set: std::collections::BTreeSet<&str> =
                seen.iter().map(|s| s.as_str()).collect();
            for (name, _) in &self.entries {
                if name.starts_with(prefix) && !seen_set.contains(name.as_str()) {
                    return Err(Error::config(format!(
                        "checkpoint entry {} does not correspond to any network parameter",
                        name
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn write(path: &Path, params: &ModelParams) -> Result<()> {
    params.check_finite()?;
    let header = Header {
        meta: params.meta.clone(),
        tensors: params
            .entries
            .iter()
            .map(|(name, t)| HeaderTensor {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Config(format!("checkpoint header serialization: {}", e)))?;
    let payload_len: usize = params.entries.iter().map(|(_, t)| t.len() * 8).sum();
    let mut bytes = Vec::with_capacity(16 + header_json.len() + payload_len);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, t) in &params.entries {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &bytes)
}

pub fn read(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::data(path, "not a checkpoint file (bad magic)"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + header_len {
        return Err(Error::data(path, "truncated checkpoint header"));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| Error::data(path, format!("bad checkpoint header: {}", e)))?;
    let mut offset = 16 + header_len;
    let mut entries = Vec::with_capacity(header.tensors.len());
    for ht in header.tensors {
        let n: usize = ht.shape.iter().product();
        let end = offset + n * 8;
        if bytes.len() < end {
            return Err(Error::data(
                path,
                format!("truncated payload for tensor {}", ht.name),
            ));
        }
        let data: Vec<f64> = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((ht.name, Tensor::from_vec(&ht.shape, data)));
        offset = end;
    }
    let params = ModelParams {
        meta: header.meta,
        entries,
    };
    params.check_finite()?;
    Ok(params)
}

fn spec_value<T: Serialize>(spec: &T) -> serde_json::Value {
    serde_json::to_value(spec).expect("spec serialization")
}

fn spec_from<T: for<'de> Deserialize<'de>>(meta: &CheckpointMeta, key: &str, path: &Path) -> Result<T> {
    let v = meta
        .specs
        .get(key)
        .ok_or_else(|| Error::data(path, format!("checkpoint has no '{}' spec", key)))?;
    serde_json::from_value(v.clone())
        .map_err(|e| Error::data(path, format!("bad '{}' spec in checkpoint: {}", key, e)))
}

pub fn save_local(path: &Path, net: &LocalNet, epoch: u64, loss: f64) -> Result<()> {
    let mut meta = CheckpointMeta {
        epoch,
        loss,
        specs: BTreeMap::new(),
    };
    meta.specs.insert("local".into(), spec_value(&net.spec));
    write(path, &ModelParams::from_net(net, meta))
}

pub fn load_local(path: &Path) -> Result<(LocalNet, CheckpointMeta)> {
    let params = read(path)?;
    let spec: LocalNetSpec = spec_from(&params.meta, "local", path)?;
    let mut net = LocalNet::new(spec, 0)?;
    params.load_into(&mut net)?;
    Ok((net, params.meta))
}

/// Global refiner and attention discriminator share one checkpoint file,
/// stored as separate named groups.
pub fn save_global(
    path: &Path,
    global: &GlobalNet,
    attention: &AttentionNet,
    epoch: u64,
    loss: f64,
) -> Result<()> {
    let mut meta = CheckpointMeta {
        epoch,
        loss,
        specs: BTreeMap::new(),
    };
    meta.specs.insert("global".into(), spec_value(&global.spec));
    meta.specs
        .insert("attention".into(), spec_value(&attention.spec));
    let mut params = ModelParams::from_net(global, meta);
    params.extend_from(attention);
    write(path, &params)
}

pub fn load_global(path: &Path) -> Result<(GlobalNet, AttentionNet, CheckpointMeta)> {
    let params = read(path)?;
    let gspec: GlobalNetSpec = spec_from(&params.meta, "global", path)?;
    let aspec: AttentionSpec = spec_from(&params.meta, "attention", path)?;
    let mut global = GlobalNet::new(gspec, 0)?;
    let mut attention = AttentionNet::new(aspec, 0)?;
    params.load_into(&mut global)?;
    params.load_into(&mut attention)?;
    Ok((global, attention, params.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Grid;

    #[test]
    fn local_checkpoint_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("local.ckpt");
        let net = LocalNet::new(
            LocalNetSpec {
                n_layers: 3,
                channels: 4,
                smoother_sigma: 1.0,
            },
            42,
        )
        .unwrap();
        save_local(&path, &net, 7, 0.125).unwrap();
        let (loaded, meta) = load_local(&path).unwrap();
        assert_eq!(meta.epoch, 7);
        assert_eq!(meta.loss, 0.125);

        // identical outputs on an arbitrary input
        let grid = Grid::from_fn(32, 32, |y, x| ((y * 3 + x) % 10) as f64 / 9.0);
        let a = crate::localnet::local_forward(&net, &grid).unwrap();
        let b = crate::localnet::local_forward(&loaded, &grid).unwrap();
        assert_eq!(a.grid, b.grid);
    }

    #[test]
    fn global_checkpoint_holds_both_groups() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("global.ckpt");
        let g = GlobalNet::new(GlobalNetSpec { base_width: 2 }, 1).unwrap();
        let a = AttentionNet::new(AttentionSpec { base_width: 2 }, 2).unwrap();
        save_global(&path, &g, &a, 3, 1.5).unwrap();
        let (g2, a2, meta) = load_global(&path).unwrap();
        assert_eq!(meta.epoch, 3);
        let mut names = Vec::new();
        g2.visit(&mut |n, _| names.push(n.to_string()));
        a2.visit(&mut |n, _| names.push(n.to_string()));
        assert!(names.iter().any(|n| n.starts_with("global/")));
        assert!(names.iter().any(|n| n.starts_with("attention/")));
    }

    #[test]
    fn shape_mismatch_names_the_offending_layer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("local.ckpt");
        let net = LocalNet::new(
            LocalNetSpec {
                n_layers: 3,
                channels: 4,
                smoother_sigma: 1.0,
            },
            42,
        )
        .unwrap();
        save_local(&path, &net, 0, 0.0).unwrap();
        let mut params = read(&path).unwrap();
        // corrupt one entry's shape
        let idx = params
            .entries
            .iter()
            .position(|(n, _)| n == "local/conv1.w")
            .unwrap();
        params.entries[idx].1 = Tensor::zeros(&[4, 4, 5, 5]);
        let mut target = LocalNet::new(
            LocalNetSpec {
                n_layers: 3,
                channels: 4,
                smoother_sigma: 1.0,
            },
            0,
        )
        .unwrap();
        let err = params.load_into(&mut target).unwrap_err();
        assert!(err.to_string().contains("local/conv1.w"));
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let meta = CheckpointMeta::default();
        let params = ModelParams {
            meta,
            entries: vec![("x".into(), Tensor::from_vec(&[1], vec![f64::NAN]))],
        };
        assert!(params.check_finite().is_err());
    }
}
