//! `WITU` checkpoints: network config and training progress as a JSON blob,
//! then every parameter tensor followed by the AdamW moment tensors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::config::NetConfig;
use crate::net::model::WiTUnet;
use crate::params::{Param, ParamStore};
use crate::tensor::{read_dims_and_data, read_exact, read_u32, write_atomic, Tensor};

const MAGIC: &[u8; 4] = b"WITU";
const VERSION: u32 = 1;
const MOMENT_M: &str = "adamw.m.";
const MOMENT_V: &str = "adamw.v.";

/// Where a training run stood when the checkpoint was written.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainProgress {
    /// Optimizer steps taken.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
    /// Best validation PSNR seen so far, if any.
    #[serde(default)]
    pub best_psnr: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Blob {
    net: NetConfig,
    #[serde(default)]
    train: TrainProgress,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: NetConfig,
    pub progress: TrainProgress,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    /// Freshly initialized weights for `net`.
    pub fn initial(net: NetConfig, seed: u64) -> Result<Self> {
        let params = WiTUnet::new(net.clone())?.init_params(seed)?;
        Ok(Self {
            net,
            progress: TrainProgress::default(),
            params,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let blob = serde_json::to_string(&Blob {
            net: self.net.clone(),
            train: self.progress.clone(),
        })
        .map_err(|e| Error::Format(format!("config blob: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(blob.as_bytes());
        let count = 3 * self.params.len();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (name, p) in self.params.iter() {
            write_tensor(&mut out, name, &p.value);
        }
        for (name, p) in self.params.iter() {
            write_tensor(&mut out, &format!("{MOMENT_M}{name}"), &p.m);
        }
        for (name, p) in self.params.iter() {
            write_tensor(&mut out, &format!("{MOMENT_V}{name}"), &p.v);
        }
        Ok(out)
    }

    /// Parses and validates against the parameter set the embedded config
    /// declares. Moment tensors are optional and default to zero.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad WITU magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported WITU version {version}")));
        }
        let blob_len = read_u32(&mut r)? as usize;
        let mut blob = vec![0u8; blob_len.min(r.len())];
        if blob_len > r.len() {
            return Err(Error::Format("config blob runs past end of file".into()));
        }
        read_exact(&mut r, &mut blob)?;
        let blob = std::str::from_utf8(&blob).map_err(|e| Error::Format(format!("config blob: {e}")))?;
        let blob: Blob = serde_json::from_str(blob).map_err(|e| Error::Config(format!("config blob: {e}")))?;
        let model = WiTUnet::new(blob.net.clone())?;

        let count = read_u32(&mut r)? as usize;
        let mut tensors: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            if len > r.len() {
                return Err(Error::Format("tensor name runs past end of file".into()));
            }
            let mut name = vec![0u8; len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Format(format!("tensor name: {e}")))?;
            let t = read_dims_and_data(&mut r)?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Format(format!("duplicate tensor `{name}`")));
            }
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after WITU payload", r.len())));
        }

        let mut params = ParamStore::new();
        for decl in model.declare() {
            let value = tensors
                .remove(&decl.name)
                .ok_or_else(|| Error::Config(format!("checkpoint is missing parameter `{}`", decl.name)))?;
            check_dims(&decl.name, &decl.dims, &value)?;
            let mut p = Param::new(value);
            for (prefix, slot) in [(MOMENT_M, &mut p.m), (MOMENT_V, &mut p.v)] {
                if let Some(t) = tensors.remove(&format!("{prefix}{}", decl.name)) {
                    check_dims(&format!("{prefix}{}", decl.name), &decl.dims, &t)?;
                    *slot = t;
                }
            }
            params.insert(&decl.name, p.value.clone())?;
            let slot = params.get_mut(&decl.name).expect("just inserted");
            slot.m = p.m;
            slot.v = p.v;
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Config(format!("checkpoint holds unexpected tensor `{extra}`")));
        }
        params.step = blob.train.step;
        Ok(Self {
            net: blob.net,
            progress: blob.train,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn check_dims(name: &str, want: &[usize], got: &Tensor<f32>) -> Result<()> {
    if got.dims() != want {
        return Err(Error::Config(format!(
            "checkpoint tensor `{name}` has shape {:?}, config expects {want:?}",
            got.dims()
        )));
    }
    Ok(())
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_byte_identical() {
        let mut ck = Checkpoint::initial(NetConfig::desk(), 3).unwrap();
        ck.progress = TrainProgress {
            step: 17,
            epoch: 2,
            best_psnr: Some(31.25),
        };
        ck.params.step = 17;
        let a = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&a).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), a);
    }

    #[test]
    fn header_layout() {
        let ck = Checkpoint::initial(NetConfig::desk(), 0).unwrap();
        let b = ck.to_bytes().unwrap();
        assert_eq!(&b[..4], b"WITU");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        let len = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&b[12..12 + len]).unwrap();
        assert!(text.starts_with("{\"net\":{"));
        let count = u32::from_le_bytes(b[12 + len..16 + len].try_into().unwrap()) as usize;
        assert_eq!(count, 3 * ck.params.len());
    }

    #[test]
    fn rejects_mismatched_config() {
        let ck = Checkpoint::initial(NetConfig::desk(), 0).unwrap();
        let mut other = ck.clone();
        other.net.base_channels = 16;
        // Tensors still shaped for C=8.
        let err = Checkpoint::from_bytes(&other.to_bytes().unwrap()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn rejects_truncation() {
        let ck = Checkpoint::initial(NetConfig::desk(), 0).unwrap();
        let b = ck.to_bytes().unwrap();
        for cut in [3, 11, 40, b.len() - 1] {
            assert!(Checkpoint::from_bytes(&b[..cut]).is_err());
        }
    }
}
