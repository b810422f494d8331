//! Checkpoint files.
//!
//! Layout:
//!
//! ```text
//! MLCVAE-CHECKPOINT 1\n
//! manifest <n>\n
//! <n bytes of TOML manifest>
//! <little-endian f64 payload of every array, in manifest order>
//! ```
//!
//! The manifest lists each array's name and shape; arrays are row-major.

use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::conditioning::AttributeSpec;
use crate::error::{Error, Result};
use crate::model::{ImageShape, MlcVaeModel, ModelConfig};

const MAGIC: &str = "MLCVAE-CHECKPOINT 1\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Container<M> {
    meta: M,
    arrays: Vec<ArrayEntry>,
}

pub fn encode_container<M: Serialize>(meta: &M, arrays: &[(&str, &Array2<f64>)]) -> Result<Vec<u8>> {
    let container = Container {
        meta,
        arrays: arrays
            .iter()
            .map(|(name, a)| ArrayEntry {
                name: name.to_string(),
                shape: [a.nrows(), a.ncols()],
            })
            .collect(),
    };
    let manifest = toml::to_string(&container).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let payload: usize = arrays.iter().map(|(_, a)| a.len() * 8).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + 32 + manifest.len() + payload);
    out.extend_from_slice(MAGIC.as_bytes());
    out.extend_from_slice(format!("manifest {}\n", manifest.len()).as_bytes());
    out.extend_from_slice(manifest.as_bytes());
    for (_, a) in arrays {
        for v in a.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_container<M: DeserializeOwned>(bytes: &[u8]) -> Result<(M, Vec<(String, Array2<f64>)>)> {
    let rest = bytes
        .strip_prefix(MAGIC.as_bytes())
        .ok_or_else(|| Error::Format("not a checkpoint file (bad magic line)".into()))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing manifest length line".into()))?;
    let len: usize = std::str::from_utf8(&rest[..nl])
        .ok()
        .and_then(|l| l.strip_prefix("manifest "))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::Format("malformed manifest length line".into()))?;
    let rest = &rest[nl + 1..];
    if rest.len() < len {
        return Err(Error::Format(format!("manifest truncated: {} of {len} bytes", rest.len())));
    }
    let manifest = std::str::from_utf8(&rest[..len]).map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
    let container: Container<M> = toml::from_str(manifest).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let mut payload = &rest[len..];
    let mut arrays = Vec::with_capacity(container.arrays.len());
    for entry in &container.arrays {
        let n = entry.shape[0] * entry.shape[1];
        if payload.len() < n * 8 {
            return Err(Error::Format(format!("payload truncated in array {:?}", entry.name)));
        }
        let values = payload[..n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        payload = &payload[n * 8..];
        let a = Array2::from_shape_vec((entry.shape[0], entry.shape[1]), values).expect("length checked");
        arrays.push((entry.name.clone(), a));
    }
    if !payload.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after the payload", payload.len())));
    }
    Ok((container.meta, arrays))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    kind: String,
    seed: u64,
    epoch: usize,
    image: ImageShape,
    attributes: AttributeSpec,
    model: ModelConfig,
}

impl MlcVaeModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = ModelMeta {
            kind: "mlcvae".into(),
            seed: self.seed,
            epoch: self.epoch,
            image: self.image_shape(),
            attributes: self.spec().clone(),
            model: self.config().clone(),
        };
        let arrays: Vec<(&str, &Array2<f64>)> = self.store.iter().map(|p| (p.name.as_str(), &p.value)).collect();
        encode_container(&meta, &arrays)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, arrays): (ModelMeta, _) = decode_container(bytes)?;
        if meta.kind != "mlcvae" {
            return Err(Error::Format(format!("expected a model checkpoint, found {:?}", meta.kind)));
        }
        let spec = AttributeSpec::new(meta.attributes.attributes().to_vec())?;
        let reference = MlcVaeModel::new(spec.clone(), meta.image, meta.model.clone(), meta.seed)?;
        let mut model = MlcVaeModel::skeleton(spec, meta.image, meta.model, meta.seed)?;
        model.epoch = meta.epoch;
        model.store = load_store(&reference.store, arrays)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::file(path, e))?)
    }
}

/// Replaces the values of a freshly built store with loaded arrays,
/// requiring the same names and shapes.
pub(crate) fn load_store(
    reference: &crate::autograd::ParamStore,
    arrays: Vec<(String, Array2<f64>)>,
) -> Result<crate::autograd::ParamStore> {
    if arrays.len() != reference.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {} arrays, the architecture has {}",
            arrays.len(),
            reference.len()
        )));
    }
    let mut store = crate::autograd::ParamStore::new();
    for (name, value) in arrays {
        let expected = reference
            .get(&name)
            .ok_or_else(|| Error::Format(format!("unexpected array {name:?}")))?;
        if expected.dim() != value.dim() {
            return Err(Error::Format(format!(
                "array {name:?} has shape {:?}, architecture expects {:?}",
                value.dim(),
                expected.dim()
            )));
        }
        store.insert(&name, value)?;
    }
    Ok(store)
}
