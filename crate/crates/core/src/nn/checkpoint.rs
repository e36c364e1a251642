//! Parameter checkpoints: one JSON document holding a free-form manifest and
//! every tensor as base64-encoded little-endian `f64` bytes.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "conceptlab-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    /// Layer shapes, activations, config and seed of the producing run.
    pub manifest: serde_json::Value,
    pub params: Vec<StoredTensor>,
}

pub fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Config(format!("invalid base64 parameter blob: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Config(
            "parameter blob length is not a multiple of 8".into(),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, manifest: serde_json::Value) -> Self {
        let params = store
            .iter()
            .map(|(_, name, t)| StoredTensor {
                name: name.to_string(),
                shape: t.shape(),
                data: encode_f64s(t.data()),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            manifest,
            params,
        }
    }

    /// Rebuilds the parameter store in its original order.
    pub fn to_store(&self) -> Result<ParamStore> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "unsupported checkpoint format `{}`",
                self.format
            )));
        }
        let mut store = ParamStore::new();
        for p in &self.params {
            let t = Tensor::new(p.shape[0], p.shape[1], decode_f64s(&p.data)?)?;
            store.add(p.name.clone(), t);
        }
        Ok(store)
    }

    /// Copies stored values into an existing store with the same layout.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        let loaded = self.to_store()?;
        if loaded.len() != store.len() {
            return Err(Error::shape(
                "checkpoint parameter count",
                &[store.len()],
                &[loaded.len()],
            ));
        }
        for id in store.ids() {
            if loaded.name(id) != store.name(id) || loaded.get(id).shape() != store.get(id).shape()
            {
                return Err(Error::Config(format!(
                    "checkpoint parameter `{}` does not match `{}`",
                    loaded.name(id),
                    store.name(id)
                )));
            }
            *store.get_mut(id) = loaded.get(id).clone();
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn blob_round_trip_is_exact(values in proptest::collection::vec(proptest::num::f64::ANY, 0..64)) {
            let back = decode_f64s(&encode_f64s(&values)).unwrap();
            prop_assert_eq!(back.len(), values.len());
            for (a, b) in back.iter().zip(&values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn store_round_trip_through_file() {
        let mut store = ParamStore::new();
        store.add(
            "enc.0.w",
            Tensor::new(2, 3, vec![0.1, -2.5, 1e-300, 3.0, f64::MIN_POSITIVE, 7.0]).unwrap(),
        );
        store.add("enc.0.b", Tensor::zeros(1, 2));
        let ck = Checkpoint::from_store(&store, serde_json::json!({"seed": 3}));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ck);
        assert_eq!(loaded.to_store().unwrap(), store);
    }
}
