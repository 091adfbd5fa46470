//! Flat binary weight container: 32-bit little-endian floats plus a JSON
//! manifest mapping parameter names to shapes and byte offsets.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use super::KernelError;

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Named parameter tensors, iterated and serialized in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: BTreeMap<String, WeightEntry>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    total_bytes: u64,
    params: Vec<ManifestParam>,
}

#[derive(Serialize, Deserialize)]
struct ManifestParam {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn insert(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<(), KernelError> {
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(KernelError::WeightStore(format!(
                "parameter {name}: shape {shape:?} implies {expected} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KernelError::WeightStore(format!(
                "parameter {name}: non-finite value"
            )));
        }
        self.entries.insert(name.to_string(), WeightEntry { shape, values });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&WeightEntry> {
        self.entries.get(name)
    }

    /// Looks up a parameter and checks its declared shape.
    pub fn get_checked(&self, name: &str, shape: &[usize]) -> Result<&[f64], KernelError> {
        let entry = self
            .entries
            .get(name)
            .ok_or_else(|| KernelError::WeightStore(format!("missing parameter {name}")))?;
        if entry.shape != shape {
            return Err(KernelError::WeightStore(format!(
                "parameter {name}: stored shape {:?}, expected {shape:?}",
                entry.shape
            )));
        }
        Ok(&entry.values)
    }

    /// Writes the f32 payload and the JSON manifest.
    pub fn save(&self, bin_path: &Path, manifest_path: &Path) -> Result<(), KernelError> {
        let mut payload = Vec::new();
        let mut params = Vec::with_capacity(self.entries.len());
        for (name, entry) in &self.entries {
            params.push(ManifestParam {
                name: name.clone(),
                shape: entry.shape.clone(),
                offset: payload.len() as u64,
            });
            let mut buf = vec![0u8; entry.values.len() * 4];
            for (i, &v) in entry.values.iter().enumerate() {
                LittleEndian::write_f32(&mut buf[i * 4..i * 4 + 4], v as f32);
            }
            payload.extend_from_slice(&buf);
        }
        let manifest = Manifest {
            dtype: "f32".to_string(),
            total_bytes: payload.len() as u64,
            params,
        };
        fs::write(bin_path, &payload)
            .map_err(|e| KernelError::WeightStore(format!("{}: {e}", bin_path.display())))?;
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| KernelError::WeightStore(e.to_string()))?;
        fs::write(manifest_path, json)
            .map_err(|e| KernelError::WeightStore(format!("{}: {e}", manifest_path.display())))?;
        Ok(())
    }

    pub fn load(bin_path: &Path, manifest_path: &Path) -> Result<Self, KernelError> {
        let payload = fs::read(bin_path)
            .map_err(|e| KernelError::WeightStore(format!("{}: {e}", bin_path.display())))?;
        let text = fs::read_to_string(manifest_path)
            .map_err(|e| KernelError::WeightStore(format!("{}: {e}", manifest_path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| KernelError::WeightStore(format!("bad manifest: {e}")))?;
        if manifest.dtype != "f32" {
            return Err(KernelError::WeightStore(format!(
                "unsupported dtype {}",
                manifest.dtype
            )));
        }
        if payload.len() as u64 != manifest.total_bytes {
            return Err(KernelError::WeightStore(format!(
                "payload is {} bytes, manifest declares {}",
                payload.len(),
                manifest.total_bytes
            )));
        }
        let mut store = WeightStore::new();
        for p in &manifest.params {
            let count: usize = p.shape.iter().product();
            let start = p.offset as usize;
            let end = start + count * 4;
            if end > payload.len() {
                return Err(KernelError::WeightStore(format!(
                    "parameter {} overruns the payload",
                    p.name
                )));
            }
            let values: Vec<f64> = (0..count)
                .map(|i| {
                    f64::from(LittleEndian::read_f32(&payload[start + i * 4..start + i * 4 + 4]))
                })
                .collect();
            store.insert(&p.name, p.shape.clone(), values)?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_f32_representable_values() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("w.bin");
        let json = dir.path().join("w.json");
        let mut store = WeightStore::new();
        store
            .insert("a.weight", vec![2, 3], vec![0.5, -1.25, 2.0, 0.0, 7.5, -0.125])
            .unwrap();
        store.insert("a.bias", vec![2], vec![1.0, -3.5]).unwrap();
        store.save(&bin, &json).unwrap();
        let loaded = WeightStore::load(&bin, &json).unwrap();
        assert_eq!(loaded, store);
    }

    #[test]
    fn shape_mismatch_on_insert_is_rejected() {
        let mut store = WeightStore::new();
        assert!(store.insert("x", vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn get_checked_validates_the_shape() {
        let mut store = WeightStore::new();
        store.insert("x", vec![4], vec![1.0; 4]).unwrap();
        assert!(store.get_checked("x", &[4]).is_ok());
        assert!(store.get_checked("x", &[2, 2]).is_err());
        assert!(store.get_checked("y", &[4]).is_err());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("w.bin");
        let json = dir.path().join("w.json");
        let mut store = WeightStore::new();
        store.insert("x", vec![8], vec![1.0; 8]).unwrap();
        store.save(&bin, &json).unwrap();
        let payload = fs::read(&bin).unwrap();
        fs::write(&bin, &payload[..payload.len() - 4]).unwrap();
        assert!(WeightStore::load(&bin, &json).is_err());
    }
}
