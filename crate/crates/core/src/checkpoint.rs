//! Versioned tensor container shared by the network checkpoints: a
//! safetensors file whose header metadata carries the format name, format
//! version and JSON-encoded configuration.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_KEY: &str = "format";
pub const VERSION_KEY: &str = "format_version";

fn to_bytes(t: &Tensor) -> Result<(Dtype, Vec<u8>)> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => (Dtype::F64, flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        _ => (
            Dtype::F32,
            flat.to_dtype(DType::F32)?.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
    })
}

/// Writes `tensors` plus metadata; `format` and `version` are stored under
/// reserved keys.
pub fn write_container(
    path: &Path,
    format: &str,
    version: u32,
    tensors: &BTreeMap<String, Tensor>,
    mut metadata: BTreeMap<String, String>,
) -> Result<()> {
    metadata.insert(FORMAT_KEY.into(), format.into());
    metadata.insert(VERSION_KEY.into(), version.to_string());
    let encoded: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(k, t)| {
            let (dtype, bytes) = to_bytes(t)?;
            Ok((k.clone(), dtype, t.dims().to_vec(), bytes))
        })
        .collect::<Result<_>>()?;
    let views: Vec<(String, TensorView<'_>)> = encoded
        .iter()
        .map(|(k, dtype, shape, bytes)| {
            TensorView::new(*dtype, shape.clone(), bytes)
                .map(|v| (k.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<_>>()?;
    let meta: HashMap<String, String> = metadata.into_iter().collect();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let bytes = safetensors::tensor::serialize(views, Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Reads a container, checking its format name and version.
pub fn read_container(
    path: &Path,
    format: &str,
    version: u32,
) -> Result<(BTreeMap<String, Tensor>, BTreeMap<String, String>)> {
    let bytes = std::fs::read(path)?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let metadata: BTreeMap<String, String> = header
        .metadata()
        .clone()
        .unwrap_or_default()
        .into_iter()
        .collect();
    match metadata.get(FORMAT_KEY) {
        Some(f) if f == format => {}
        other => {
            return Err(Error::Checkpoint(format!(
                "{} is not a {format} checkpoint (format = {other:?})",
                path.display()
            )))
        }
    }
    let found: u32 = metadata
        .get(VERSION_KEY)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Checkpoint("missing format version".into()))?;
    if found != version {
        return Err(Error::Checkpoint(format!("unsupported {format} version {found} (expected {version})")));
    }
    let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut tensors = BTreeMap::new();
    for (name, view) in st.tensors() {
        let data = view.data();
        let t = match view.dtype() {
            Dtype::F32 => {
                let v: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, view.shape(), &Device::Cpu)?
            }
            Dtype::F64 => {
                let v: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, view.shape(), &Device::Cpu)?
            }
            other => return Err(Error::Checkpoint(format!("tensor {name} has unsupported dtype {other:?}"))),
        };
        tensors.insert(name, t);
    }
    Ok((tensors, metadata))
}

/// Hex SHA-256 of a file.
pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip_and_format_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.safetensors");
        let mut tensors = BTreeMap::new();
        tensors.insert("a".to_string(), Tensor::new(&[1.5f32, -2.0], &Device::Cpu).unwrap());
        tensors.insert("b".to_string(), Tensor::new(&[[0.25f64], [3.0]], &Device::Cpu).unwrap());
        let mut meta = BTreeMap::new();
        meta.insert("k".to_string(), "v".to_string());
        write_container(&path, "demo", 3, &tensors, meta).unwrap();

        let (back, meta) = read_container(&path, "demo", 3).unwrap();
        assert_eq!(meta["k"], "v");
        assert_eq!(back["a"].to_vec1::<f32>().unwrap(), vec![1.5, -2.0]);
        assert_eq!(back["b"].dims(), &[2, 1]);
        assert_eq!(back["b"].dtype(), DType::F64);

        assert!(read_container(&path, "other", 3).is_err());
        assert!(read_container(&path, "demo", 4).is_err());
        assert_eq!(file_sha256(&path).unwrap().len(), 64);
    }
}
