//! Single-file checkpoint archive: a text manifest (serialized metadata
//! plus an array directory) followed by raw little-endian f64 data.
//!
//! Layout: magic "EVCP", u32 version, u64 manifest length, manifest bytes,
//! then each array's values contiguously in directory order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{de::DeserializeOwned, Serialize};

use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"EVCP";
const VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct Manifest<M> {
    meta: M,
    arrays: Vec<ArrayEntry>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint<M: Serialize>(
    path: &Path,
    meta: &M,
    arrays: &[(String, ArrayD<f64>)],
) -> Result<()> {
    let manifest = Manifest {
        meta,
        arrays: arrays
            .iter()
            .map(|(name, v)| ArrayEntry {
                name: name.clone(),
                shape: v.shape().to_vec(),
            })
            .collect(),
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::invalid(format!("checkpoint manifest serialization: {e}")))?;

    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut emit = |buf: &[u8]| w.write_all(buf).map_err(|e| Error::io(path, e));
    emit(MAGIC)?;
    emit(&VERSION.to_le_bytes())?;
    emit(&(text.len() as u64).to_le_bytes())?;
    emit(text.as_bytes())?;
    for (_, v) in arrays {
        for &x in v.iter() {
            emit(&x.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<M: DeserializeOwned>(
    path: &Path,
) -> Result<(M, Vec<(String, ArrayD<f64>)>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);

    let mut head = [0u8; 16];
    r.read_exact(&mut head)
        .map_err(|_| Error::format(path, "file shorter than the checkpoint header"))?;
    if &head[0..4] != MAGIC {
        return Err(Error::format(path, "bad magic, expected EVCP"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let manifest_len = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_bytes)
        .map_err(|_| Error::format(path, "truncated manifest"))?;
    let text = String::from_utf8(manifest_bytes)
        .map_err(|_| Error::format(path, "manifest is not UTF-8"))?;
    let manifest: Manifest<M> =
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;

    let mut arrays = Vec::with_capacity(manifest.arrays.len());
    for entry in manifest.arrays {
        let n: usize = entry.shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)
            .map_err(|_| Error::format(path, format!("truncated data for array {}", entry.name)))?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&entry.shape), values)
            .map_err(|e| Error::format(path, e.to_string()))?;
        arrays.push((entry.name, arr));
    }
    Ok((manifest.meta, arrays))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, serde::Serialize, serde::Deserialize)]
    struct Meta {
        step: u64,
        seed: u64,
        note: String,
    }

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.evcp");
        let arrays = vec![
            (
                "w".to_string(),
                ArrayD::from_shape_fn(IxDyn(&[2, 3]), |ix| (ix[0] * 3 + ix[1]) as f64 * 0.1 + 1e-9),
            ),
            ("b".to_string(), ArrayD::from_elem(IxDyn(&[4]), -0.25)),
        ];
        let meta = Meta {
            step: 42,
            seed: 7,
            note: "hello".into(),
        };
        save_checkpoint(&path, &meta, &arrays).unwrap();
        let (meta2, arrays2): (Meta, _) = load_checkpoint(&path).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(arrays2.len(), 2);
        for ((n1, v1), (n2, v2)) in arrays.iter().zip(&arrays2) {
            assert_eq!(n1, n2);
            assert_eq!(v1, v2);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.evcp");
        let meta = Meta { step: 0, seed: 0, note: String::new() };
        save_checkpoint(&path, &meta, &[("w".into(), ArrayD::zeros(IxDyn(&[8])))]).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint::<Meta>(&path).is_err());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'E';
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint::<Meta>(&path).is_err());
    }
}
