//! Checkpoint container: magic "VCDZ", u32 version, u32 tensor count, then
//! per tensor a u32 name length, the UTF-8 name, a u8 dtype code (0 = 32-bit
//! float), a u8 rank, u64 dims and raw little-endian values. Tensors are
//! written sorted by name so identical parameters serialize byte-identically.

use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::nn::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"VCDZ";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

/// A tensor as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl RawTensor {
    pub fn from_tensor(name: &str, t: &Tensor) -> Self {
        RawTensor {
            name: name.to_string(),
            dims: t.shape().to_vec(),
            values: t.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&self.dims, self.values.iter().map(|&v| v as f64).collect())
    }
}

pub fn encode(tensors: &[RawTensor]) -> Vec<u8> {
    let mut sorted: Vec<&RawTensor> = tensors.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(sorted.len() as u32).to_le_bytes());
    for t in sorted {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.push(DTYPE_F32);
        buf.push(t.dims.len() as u8);
        for &d in &t.dims {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &t.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.data.len() {
            return Err(CheckpointError::Truncated(what));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &'static str) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &'static str) -> std::result::Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }
}

pub fn decode(data: &[u8]) -> Result<Vec<RawTensor>> {
    let mut cur = Cursor { data, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version).into());
    }
    let count = cur.u32("tensor count")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let name_bytes = cur.take(name_len, "name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::BadName)?
            .to_string();
        let dtype = cur.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(CheckpointError::UnsupportedDtype(dtype).into());
        }
        let rank = cur.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u64("dims")? as usize);
        }
        let len: usize = dims.iter().product();
        let raw = cur.take(len * 4, "values")?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(RawTensor { name, dims, values });
    }
    if cur.pos != data.len() {
        return Err(CheckpointError::TrailingData.into());
    }
    Ok(out)
}

pub fn write_tensors(path: impl AsRef<Path>, tensors: &[RawTensor]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(tensors)).map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: impl AsRef<Path>) -> Result<Vec<RawTensor>> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&data)
}

/// Serialize every store entry (weights and buffers).
pub fn save_checkpoint(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let tensors: Vec<RawTensor> = store
        .iter()
        .map(|e| RawTensor::from_tensor(&e.name, &e.value))
        .collect();
    write_tensors(path, &tensors)
}

/// Which parameter groups a partial load actually filled.
#[derive(Debug, Clone)]
pub struct LoadReport {
    /// Tensor names found in the file and applied.
    pub loaded: Vec<String>,
    /// Store entries absent from the file (left at initialization).
    pub missing: Vec<String>,
    /// File tensors with no matching store entry.
    pub unexpected: Vec<String>,
}

impl LoadReport {
    /// Name prefixes (up to the first '.') that were at least partly loaded.
    pub fn loaded_groups(&self) -> Vec<String> {
        let mut groups: Vec<String> = self
            .loaded
            .iter()
            .map(|n| match n.split_once('.') {
                Some((g, _)) => format!("{g}."),
                None => n.clone(),
            })
            .collect();
        groups.sort();
        groups.dedup();
        groups
    }
}

/// Load matching tensors into the store; entries not present in the file keep
/// their current values. Shape mismatches are errors.
pub fn load_into_store(store: &mut ParamStore, path: impl AsRef<Path>) -> Result<LoadReport> {
    let raw = read_tensors(path)?;
    let mut loaded = Vec::new();
    let mut unexpected = Vec::new();
    for t in &raw {
        match store.index_of(&t.name) {
            Some(idx) => {
                let entry = store.entry_mut(idx);
                if entry.value.shape() != t.dims.as_slice() {
                    return Err(CheckpointError::ShapeMismatch {
                        name: t.name.clone(),
                        found: t.dims.clone(),
                        expected: entry.value.shape().to_vec(),
                    }
                    .into());
                }
                entry.value = t.to_tensor();
                loaded.push(t.name.clone());
            }
            None => unexpected.push(t.name.clone()),
        }
    }
    let missing = store
        .iter()
        .map(|e| e.name.clone())
        .filter(|n| !loaded.contains(n))
        .collect();
    Ok(LoadReport {
        loaded,
        missing,
        unexpected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;

    fn sample_tensors() -> Vec<RawTensor> {
        vec![
            RawTensor {
                name: "b.weights".into(),
                dims: vec![2, 3],
                values: vec![1.0, -2.5, 0.25, 3.0, 0.0, -0.125],
            },
            RawTensor {
                name: "a.bias".into(),
                dims: vec![3],
                values: vec![0.5, 1.5, -1.5],
            },
        ]
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let bytes1 = encode(&sample_tensors());
        let decoded = decode(&bytes1).unwrap();
        let bytes2 = encode(&decoded);
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn sorted_by_name_on_disk() {
        let decoded = decode(&encode(&sample_tensors())).unwrap();
        assert_eq!(decoded[0].name, "a.bias");
        assert_eq!(decoded[1].name, "b.weights");
    }

    #[test]
    fn distinct_errors_for_corruptions() {
        let good = encode(&sample_tensors());

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            decode(&bad_magic),
            Err(Error::Checkpoint(CheckpointError::BadMagic))
        ));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(matches!(
            decode(&bad_version),
            Err(Error::Checkpoint(CheckpointError::UnsupportedVersion(9)))
        ));

        // Corrupt the first tensor's name length: huge value → truncation.
        let mut bad_len = good.clone();
        bad_len[12] = 0xff;
        bad_len[13] = 0xff;
        assert!(matches!(
            decode(&bad_len),
            Err(Error::Checkpoint(CheckpointError::Truncated(_)))
        ));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(
            decode(&trailing),
            Err(Error::Checkpoint(CheckpointError::TrailingData))
        ));

        let truncated = &good[..good.len() - 3];
        assert!(matches!(
            decode(truncated),
            Err(Error::Checkpoint(CheckpointError::Truncated(_)))
        ));
    }

    #[test]
    fn partial_load_reports_groups() {
        let mut store = ParamStore::new();
        store.register("spk.w", Tensor::from_vec(&[2], vec![0.0, 0.0]), ParamKind::Weight);
        store.register("dec.w", Tensor::from_vec(&[2], vec![1.0, 1.0]), ParamKind::Weight);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spk_only.ckpt");
        write_tensors(
            &path,
            &[RawTensor {
                name: "spk.w".into(),
                dims: vec![2],
                values: vec![7.0, 8.0],
            }],
        )
        .unwrap();
        let report = load_into_store(&mut store, &path).unwrap();
        assert_eq!(report.loaded, vec!["spk.w".to_string()]);
        assert_eq!(report.missing, vec!["dec.w".to_string()]);
        assert!(report.unexpected.is_empty());
        assert_eq!(report.loaded_groups(), vec!["spk.".to_string()]);
        assert_eq!(store.get("spk.w").unwrap().value.data(), &[7.0, 8.0]);
        assert_eq!(store.get("dec.w").unwrap().value.data(), &[1.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::zeros(&[2, 2]), ParamKind::Weight);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad_shape.ckpt");
        write_tensors(
            &path,
            &[RawTensor {
                name: "w".into(),
                dims: vec![3],
                values: vec![0.0; 3],
            }],
        )
        .unwrap();
        assert!(matches!(
            load_into_store(&mut store, &path),
            Err(Error::Checkpoint(CheckpointError::ShapeMismatch { .. }))
        ));
    }
}
