//! Versioned checkpoint container: named parameter arrays plus a JSON meta
//! block (architecture tables, optimizer counters, train cursors).
//!
//! Layout: magic `BGNC`, u32 format version, u64 header length, JSON header,
//! raw little-endian scalar payload. Entries keep insertion order and the
//! header serializes with sorted meta keys, so identical state produces
//! identical bytes. Saves are atomic (temp file + rename).

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"BGNC";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    entries: Vec<EntryDesc>,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct EntryDesc {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

/// An in-memory checkpoint: ordered named arrays plus metadata.
pub struct Container<F: Scalar> {
    entries: Vec<(String, Vec<usize>, Vec<F>)>,
    index: HashMap<String, usize>,
    pub meta: serde_json::Value,
}

impl<F: Scalar> Container<F> {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
            meta,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<F>) {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "entry '{name}' shape/data mismatch"
        );
        assert!(
            !self.index.contains_key(&name),
            "duplicate checkpoint entry '{name}'"
        );
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, shape, data));
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[F])> {
        self.index
            .get(name)
            .map(|&i| (&self.entries[i].1[..], &self.entries[i].2[..]))
    }

    /// Fetches an entry, checking its shape against the expectation.
    pub fn require(&self, name: &str, shape: &[usize]) -> Result<&[F]> {
        let (s, data) = self.get(name).ok_or_else(|| {
            Error::checkpoint("<memory>", format!("missing parameter '{name}'"))
        })?;
        if s != shape {
            return Err(Error::checkpoint(
                "<memory>",
                format!("parameter '{name}': stored shape {s:?}, model expects {shape:?}"),
            ));
        }
        Ok(data)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut offset = 0usize;
        let descs: Vec<EntryDesc> = self
            .entries
            .iter()
            .map(|(name, shape, data)| {
                let d = EntryDesc {
                    name: name.clone(),
                    shape: shape.clone(),
                    offset,
                    len: data.len(),
                };
                offset += data.len();
                d
            })
            .collect();
        let header = Header {
            dtype: F::DTYPE.to_string(),
            entries: descs,
            meta: self.meta.clone(),
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::checkpoint(path, format!("header encode: {e}")))?;

        let mut buf = Vec::with_capacity(16 + header_bytes.len() + offset * F::BYTES);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header_bytes);
        for (_, _, data) in &self.entries {
            for &v in data {
                v.write_le(&mut buf);
            }
        }

        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[0..4] != MAGIC {
            return Err(Error::checkpoint(path, "not a checkpoint container (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::checkpoint(
                path,
                format!("unsupported format version {version}, expected {FORMAT_VERSION}"),
            ));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + header_len {
            return Err(Error::checkpoint(path, "truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
            .map_err(|e| Error::checkpoint(path, format!("header decode: {e}")))?;
        if header.dtype != F::DTYPE {
            return Err(Error::checkpoint(
                path,
                format!("dtype {} does not match expected {}", header.dtype, F::DTYPE),
            ));
        }
        let payload = &bytes[16 + header_len..];
        let total: usize = header.entries.iter().map(|e| e.len).sum();
        if payload.len() != total * F::BYTES {
            return Err(Error::checkpoint(
                path,
                format!(
                    "payload is {} bytes, header describes {}",
                    payload.len(),
                    total * F::BYTES
                ),
            ));
        }
        let mut container = Container::new(header.meta);
        for desc in header.entries {
            if desc.shape.iter().product::<usize>() != desc.len {
                return Err(Error::checkpoint(
                    path,
                    format!("entry '{}' shape/length mismatch", desc.name),
                ));
            }
            let start = desc.offset * F::BYTES;
            let end = start + desc.len * F::BYTES;
            if end > payload.len() {
                return Err(Error::checkpoint(path, format!("entry '{}' out of range", desc.name)));
            }
            let data: Vec<F> = payload[start..end]
                .chunks_exact(F::BYTES)
                .map(F::read_le)
                .collect();
            container.push(desc.name, desc.shape, data);
        }
        Ok(container)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_entries_and_meta() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bgnc");
        let mut c = Container::<f32>::new(serde_json::json!({"step": 7, "arch": {"rows": 3}}));
        c.push("net/w", vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5]);
        c.push("net/b", vec![2], vec![-0.25, 0.75]);
        c.save(&path).unwrap();
        let back = Container::<f32>::load(&path).unwrap();
        assert_eq!(back.meta["step"], 7);
        let (shape, data) = back.get("net/w").unwrap();
        assert_eq!(shape, &[2, 3]);
        assert_eq!(data, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.5]);
        assert_eq!(back.get("net/b").unwrap().1, &[-0.25, 0.75]);
    }

    #[test]
    fn identical_state_saves_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let build = || {
            let mut c = Container::<f32>::new(serde_json::json!({"z": 1, "a": 2}));
            c.push("p", vec![3], vec![0.1, 0.2, 0.3]);
            c
        };
        let p1 = dir.path().join("a.bgnc");
        let p2 = dir.path().join("b.bgnc");
        build().save(&p1).unwrap();
        build().save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bgnc");
        let mut c = Container::<f32>::new(serde_json::Value::Null);
        c.push("p", vec![2], vec![1.0, 2.0]);
        c.save(&path).unwrap();

        // Truncate payload.
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(Container::<f32>::load(&path).is_err());

        // Bad magic.
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(Container::<f32>::load(&path).is_err());

        // Wrong dtype.
        std::fs::write(&path, &bytes).unwrap();
        assert!(Container::<f64>::load(&path).is_err());
    }
}
