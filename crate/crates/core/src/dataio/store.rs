//! `KCLE` raw-embedding store.
//!
//! ```text
//! magic   "KCLE"
//! u32     version (1)
//! u32     dim
//! u64     record count
//! records:
//!   u32   id byte length
//!   [u8]  id (UTF-8)
//!   f32 × dim
//! ```
//!
//! All integers and floats are little-endian; records keep insertion order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::binary::{put_f32s, put_u32, put_u64, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"KCLE";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Adds a record. Rejects duplicate ids, wrong dimensions and
    /// non-finite components.
    pub fn insert(&mut self, id: impl Into<String>, vector: &[f32]) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite component in {id}")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::InvalidArgument(format!("duplicate embedding id {id}")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index
            .get(id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn require(&self, id: &str) -> Result<&[f32]> {
        self.get(id).ok_or_else(|| Error::MissingEmbedding(id.to_owned()))
    }

    pub fn require_f64(&self, id: &str) -> Result<Vec<f64>> {
        Ok(self.require(id)?.iter().map(|&v| v as f64).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .zip(self.data.chunks_exact(self.dim.max(1)))
            .map(|(id, v)| (id.as_str(), v))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(20 + self.len() * (4 + 8 + 4 * self.dim));
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, VERSION);
        put_u32(&mut buf, self.dim as u32);
        put_u64(&mut buf, self.len() as u64);
        for (i, id) in self.ids.iter().enumerate() {
            put_u32(&mut buf, id.len() as u32);
            buf.extend_from_slice(id.as_bytes());
            put_f32s(&mut buf, &self.data[i * self.dim..(i + 1) * self.dim]);
        }
        buf
    }

    /// Decodes a store; `path` is used only for error messages.
    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, bytes);
        if r.take(4, "magic")? != MAGIC {
            return Err(r.error_at(0, "bad magic, expected KCLE"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}")));
        }
        let dim = r.u32("dim")? as usize;
        let count = r.u64("record count")?;
        let mut store = EmbeddingStore::new(dim);
        for _ in 0..count {
            let at = r.offset();
            let len = r.u32("id length")? as usize;
            let id = r.string(len, "id")?;
            let v = r.f32s(dim, "vector")?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(r.error_at(at, format!("non-finite component in {id}")));
            }
            if store.index.contains_key(&id) {
                return Err(r.error_at(at, format!("duplicate embedding id {id}")));
            }
            store.insert(id, &v)?;
        }
        if !r.is_empty() {
            return Err(r.error("trailing bytes after last record"));
        }
        Ok(store)
    }
}

pub fn save_embedding_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, store.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_embedding_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingStore::from_bytes(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn empty_store_is_header_only() {
        let s = EmbeddingStore::new(8);
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), 20);
        let back = EmbeddingStore::from_bytes(p(), &bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 8);
    }

    #[test]
    fn one_record_byte_count() {
        let mut s = EmbeddingStore::new(2);
        s.insert("Q1", &[1.0, -0.5]).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), 20 + 4 + 2 + 8);
        let back = EmbeddingStore::from_bytes(p(), &bytes).unwrap();
        assert_eq!(back.get("Q1").unwrap(), &[1.0, -0.5]);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let mut s = EmbeddingStore::new(2);
        s.insert("Q1", &[1.0, -0.5]).unwrap();
        let bytes = s.to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(EmbeddingStore::from_bytes(p(), &bad)
            .unwrap_err()
            .to_string()
            .contains("magic"));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(EmbeddingStore::from_bytes(p(), &bad)
            .unwrap_err()
            .to_string()
            .contains("version"));

        let err = EmbeddingStore::from_bytes(p(), &bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 26, .. }), "{err}");
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn rejects_non_finite_on_load() {
        let mut s = EmbeddingStore::new(2);
        s.insert("Q9", &[1.0, 2.0]).unwrap();
        let mut bytes = s.to_bytes();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = EmbeddingStore::from_bytes(p(), &bytes).unwrap_err().to_string();
        assert!(err.contains("Q9"), "{err}");
        assert!(s.insert("Q2", &[f32::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn rejects_duplicates_and_wrong_dim() {
        let mut s = EmbeddingStore::new(2);
        s.insert("a", &[0.0, 0.0]).unwrap();
        assert!(s.insert("a", &[1.0, 0.0]).is_err());
        assert!(s.insert("b", &[1.0]).is_err());
        assert!(matches!(s.require("zz"), Err(Error::MissingEmbedding(_))));
    }
}
