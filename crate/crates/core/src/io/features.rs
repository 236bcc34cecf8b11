//! `AVSF` binary feature files: one space, fixed dimension, f32 LE values.
//!
//! ```text
//! "AVSF" | u8 version=1 | u32 dim | u64 count | u16 len + space name
//! count × ( u16 len + item id | dim × f32 )
//! ```

use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::io::bytes::{put_string, Reader};
use crate::laff::FeatureBundle;

pub const FEATURE_MAGIC: &[u8; 4] = b"AVSF";
pub const FEATURE_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub space: String,
    pub dim: usize,
    records: IndexMap<String, Vec<f64>>,
}

impl FeatureFile {
    pub fn new(space: impl Into<String>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature dimension must be ≥ 1".into()));
        }
        Ok(Self {
            space: space.into(),
            dim,
            records: IndexMap::new(),
        })
    }

    pub fn insert(&mut self, id: impl Into<String>, v: Vec<f64>) -> Result<()> {
        let id = id.into();
        if v.len() != self.dim {
            return Err(Error::Dimension {
                context: "feature record",
                expected: self.dim,
                got: v.len(),
            });
        }
        if self.records.contains_key(&id) {
            return Err(Error::Config(format!("duplicate id `{id}` in space `{}`", self.space)));
        }
        self.records.insert(id, v);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.records.get(id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.records.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Values are narrowed to f32.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let dim = u32::try_from(self.dim).map_err(|_| Error::Config("dimension exceeds u32".into()))?;
        let mut out = Vec::with_capacity(23 + self.space.len() + self.records.len() * (8 + 4 * self.dim));
        out.extend_from_slice(FEATURE_MAGIC);
        out.push(FEATURE_VERSION);
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        put_string(&mut out, &self.space, "space name")?;
        for (id, v) in &self.records {
            put_string(&mut out, id, "item id")?;
            for x in v {
                out.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    /// `path` only labels errors.
    pub fn decode(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, bytes);
        r.magic(FEATURE_MAGIC)?;
        r.version(FEATURE_VERSION)?;
        let dim_at = r.offset();
        let dim = r.u32("dimension")? as usize;
        if dim == 0 {
            return Err(r.error(dim_at, "dimension must be ≥ 1"));
        }
        let count = r.u64("record count")?;
        let space = r.string("space name")?;
        let mut file = FeatureFile::new(space, dim)?;
        for i in 0..count {
            let at = r.offset();
            let id = r.string("item id").map_err(|e| relabel(e, i, count))?;
            let raw = r.take(4 * dim, "feature values").map_err(|e| relabel(e, i, count))?;
            let v: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            if file.records.contains_key(&id) {
                return Err(r.error(at, format!("duplicate id `{id}`")));
            }
            file.records.insert(id, v);
        }
        r.finish()?;
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(path, &bytes)
    }

    /// Fails when the file's dimension differs from `dim`.
    pub fn read_expect_dim(path: &Path, dim: usize) -> Result<Self> {
        let f = Self::read(path)?;
        if f.dim != dim {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: 5,
                msg: format!("dimension {} for space `{}`, expected {dim}", f.dim, f.space),
            });
        }
        Ok(f)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }
}

fn relabel(e: Error, i: u64, count: u64) -> Error {
    match e {
        Error::Format { path, offset, msg } => Error::Format {
            path,
            offset,
            msg: format!("record {} of {count}: {msg}", i + 1),
        },
        other => other,
    }
}

/// Joins per-space files into bundles keyed by item id. Every file must cover
/// exactly the same ids; bundle order follows the first file.
pub fn bundles_from_files(files: &[FeatureFile]) -> Result<Vec<FeatureBundle>> {
    let Some(first) = files.first() else {
        return Err(Error::Empty("feature files"));
    };
    for f in &files[1..] {
        if f.len() != first.len() || first.ids().any(|id| f.get(id).is_none()) {
            let missing = first
                .ids()
                .find(|id| f.get(id).is_none())
                .or_else(|| f.ids().find(|id| first.get(id).is_none()))
                .unwrap_or_default();
            return Err(Error::BundleMismatch {
                item: missing.to_string(),
                reason: format!("present in only one of spaces `{}` and `{}`", first.space, f.space),
            });
        }
    }
    first
        .ids()
        .map(|id| {
            let mut b = FeatureBundle::new(id);
            for f in files {
                b.insert(f.space.clone(), f.get(id).unwrap().to_vec())?;
            }
            Ok(b)
        })
        .collect()
}
